//! The coverage-guided fuzzing loop.
//!
//! Each iteration picks a seed, mutates it, checks the closeness constraint
//! (before any oracle call), asks the oracle, and keeps the mutant only if it
//! lands in a coverage cell with spare capacity. Kept mutants join both the
//! suite and the seed pool; everything else is discarded.
//!
//! Randomness comes from one `rng_seed` split into independent ChaCha8
//! streams: stream 1 schedules seeds, stream 2 samples mutations, stream 3
//! drives the random-acceptance baseline.

use std::time::{Duration, Instant};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageMatrix, CoverageSnapshot};
use crate::error::{Error, Result};
use crate::mutation::{passes_constraint, LineageState, MutationRecord, Mutator, TransformRanges};
use crate::oracle::{predict, Oracle, Prediction};
use crate::tensor::ImageTensor;

const SEED_SET_STREAM: u64 = 0;
const SCHEDULE_STREAM: u64 = 1;
const MUTATION_STREAM: u64 = 2;
const ACCEPT_STREAM: u64 = 3;

/// Which mutants are kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AcceptancePolicy {
    /// Keep mutants that increase co-domain coverage.
    #[default]
    Coverage,
    /// Baseline: keep each valid mutant with probability `rate`, ignoring coverage.
    Random { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzConfig {
    pub n_bins: usize,
    pub cap: u32,
    pub alpha: f64,
    pub beta: f64,
    pub max_iterations: u64,
    pub max_wall_seconds: f64,
    pub rng_seed: u64,
    pub exclude_infeasible: bool,
    pub allow_hflip: bool,
    /// Seeds drawn per class when building the pool from a dataset.
    pub seeds_per_class: usize,
    pub acceptance: AcceptancePolicy,
    pub transforms: TransformRanges,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            n_bins: 100,
            cap: 10,
            alpha: 0.2,
            beta: 0.5,
            max_iterations: 10_000,
            max_wall_seconds: 21_600.0,
            rng_seed: 0,
            exclude_infeasible: true,
            allow_hflip: true,
            seeds_per_class: 100,
            acceptance: AcceptancePolicy::Coverage,
            transforms: TransformRanges::default(),
        }
    }
}

impl FuzzConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: FuzzConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || self.cap == 0 {
            return Err(Error::Config("n_bins and cap must be >= 1".into()));
        }
        if self.max_wall_seconds.is_nan() || self.max_wall_seconds <= 0.0 {
            return Err(Error::Config("max_wall_seconds must be positive".into()));
        }
        if self.seeds_per_class == 0 {
            return Err(Error::Config("seeds_per_class must be >= 1".into()));
        }
        if let AcceptancePolicy::Random { rate } = self.acceptance {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "random acceptance rate {rate} outside [0, 1]"
                )));
            }
        }
        crate::mutation::check_alpha_beta(self.alpha, self.beta)?;
        self.transforms.validate()
    }

    pub fn mutator(&self) -> Result<Mutator> {
        Mutator::new(self.transforms.clone(), self.allow_hflip)
    }
}

/// A seed or an accepted mutant.
#[derive(Debug, Clone, PartialEq)]
pub struct TestInput {
    pub id: u64,
    pub image: ImageTensor,
    pub ground_truth: usize,
    pub seed_root_id: u64,
    /// Steps from the root seed to this image; empty for seeds.
    pub lineage: Vec<MutationRecord>,
    pub prediction: Option<Prediction>,
    /// `None` for seeds.
    pub accepted_iteration: Option<u64>,
}

impl TestInput {
    pub fn seed(id: u64, image: ImageTensor, ground_truth: usize) -> Self {
        TestInput {
            id,
            image,
            ground_truth,
            seed_root_id: id,
            lineage: Vec::new(),
            prediction: None,
            accepted_iteration: None,
        }
    }

    pub fn is_seed(&self) -> bool {
        self.lineage.is_empty()
    }

    pub fn parent_id(&self) -> Option<u64> {
        self.lineage.last().map(|r| r.parent_id)
    }

    pub fn is_misclassified(&self) -> Option<bool> {
        self.prediction
            .as_ref()
            .map(|p| p.predicted_class() != self.ground_truth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub input: TestInput,
    pub lineage: LineageState,
    pub times_selected: u64,
    pub children_accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedPool {
    pub entries: Vec<PoolEntry>,
}

impl SeedPool {
    pub fn from_seeds(seeds: Vec<TestInput>) -> Self {
        SeedPool {
            entries: seeds
                .into_iter()
                .map(|input| PoolEntry {
                    lineage: LineageState::root(&input.image),
                    input,
                    times_selected: 0,
                    children_accepted: 0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Draws an index with weight `1 / (1 + times_selected)` without mutating the pool.
pub fn pick_seed(pool: &SeedPool, rng: &mut impl Rng) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::Data("cannot select from an empty seed pool".into()));
    }
    let weight = |e: &PoolEntry| 1.0 / (1.0 + e.times_selected as f64);
    let total: f64 = pool.entries.iter().map(weight).sum();
    let mut target = rng.gen::<f64>() * total;
    for (i, e) in pool.entries.iter().enumerate() {
        target -= weight(e);
        if target < 0.0 {
            return Ok(i);
        }
    }
    Ok(pool.len() - 1)
}

/// Weighted draw favoring less-fuzzed seeds; bumps the chosen seed's count.
pub fn select_seed<'a>(pool: &'a mut SeedPool, rng: &mut impl Rng) -> Result<&'a TestInput> {
    let i = pick_seed(pool, rng)?;
    pool.entries[i].times_selected += 1;
    Ok(&pool.entries[i].input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Accepted,
    RejectedCoverage,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub cdc: f64,
    pub kcdc: f64,
    pub accepts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IterationBudget,
    WallClockBudget,
    /// Oracle failure; a checkpoint allows resumption.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub suite_size: usize,
    pub iterations: u64,
    pub accepted: u64,
    pub rejected_coverage: u64,
    pub invalid: u64,
    pub oracle_calls: u64,
    pub seeds_in: usize,
    pub seeds_dropped: usize,
    /// Coverage slots taken by the seeds before fuzzing began.
    pub seed_assignments: u64,
    pub initial_cdc: f64,
    pub initial_kcdc: f64,
    pub cdc: f64,
    pub kcdc: f64,
    pub stop_reason: StopReason,
    pub seed_verification_seconds: f64,
    pub fuzz_seconds: f64,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

/// What a run produces: accepted inputs plus the seeds their lineages start from.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSuite {
    pub n_classes: usize,
    pub inputs: Vec<TestInput>,
    pub seeds: Vec<TestInput>,
    pub coverage: CoverageSnapshot,
}

impl TestSuite {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn seed(&self, id: u64) -> Option<&TestInput> {
        self.seeds.iter().find(|s| s.id == id)
    }

    /// Regenerates an input's image from its root seed and lineage.
    pub fn replay(&self, input: &TestInput, mutator: &Mutator) -> Result<ImageTensor> {
        let root = self.seed(input.seed_root_id).ok_or_else(|| {
            Error::Data(format!(
                "seed {} missing for input {}",
                input.seed_root_id, input.id
            ))
        })?;
        input
            .lineage
            .iter()
            .try_fold(root.image.clone(), |img, rec| mutator.replay(&img, rec))
    }
}

/// Complete loop state. Serializable so an aborted run can resume exactly.
#[derive(Debug, Clone)]
pub struct Fuzzer {
    config: FuzzConfig,
    mutator: Mutator,
    coverage: CoverageMatrix,
    pool: SeedPool,
    n_seeds: usize,
    iteration: u64,
    accepted: u64,
    rejected_coverage: u64,
    invalid: u64,
    oracle_calls: u64,
    next_id: u64,
    seeds_in: usize,
    seeds_dropped: usize,
    seed_assignments: u64,
    initial: (f64, f64),
    seed_verification_seconds: f64,
    fuzz_seconds: f64,
    trace: Vec<TracePoint>,
    schedule_rng: ChaCha8Rng,
    mutation_rng: ChaCha8Rng,
    accept_rng: ChaCha8Rng,
}

/// Rng for drawing the seed set from a dataset, disjoint from the streams
/// the fuzzer itself consumes.
pub fn seed_set_rng(rng_seed: u64) -> ChaCha8Rng {
    stream(rng_seed, SEED_SET_STREAM)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Fuzzer {
    /// Re-verifies the seeds against the oracle (dropping misclassified ones)
    /// and pre-inserts them into the coverage matrix.
    pub fn new(
        config: FuzzConfig,
        seeds: Vec<TestInput>,
        oracle: &(impl Oracle + ?Sized),
    ) -> Result<Self> {
        config.validate()?;
        let mutator = config.mutator()?;
        let mut coverage = CoverageMatrix::new(oracle.n_classes(), config.n_bins, config.cap)?;
        let started = Instant::now();
        let seeds_in = seeds.len();
        let mut verified = Vec::with_capacity(seeds.len());
        let mut seed_assignments = 0;
        let mut next_id = 0;
        for mut seed in seeds {
            next_id = next_id.max(seed.id + 1);
            if seed.ground_truth >= oracle.n_classes() {
                warn!(
                    "seed {}: label {} out of range, dropped",
                    seed.id, seed.ground_truth
                );
                continue;
            }
            let pred = predict(oracle, &seed.image)?;
            if pred.predicted_class() != seed.ground_truth {
                warn!(
                    "seed {} predicted {} but labelled {}, dropped",
                    seed.id,
                    pred.predicted_class(),
                    seed.ground_truth
                );
                continue;
            }
            if coverage.update(&pred.output)? {
                seed_assignments += 1;
            }
            seed.prediction = Some(pred);
            seed.lineage.clear();
            seed.seed_root_id = seed.id;
            seed.accepted_iteration = None;
            verified.push(seed);
        }
        if verified.is_empty() {
            return Err(Error::Config(
                "no correctly classified seeds remain after verification".into(),
            ));
        }
        let seeds_dropped = seeds_in - verified.len();
        if seeds_dropped > 0 {
            warn!("{seeds_dropped} of {seeds_in} seeds failed verification");
        }
        let initial = (
            coverage.cdc_score(config.exclude_infeasible),
            coverage.kcdc_score(config.exclude_infeasible),
        );
        Ok(Fuzzer {
            n_seeds: verified.len(),
            pool: SeedPool::from_seeds(verified),
            schedule_rng: stream(config.rng_seed, SCHEDULE_STREAM),
            mutation_rng: stream(config.rng_seed, MUTATION_STREAM),
            accept_rng: stream(config.rng_seed, ACCEPT_STREAM),
            config,
            mutator,
            coverage,
            iteration: 0,
            accepted: 0,
            rejected_coverage: 0,
            invalid: 0,
            oracle_calls: 0,
            next_id,
            seeds_in,
            seeds_dropped,
            seed_assignments,
            initial,
            seed_verification_seconds: started.elapsed().as_secs_f64(),
            fuzz_seconds: 0.0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &FuzzConfig {
        &self.config
    }

    pub fn coverage(&self) -> &CoverageMatrix {
        &self.coverage
    }

    pub fn pool(&self) -> &SeedPool {
        &self.pool
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn budget_exhausted(&self) -> bool {
        self.iteration >= self.config.max_iterations
            || self.fuzz_seconds >= self.config.max_wall_seconds
    }

    /// One iteration. On error nothing is committed, so the step can be retried.
    pub fn step(&mut self, oracle: &(impl Oracle + ?Sized)) -> Result<StepOutcome> {
        let saved = (
            self.schedule_rng.clone(),
            self.mutation_rng.clone(),
            self.accept_rng.clone(),
        );
        match self.try_step(oracle) {
            Ok(outcome) => Ok(outcome),
            Err(e) => {
                (self.schedule_rng, self.mutation_rng, self.accept_rng) = saved;
                Err(e)
            }
        }
    }

    fn try_step(&mut self, oracle: &(impl Oracle + ?Sized)) -> Result<StepOutcome> {
        let idx = pick_seed(&self.pool, &mut self.schedule_rng)?;
        let parent = &self.pool.entries[idx];
        let (candidate, record) = self.mutator.mutate(
            &parent.input.image,
            parent.input.id,
            &parent.lineage,
            &mut self.mutation_rng,
        )?;
        let valid = passes_constraint(
            &parent.lineage,
            &candidate,
            &record,
            self.config.alpha,
            self.config.beta,
        )?;

        let outcome = if !valid {
            StepOutcome::Invalid
        } else {
            let prediction = predict(oracle, &candidate)?;
            let increased = self
                .coverage
                .would_increase(prediction.predicted_class(), prediction.confidence())?;
            let keep = match self.config.acceptance {
                AcceptancePolicy::Coverage => increased,
                AcceptancePolicy::Random { rate } => self.accept_rng.gen_bool(rate),
            };
            self.oracle_calls += 1;
            // Committed from here on.
            self.coverage.update(&prediction.output)?;
            if keep {
                let parent = &self.pool.entries[idx];
                let mut lineage = parent.input.lineage.clone();
                lineage.push(record.clone());
                let child = TestInput {
                    id: self.next_id,
                    image: candidate.clone(),
                    ground_truth: parent.input.ground_truth,
                    seed_root_id: parent.input.seed_root_id,
                    lineage,
                    prediction: Some(prediction),
                    accepted_iteration: Some(self.iteration),
                };
                let state = parent.lineage.child(&candidate, &record);
                self.next_id += 1;
                self.pool.entries[idx].children_accepted += 1;
                self.pool.entries.push(PoolEntry {
                    input: child,
                    lineage: state,
                    times_selected: 0,
                    children_accepted: 0,
                });
                StepOutcome::Accepted
            } else {
                StepOutcome::RejectedCoverage
            }
        };

        self.pool.entries[idx].times_selected += 1;
        match outcome {
            StepOutcome::Accepted => self.accepted += 1,
            StepOutcome::RejectedCoverage => self.rejected_coverage += 1,
            StepOutcome::Invalid => self.invalid += 1,
        }
        self.iteration += 1;
        self.trace.push(TracePoint {
            iteration: self.iteration,
            cdc: self.coverage.cdc_score(self.config.exclude_infeasible),
            kcdc: self.coverage.kcdc_score(self.config.exclude_infeasible),
            accepts: self.accepted,
        });
        Ok(outcome)
    }

    /// Runs until a budget trips. A transport failure stops the loop with the
    /// state intact; the error is returned alongside so the caller can checkpoint.
    pub fn run(&mut self, oracle: &(impl Oracle + ?Sized)) -> (StopReason, Option<Error>) {
        let started = Instant::now();
        let base = self.fuzz_seconds;
        let wall = Duration::from_secs_f64(self.config.max_wall_seconds);
        let reason = loop {
            self.fuzz_seconds = base + started.elapsed().as_secs_f64();
            if self.iteration >= self.config.max_iterations {
                break (StopReason::IterationBudget, None);
            }
            if Duration::from_secs_f64(self.fuzz_seconds) >= wall {
                break (StopReason::WallClockBudget, None);
            }
            if let Err(e) = self.step(oracle) {
                warn!("aborting at iteration {}: {e}", self.iteration);
                break (StopReason::Aborted, Some(e));
            }
        };
        self.fuzz_seconds = base + started.elapsed().as_secs_f64();
        info!(
            "stopped after {} iterations ({:?}): {} accepted, {} rejected, {} invalid",
            self.iteration, reason.0, self.accepted, self.rejected_coverage, self.invalid
        );
        reason
    }

    pub fn suite(&self) -> TestSuite {
        TestSuite {
            n_classes: self.coverage.n_classes(),
            seeds: self.pool.entries[..self.n_seeds]
                .iter()
                .map(|e| e.input.clone())
                .collect(),
            inputs: self.pool.entries[self.n_seeds..]
                .iter()
                .map(|e| e.input.clone())
                .collect(),
            coverage: self
                .coverage
                .snapshot(self.iteration, self.config.exclude_infeasible),
        }
    }

    pub fn report(&self, stop_reason: StopReason) -> FuzzReport {
        FuzzReport {
            suite_size: self.pool.len() - self.n_seeds,
            iterations: self.iteration,
            accepted: self.accepted,
            rejected_coverage: self.rejected_coverage,
            invalid: self.invalid,
            oracle_calls: self.oracle_calls,
            seeds_in: self.seeds_in,
            seeds_dropped: self.seeds_dropped,
            seed_assignments: self.seed_assignments,
            initial_cdc: self.initial.0,
            initial_kcdc: self.initial.1,
            cdc: self.coverage.cdc_score(self.config.exclude_infeasible),
            kcdc: self.coverage.kcdc_score(self.config.exclude_infeasible),
            stop_reason,
            seed_verification_seconds: self.seed_verification_seconds,
            fuzz_seconds: self.fuzz_seconds,
            trace: self.trace.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            coverage: self
                .coverage
                .snapshot(self.iteration, self.config.exclude_infeasible),
            pool: self
                .pool
                .entries
                .iter()
                .map(|e| CheckpointEntry {
                    id: e.input.id,
                    image: WireImage::from(&e.input.image),
                    ground_truth: e.input.ground_truth,
                    seed_root_id: e.input.seed_root_id,
                    lineage: e.input.lineage.clone(),
                    prediction: e.input.prediction.clone(),
                    accepted_iteration: e.input.accepted_iteration,
                    reference: WireImage::from(&e.lineage.reference),
                    affine_used: e.lineage.affine_used,
                    depth: e.lineage.depth,
                    times_selected: e.times_selected,
                    children_accepted: e.children_accepted,
                })
                .collect(),
            n_seeds: self.n_seeds,
            iteration: self.iteration,
            accepted: self.accepted,
            rejected_coverage: self.rejected_coverage,
            invalid: self.invalid,
            oracle_calls: self.oracle_calls,
            next_id: self.next_id,
            seeds_in: self.seeds_in,
            seeds_dropped: self.seeds_dropped,
            seed_assignments: self.seed_assignments,
            initial: self.initial,
            seed_verification_seconds: self.seed_verification_seconds,
            fuzz_seconds: self.fuzz_seconds,
            trace: self.trace.clone(),
            rngs: [
                self.schedule_rng.clone(),
                self.mutation_rng.clone(),
                self.accept_rng.clone(),
            ],
        }
    }

    pub fn resume(cp: Checkpoint) -> Result<Self> {
        cp.config.validate()?;
        let mutator = cp.config.mutator()?;
        let coverage = CoverageMatrix::from_snapshot(&cp.coverage)?;
        let entries = cp
            .pool
            .into_iter()
            .map(|e| {
                Ok(PoolEntry {
                    input: TestInput {
                        id: e.id,
                        image: e.image.try_into()?,
                        ground_truth: e.ground_truth,
                        seed_root_id: e.seed_root_id,
                        lineage: e.lineage,
                        prediction: e.prediction,
                        accepted_iteration: e.accepted_iteration,
                    },
                    lineage: LineageState {
                        reference: e.reference.try_into()?,
                        affine_used: e.affine_used,
                        depth: e.depth,
                    },
                    times_selected: e.times_selected,
                    children_accepted: e.children_accepted,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if cp.n_seeds == 0 || cp.n_seeds > entries.len() {
            return Err(Error::Data("checkpoint seed count is inconsistent".into()));
        }
        let [schedule_rng, mutation_rng, accept_rng] = cp.rngs;
        Ok(Fuzzer {
            config: cp.config,
            mutator,
            coverage,
            pool: SeedPool { entries },
            n_seeds: cp.n_seeds,
            iteration: cp.iteration,
            accepted: cp.accepted,
            rejected_coverage: cp.rejected_coverage,
            invalid: cp.invalid,
            oracle_calls: cp.oracle_calls,
            next_id: cp.next_id,
            seeds_in: cp.seeds_in,
            seeds_dropped: cp.seeds_dropped,
            seed_assignments: cp.seed_assignments,
            initial: cp.initial,
            seed_verification_seconds: cp.seed_verification_seconds,
            fuzz_seconds: cp.fuzz_seconds,
            trace: cp.trace,
            schedule_rng,
            mutation_rng,
            accept_rng,
        })
    }
}

/// Lossless image encoding for checkpoints (base64 of little-endian f32).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireImage {
    shape: crate::tensor::Shape,
    data: String,
}

impl From<&ImageTensor> for WireImage {
    fn from(img: &ImageTensor) -> Self {
        use base64::Engine as _;
        WireImage {
            shape: img.shape(),
            data: base64::engine::general_purpose::STANDARD.encode(img.to_le_bytes()),
        }
    }
}

impl TryFrom<WireImage> for ImageTensor {
    type Error = Error;

    fn try_from(w: WireImage) -> Result<Self> {
        use base64::Engine as _;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&w.data)
            .map_err(|e| Error::Data(format!("checkpoint image: {e}")))?;
        ImageTensor::from_le_bytes(w.shape, &bytes)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEntry {
    id: u64,
    image: WireImage,
    ground_truth: usize,
    seed_root_id: u64,
    lineage: Vec<MutationRecord>,
    prediction: Option<Prediction>,
    accepted_iteration: Option<u64>,
    reference: WireImage,
    affine_used: bool,
    depth: u32,
    times_selected: u64,
    children_accepted: u64,
}

/// Everything needed to continue an aborted run bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: FuzzConfig,
    pub coverage: CoverageSnapshot,
    pool: Vec<CheckpointEntry>,
    n_seeds: usize,
    pub iteration: u64,
    accepted: u64,
    rejected_coverage: u64,
    invalid: u64,
    oracle_calls: u64,
    next_id: u64,
    seeds_in: usize,
    seeds_dropped: usize,
    seed_assignments: u64,
    initial: (f64, f64),
    seed_verification_seconds: f64,
    fuzz_seconds: f64,
    trace: Vec<TracePoint>,
    rngs: [ChaCha8Rng; 3],
}

/// Outcome of [`run_fuzz`]; `error` is set when the run aborted.
pub struct FuzzRun {
    pub suite: TestSuite,
    pub report: FuzzReport,
    pub fuzzer: Fuzzer,
    pub error: Option<Error>,
}

/// Verifies seeds, then fuzzes until a budget trips or the oracle fails.
pub fn run_fuzz(
    config: FuzzConfig,
    seeds: Vec<TestInput>,
    oracle: &(impl Oracle + ?Sized),
) -> Result<FuzzRun> {
    Ok(Fuzzer::new(config, seeds, oracle)?.finish(oracle))
}

/// Continues a checkpointed run.
pub fn resume_fuzz(checkpoint: Checkpoint, oracle: &(impl Oracle + ?Sized)) -> Result<FuzzRun> {
    let fuzzer = Fuzzer::resume(checkpoint)?;
    if fuzzer.coverage.n_classes() != oracle.n_classes() {
        return Err(Error::Config(
            "oracle class count differs from the checkpoint".into(),
        ));
    }
    Ok(fuzzer.finish(oracle))
}

impl Fuzzer {
    fn finish(mut self, oracle: &(impl Oracle + ?Sized)) -> FuzzRun {
        let (reason, error) = self.run(oracle);
        FuzzRun {
            suite: self.suite(),
            report: self.report(reason),
            error,
            fuzzer: self,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LinearSoftmaxModel;
    use crate::tensor::Shape;

    struct Constant {
        n: usize,
        shape: Shape,
    }

    impl Oracle for Constant {
        fn n_classes(&self) -> usize {
            self.n
        }
        fn input_shape(&self) -> Shape {
            self.shape
        }
        fn probabilities(&self, _: &ImageTensor) -> Result<Vec<f64>> {
            let mut p = vec![0.0; self.n];
            p[0] = 1.0;
            Ok(p)
        }
        fn describe(&self) -> String {
            "constant".into()
        }
    }

    fn seeds(shape: Shape, n: usize, label: usize) -> Vec<TestInput> {
        (0..n as u64)
            .map(|i| {
                let px = (0..shape.len())
                    .map(|j| ((j as u64 * 7 + i * 13) % 256) as f32 / 255.0)
                    .collect();
                TestInput::seed(i, ImageTensor::new(shape, px).unwrap(), label)
            })
            .collect()
    }

    #[test]
    fn zero_iterations_gives_empty_suite() {
        let shape = Shape::new(4, 4, 1);
        let oracle = Constant { n: 10, shape };
        let cfg = FuzzConfig {
            max_iterations: 0,
            ..FuzzConfig::default()
        };
        let run = run_fuzz(cfg, seeds(shape, 3, 0), &oracle).unwrap();
        assert!(run.suite.is_empty());
        assert_eq!(run.report.iterations, 0);
        assert_eq!(run.report.stop_reason, StopReason::IterationBudget);
    }

    #[test]
    fn constant_oracle_accepts_at_most_cap() {
        let shape = Shape::new(6, 6, 1);
        let oracle = Constant { n: 10, shape };
        let cfg = FuzzConfig {
            n_bins: 10,
            cap: 3,
            max_iterations: 300,
            ..FuzzConfig::default()
        };
        // Seeds pre-fill the single reachable cell (0, 9) first.
        let run = run_fuzz(cfg.clone(), seeds(shape, 1, 0), &oracle).unwrap();
        assert_eq!(run.report.seed_assignments, 1);
        assert_eq!(run.suite.len(), 2);
        let total = run.suite.len() as u64 + run.report.seed_assignments;
        assert!(total <= 3);
        assert_eq!(run.fuzzer.coverage().count(0, 9), 3);
        assert_eq!(
            run.report.accepted + run.report.rejected_coverage + run.report.invalid,
            300
        );
    }

    #[test]
    fn misclassified_seeds_are_dropped() {
        let shape = Shape::new(4, 4, 1);
        let oracle = Constant { n: 3, shape };
        let mut s = seeds(shape, 2, 0);
        s.extend(seeds(shape, 2, 1).into_iter().map(|mut t| {
            t.id += 10;
            t
        }));
        let f = Fuzzer::new(FuzzConfig::default(), s, &oracle).unwrap();
        assert_eq!(f.pool().len(), 2);
        assert!(matches!(
            Fuzzer::new(FuzzConfig::default(), seeds(shape, 2, 2), &oracle),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn selection_prefers_fresh_seeds() {
        let shape = Shape::new(2, 2, 1);
        let mut pool = SeedPool::from_seeds(seeds(shape, 2, 0));
        pool.entries[1].times_selected = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let first = (0..draws)
            .filter(|_| pick_seed(&pool, &mut rng).unwrap() == 0)
            .count();
        let freq = first as f64 / draws as f64;
        assert!((freq - 10.0 / 11.0).abs() < 0.01, "{freq}");

        let mut single = SeedPool::from_seeds(seeds(shape, 1, 0));
        for _ in 0..10 {
            assert_eq!(select_seed(&mut single, &mut rng).unwrap().id, 0);
        }
        assert_eq!(single.entries[0].times_selected, 10);
        assert!(pick_seed(&SeedPool::default(), &mut rng).is_err());
    }

    #[test]
    fn deterministic_and_resumable() {
        let shape = Shape::new(5, 5, 1);
        let w: Vec<f64> = (0..75)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3)
            .collect();
        let model = LinearSoftmaxModel::new(shape, w, vec![0.0; 3]).unwrap();
        let s: Vec<TestInput> = (0..40)
            .map(|i| {
                let px = (0..25)
                    .map(|j| ((j * 31 + i * 17) % 256) as f32 / 255.0)
                    .collect();
                let img = ImageTensor::new(shape, px).unwrap();
                let label = predict(&model, &img).unwrap().predicted_class();
                TestInput::seed(i as u64, img, label)
            })
            .collect();
        let cfg = FuzzConfig {
            n_bins: 10,
            cap: 2,
            max_iterations: 200,
            rng_seed: 11,
            ..FuzzConfig::default()
        };
        let a = run_fuzz(cfg.clone(), s.clone(), &model).unwrap();
        let b = run_fuzz(cfg.clone(), s.clone(), &model).unwrap();
        assert_eq!(a.suite, b.suite);

        let mut half = Fuzzer::new(
            FuzzConfig {
                max_iterations: 80,
                ..cfg.clone()
            },
            s,
            &model,
        )
        .unwrap();
        half.run(&model);
        let mut cp = half.checkpoint();
        cp.config.max_iterations = 200;
        let json = serde_json::to_string(&cp).unwrap();
        let resumed = resume_fuzz(serde_json::from_str(&json).unwrap(), &model).unwrap();
        assert_eq!(resumed.suite, a.suite);

        let mutator = cfg.mutator().unwrap();
        for input in &a.suite.inputs {
            assert_eq!(a.suite.replay(input, &mutator).unwrap(), input.image);
            assert!(input.lineage.iter().filter(|r| r.is_affine).count() <= 1);
        }
    }

    #[test]
    fn config_toml_round_trip_and_validation() {
        let cfg = FuzzConfig {
            acceptance: AcceptancePolicy::Random { rate: 0.25 },
            ..FuzzConfig::default()
        };
        assert_eq!(FuzzConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(
            FuzzConfig::from_toml("n_bins = 10\ncap = 2")
                .unwrap()
                .n_bins,
            10
        );
        assert!(FuzzConfig::from_toml("n_bins = 0").is_err());
        assert!(FuzzConfig::from_toml("alpha = 1.5").is_err());
        assert!(FuzzConfig::from_toml("bogus = 1").is_err());
    }
}
