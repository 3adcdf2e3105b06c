//! Test-suite quality metrics and the rotation/coverage correlation harness.
//!
//! Entropies use the natural logarithm with `0 ln 0 = 0`. Output impartiality
//! is the entropy of the predicted-class histogram divided by `ln N`, so a
//! class-balanced suite scores 1 and a single-class suite scores 0.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::{argmax, CoverageMatrix};
use crate::dataio::LabeledImage;
use crate::error::{Error, Result};
use crate::fuzzer::{TestInput, TestSuite};
use crate::mutation::{apply_transform, Transform};
use crate::oracle::{predict, Oracle, Prediction};

fn prediction(input: &TestInput) -> Result<&Prediction> {
    input
        .prediction
        .as_ref()
        .ok_or_else(|| Error::Data(format!("input {} has no prediction", input.id)))
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Inputs whose predicted class differs from their ground truth.
pub fn misclassified_count(inputs: &[TestInput]) -> Result<usize> {
    let mut n = 0;
    for input in inputs {
        if prediction(input)?.predicted_class() != input.ground_truth {
            n += 1;
        }
    }
    Ok(n)
}

/// Mean predictive entropy.
pub fn avg_entropy(inputs: &[TestInput]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Data(
            "average entropy of an empty suite is undefined".into(),
        ));
    }
    let mut total = 0.0;
    for input in inputs {
        total += entropy(prediction(input)?.prob_vector());
    }
    Ok(total / inputs.len() as f64)
}

/// Per-class counts of predicted labels.
pub fn class_histogram(inputs: &[TestInput], n_classes: usize) -> Result<Vec<usize>> {
    let mut hist = vec![0usize; n_classes];
    for input in inputs {
        let c = prediction(input)?.predicted_class();
        *hist.get_mut(c).ok_or_else(|| {
            Error::Data(format!(
                "input {} predicted class {c} >= {n_classes}",
                input.id
            ))
        })? += 1;
    }
    Ok(hist)
}

/// Normalized entropy of the predicted-class histogram, in `[0, 1]`.
pub fn output_impartiality(inputs: &[TestInput], n_classes: usize) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Data(
            "output impartiality of an empty suite is undefined".into(),
        ));
    }
    if n_classes < 2 {
        return Err(Error::Config(
            "output impartiality needs at least 2 classes".into(),
        ));
    }
    let hist = class_histogram(inputs, n_classes)?;
    let total = inputs.len() as f64;
    let fractions: Vec<f64> = hist.iter().map(|&c| c as f64 / total).collect();
    Ok((entropy(&fractions) / (n_classes as f64).ln()).clamp(0.0, 1.0))
}

/// Set of `(ground truth, predicted)` pairs with the two unequal.
pub fn error_types(inputs: &[TestInput]) -> Result<BTreeSet<(usize, usize)>> {
    let mut set = BTreeSet::new();
    for input in inputs {
        let p = prediction(input)?.predicted_class();
        if p != input.ground_truth {
            set.insert((input.ground_truth, p));
        }
    }
    Ok(set)
}

pub fn distinct_error_types(inputs: &[TestInput]) -> Result<usize> {
    Ok(error_types(inputs)?.len())
}

pub fn distinct_classes(inputs: &[TestInput]) -> Result<usize> {
    let mut set = BTreeSet::new();
    for input in inputs {
        set.insert(prediction(input)?.predicted_class());
    }
    Ok(set.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub n_classes: usize,
    pub n_inputs: usize,
    pub n_misclassified: usize,
    /// `None` for an empty suite.
    pub avg_entropy: Option<f64>,
    pub output_impartiality: Option<f64>,
    pub distinct_classes: usize,
    pub distinct_error_types: usize,
}

impl SuiteMetrics {
    pub fn compute(inputs: &[TestInput], n_classes: usize) -> Result<Self> {
        let nonempty = !inputs.is_empty();
        Ok(SuiteMetrics {
            n_classes,
            n_inputs: inputs.len(),
            n_misclassified: misclassified_count(inputs)?,
            avg_entropy: nonempty.then(|| avg_entropy(inputs)).transpose()?,
            output_impartiality: nonempty
                .then(|| output_impartiality(inputs, n_classes))
                .transpose()?,
            distinct_classes: distinct_classes(inputs)?,
            distinct_error_types: distinct_error_types(inputs)?,
        })
    }

    pub fn of_suite(suite: &TestSuite) -> Result<Self> {
        SuiteMetrics::compute(&suite.inputs, suite.n_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationRow {
    pub max_degrees: f64,
    pub n_inputs: usize,
    /// Misclassified inputs in the whole rotated set.
    pub n_errors: usize,
    pub accuracy_on_tu: f64,
    /// Inputs whose coverage update succeeded.
    pub n_selected: usize,
    pub n_selected_errors: usize,
    pub cdc_achieved: f64,
    pub kcdc_achieved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSettings {
    pub n_bins: usize,
    pub cap: u32,
    pub rng_seed: u64,
    pub exclude_infeasible: bool,
}

/// Rotates a labeled set by angles drawn from `[-u, u]` for each `u` and
/// streams each rotated set through a fresh coverage matrix.
///
/// Each image gets one draw `v` in `[-1, 1]` per run and is rotated by `v * u`,
/// so larger `u` pushes every image further in the same direction. The stream
/// order is one rng-shuffled permutation shared by all `u`. Rotated images
/// are quantized to 8 bits before prediction, as in fuzzing.
pub fn rotation_correlation(
    test_set: &[LabeledImage],
    oracle: &(impl Oracle + ?Sized),
    degrees: &[f64],
    settings: &RotationSettings,
) -> Result<Vec<RotationRow>> {
    if degrees.first() != Some(&0.0) {
        return Err(Error::Config("degrees must start at 0".into()));
    }
    if degrees.windows(2).any(|w| w[0] >= w[1]) || degrees.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config(
            "degrees must be finite and strictly ascending".into(),
        ));
    }
    if test_set.is_empty() {
        return Err(Error::Data(
            "rotation harness needs a nonempty test set".into(),
        ));
    }
    let n_classes = oracle.n_classes();
    if let Some(bad) = test_set.iter().position(|li| li.label >= n_classes) {
        return Err(Error::Data(format!(
            "item {bad} has label {} outside the model's {n_classes} classes",
            test_set[bad].label
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
    let draws: Vec<f64> = test_set.iter().map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut order: Vec<usize> = (0..test_set.len()).collect();
    order.shuffle(&mut rng);

    degrees
        .iter()
        .map(|&u| {
            let mut cov = CoverageMatrix::new(n_classes, settings.n_bins, settings.cap)?;
            let mut row = RotationRow {
                max_degrees: u,
                n_inputs: test_set.len(),
                n_errors: 0,
                accuracy_on_tu: 0.0,
                n_selected: 0,
                n_selected_errors: 0,
                cdc_achieved: 0.0,
                kcdc_achieved: 0.0,
            };
            for &i in &order {
                let item = &test_set[i];
                let rotated = if u == 0.0 {
                    item.image.clone()
                } else {
                    apply_transform(
                        &item.image,
                        &Transform::Rotation {
                            degrees: draws[i] * u,
                        },
                    )?
                    .quantized()
                };
                let pred = predict(oracle, &rotated)?;
                let wrong = pred.predicted_class() != item.label;
                row.n_errors += usize::from(wrong);
                if cov.update(&pred.output)? {
                    row.n_selected += 1;
                    row.n_selected_errors += usize::from(wrong);
                }
            }
            row.accuracy_on_tu = 1.0 - row.n_errors as f64 / test_set.len() as f64;
            row.cdc_achieved = cov.cdc_score(settings.exclude_infeasible);
            row.kcdc_achieved = cov.kcdc_score(settings.exclude_infeasible);
            Ok(row)
        })
        .collect()
}

pub const CONFIDENCE_HIST_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub name: String,
    pub metrics: SuiteMetrics,
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

/// Writes `metrics.json`, `metrics.csv` (one row per suite) and, per suite,
/// confidence / class / cell histograms split into correct and misclassified.
pub fn emit_report(suites: &[(String, &TestSuite)], out_dir: &Path) -> Result<Vec<NamedMetrics>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let named = suites
        .iter()
        .map(|(name, suite)| {
            Ok(NamedMetrics {
                name: name.clone(),
                metrics: SuiteMetrics::of_suite(suite)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&named).expect("metrics serialize"),
    )?;

    let path = out_dir.join("metrics.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "suite",
        "n_classes",
        "n_inputs",
        "n_misclassified",
        "avg_entropy",
        "output_impartiality",
        "distinct_classes",
        "distinct_error_types",
    ])
    .map_err(csv_err(&path))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for nm in &named {
        let m = &nm.metrics;
        w.write_record([
            nm.name.clone(),
            m.n_classes.to_string(),
            m.n_inputs.to_string(),
            m.n_misclassified.to_string(),
            opt(m.avg_entropy),
            opt(m.output_impartiality),
            m.distinct_classes.to_string(),
            m.distinct_error_types.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for (name, suite) in suites {
        write_histograms(name, suite, out_dir)?;
    }
    Ok(named)
}

/// Histogram counts as `[correct, misclassified]` pairs.
pub struct Histograms {
    pub confidence: Vec<[usize; 2]>,
    pub classes: Vec<[usize; 2]>,
    /// Row-major `N x M`.
    pub cells: Vec<[usize; 2]>,
}

pub fn histograms(suite: &TestSuite) -> Result<Histograms> {
    let n = suite.n_classes;
    let m = suite.coverage.n_bins;
    let mut h = Histograms {
        confidence: vec![[0; 2]; CONFIDENCE_HIST_BINS],
        classes: vec![[0; 2]; n],
        cells: vec![[0; 2]; n * m],
    };
    let grid = CoverageMatrix::new(n, m, 1)?;
    for input in &suite.inputs {
        let p = prediction(input)?;
        let side = usize::from(p.predicted_class() != input.ground_truth);
        let bin = crate::coverage::bin_index(p.confidence(), CONFIDENCE_HIST_BINS)?;
        h.confidence[bin][side] += 1;
        h.classes[p.predicted_class()][side] += 1;
        let (r, c) = grid.cell_of(p.predicted_class(), p.confidence())?;
        h.cells[r * m + c][side] += 1;
    }
    Ok(h)
}

fn write_histograms(name: &str, suite: &TestSuite, out_dir: &Path) -> Result<()> {
    let h = histograms(suite)?;
    let path = out_dir.join(format!("{name}_confidence_hist.csv"));
    let mut w = csv_writer(&path)?;
    w.write_record(["bin_lo", "bin_hi", "correct", "misclassified"])
        .map_err(csv_err(&path))?;
    for (i, [c, e]) in h.confidence.iter().enumerate() {
        let lo = i as f64 / CONFIDENCE_HIST_BINS as f64;
        let hi = (i + 1) as f64 / CONFIDENCE_HIST_BINS as f64;
        w.write_record([lo.to_string(), hi.to_string(), c.to_string(), e.to_string()])
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join(format!("{name}_class_hist.csv"));
    let mut w = csv_writer(&path)?;
    w.write_record(["class", "correct", "misclassified"])
        .map_err(csv_err(&path))?;
    for (i, [c, e]) in h.classes.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string(), e.to_string()])
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let m = suite.coverage.n_bins;
    for (side, label) in [(0, "correct"), (1, "misclassified")] {
        let path = out_dir.join(format!("{name}_cells_{label}.csv"));
        let mut w = csv_writer(&path)?;
        let mut header = vec!["class".to_string()];
        header.extend((0..m).map(|c| format!("bin{c}")));
        w.write_record(&header).map_err(csv_err(&path))?;
        for (r, row) in h.cells.chunks(m).enumerate() {
            let mut rec = vec![r.to_string()];
            rec.extend(row.iter().map(|cell| cell[side].to_string()));
            w.write_record(&rec).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn write_rotation_rows(rows: &[RotationRow], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(
        out_dir.join("rotation.json"),
        serde_json::to_string_pretty(rows).expect("rows serialize"),
    )?;
    let path = out_dir.join("rotation.csv");
    let mut w = csv_writer(&path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Recount of errors straight from the stored probability vectors.
pub fn recount_from_probs(inputs: &[TestInput]) -> Result<usize> {
    inputs
        .iter()
        .map(|i| {
            Ok(usize::from(
                argmax(prediction(i)?.prob_vector()).0 != i.ground_truth,
            ))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ImageTensor, Shape};

    fn input(truth: usize, probs: Vec<f64>) -> TestInput {
        let mut t = TestInput::seed(0, ImageTensor::zeros(Shape::new(1, 1, 1)), truth);
        t.prediction = Some(Prediction::from_probs(probs).unwrap());
        t
    }

    fn one_hot(n: usize, c: usize) -> Vec<f64> {
        let mut p = vec![0.0; n];
        p[c] = 1.0;
        p
    }

    #[test]
    fn misclassified_examples() {
        let s = vec![
            input(0, one_hot(3, 0)),
            input(0, one_hot(3, 1)),
            input(2, one_hot(3, 2)),
        ];
        assert_eq!(misclassified_count(&s).unwrap(), 1);
        assert_eq!(recount_from_probs(&s).unwrap(), 1);
        let mut missing = s.clone();
        missing[1].prediction = None;
        assert!(matches!(misclassified_count(&missing), Err(Error::Data(_))));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(
            avg_entropy(&[input(0, one_hot(4, 0)), input(1, one_hot(4, 1))]).unwrap(),
            0.0
        );
        let uniform = vec![input(0, vec![0.1; 10]); 5];
        assert!((avg_entropy(&uniform).unwrap() - 10f64.ln()).abs() < 1e-9);
        let dyadic = [input(0, vec![0.5, 0.25, 0.25])];
        assert!((avg_entropy(&dyadic).unwrap() - 1.039_720_770_839_918).abs() < 1e-12);
        assert!(matches!(avg_entropy(&[]), Err(Error::Data(_))));
    }

    #[test]
    fn impartiality_examples() {
        let balanced: Vec<_> = (0..4).map(|c| input(c, one_hot(4, c))).collect();
        assert!((output_impartiality(&balanced, 4).unwrap() - 1.0).abs() < 1e-12);
        let single = vec![input(0, one_hot(4, 2)); 3];
        assert_eq!(output_impartiality(&single, 4).unwrap(), 0.0);
        let dyadic = vec![
            input(0, one_hot(4, 0)),
            input(0, one_hot(4, 0)),
            input(1, one_hot(4, 1)),
            input(2, one_hot(4, 2)),
        ];
        assert!((output_impartiality(&dyadic, 4).unwrap() - 0.75).abs() < 1e-12);
        assert!(output_impartiality(&[], 4).is_err());
    }

    #[test]
    fn error_type_and_class_examples() {
        let s = vec![
            input(0, one_hot(3, 1)),
            input(0, one_hot(3, 1)),
            input(2, one_hot(3, 0)),
        ];
        assert_eq!(distinct_error_types(&s).unwrap(), 2);
        let correct: Vec<_> = (0..3).map(|c| input(c, one_hot(3, c))).collect();
        assert_eq!(distinct_error_types(&correct).unwrap(), 0);

        assert_eq!(
            distinct_classes(&vec![input(0, one_hot(8, 0)); 4]).unwrap(),
            1
        );
        let s: Vec<_> = [0, 3, 3, 7]
            .iter()
            .map(|&c| input(c, one_hot(8, c)))
            .collect();
        assert_eq!(distinct_classes(&s).unwrap(), 3);
    }

    #[test]
    fn metrics_of_empty_suite() {
        let m = SuiteMetrics::compute(&[], 3).unwrap();
        assert_eq!(m.n_inputs, 0);
        assert_eq!(m.avg_entropy, None);
        assert_eq!(m.output_impartiality, None);
    }
}
