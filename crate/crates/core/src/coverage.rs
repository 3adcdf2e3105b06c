//! Co-domain coverage: an `N x M` grid over (predicted class, confidence bin)
//! where each cell admits at most `k` inputs.
//!
//! Row `r` is the predicted class, column `c = floor(confidence * M)` with the
//! right endpoint `1.0` clamped into the last bin. An input "increases
//! coverage" exactly when its cell still has room. Columns below
//! `floor(M / N)` can never be reached by an argmax probability (which is at
//! least `1 / N`) and form the infeasible region.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on probability-valued inputs.
pub const PROB_EPS: f64 = 1e-9;
/// Tolerance on `sum(prob_vector) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-5;

/// The model's verdict for one input: argmax class, its probability, and the full vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputTuple {
    pub predicted_class: usize,
    pub confidence: f64,
    pub prob_vector: Vec<f64>,
}

impl OutputTuple {
    /// Derives the tuple from a probability vector. Ties go to the lowest index.
    pub fn from_probs(prob_vector: Vec<f64>) -> Result<Self> {
        if prob_vector.len() < 2 {
            return Err(Error::Input(format!(
                "probability vector needs at least 2 entries, got {}",
                prob_vector.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in prob_vector.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Input(format!(
                    "probability {i} = {p} is not a nonnegative real"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Input(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        let (predicted_class, confidence) = argmax(&prob_vector);
        Ok(OutputTuple {
            predicted_class,
            confidence,
            prob_vector,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.prob_vector.len()
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Maps a confidence in `[0, 1]` onto one of `n_bins` equal-width bins.
pub fn bin_index(confidence: f64, n_bins: usize) -> Result<usize> {
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be positive".into()));
    }
    if !(-PROB_EPS..=1.0 + PROB_EPS).contains(&confidence) || confidence.is_nan() {
        return Err(Error::Input(format!(
            "confidence {confidence} outside [0, 1]"
        )));
    }
    let c = confidence.clamp(0.0, 1.0);
    Ok(((c * n_bins as f64).floor() as usize).min(n_bins - 1))
}

/// Number of leading columns per row that no argmax probability can reach.
pub fn infeasible_columns(n_classes: usize, n_bins: usize) -> usize {
    n_bins / n_classes.max(1)
}

/// Every `(row, column)` in the infeasible region; empty when `M < N`.
pub fn infeasible_cells(n_classes: usize, n_bins: usize) -> BTreeSet<(usize, usize)> {
    let cols = infeasible_columns(n_classes, n_bins);
    (0..n_classes)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMatrix {
    n_classes: usize,
    n_bins: usize,
    cap: u32,
    counts: Vec<u32>,
    total_assigned: u64,
}

impl CoverageMatrix {
    pub fn new(n_classes: usize, n_bins: usize, cap: u32) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be >= 2, got {n_classes}"
            )));
        }
        if n_bins == 0 {
            return Err(Error::Config("n_bins must be positive".into()));
        }
        if cap == 0 {
            return Err(Error::Config("cap must be positive".into()));
        }
        let cells = n_classes
            .checked_mul(n_bins)
            .ok_or_else(|| Error::Config("coverage grid too large".into()))?;
        Ok(CoverageMatrix {
            n_classes,
            n_bins,
            cap,
            counts: vec![0; cells],
            total_assigned: 0,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn total_assigned(&self) -> u64 {
        self.total_assigned
    }

    /// Row-major counts.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.n_bins + col]
    }

    /// Cell an output lands in.
    ///
    /// A valid argmax confidence is at least `1/N`, so the column is raised to
    /// the first feasible one; this only absorbs floating-point rounding at the
    /// `1/N` boundary (e.g. `(1/3) * 30` evaluating just under 10).
    pub fn cell_of(&self, predicted_class: usize, confidence: f64) -> Result<(usize, usize)> {
        if predicted_class >= self.n_classes {
            return Err(Error::Input(format!(
                "class {predicted_class} out of range for {} classes",
                self.n_classes
            )));
        }
        if confidence < 1.0 / self.n_classes as f64 - PROB_EPS {
            return Err(Error::Input(format!(
                "confidence {confidence} is below 1/N and cannot be an argmax probability"
            )));
        }
        let col = bin_index(confidence, self.n_bins)?
            .max(infeasible_columns(self.n_classes, self.n_bins));
        Ok((predicted_class, col.min(self.n_bins - 1)))
    }

    /// Assigns the output to its cell if the cell holds fewer than `cap` inputs.
    ///
    /// Returns `true` when coverage increased; otherwise the matrix is unchanged.
    pub fn update(&mut self, out: &OutputTuple) -> Result<bool> {
        if out.n_classes() != self.n_classes {
            return Err(Error::Input(format!(
                "output has {} classes, coverage expects {}",
                out.n_classes(),
                self.n_classes
            )));
        }
        self.update_tuple(out.predicted_class, out.confidence)
    }

    /// `update` on a bare `(class, confidence)` pair.
    pub fn update_tuple(&mut self, predicted_class: usize, confidence: f64) -> Result<bool> {
        let (r, c) = self.cell_of(predicted_class, confidence)?;
        let cell = &mut self.counts[r * self.n_bins + c];
        if *cell < self.cap {
            *cell += 1;
            self.total_assigned += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    pub fn would_increase(&self, predicted_class: usize, confidence: f64) -> Result<bool> {
        let (r, c) = self.cell_of(predicted_class, confidence)?;
        Ok(self.count(r, c) < self.cap)
    }

    pub fn denominator_cells(&self, exclude_infeasible: bool) -> usize {
        let all = self.n_classes * self.n_bins;
        if exclude_infeasible {
            all - self.n_classes * infeasible_columns(self.n_classes, self.n_bins)
        } else {
            all
        }
    }

    pub fn occupied_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Fraction of cells holding at least one input.
    pub fn cdc_score(&self, exclude_infeasible: bool) -> f64 {
        self.occupied_cells() as f64 / self.denominator_cells(exclude_infeasible) as f64
    }

    /// Fraction of the total capacity (`cells * k`) consumed.
    pub fn kcdc_score(&self, exclude_infeasible: bool) -> f64 {
        self.total_assigned as f64
            / (self.denominator_cells(exclude_infeasible) as f64 * f64::from(self.cap))
    }

    pub fn is_saturated(&self) -> bool {
        self.total_assigned == self.denominator_cells(true) as u64 * u64::from(self.cap)
    }

    pub fn snapshot(&self, iteration: u64, exclude_infeasible: bool) -> CoverageSnapshot {
        CoverageSnapshot {
            n_classes: self.n_classes,
            n_bins: self.n_bins,
            cap: self.cap,
            counts: self.counts.clone(),
            cdc: self.cdc_score(exclude_infeasible),
            kcdc: self.kcdc_score(exclude_infeasible),
            iteration,
            exclude_infeasible,
        }
    }

    /// Rebuilds a matrix from a snapshot, re-checking every invariant.
    pub fn from_snapshot(s: &CoverageSnapshot) -> Result<Self> {
        let mut m = CoverageMatrix::new(s.n_classes, s.n_bins, s.cap)?;
        if s.counts.len() != m.counts.len() {
            return Err(Error::Data(format!(
                "snapshot has {} counts, expected {}",
                s.counts.len(),
                m.counts.len()
            )));
        }
        let infeasible = infeasible_columns(s.n_classes, s.n_bins);
        for (i, &c) in s.counts.iter().enumerate() {
            if c > s.cap {
                return Err(Error::Data(format!("cell {i} holds {c} > cap {}", s.cap)));
            }
            if c > 0 && i % s.n_bins < infeasible {
                return Err(Error::Data(format!("infeasible cell {i} is occupied")));
            }
        }
        m.counts.clone_from(&s.counts);
        m.total_assigned = s.counts.iter().map(|&c| u64::from(c)).sum();
        Ok(m)
    }
}

/// Serialized coverage state for reports and resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSnapshot {
    pub n_classes: usize,
    pub n_bins: usize,
    pub cap: u32,
    /// Row-major.
    pub counts: Vec<u32>,
    pub cdc: f64,
    pub kcdc: f64,
    pub iteration: u64,
    #[serde(default = "default_true")]
    pub exclude_infeasible: bool,
}

fn default_true() -> bool {
    true
}

impl CoverageSnapshot {
    /// True when the stored scores agree with the stored counts.
    pub fn is_consistent(&self) -> bool {
        match CoverageMatrix::from_snapshot(self) {
            Ok(m) => {
                m.cdc_score(self.exclude_infeasible) == self.cdc
                    && m.kcdc_score(self.exclude_infeasible) == self.kcdc
            }
            Err(_) => false,
        }
    }
}
