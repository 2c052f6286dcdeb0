use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ProbMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// First selection percentage.
    pub t_start: f64,
    /// Exclusive upper bound on the selection percentage.
    pub t_end: f64,
    pub t_step: f64,
    pub max_iterations: usize,
    /// Epochs of refitting per iteration.
    pub finetune_epochs: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            t_start: 75.0,
            t_end: 100.0,
            t_step: 5.0,
            max_iterations: 10,
            finetune_epochs: 20,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_start > 0.0 && self.t_start < self.t_end && self.t_end <= 100.0 && self.t_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "curriculum needs 0 < t_start < t_end <= 100 and t_step > 0, got {} / {} / {}",
                self.t_start, self.t_end, self.t_step
            )))
        }
    }

    pub fn iterations(&self) -> usize {
        let span = ((self.t_end - self.t_start) / self.t_step - 1e-9).ceil().max(0.0) as usize;
        span.min(self.max_iterations)
    }

    /// Selection percentages in iteration order.
    pub fn schedule(&self) -> Vec<f64> {
        (0..self.iterations())
            .map(|i| self.t_start + i as f64 * self.t_step)
            .collect()
    }
}

/// Largest class probability of each row, widened to `f64`.
pub fn max_probs(probs: &ProbMatrix) -> Vec<f64> {
    (0..probs.batch())
        .map(|b| probs.row(b).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64)))
        .collect()
}

/// Indices (ascending) of the `ceil(t·n/100)` most confident rows by max
/// class probability. Rows tied with the last admitted value are admitted
/// too, so the result is `⊆`-monotone in `t`.
pub fn select_confident(probs: &ProbMatrix, t: f64) -> Result<Vec<usize>> {
    if !(t > 0.0 && t < 100.0) {
        return Err(Error::InvalidValue(format!("selection percentage must lie in (0, 100), got {t}")));
    }
    let conf = max_probs(probs);
    let n = conf.len();
    let k = ((t * n as f64 / 100.0) - 1e-9).ceil().max(0.0) as usize;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut sorted = conf.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cutoff = sorted[k - 1];
    Ok((0..n).filter(|&i| conf[i] >= cutoff).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub t: f64,
    pub selected: usize,
    pub newly_added: usize,
    /// Unlabeled samples in the cumulative pool.
    pub pool_size: usize,
    pub final_loss: Option<f64>,
    pub epochs_run: usize,
}

/// Cumulative pseudo-labeled pool keyed by unlabeled index.
#[derive(Clone, Debug, Default)]
pub struct CurriculumState {
    pub pool: BTreeMap<usize, Vec<f32>>,
    pub log: Vec<IterationLog>,
    /// Iteration (1-based) in which each unlabeled sample first entered the pool.
    pub first_selected: Vec<Option<usize>>,
}

impl CurriculumState {
    pub fn new(unlabeled: usize) -> Self {
        Self {
            pool: BTreeMap::new(),
            log: Vec::new(),
            first_selected: vec![None; unlabeled],
        }
    }

    /// Adds or refreshes the selected rows with their current predictions.
    /// Returns how many were new.
    pub fn absorb(&mut self, iteration: usize, probs: &ProbMatrix, selected: &[usize]) -> usize {
        let mut fresh = 0;
        for &i in selected {
            if self.pool.insert(i, probs.row(i).to_vec()).is_none() {
                fresh += 1;
            }
            self.first_selected[i].get_or_insert(iteration);
        }
        fresh
    }
}
