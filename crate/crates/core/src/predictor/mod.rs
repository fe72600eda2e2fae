//! Predictors `p(x1 | x_t, cond)`: per-position logits over `[K]`.

mod model;
mod oracle;

pub use model::{
    loss_and_grads, train, Checkpoint, Corruption, LossTrace, ModelDims, TrainConfig, TrainExample, TrainableModel,
};
pub use oracle::{oracle_posterior, MaskedOracle, OraclePredictor};

use crate::error::{Error, Result};
use crate::schedule::FrameSchedule;
use crate::sequence::TokenSequence;

/// Stand-in for `ln 0` so that logits stay finite.
pub const LOG_ZERO: f64 = -1e30;

/// Per-position logits, row-major `D x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    k: usize,
    values: Vec<f64>,
}

impl Logits {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || !values.len().is_multiple_of(k) {
            return Err(Error::invalid(format!(
                "{} logits do not tile rows of {k}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logit {v}")));
        }
        Ok(Logits { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn positions(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.values[pos * self.k..(pos + 1) * self.k]
    }

    pub fn probs(&self, pos: usize) -> Vec<f64> {
        softmax(self.row(pos))
    }

    pub fn log_probs(&self, pos: usize) -> Vec<f64> {
        let row = self.row(pos);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter().map(|v| v - lse).collect()
    }

    /// Most likely symbol; ties go to the lowest index.
    pub fn argmax(&self, pos: usize) -> usize {
        let row = self.row(pos);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// A model of the clean sequence given a noisy one.
///
/// `schedule` carries the effective (already shifted) per-frame times.
/// Implementations must be safe to call concurrently.
pub trait Predictor: Sync {
    /// Output vocabulary size.
    fn k(&self) -> usize;

    fn predict(&self, x_t: &TokenSequence, schedule: &FrameSchedule, condition: Option<usize>) -> Result<Logits>;
}
