//! Exact Bayes posteriors over an enumerable data distribution.

use crate::codebook::DistanceMatrix;
use crate::error::{Error, Result};
use crate::path::{beta, log_conditional_probs, PathParams};
use crate::schedule::FrameSchedule;
use crate::sequence::TokenSequence;
use crate::toydata::ToyDistribution;

use super::{Logits, Predictor, LOG_ZERO};

/// `table[x1 * k + x] = ln p_t(x | x1)` for one frame time.
fn log_path_table(dist: &DistanceMatrix, params: &PathParams, t: f64) -> Result<Vec<f64>> {
    let k = dist.k();
    let mut table = vec![0.0; k * k];
    for target in 0..k {
        let row = &mut table[target * k..(target + 1) * k];
        if t >= 1.0 {
            for (x, v) in row.iter_mut().enumerate() {
                *v = if x == target { 0.0 } else { f64::NEG_INFINITY };
            }
        } else {
            row.copy_from_slice(&log_conditional_probs(dist.row(target), beta(params, t)?));
        }
    }
    Ok(table)
}

/// Per-position marginal posterior `p(x1^i = v | x_t)` under `q`, returned as
/// log-probabilities. Times in `schedule` are used as given (already shifted).
pub fn oracle_posterior(
    q: &ToyDistribution,
    x_t: &TokenSequence,
    schedule: &FrameSchedule,
    condition: Option<usize>,
    dist: &DistanceMatrix,
    params: &PathParams,
) -> Result<Logits> {
    let layout = q.layout();
    let k = q.k();
    if x_t.layout() != layout || schedule.len() != layout.frames {
        return Err(Error::invalid("oracle inputs disagree with the distribution layout"));
    }
    if dist.k() != k {
        return Err(Error::invalid(format!(
            "distance matrix is {}x{0}, distribution has k={k}",
            dist.k()
        )));
    }
    x_t.check_vocab(k)?;
    let mut tables: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut frame_table = Vec::with_capacity(layout.frames);
    for &t in schedule.times() {
        let idx = match tables.iter().position(|(tt, _)| *tt == t) {
            Some(i) => i,
            None => {
                tables.push((t, log_path_table(dist, params, t)?));
                tables.len() - 1
            }
        };
        frame_table.push(idx);
    }
    let xt = x_t.tokens();
    let classes = q.classes();
    let mut log_w = Vec::with_capacity(q.support_len());
    let mut members = Vec::with_capacity(q.support_len());
    for (s, (seq, &prob)) in q.support().iter().zip(q.probs()).enumerate() {
        if let (Some(c), Some(cls)) = (condition, classes) {
            if cls[s] != c {
                continue;
            }
        }
        let mut lw = prob.ln();
        for (pos, (&x1, &x)) in seq.iter().zip(xt).enumerate() {
            let table = &tables[frame_table[layout.frame_of(pos)]].1;
            lw += table[x1 as usize * k + x as usize];
            if lw == f64::NEG_INFINITY {
                break;
            }
        }
        log_w.push(lw);
        members.push(s);
    }
    if let (Some(c), None) = (condition, classes) {
        return Err(Error::invalid(format!(
            "condition {c} given but the distribution has no classes"
        )));
    }
    if members.is_empty() {
        return Err(Error::invalid("posterior over an empty support"));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::invalid(
            "noisy sequence is impossible under every support element",
        ));
    }
    let d = layout.len();
    let mut post = vec![0.0; d * k];
    let mut total = 0.0;
    for (&s, &lw) in members.iter().zip(&log_w) {
        let w = (lw - max).exp();
        if w == 0.0 {
            continue;
        }
        total += w;
        for (pos, &v) in q.support()[s].iter().enumerate() {
            post[pos * k + v as usize] += w;
        }
    }
    let values = post
        .into_iter()
        .map(|w| if w > 0.0 { (w / total).ln() } else { LOG_ZERO })
        .collect();
    Logits::new(k, values)
}

/// The Bayes-optimal predictor for a known distribution.
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor<'a> {
    pub q: &'a ToyDistribution,
    pub dist: &'a DistanceMatrix,
    pub params: PathParams,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(q: &'a ToyDistribution, dist: &'a DistanceMatrix, params: PathParams) -> Self {
        OraclePredictor { q, dist, params }
    }
}

impl Predictor for OraclePredictor<'_> {
    fn k(&self) -> usize {
        self.q.k()
    }

    fn predict(&self, x_t: &TokenSequence, schedule: &FrameSchedule, condition: Option<usize>) -> Result<Logits> {
        oracle_posterior(self.q, x_t, schedule, condition, self.dist, &self.params)
    }
}

/// Bayes posterior for masked corruption: token `k` means MASK, every other
/// token is observed exactly. The schedule is ignored.
#[derive(Debug, Clone, Copy)]
pub struct MaskedOracle<'a> {
    pub q: &'a ToyDistribution,
}

impl Predictor for MaskedOracle<'_> {
    fn k(&self) -> usize {
        self.q.k()
    }

    fn predict(&self, x_t: &TokenSequence, _schedule: &FrameSchedule, condition: Option<usize>) -> Result<Logits> {
        let q = self.q;
        let k = q.k();
        let mask = k as u32;
        x_t.check_vocab(k + 1)?;
        let d = q.layout().len();
        let mut post = vec![0.0; d * k];
        let mut total = 0.0;
        for (s, (seq, &p)) in q.support().iter().zip(q.probs()).enumerate() {
            if let (Some(c), Some(cls)) = (condition, q.classes()) {
                if cls[s] != c {
                    continue;
                }
            }
            if seq.iter().zip(x_t.tokens()).all(|(&a, &b)| b == mask || a == b) {
                total += p;
                for (pos, &v) in seq.iter().enumerate() {
                    post[pos * k + v as usize] += p;
                }
            }
        }
        if total == 0.0 {
            return Err(Error::invalid("observed tokens are inconsistent with the support"));
        }
        let values = post
            .into_iter()
            .map(|w| if w > 0.0 { (w / total).ln() } else { LOG_ZERO })
            .collect();
        Logits::new(k, values)
    }
}
