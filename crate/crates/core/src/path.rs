//! Metric probability path `p_t(x | x1) = softmax(-beta_t * d(x, x1))` with
//! `beta_t = c * (t / (1 - t))^alpha`, and the resolution-dependent shift
//! `t' = t / (t + lambda * (1 - t))`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codebook::DistanceMatrix;
use crate::error::{Error, Result};
use crate::schedule::FrameSchedule;
use crate::sequence::TokenSequence;

/// Probabilities below this are flushed to zero before renormalising.
const FLUSH_BELOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub alpha: f64,
    pub c: f64,
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PathParams {
    fn default() -> Self {
        PathParams {
            alpha: 1.0,
            c: 5.0,
            lambda: 1.0,
        }
    }
}

impl PathParams {
    pub fn new(alpha: f64, c: f64, lambda: f64) -> Result<Self> {
        let p = PathParams { alpha, c, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("c", self.c), ("lambda", self.lambda)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "path parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        PathParams { lambda, ..self }
    }

    /// Per-token path probabilities toward a target at time `t`, with the
    /// deterministic branch at `t = 1`. `t` is used as given (no shift).
    pub fn probs_at(&self, dist_row: &[f64], t: f64) -> Result<Vec<f64>> {
        if t >= 1.0 {
            return Ok(point_mass(dist_row));
        }
        Ok(conditional_probs(dist_row, beta(self, t)?))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            t,
            msg: "time must lie in [0, 1]",
        });
    }
    Ok(())
}

/// `beta_t = c * (t / (1 - t))^alpha` for `t in [0, 1)`.
pub fn beta(params: &PathParams, t: f64) -> Result<f64> {
    check_time(t)?;
    if t == 1.0 {
        return Err(Error::Domain {
            t,
            msg: "deterministic limit: beta is infinite at t = 1",
        });
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(params.c * (t / (1.0 - t)).powf(params.alpha))
}

/// `d beta / dt = c * alpha * (t / (1 - t))^(alpha - 1) / (1 - t)^2`.
pub fn beta_dt(params: &PathParams, t: f64) -> Result<f64> {
    check_time(t)?;
    if t == 1.0 {
        return Err(Error::Domain {
            t,
            msg: "beta' is singular at t = 1",
        });
    }
    if t == 0.0 {
        return match params.alpha.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) | None => Err(Error::Domain {
                t,
                msg: "beta' is singular at t = 0 for alpha < 1",
            }),
            Some(std::cmp::Ordering::Equal) => Ok(params.c),
            Some(std::cmp::Ordering::Greater) => Ok(0.0),
        };
    }
    let s = 1.0 - t;
    Ok(params.c * params.alpha * (t / s).powf(params.alpha - 1.0) / (s * s))
}

/// Shifted timestep `t / (t + lambda (1 - t))`; a bijection of `[0, 1]`.
pub fn shift_time(t: f64, lambda: f64) -> Result<f64> {
    check_time(t)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("shift lambda must be positive, got {lambda}")));
    }
    if t == 0.0 || t == 1.0 {
        return Ok(t);
    }
    Ok(t / (t + lambda * (1.0 - t)))
}

/// `softmax(-beta * dist_row)` with max-subtraction.
pub fn conditional_probs(dist_row: &[f64], beta: f64) -> Vec<f64> {
    let d_min = dist_row.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist_row.iter().map(|&d| (-beta * (d - d_min)).exp()).collect();
    let z: f64 = p.iter().sum();
    let mut flushed = false;
    for v in &mut p {
        *v /= z;
        if *v < FLUSH_BELOW && *v > 0.0 {
            *v = 0.0;
            flushed = true;
        }
    }
    if flushed {
        let renorm: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= renorm);
    }
    p
}

/// `log softmax(-beta * dist_row)`.
pub fn log_conditional_probs(dist_row: &[f64], beta: f64) -> Vec<f64> {
    let d_min = dist_row.iter().copied().fold(f64::INFINITY, f64::min);
    let logits: Vec<f64> = dist_row.iter().map(|&d| -beta * (d - d_min)).collect();
    let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
    logits.into_iter().map(|l| l - lse).collect()
}

/// Point mass at the zero-distance entry.
pub fn point_mass(dist_row: &[f64]) -> Vec<f64> {
    dist_row.iter().map(|&d| if d == 0.0 { 1.0 } else { 0.0 }).collect()
}

/// Time derivative of the path: `p(y) * beta_dt * (E_p[d] - d(y))`.
pub fn conditional_probs_dt(dist_row: &[f64], beta: f64, beta_dt: f64) -> Vec<f64> {
    let p = conditional_probs(dist_row, beta);
    probs_dt_from(&p, dist_row, beta_dt)
}

pub(crate) fn probs_dt_from(p: &[f64], dist_row: &[f64], beta_dt: f64) -> Vec<f64> {
    if beta_dt == 0.0 {
        return vec![0.0; p.len()];
    }
    let mean_d: f64 = p.iter().zip(dist_row).map(|(p, d)| p * d).sum();
    p.iter()
        .zip(dist_row)
        .map(|(p, d)| p * beta_dt * (mean_d - d))
        .collect()
}

/// Draws an index from `probs` (assumed to sum to one).
pub fn sample_categorical(probs: &[f64], rng: &mut crate::Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Forward corruption `x_t ~ p_t(. | x1)` frame by frame. Each frame's time
/// is shifted by `params.lambda` first; frames at `t = 1` are copied.
pub fn sample_xt(
    x1: &TokenSequence,
    schedule: &FrameSchedule,
    dist: &DistanceMatrix,
    params: &PathParams,
    rng: &mut crate::Rng,
) -> Result<TokenSequence> {
    let layout = x1.layout();
    if schedule.len() != layout.frames {
        return Err(Error::invalid(format!(
            "schedule has {} frames, sequence has {}",
            schedule.len(),
            layout.frames
        )));
    }
    x1.check_vocab(dist.k())?;
    let mut out = x1.clone();
    for frame in 0..layout.frames {
        let t = shift_time(schedule.times()[frame], params.lambda)?;
        if t == 1.0 {
            continue;
        }
        let b = beta(params, t)?;
        for pos in layout.frame_range(frame) {
            let target = x1.tokens()[pos] as usize;
            let p = conditional_probs(dist.row(target), b);
            out.tokens_mut()[pos] = sample_categorical(&p, rng) as u32;
        }
    }
    Ok(out)
}
