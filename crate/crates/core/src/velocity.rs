//! CTMC velocity field for the metric path and the Euler sampler.
//!
//! For a target `x1` the path derivative is
//! `dp(y) = p(y) * beta' * (E_p[d] - d(y))`: tokens closer than the mean
//! distance gain mass, the rest lose it. The generator moves mass from
//! losers to gainers in proportion,
//!
//! `u(y | x) = [dp(y)]+ [-dp(x)]+ / (p(x) * sum_z [dp(z)]+)`,
//!
//! which simplifies to `beta' * (d(x) - E)+ * w(y) / sum w` with
//! `w(y) = p(y) * (E - d(y))+`. The simplified form is what gets evaluated;
//! it stays finite when `p(x)` underflows.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codebook::DistanceMatrix;
use crate::error::{Error, Result};
use crate::path::{self, beta, beta_dt, conditional_probs, sample_categorical, shift_time, PathParams};
use crate::predictor::{Logits, Predictor};
use crate::schedule::InferenceGrid;
use crate::sequence::{FrameLayout, TokenSequence};

/// The last Euler target is capped here instead of reaching the singular `t = 1`.
pub const T_CAP: f64 = 1.0 - 1e-4;
/// Rates are evaluated no earlier than this (`beta'` is singular at 0 for alpha < 1).
pub const T_FLOOR: f64 = 1e-6;

/// What to do when `h * outflow > 1` for a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampPolicy {
    /// Rescale that token's jump probabilities to total one.
    #[default]
    Renormalize,
    /// Shrink the step for the whole sequence to `1 / max outflow`.
    Clip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub params: PathParams,
    #[serde(default = "default_cfg_scale")]
    pub cfg_scale: f64,
    #[serde(default)]
    pub clamp: ClampPolicy,
}

fn default_cfg_scale() -> f64 {
    SamplerConfig::DEFAULT_CFG_SCALE
}

impl SamplerConfig {
    pub const DEFAULT_CFG_SCALE: f64 = 7.0;

    pub fn new(steps: usize, params: PathParams) -> Self {
        SamplerConfig {
            steps,
            params,
            cfg_scale: Self::DEFAULT_CFG_SCALE,
            clamp: ClampPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler needs at least one step"));
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(Error::invalid(format!(
                "cfg scale must be >= 0, got {}",
                self.cfg_scale
            )));
        }
        self.params.validate()
    }
}

/// One generator row: off-diagonal jump rates out of `current`, with the
/// diagonal entry closing the row to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector {
    pub current: usize,
    pub rates: Vec<f64>,
}

impl RateVector {
    pub fn outflow(&self) -> f64 {
        -self.rates[self.current]
    }
}

/// Jump structure toward one target at one time: total outflow for a state
/// is `beta' * (d(x) - mean)+`, split over gainers by `weights`.
#[derive(Debug, Clone)]
pub(crate) struct Flow {
    beta_dt: f64,
    mean_d: f64,
    /// normalised gainer weights
    weights: Vec<f64>,
}

impl Flow {
    pub(crate) fn new(dist_row: &[f64], beta: f64, beta_dt: f64) -> Self {
        let p = conditional_probs(dist_row, beta);
        let mean_d: f64 = p.iter().zip(dist_row).map(|(p, d)| p * d).sum();
        let mut weights: Vec<f64> = p.iter().zip(dist_row).map(|(p, d)| p * (mean_d - d).max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // fully collapsed path: all mass flows to the target
            weights = path::point_mass(dist_row);
        }
        Flow {
            beta_dt,
            mean_d,
            weights,
        }
    }

    pub(crate) fn outflow(&self, d_current: f64) -> f64 {
        self.beta_dt * (d_current - self.mean_d).max(0.0)
    }
}

/// Generator row `u(. | current)` toward `target` at time `t in (0, 1)`.
pub fn conditional_rate(
    current: usize,
    target: usize,
    t: f64,
    dist: &DistanceMatrix,
    params: &PathParams,
) -> Result<RateVector> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain {
            t,
            msg: "rates are defined on the open interval (0, 1)",
        });
    }
    let k = dist.k();
    if current >= k || target >= k {
        return Err(Error::invalid(format!("token index outside vocabulary of size {k}")));
    }
    let row = dist.row(target);
    let flow = Flow::new(row, beta(params, t)?, beta_dt(params, t)?);
    let out = flow.outflow(row[current]);
    let mut rates: Vec<f64> = flow.weights.iter().map(|w| w * out).collect();
    rates[current] = 0.0;
    rates[current] = -rates.iter().sum::<f64>();
    Ok(RateVector { current, rates })
}

/// Classifier-free guidance in logit space: `uncond + scale * (cond - uncond)`.
pub fn guided_logits(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::invalid(format!(
            "guidance needs equal lengths, got {} and {}",
            cond.len(),
            uncond.len()
        )));
    }
    Ok(cond.iter().zip(uncond).map(|(c, u)| u + scale * (c - u)).collect())
}

/// One Euler step of length `h` from time `t`, each token moving toward its
/// own predicted target. Positions flagged in `frozen` are left untouched.
#[allow(clippy::too_many_arguments)]
pub fn euler_step(
    x_t: &TokenSequence,
    x1_hat: &TokenSequence,
    frozen: &[bool],
    t: f64,
    h: f64,
    dist: &DistanceMatrix,
    params: &PathParams,
    clamp: ClampPolicy,
    rng: &mut crate::Rng,
) -> Result<TokenSequence> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if x_t.layout() != x1_hat.layout() || frozen.len() != x_t.len() {
        return Err(Error::invalid("euler step inputs disagree on layout"));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain {
            t,
            msg: "rates are defined on the open interval (0, 1)",
        });
    }
    let b = beta(params, t)?;
    let bd = beta_dt(params, t)?;
    let mut cache: Vec<Option<Flow>> = vec![None; dist.k()];
    let flows: Vec<Option<(usize, f64)>> = x_t
        .tokens()
        .iter()
        .zip(x1_hat.tokens())
        .zip(frozen)
        .map(|((&cur, &tgt), &fz)| {
            if fz {
                return None;
            }
            let flow = cache[tgt as usize].get_or_insert_with(|| Flow::new(dist.row(tgt as usize), b, bd));
            Some((tgt as usize, flow.outflow(dist.get(tgt as usize, cur as usize))))
        })
        .collect();

    let h = match clamp {
        ClampPolicy::Renormalize => h,
        ClampPolicy::Clip => {
            let max_out = flows.iter().flatten().map(|&(_, o)| o).fold(0.0, f64::max);
            if max_out * h > 1.0 {
                1.0 / max_out
            } else {
                h
            }
        }
    };

    let mut out = x_t.clone();
    for (pos, slot) in flows.into_iter().enumerate() {
        let Some((tgt, outflow)) = slot else { continue };
        if outflow <= 0.0 {
            continue;
        }
        let jump = (h * outflow).min(1.0);
        let stay = 1.0 - jump;
        if stay < 0.0 {
            return Err(Error::Numeric(format!("negative stay probability {stay}")));
        }
        if rng.gen::<f64>() < jump {
            let flow = cache[tgt].as_ref().expect("flow cached above");
            out.tokens_mut()[pos] = sample_categorical(&flow.weights, rng) as u32;
        }
    }
    Ok(out)
}

/// Predictor logits with optional classifier-free guidance.
pub(crate) fn predict_guided(
    predictor: &dyn Predictor,
    x: &TokenSequence,
    schedule: &crate::schedule::FrameSchedule,
    condition: Option<usize>,
    cfg_scale: f64,
) -> Result<Logits> {
    let cond = predictor.predict(x, schedule, condition)?;
    match condition {
        Some(_) if cfg_scale != 1.0 => {
            let uncond = predictor.predict(x, schedule, None)?;
            let values = guided_logits(cond.values(), uncond.values(), cfg_scale)?;
            Logits::new(cond.k(), values)
        }
        _ => Ok(cond),
    }
}

/// Draws `x1_hat ~ softmax(logits)` per position; frozen positions keep
/// their current token.
fn draw_targets(logits: &Logits, x: &TokenSequence, frozen: &[bool], rng: &mut crate::Rng) -> TokenSequence {
    let mut hat = x.clone();
    for (pos, _) in frozen.iter().enumerate().filter(|(_, &f)| !f) {
        hat.tokens_mut()[pos] = sample_categorical(&logits.probs(pos), rng) as u32;
    }
    hat
}

/// Generates one sequence by Euler integration of the metric-path CTMC.
///
/// `content` supplies the tokens of frozen frames (pinned conditioning or
/// re-noised history); it is required whenever the grid freezes any frame.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    predictor: &dyn Predictor,
    condition: Option<usize>,
    layout: FrameLayout,
    config: &SamplerConfig,
    grid: &dyn InferenceGrid,
    content: Option<&TokenSequence>,
    dist: &DistanceMatrix,
    rng: &mut crate::Rng,
) -> Result<TokenSequence> {
    config.validate()?;
    let k = dist.k();
    if predictor.k() != k {
        return Err(Error::invalid(format!(
            "predictor vocabulary {} != codebook size {k}",
            predictor.k()
        )));
    }
    let frozen_frames = grid.frozen(layout);
    let frozen: Vec<bool> = (0..layout.len())
        .map(|pos| frozen_frames[layout.frame_of(pos)])
        .collect();
    let content = match content {
        Some(c) if c.layout() != layout => {
            return Err(Error::invalid(
                "conditioning content does not match the sampling layout",
            ))
        }
        Some(c) => {
            c.check_vocab(k)?;
            Some(c)
        }
        None if frozen.iter().any(|&f| f) => {
            return Err(Error::invalid(
                "task mode freezes frames but no conditioning content was given",
            ))
        }
        None => None,
    };

    let mut x = TokenSequence::new(layout, (0..layout.len()).map(|_| rng.gen_range(0..k as u32)).collect())?;
    let overwrite_frozen = |x: &mut TokenSequence| {
        if let Some(c) = content {
            for pos in (0..layout.len()).filter(|&p| frozen[p]) {
                x.tokens_mut()[pos] = c.tokens()[pos];
            }
        }
    };
    overwrite_frozen(&mut x);

    let lambda = config.params.lambda;
    let steps = config.steps;
    for step in 1..=steps {
        let schedule = grid.schedule(layout, step, steps)?.shifted(lambda)?;
        let t = shift_time((step - 1) as f64 / steps as f64, lambda)?;
        let t_next = shift_time(step as f64 / steps as f64, lambda)?.min(T_CAP);
        let logits = predict_guided(predictor, &x, &schedule, condition, config.cfg_scale)?;
        let x1_hat = draw_targets(&logits, &x, &frozen, rng);
        let t_eval = t.clamp(T_FLOOR, T_CAP);
        let h = t_next - t_eval;
        if h > 0.0 {
            x = euler_step(&x, &x1_hat, &frozen, t_eval, h, dist, &config.params, config.clamp, rng)?;
        }
        overwrite_frozen(&mut x);
    }

    // terminal commit: each free token takes its most likely target
    let mut schedule = grid.schedule(layout, steps, steps)?;
    let times: Vec<f64> = schedule
        .times()
        .iter()
        .zip(schedule.pinned())
        .zip(&frozen_frames)
        .map(|((&t, &p), &fz)| if p || fz { t } else { T_CAP })
        .collect();
    schedule = crate::schedule::FrameSchedule::new(times, schedule.pinned().to_vec())?.shifted(lambda)?;
    let logits = predict_guided(predictor, &x, &schedule, condition, config.cfg_scale)?;
    for pos in (0..layout.len()).filter(|&p| !frozen[p]) {
        x.tokens_mut()[pos] = logits.argmax(pos) as u32;
    }
    Ok(x)
}
