//! Small trainable predictor and its cross-entropy training loop.
//!
//! Architecture, per position `i` of a D-token input:
//!
//! ```text
//! e_i  = tok[x_i] + pos[i] (+ t_frame(i) * time_w)
//! g    = mean_j e_j                 global context
//! c    = cond[class or null]
//! h1_i = tanh(W1 [e_i; g; c] + b1)
//! h2_i = tanh(W2 h1_i + b2)
//! out  = Wo h2_i + bo               logits over k
//! ```
//!
//! `Wo` and `bo` start at zero so a fresh model predicts uniformly.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codebook::DistanceMatrix;
use crate::error::{Error, Result};
use crate::io;
use crate::path::{sample_xt, PathParams};
use crate::schedule::{train_schedule, FrameSchedule};
use crate::sequence::{FrameLayout, TokenSequence};
use crate::toydata::ToyDistribution;

use super::{Logits, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input vocabulary: `k`, or `k + 1` when token `k` is MASK.
    pub vocab_in: usize,
    pub k: usize,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Condition classes, not counting the null condition.
    pub classes: usize,
    #[serde(default)]
    pub use_time_input: bool,
}

impl ModelDims {
    pub fn new(k: usize, layout: FrameLayout, classes: usize) -> Self {
        ModelDims {
            vocab_in: k,
            k,
            frames: layout.frames,
            tokens_per_frame: layout.tokens_per_frame,
            embed: 16,
            hidden: 32,
            classes,
            use_time_input: true,
        }
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout {
            frames: self.frames,
            tokens_per_frame: self.tokens_per_frame,
        }
    }

    fn positions(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    fn offsets(&self) -> Offsets {
        let e = self.embed;
        let h = self.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let tok = take(self.vocab_in * e);
        let pos = take(self.positions() * e);
        let cond = take((self.classes + 1) * e);
        let time = take(e);
        let w1 = take(h * 3 * e);
        let b1 = take(h);
        let w2 = take(h * h);
        let b2 = take(h);
        let wo = take(self.k * h);
        let bo = take(self.k);
        Offsets {
            tok,
            pos,
            cond,
            time,
            w1,
            b1,
            w2,
            b2,
            wo,
            bo,
            total: at,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 || self.vocab_in < self.k || self.embed == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!("invalid model dims {self:?}")));
        }
        self.layout().validate()
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    tok: usize,
    pos: usize,
    cond: usize,
    time: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wo: usize,
    bo: usize,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainableModel {
    dims: ModelDims,
    params: Vec<f64>,
}

struct Forward {
    cond_idx: usize,
    /// D x 3E
    inputs: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
}

impl TrainableModel {
    /// Random embeddings and hidden layers, zero output head.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let o = dims.offsets();
        let mut rng = crate::rng_stream(seed, 0);
        let mut params = vec![0.0; o.total];
        let e = dims.embed as f64;
        let h = dims.hidden as f64;
        let mut fill = |range: std::ops::Range<usize>, scale: f64| {
            for v in &mut params[range] {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        };
        fill(o.tok..o.w1, 0.5);
        fill(o.w1..o.b1, 1.0 / (3.0 * e).sqrt());
        fill(o.w2..o.b2, 1.0 / h.sqrt());
        Ok(TrainableModel { dims, params })
    }

    /// Like [`TrainableModel::new`] but with a random output head too.
    pub fn new_random(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut m = Self::new(dims, seed)?;
        let o = dims.offsets();
        let mut rng = crate::rng_stream(seed, 1);
        for v in &mut m.params[o.wo..o.total] {
            *v = rng.sample::<f64, _>(StandardNormal) / (dims.hidden as f64).sqrt();
        }
        Ok(m)
    }

    pub fn from_params(dims: ModelDims, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.offsets().total {
            return Err(Error::Format {
                what: "checkpoint",
                msg: format!("expected {} parameters, found {}", dims.offsets().total, params.len()),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("checkpoint contains non-finite parameters".into()));
        }
        Ok(TrainableModel { dims, params })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_use_time_input(&mut self, on: bool) {
        self.dims.use_time_input = on;
    }

    fn cond_index(&self, condition: Option<usize>) -> Result<usize> {
        match condition {
            None => Ok(self.dims.classes),
            Some(c) if c < self.dims.classes => Ok(c),
            Some(c) => Err(Error::invalid(format!(
                "unknown condition {c}; model knows {} classes",
                self.dims.classes
            ))),
        }
    }

    fn forward(&self, x: &TokenSequence, times: &[f64], condition: Option<usize>) -> Result<Forward> {
        let d = &self.dims;
        if x.layout() != d.layout() || times.len() != d.frames {
            return Err(Error::invalid("model input does not match its layout"));
        }
        x.check_vocab(d.vocab_in)?;
        let o = d.offsets();
        let p = &self.params;
        let (e, h, k, n) = (d.embed, d.hidden, d.k, d.positions());
        let cond_idx = self.cond_index(condition)?;

        let mut inputs = vec![0.0; n * 3 * e];
        let mut g = vec![0.0; e];
        for (i, &tok) in x.tokens().iter().enumerate() {
            let t = times[x.layout().frame_of(i)];
            let row = &mut inputs[i * 3 * e..i * 3 * e + e];
            for j in 0..e {
                let mut v = p[o.tok + tok as usize * e + j] + p[o.pos + i * e + j];
                if d.use_time_input {
                    v += t * p[o.time + j];
                }
                row[j] = v;
                g[j] += v / n as f64;
            }
        }
        for i in 0..n {
            let base = i * 3 * e;
            inputs[base + e..base + 2 * e].copy_from_slice(&g);
            inputs[base + 2 * e..base + 3 * e].copy_from_slice(&p[o.cond + cond_idx * e..o.cond + (cond_idx + 1) * e]);
        }

        let mut h1 = vec![0.0; n * h];
        let mut h2 = vec![0.0; n * h];
        let mut logits = vec![0.0; n * k];
        for i in 0..n {
            let input = &inputs[i * 3 * e..(i + 1) * 3 * e];
            for r in 0..h {
                let w = &p[o.w1 + r * 3 * e..o.w1 + (r + 1) * 3 * e];
                h1[i * h + r] = (p[o.b1 + r] + dot(w, input)).tanh();
            }
            let a = &h1[i * h..(i + 1) * h];
            for r in 0..h {
                let w = &p[o.w2 + r * h..o.w2 + (r + 1) * h];
                h2[i * h + r] = (p[o.b2 + r] + dot(w, a)).tanh();
            }
            let a = &h2[i * h..(i + 1) * h];
            for r in 0..k {
                let w = &p[o.wo + r * h..o.wo + (r + 1) * h];
                logits[i * k + r] = p[o.bo + r] + dot(w, a);
            }
        }
        Ok(Forward {
            cond_idx,
            inputs,
            h1,
            h2,
            logits,
        })
    }

    /// Accumulates into `grad` the gradient for one example given
    /// `dlogits` (D x k).
    fn backward(&self, x: &TokenSequence, times: &[f64], fwd: &Forward, dlogits: &[f64], grad: &mut [f64]) {
        let d = &self.dims;
        let o = d.offsets();
        let p = &self.params;
        let (e, h, k, n) = (d.embed, d.hidden, d.k, d.positions());
        let mut d_embed = vec![0.0; n * e];
        let mut d_ctx = vec![0.0; e];
        let mut d_cond = vec![0.0; e];
        let mut dh = vec![0.0; h];
        let mut da2 = vec![0.0; h];
        let mut da1 = vec![0.0; h];
        for i in 0..n {
            let dl = &dlogits[i * k..(i + 1) * k];
            if dl.iter().all(|&v| v == 0.0) {
                continue;
            }
            let h1 = &fwd.h1[i * h..(i + 1) * h];
            let h2 = &fwd.h2[i * h..(i + 1) * h];
            let input = &fwd.inputs[i * 3 * e..(i + 1) * 3 * e];

            dh.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..k {
                grad[o.bo + r] += dl[r];
                for c in 0..h {
                    grad[o.wo + r * h + c] += dl[r] * h2[c];
                    dh[c] += p[o.wo + r * h + c] * dl[r];
                }
            }
            for c in 0..h {
                da2[c] = dh[c] * (1.0 - h2[c] * h2[c]);
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..h {
                grad[o.b2 + r] += da2[r];
                for c in 0..h {
                    grad[o.w2 + r * h + c] += da2[r] * h1[c];
                    dh[c] += p[o.w2 + r * h + c] * da2[r];
                }
            }
            for c in 0..h {
                da1[c] = dh[c] * (1.0 - h1[c] * h1[c]);
            }
            for r in 0..h {
                grad[o.b1 + r] += da1[r];
                let row = o.w1 + r * 3 * e;
                for j in 0..3 * e {
                    grad[row + j] += da1[r] * input[j];
                    let back = p[row + j] * da1[r];
                    match j / e {
                        0 => d_embed[i * e + j] += back,
                        1 => d_ctx[j - e] += back,
                        _ => d_cond[j - 2 * e] += back,
                    }
                }
            }
        }
        for (i, &tok) in x.tokens().iter().enumerate() {
            let t = times[x.layout().frame_of(i)];
            for j in 0..e {
                let v = d_embed[i * e + j] + d_ctx[j] / n as f64;
                grad[o.tok + tok as usize * e + j] += v;
                grad[o.pos + i * e + j] += v;
                if d.use_time_input {
                    grad[o.time + j] += t * v;
                }
            }
        }
        for j in 0..e {
            grad[o.cond + fwd.cond_idx * e + j] += d_cond[j];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Predictor for TrainableModel {
    fn k(&self) -> usize {
        self.dims.k
    }

    fn predict(&self, x_t: &TokenSequence, schedule: &FrameSchedule, condition: Option<usize>) -> Result<Logits> {
        let fwd = self.forward(x_t, schedule.times(), condition)?;
        Logits::new(self.dims.k, fwd.logits)
    }
}

/// One supervised pair for the cross-entropy objective.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub x1: TokenSequence,
    pub x_t: TokenSequence,
    /// Effective (shifted) per-frame times.
    pub schedule: FrameSchedule,
    pub condition: Option<usize>,
    /// Positions that contribute to the loss.
    pub loss_mask: Vec<bool>,
}

impl TrainExample {
    /// Loss over every position outside pinned frames.
    pub fn new(x1: TokenSequence, x_t: TokenSequence, schedule: FrameSchedule, condition: Option<usize>) -> Self {
        let layout = x1.layout();
        let loss_mask = (0..layout.len())
            .map(|pos| !schedule.pinned()[layout.frame_of(pos)])
            .collect();
        TrainExample {
            x1,
            x_t,
            schedule,
            condition,
            loss_mask,
        }
    }
}

/// Mean cross-entropy of `x1` under the model, over all counted positions
/// in the batch, and its gradient with respect to every parameter.
pub fn loss_and_grads(model: &TrainableModel, batch: &[TrainExample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let k = model.dims.k;
    let count: usize = batch.iter().map(|ex| ex.loss_mask.iter().filter(|&&m| m).count()).sum();
    let mut grad = vec![0.0; model.params.len()];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for ex in batch {
        if ex.loss_mask.len() != ex.x1.len() || ex.x1.layout() != ex.x_t.layout() {
            return Err(Error::invalid("training example disagrees with itself on layout"));
        }
        ex.x1.check_vocab(k)?;
        let fwd = model.forward(&ex.x_t, ex.schedule.times(), ex.condition)?;
        let mut dlogits = vec![0.0; fwd.logits.len()];
        for (pos, &target) in ex.x1.tokens().iter().enumerate() {
            if !ex.loss_mask[pos] {
                continue;
            }
            let row = &fwd.logits[pos * k..(pos + 1) * k];
            let probs = super::softmax(row);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[target as usize];
            for (j, p) in probs.iter().enumerate() {
                let onehot = if j == target as usize { 1.0 } else { 0.0 };
                dlogits[pos * k + j] = (p - onehot) / count as f64;
            }
        }
        model.backward(&ex.x_t, ex.schedule.times(), &fwd, &dlogits, &mut grad);
    }
    let loss = loss / count as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {loss}")));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// The rate decays linearly from `learning_rate` to
    /// `learning_rate * final_lr_fraction` over the run.
    pub final_lr_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Probability of replacing the condition with the null condition.
    pub cond_drop_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            final_lr_fraction: 0.0,
            steps: 20_000,
            batch_size: 32,
            cond_drop_prob: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::invalid(format!(
                "final_lr_fraction {} outside [0, 1]",
                self.final_lr_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.cond_drop_prob) {
            return Err(Error::invalid(format!(
                "cond_drop_prob {} outside [0, 1)",
                self.cond_drop_prob
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// How training inputs are corrupted.
#[derive(Debug, Clone, Copy)]
pub enum Corruption<'a> {
    /// The metric path with per-frame asynchronous times, shifted by `params.lambda`.
    Metric {
        dist: &'a DistanceMatrix,
        params: PathParams,
    },
    /// Masked diffusion: each position becomes MASK (token `k`) with a
    /// per-example rate `r ~ U(0, 1)`; loss on masked positions only.
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    /// Running minimum of an exponential moving average of `loss`.
    pub smoothed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    const EMA: f64 = 0.99;

    fn push(&mut self, step: usize, loss: f64, ema: &mut Option<f64>) {
        let e = match *ema {
            Some(prev) => Self::EMA * prev + (1.0 - Self::EMA) * loss,
            None => loss,
        };
        *ema = Some(e);
        let smoothed = self.rows.last().map_or(e, |r| r.smoothed.min(e));
        self.rows.push(TraceRow { step, loss, smoothed });
    }

    pub fn initial(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn last_smoothed(&self) -> Option<f64> {
        self.rows.last().map(|r| r.smoothed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,smoothed\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.smoothed));
        }
        s
    }
}

fn corrupt(
    x1: &TokenSequence,
    corruption: &Corruption,
    k: usize,
    rng: &mut crate::Rng,
) -> Result<(TokenSequence, FrameSchedule, Vec<bool>)> {
    let layout = x1.layout();
    match corruption {
        Corruption::Metric { dist, params } => {
            let sched = train_schedule(layout, rng);
            let xt = sample_xt(x1, &sched, dist, params, rng)?;
            Ok((xt, sched.shifted(params.lambda)?, vec![true; layout.len()]))
        }
        Corruption::Mask => {
            let rate: f64 = rng.gen();
            let mut xt = x1.clone();
            let mut mask = vec![false; layout.len()];
            for (pos, m) in mask.iter_mut().enumerate() {
                if rng.gen::<f64>() < rate {
                    xt.tokens_mut()[pos] = k as u32;
                    *m = true;
                }
            }
            Ok((xt, FrameSchedule::uniform(layout.frames, 0.0), mask))
        }
    }
}

/// Plain SGD on the cross-entropy objective with fresh corrupted samples
/// each step. Returns the per-step loss trace.
pub fn train(
    model: &mut TrainableModel,
    data: &ToyDistribution,
    config: &TrainConfig,
    corruption: Corruption,
) -> Result<LossTrace> {
    config.validate()?;
    let dims = *model.dims();
    if data.layout() != dims.layout() || data.k() != dims.k {
        return Err(Error::invalid(
            "training data does not match the model layout or vocabulary",
        ));
    }
    if matches!(corruption, Corruption::Mask) && dims.vocab_in <= dims.k {
        return Err(Error::invalid("masked training needs a model with a MASK input symbol"));
    }
    let diverged = 10.0 * (dims.k as f64).ln();
    let mut rng = crate::rng_stream(config.seed, 1);
    let mut trace = LossTrace::default();
    let mut ema = None;
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let (x1, class) = data.sample(&mut rng);
            let drop = rng.gen::<f64>() < config.cond_drop_prob;
            let condition = if dims.classes == 0 || drop { None } else { class };
            let (x_t, schedule, loss_mask) = corrupt(&x1, &corruption, dims.k, &mut rng)?;
            batch.push(TrainExample {
                x1,
                x_t,
                schedule,
                condition,
                loss_mask,
            });
        }
        let (loss, grad) = loss_and_grads(model, &batch)?;
        let progress = step as f64 / config.steps as f64;
        let lr = config.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * progress);
        for (p, g) in model.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        trace.push(step, loss, &mut ema);
        if step >= 100 && ema.is_some_and(|e| e > diverged) {
            return Err(Error::Numeric(format!(
                "training diverged at step {step}: smoothed loss {:.3} > {diverged:.3}",
                ema.unwrap_or(f64::NAN)
            )));
        }
    }
    Ok(trace)
}

/// Serialized model: `{"dims": ..., "params": [...], "config": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub params: Vec<f64>,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(model: &TrainableModel, config: &TrainConfig) -> Self {
        Checkpoint {
            dims: model.dims,
            params: model.params.clone(),
            config: config.clone(),
        }
    }

    pub fn into_model(self) -> Result<TrainableModel> {
        TrainableModel::from_params(self.dims, self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "checkpoint",
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(use_time: bool) -> ModelDims {
        let mut d = ModelDims::new(4, FrameLayout::new(2, 2).unwrap(), 3);
        d.embed = 5;
        d.hidden = 7;
        d.use_time_input = use_time;
        d
    }

    fn random_batch(model: &TrainableModel, seed: u64, n: usize) -> Vec<TrainExample> {
        let mut rng = crate::rng_stream(seed, 7);
        let layout = model.dims().layout();
        (0..n)
            .map(|i| {
                let rand_seq = |rng: &mut crate::Rng| {
                    TokenSequence::new(layout, (0..layout.len()).map(|_| rng.gen_range(0..4)).collect()).unwrap()
                };
                let x1 = rand_seq(&mut rng);
                let xt = rand_seq(&mut rng);
                let mut times: Vec<f64> = (0..layout.frames).map(|_| rng.gen()).collect();
                let mut pinned = vec![false; layout.frames];
                if i == 0 {
                    times[0] = 1.0;
                    pinned[0] = true;
                }
                let sched = FrameSchedule::new(times, pinned).unwrap();
                let cond = if i % 2 == 0 { Some(i % 3) } else { None };
                TrainExample::new(x1, xt, sched, cond)
            })
            .collect()
    }

    #[test]
    fn fresh_head_is_uniform() {
        let m = TrainableModel::new(dims(false), 1).unwrap();
        let layout = m.dims().layout();
        let x = TokenSequence::new(layout, vec![0, 1, 2, 3]).unwrap();
        let out = m.predict(&x, &FrameSchedule::uniform(2, 0.3), Some(1)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
        let batch = random_batch(&m, 3, 4);
        let (loss, _) = loss_and_grads(&m, &batch).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_prediction() {
        let m = TrainableModel::new_random(dims(true), 5).unwrap();
        let x = TokenSequence::new(m.dims().layout(), vec![3, 1, 2, 0]).unwrap();
        let s = FrameSchedule::uniform(2, 0.6);
        assert_eq!(m.predict(&x, &s, None).unwrap(), m.predict(&x, &s, None).unwrap());
        assert!(m.predict(&x, &s, Some(3)).is_err());
    }

    #[test]
    fn point_mass_has_zero_loss() {
        // a huge output bias on the target symbol
        let mut d = dims(false);
        d.frames = 1;
        d.tokens_per_frame = 1;
        let mut m = TrainableModel::new(d, 0).unwrap();
        let bo = d.offsets().bo;
        m.params_mut()[bo + 2] = 800.0;
        let layout = d.layout();
        let x1 = TokenSequence::new(layout, vec![2]).unwrap();
        let ex = TrainExample::new(x1.clone(), x1, FrameSchedule::uniform(1, 0.5), None);
        let (loss, _) = loss_and_grads(&m, &[ex]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn pinned_positions_do_not_count() {
        let m = TrainableModel::new_random(dims(false), 2).unwrap();
        let layout = m.dims().layout();
        let x = TokenSequence::new(layout, vec![0, 1, 2, 3]).unwrap();
        let all = FrameSchedule::new(vec![1.0, 1.0], vec![true, true]).unwrap();
        let ex = TrainExample::new(x.clone(), x, all, None);
        let (loss, grad) = loss_and_grads(&m, &[ex]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let model = TrainableModel::new_random(dims(true), 100 + seed).unwrap();
            let batch = random_batch(&model, seed, 5);
            let (_, grad) = loss_and_grads(&model, &batch).unwrap();
            let mut rng = crate::rng_stream(seed, 99);
            for _ in 0..25 {
                let i = rng.gen_range(0..grad.len());
                let h = 1e-4;
                let mut plus = model.clone();
                plus.params_mut()[i] += h;
                let mut minus = model.clone();
                minus.params_mut()[i] -= h;
                let fd =
                    (loss_and_grads(&plus, &batch).unwrap().0 - loss_and_grads(&minus, &batch).unwrap().0) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-4, "seed {seed} coord {i}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let q = ToyDistribution::new(
            FrameLayout::new(1, 1).unwrap(),
            4,
            vec![vec![0], vec![3]],
            vec![0.5, 0.5],
            None,
        )
        .unwrap();
        let d = ModelDims::new(4, q.layout(), 0);
        let mut m = TrainableModel::new(d, 0).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let trace = train(&mut m, &q, &cfg, Corruption::Mask);
        assert!(trace.is_err(), "mask training needs a MASK symbol");
        let dist = crate::codebook::Codebook::new(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]])
            .unwrap()
            .distance_matrix()
            .unwrap();
        let trace = train(
            &mut m,
            &q,
            &cfg,
            Corruption::Metric {
                dist: &dist,
                params: PathParams::default(),
            },
        )
        .unwrap();
        assert!(trace.rows.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = TrainableModel::new_random(dims(false), 9).unwrap();
        let cp = Checkpoint::new(&m, &TrainConfig::default());
        let path = dir.path().join("ckpt.json");
        cp.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, cp);
        assert_eq!(back.into_model().unwrap(), m);
    }
}
