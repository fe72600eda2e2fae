//! Exact generation-quality metrics on enumerable tasks, the masked
//! diffusion baseline, and step / shift sweeps.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::DistanceMatrix;
use crate::error::{Error, Result};
use crate::path::{sample_categorical, PathParams};
use crate::predictor::Predictor;
use crate::schedule::{FrameSchedule, TaskMode};
use crate::sequence::{FrameLayout, TokenSequence};
use crate::toydata::ToyDistribution;
use crate::velocity::{sample, ClampPolicy, SamplerConfig};

/// `1/2 * sum_x |freq(x) - q(x)|` over the full joint state space.
pub fn exact_tv(samples: &[TokenSequence], q: &ToyDistribution) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("total variation of an empty sample set"));
    }
    let mut counts: HashMap<&[u32], usize> = HashMap::new();
    for s in samples {
        if s.layout() != q.layout() {
            return Err(Error::invalid("sample layout differs from the distribution"));
        }
        *counts.entry(s.tokens()).or_insert(0) += 1;
    }
    let n = samples.len() as f64;
    let mut tv = 0.0;
    for (seq, &p) in q.support().iter().zip(q.probs()) {
        let f = counts.get(seq.as_slice()).map_or(0.0, |&c| c as f64 / n);
        tv += (f - p).abs();
    }
    for (seq, &c) in &counts {
        if q.index_of(seq).is_none() {
            tv += c as f64 / n;
        }
    }
    Ok((0.5 * tv).clamp(0.0, 1.0))
}

/// TV between two explicit distributions over the same keys.
pub fn tv_between<K: std::hash::Hash + Eq>(a: &HashMap<K, f64>, b: &HashMap<K, f64>) -> f64 {
    let mut tv: f64 = a
        .iter()
        .map(|(key, &pa)| (pa - b.get(key).copied().unwrap_or(0.0)).abs())
        .sum();
    tv += b
        .iter()
        .filter(|(key, _)| !a.contains_key(*key))
        .map(|(_, &pb)| pb)
        .sum::<f64>();
    0.5 * tv
}

/// Number of positions still masked after `step` of `steps` under the
/// cosine unmasking schedule.
pub fn masked_remaining(total: usize, step: usize, steps: usize) -> usize {
    let frac = (FRAC_PI_2 * step as f64 / steps as f64).cos().max(0.0);
    ((total as f64 * frac).floor() as usize).min(total)
}

/// Masked-diffusion (MaskGIT-style) decoding; returns the state after every
/// step. Token `k` is MASK. Each step samples a token at every masked
/// position and commits the most confident ones (confidence = max softmax
/// probability); committed tokens are never revisited.
pub fn masked_baseline_trajectory(
    predictor: &dyn Predictor,
    condition: Option<usize>,
    layout: FrameLayout,
    steps: usize,
    rng: &mut crate::Rng,
) -> Result<Vec<TokenSequence>> {
    if steps == 0 {
        return Err(Error::invalid("masked decoding needs at least one step"));
    }
    let k = predictor.k();
    let mask = k as u32;
    let d = layout.len();
    let mut x = TokenSequence::new(layout, vec![mask; d])?;
    let mut states = Vec::with_capacity(steps);
    for step in 1..=steps {
        let masked: Vec<usize> = (0..d).filter(|&p| x.tokens()[p] == mask).collect();
        let target = masked_remaining(d, step, steps);
        let commit = masked.len().saturating_sub(target);
        if commit > 0 {
            let sched = FrameSchedule::uniform(layout.frames, (step - 1) as f64 / steps as f64);
            let logits = predictor.predict(&x, &sched, condition)?;
            let mut proposals: Vec<(usize, u32, f64)> = masked
                .iter()
                .map(|&pos| {
                    let probs = logits.probs(pos);
                    let conf = probs.iter().copied().fold(0.0, f64::max);
                    (pos, sample_categorical(&probs, rng) as u32, conf)
                })
                .collect();
            proposals.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            for &(pos, tok, _) in proposals.iter().take(commit) {
                x.tokens_mut()[pos] = tok;
            }
        }
        states.push(x.clone());
    }
    Ok(states)
}

pub fn masked_baseline_sample(
    predictor: &dyn Predictor,
    condition: Option<usize>,
    layout: FrameLayout,
    steps: usize,
    rng: &mut crate::Rng,
) -> Result<TokenSequence> {
    let mut states = masked_baseline_trajectory(predictor, condition, layout, steps, rng)?;
    Ok(states.pop().expect("at least one step"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Metric-path CTMC sampler.
    Uniform,
    /// Masked baseline; ignores the shift.
    Masked,
}

/// A named sampler arm of a sweep.
#[derive(Clone, Copy)]
pub struct SweepArm<'a> {
    pub id: &'a str,
    pub kind: SamplerKind,
    pub predictor: &'a dyn Predictor,
}

/// What is being generated and how TV is judged.
#[derive(Clone, Copy)]
pub struct EvalTask<'a> {
    pub id: &'a str,
    pub q: &'a ToyDistribution,
    pub dist: &'a DistanceMatrix,
    pub params: PathParams,
    pub cfg_scale: f64,
    pub clamp: ClampPolicy,
    pub condition: Option<usize>,
}

/// Draws `count` independent sequences; chain `i` uses stream `(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch(
    predictor: &dyn Predictor,
    condition: Option<usize>,
    layout: FrameLayout,
    config: &SamplerConfig,
    mode: &TaskMode,
    content: Option<&TokenSequence>,
    dist: &DistanceMatrix,
    count: usize,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng_stream(seed, i as u64);
            sample(predictor, condition, layout, config, mode, content, dist, &mut rng)
        })
        .collect()
}

pub fn masked_batch(
    predictor: &dyn Predictor,
    condition: Option<usize>,
    layout: FrameLayout,
    steps: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng_stream(seed, i as u64);
            masked_baseline_sample(predictor, condition, layout, steps, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sampler: String,
    #[serde(rename = "T")]
    pub steps: usize,
    pub lambda: f64,
    pub tv: f64,
    pub wall_ms: f64,
    pub seed: u64,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub seed: u64,
    pub task: String,
    pub samples_per_cell: usize,
    pub library_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metadata: SweepMeta,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "sampler,T,lambda,tv,wall_ms,seed,task";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.3},{},{}\n",
                r.sampler, r.steps, r.lambda, r.tv, r.wall_ms, r.seed, r.task
            ));
        }
        s
    }

    /// The row for `(sampler, T, lambda)`, if present.
    pub fn find(&self, sampler: &str, steps: usize, lambda: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sampler == sampler && r.steps == steps && r.lambda == lambda)
    }
}

/// Seed of one sweep cell; identical cells get identical seeds.
pub fn cell_seed(seed: u64, sampler: &str, steps: usize, lambda: f64) -> u64 {
    // FNV-1a over the cell key, folded into the base seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(sampler.as_bytes());
    eat(&(steps as u64).to_le_bytes());
    eat(&lambda.to_bits().to_le_bytes());
    h
}

/// Cartesian sweep over arms x steps x shifts; every cell is scored by
/// [`exact_tv`] over `samples_per_cell` fresh samples.
pub fn step_sweep(
    arms: &[SweepArm],
    task: &EvalTask,
    steps_set: &[usize],
    lambda_set: &[f64],
    samples_per_cell: usize,
    seed: u64,
) -> Result<SweepReport> {
    if arms.is_empty() || steps_set.is_empty() || lambda_set.is_empty() {
        return Err(Error::invalid("sweep needs nonempty sampler, step and shift sets"));
    }
    if samples_per_cell == 0 {
        return Err(Error::invalid("samples_per_cell must be at least 1"));
    }
    let layout = task.q.layout();
    let mut rows = Vec::with_capacity(arms.len() * steps_set.len() * lambda_set.len());
    for arm in arms {
        for &steps in steps_set {
            for &lambda in lambda_set {
                let cseed = cell_seed(seed, arm.id, steps, lambda);
                let start = Instant::now();
                let samples = match arm.kind {
                    SamplerKind::Uniform => {
                        let config = SamplerConfig {
                            steps,
                            params: task.params.with_lambda(lambda),
                            cfg_scale: task.cfg_scale,
                            clamp: task.clamp,
                        };
                        sample_batch(
                            arm.predictor,
                            task.condition,
                            layout,
                            &config,
                            &TaskMode::SyncGenerate,
                            None,
                            task.dist,
                            samples_per_cell,
                            cseed,
                        )?
                    }
                    SamplerKind::Masked => {
                        masked_batch(arm.predictor, task.condition, layout, steps, samples_per_cell, cseed)?
                    }
                };
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                let tv = exact_tv(&samples, task.q)?;
                rows.push(SweepRow {
                    sampler: arm.id.to_string(),
                    steps,
                    lambda,
                    tv,
                    wall_ms,
                    seed: cseed,
                    task: task.id.to_string(),
                });
            }
        }
    }
    Ok(SweepReport {
        metadata: SweepMeta {
            seed,
            task: task.id.to_string(),
            samples_per_cell,
            library_version: crate::VERSION.to_string(),
        },
        rows,
    })
}
