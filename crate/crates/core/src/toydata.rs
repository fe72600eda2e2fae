//! Enumerable toy "video" token distributions with controllable temporal
//! redundancy, plus JSONL dataset emission.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::sequence::{FrameLayout, SequenceRecord, TokenSequence};

/// Upper bound on enumerated support size.
pub const MAX_SUPPORT: usize = 65536;
const PROB_SUM_TOL: f64 = 1e-12;
/// Sharpness of the random categorical factors.
const FACTOR_TEMPERATURE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyTaskKind {
    /// Mixture of `components` fully factorised sequence distributions.
    IidMixture,
    /// `components` distinct frame patterns visited cyclically from a random
    /// phase; the phase stalls with probability `redundancy`.
    PeriodicFrames,
    /// Each frame repeats the previous one with probability `redundancy`,
    /// otherwise redraws from a fixed per-frame base distribution.
    MarkovFrames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskSpec {
    pub kind: ToyTaskKind,
    pub layout: FrameLayout,
    pub k: usize,
    /// Probability that a frame repeats its predecessor.
    #[serde(default)]
    pub redundancy: f64,
    /// Mixture components (iid-mixture) or cycle length (periodic-frames).
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_support")]
    pub max_support: usize,
}

fn default_components() -> usize {
    2
}

fn default_max_support() -> usize {
    MAX_SUPPORT
}

impl ToyTaskSpec {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.k < 2 {
            return Err(Error::invalid(format!("toy task needs k >= 2, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.redundancy) {
            return Err(Error::invalid(format!("redundancy {} outside [0, 1]", self.redundancy)));
        }
        if self.components == 0 {
            return Err(Error::invalid("toy task needs at least one component"));
        }
        if self.max_support == 0 || self.max_support > MAX_SUPPORT {
            return Err(Error::invalid(format!("max_support must be in [1, {MAX_SUPPORT}]")));
        }
        Ok(())
    }
}

/// An explicitly enumerated distribution `q` over token sequences.
#[derive(Debug, Clone)]
pub struct ToyDistribution {
    layout: FrameLayout,
    k: usize,
    support: Vec<Vec<u32>>,
    probs: Vec<f64>,
    classes: Option<Vec<usize>>,
    cdf: Vec<f64>,
    index: HashMap<Vec<u32>, usize>,
}

#[derive(Serialize, Deserialize)]
struct ToyDistributionFile {
    layout: FrameLayout,
    k: usize,
    support: Vec<Vec<u32>>,
    probs: Vec<f64>,
    classes: Option<Vec<usize>>,
}

impl ToyDistribution {
    pub fn new(
        layout: FrameLayout,
        k: usize,
        support: Vec<Vec<u32>>,
        probs: Vec<f64>,
        classes: Option<Vec<usize>>,
    ) -> Result<Self> {
        layout.validate()?;
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::invalid(
                "support and probabilities must be nonempty and equally long",
            ));
        }
        if support.len() > MAX_SUPPORT {
            return Err(Error::SupportOverflow { limit: MAX_SUPPORT });
        }
        if let Some(c) = &classes {
            if c.len() != support.len() {
                return Err(Error::invalid("one class label per support element required"));
            }
        }
        let mut index = HashMap::with_capacity(support.len());
        for (i, seq) in support.iter().enumerate() {
            if seq.len() != layout.len() {
                return Err(Error::invalid(format!("support element {i} has the wrong length")));
            }
            if seq.iter().any(|&v| v as usize >= k) {
                return Err(Error::invalid(format!("support element {i} leaves the vocabulary")));
            }
            if index.insert(seq.clone(), i).is_some() {
                return Err(Error::invalid(format!("support element {i} is duplicated")));
            }
        }
        if probs.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("support probabilities must be positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(ToyDistribution {
            layout,
            k,
            support,
            probs,
            classes,
            cdf,
            index,
        })
    }

    pub fn layout(&self) -> FrameLayout {
        self.layout
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn support(&self) -> &[Vec<u32>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_len(&self) -> usize {
        self.support.len()
    }

    pub fn classes(&self) -> Option<&[usize]> {
        self.classes.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.as_ref().map_or(0, |c| c.iter().max().map_or(0, |m| m + 1))
    }

    /// `q(seq)`, zero off the support.
    pub fn prob_of(&self, seq: &[u32]) -> f64 {
        self.index.get(seq).map_or(0.0, |&i| self.probs[i])
    }

    pub fn index_of(&self, seq: &[u32]) -> Option<usize> {
        self.index.get(seq).copied()
    }

    /// Draws a support element and its class.
    pub fn sample(&self, rng: &mut crate::Rng) -> (TokenSequence, Option<usize>) {
        let i = self.sample_index(rng);
        let seq = TokenSequence::new(self.layout, self.support[i].clone()).expect("validated on construction");
        (seq, self.classes.as_ref().map(|c| c[i]))
    }

    pub fn sample_index(&self, rng: &mut crate::Rng) -> usize {
        let u: f64 = rng.gen::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.support.len() - 1)
    }

    /// Restriction to one condition class, renormalised.
    pub fn conditional(&self, class: usize) -> Result<ToyDistribution> {
        let classes = self
            .classes
            .as_ref()
            .ok_or_else(|| Error::invalid("distribution has no classes"))?;
        let keep: Vec<usize> = (0..self.support.len()).filter(|&i| classes[i] == class).collect();
        if keep.is_empty() {
            return Err(Error::invalid(format!("class {class} is empty")));
        }
        let mass: f64 = keep.iter().map(|&i| self.probs[i]).sum();
        ToyDistribution::new(
            self.layout,
            self.k,
            keep.iter().map(|&i| self.support[i].clone()).collect(),
            normalize(keep.iter().map(|&i| self.probs[i] / mass).collect()),
            Some(vec![class; keep.len()]),
        )
    }

    /// Marginal distribution of the token at `pos`.
    pub fn marginal(&self, pos: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for (seq, &p) in self.support.iter().zip(&self.probs) {
            m[seq[pos] as usize] += p;
        }
        m
    }

    /// Marginal distribution of frame `frame`, keyed by the frame's tokens.
    pub fn frame_marginal(&self, frame: usize) -> HashMap<Vec<u32>, f64> {
        let range = self.layout.frame_range(frame);
        let mut m = HashMap::new();
        for (seq, &p) in self.support.iter().zip(&self.probs) {
            *m.entry(seq[range.clone()].to_vec()).or_insert(0.0) += p;
        }
        m
    }

    /// Applies a vocabulary relabelling `perm[old] = new`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<ToyDistribution> {
        let support = self
            .support
            .iter()
            .map(|s| s.iter().map(|&v| perm[v as usize] as u32).collect())
            .collect();
        ToyDistribution::new(self.layout, self.k, support, self.probs.clone(), self.classes.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(
            path,
            &ToyDistributionFile {
                layout: self.layout,
                k: self.k,
                support: self.support.clone(),
                probs: self.probs.clone(),
                classes: self.classes.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let f: ToyDistributionFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "distribution",
            msg: e.to_string(),
        })?;
        ToyDistribution::new(f.layout, f.k, f.support, f.probs, f.classes)
    }

    /// Empirical distribution of dataset records. Classes are kept when every
    /// record carries one and each sequence has a single class.
    pub fn from_records(records: &[SequenceRecord], k: usize) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::invalid("empty dataset"))?;
        let layout = FrameLayout::new(first.frames, first.tokens_per_frame)?;
        let mut counts: Vec<(Vec<u32>, usize, Option<usize>)> = Vec::new();
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut classes_ok = true;
        for r in records {
            if r.frames != layout.frames || r.tokens_per_frame != layout.tokens_per_frame {
                return Err(Error::Format {
                    what: "dataset",
                    msg: "records disagree on layout".into(),
                });
            }
            match index.get(&r.tokens) {
                Some(&i) => {
                    counts[i].1 += 1;
                    classes_ok &= counts[i].2 == r.cond;
                }
                None => {
                    index.insert(r.tokens.clone(), counts.len());
                    counts.push((r.tokens.clone(), 1, r.cond));
                }
            }
            classes_ok &= r.cond.is_some();
        }
        let n = records.len() as f64;
        let probs = normalize(counts.iter().map(|c| c.1 as f64 / n).collect());
        let classes = classes_ok.then(|| counts.iter().map(|c| c.2.unwrap_or(0)).collect());
        ToyDistribution::new(layout, k, counts.into_iter().map(|c| c.0).collect(), probs, classes)
    }
}

/// Divides by the sum so the total is as close to one as f64 allows.
fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

fn random_categorical(k: usize, rng: &mut crate::Rng) -> Vec<f64> {
    let logits: Vec<f64> = (0..k)
        .map(|_| FACTOR_TEMPERATURE * rng.sample::<f64, _>(StandardNormal))
        .collect();
    crate::predictor::softmax(&logits)
}

/// Enumerates `q` for `spec` with exact closed-form probabilities.
pub fn build_task(spec: &ToyTaskSpec) -> Result<ToyDistribution> {
    spec.validate()?;
    let mut rng = crate::rng_stream(spec.seed, 0);
    match spec.kind {
        ToyTaskKind::IidMixture => build_mixture(spec, &mut rng),
        ToyTaskKind::PeriodicFrames => build_periodic(spec, &mut rng),
        ToyTaskKind::MarkovFrames => build_markov(spec, &mut rng),
    }
}

fn checked_count(k: usize, len: usize, limit: usize) -> Result<usize> {
    (k as u128)
        .checked_pow(len as u32)
        .filter(|&n| n <= limit as u128)
        .map(|n| n as usize)
        .ok_or(Error::SupportOverflow { limit })
}

fn decode(mut idx: usize, k: usize, len: usize) -> Vec<u32> {
    let mut seq = vec![0u32; len];
    for slot in seq.iter_mut().rev() {
        *slot = (idx % k) as u32;
        idx /= k;
    }
    seq
}

fn build_mixture(spec: &ToyTaskSpec, rng: &mut crate::Rng) -> Result<ToyDistribution> {
    let d = spec.layout.len();
    let count = checked_count(spec.k, d, spec.max_support)?;
    let weights = normalize((0..spec.components).map(|_| rng.gen_range(0.5..1.5)).collect());
    let factors: Vec<Vec<Vec<f64>>> = (0..spec.components)
        .map(|_| (0..d).map(|_| random_categorical(spec.k, rng)).collect())
        .collect();
    let mut support = Vec::with_capacity(count);
    let mut probs = Vec::with_capacity(count);
    let mut classes = Vec::with_capacity(count);
    for idx in 0..count {
        let seq = decode(idx, spec.k, d);
        let per: Vec<f64> = (0..spec.components)
            .map(|c| {
                weights[c]
                    * seq
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| factors[c][i][v as usize])
                        .product::<f64>()
            })
            .collect();
        let p: f64 = per.iter().sum();
        if p > 0.0 {
            let best = (0..per.len()).fold(0, |b, c| if per[c] > per[b] { c } else { b });
            support.push(seq);
            probs.push(p);
            classes.push(best);
        }
    }
    ToyDistribution::new(spec.layout, spec.k, support, normalize(probs), Some(classes))
}

fn build_periodic(spec: &ToyTaskSpec, rng: &mut crate::Rng) -> Result<ToyDistribution> {
    let m = spec.layout.tokens_per_frame;
    let period = spec.components;
    if (spec.k as u128)
        .checked_pow(m as u32)
        .is_some_and(|n| n < period as u128)
    {
        return Err(Error::invalid(format!(
            "cannot draw {period} distinct frames from {}^{m}",
            spec.k
        )));
    }
    let mut patterns: Vec<Vec<u32>> = Vec::with_capacity(period);
    while patterns.len() < period {
        let f: Vec<u32> = (0..m).map(|_| rng.gen_range(0..spec.k as u32)).collect();
        if !patterns.contains(&f) {
            patterns.push(f);
        }
    }
    let rho = spec.redundancy;
    let n = spec.layout.frames;
    // enumerate phase paths; distinct patterns make the map to sequences injective
    let mut paths: Vec<(Vec<usize>, f64, usize)> = (0..period).map(|p| (vec![p], 1.0 / period as f64, p)).collect();
    for _ in 1..n {
        let mut next = Vec::with_capacity(paths.len() * 2);
        for (path, p, start) in paths {
            let last = *path.last().expect("nonempty");
            let advance = (last + 1) % period;
            for (phase, w) in [(last, rho), (advance, 1.0 - rho)] {
                if w > 0.0 {
                    let mut np = path.clone();
                    np.push(phase);
                    next.push((np, p * w, start));
                }
            }
            if next.len() > spec.max_support * 2 {
                return Err(Error::SupportOverflow {
                    limit: spec.max_support,
                });
            }
        }
        paths = next;
    }
    let mut merged: Vec<(Vec<u32>, f64, usize)> = Vec::new();
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    for (path, p, start) in paths {
        let seq: Vec<u32> = path.iter().flat_map(|&ph| patterns[ph].iter().copied()).collect();
        match index.get(&seq) {
            Some(&i) => merged[i].1 += p,
            None => {
                index.insert(seq.clone(), merged.len());
                merged.push((seq, p, start));
            }
        }
    }
    if merged.len() > spec.max_support {
        return Err(Error::SupportOverflow {
            limit: spec.max_support,
        });
    }
    let probs = normalize(merged.iter().map(|m| m.1).collect());
    let classes = merged.iter().map(|m| m.2).collect();
    ToyDistribution::new(
        spec.layout,
        spec.k,
        merged.into_iter().map(|m| m.0).collect(),
        probs,
        Some(classes),
    )
}

fn build_markov(spec: &ToyTaskSpec, rng: &mut crate::Rng) -> Result<ToyDistribution> {
    let m = spec.layout.tokens_per_frame;
    let n = spec.layout.frames;
    let frame_count = checked_count(spec.k, m, spec.max_support)?;
    let factors: Vec<Vec<f64>> = (0..m).map(|_| random_categorical(spec.k, rng)).collect();
    let frames: Vec<Vec<u32>> = (0..frame_count).map(|i| decode(i, spec.k, m)).collect();
    let base: Vec<f64> = frames
        .iter()
        .map(|f| f.iter().enumerate().map(|(i, &v)| factors[i][v as usize]).product())
        .collect();
    let rho = spec.redundancy;
    // (frame indices, probability)
    let mut paths: Vec<(Vec<usize>, f64)> = (0..frame_count).map(|f| (vec![f], base[f])).collect();
    for _ in 1..n {
        let mut next = Vec::new();
        for (path, p) in paths {
            let last = *path.last().expect("nonempty");
            for (f, &b) in base.iter().enumerate() {
                let stay = if f == last { rho } else { 0.0 };
                let w = stay + (1.0 - rho) * b;
                if w > 0.0 {
                    let mut np = path.clone();
                    np.push(f);
                    next.push((np, p * w));
                    if next.len() > spec.max_support {
                        return Err(Error::SupportOverflow {
                            limit: spec.max_support,
                        });
                    }
                }
            }
        }
        paths = next;
    }
    let support = paths
        .iter()
        .map(|(path, _)| path.iter().flat_map(|&f| frames[f].iter().copied()).collect())
        .collect();
    let probs = normalize(paths.iter().map(|(_, p)| *p).collect());
    ToyDistribution::new(spec.layout, spec.k, support, probs, None)
}

/// Writes `count` samples from `q` as JSONL.
pub fn emit_dataset(q: &ToyDistribution, count: usize, rng: &mut crate::Rng, path: &Path) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid("dataset count must be at least 1"));
    }
    let records: Vec<SequenceRecord> = (0..count)
        .map(|_| {
            let (seq, cond) = q.sample(rng);
            SequenceRecord::new(&seq, cond)
        })
        .collect();
    io::write_jsonl(path, &records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<SequenceRecord>> {
    let text = io::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: SequenceRecord = serde_json::from_str(l).map_err(|e| Error::Format {
                what: "dataset",
                msg: format!("line {}: {e}", i + 1),
            })?;
            r.to_sequence()?;
            Ok(r)
        })
        .collect()
}
