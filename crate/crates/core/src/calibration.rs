//! Path-linearity diagnostics: distance-vs-time curves, Pearson
//! correlation, and a grid search over `(alpha, c)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::DistanceMatrix;
use crate::error::{Error, Result};
use crate::path::{sample_xt, PathParams};
use crate::schedule::FrameSchedule;
use crate::toydata::ToyDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean_distance: f64,
    pub std: f64,
    pub n: usize,
}

impl CurvePoint {
    pub fn standard_error(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

/// Mean per-token embedding distance `E[d(x_t, x1)]` over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurve {
    pub points: Vec<CurvePoint>,
}

impl DistanceCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean_distance,std,n\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.t, p.mean_distance, p.std, p.n));
        }
        s
    }
}

/// `n` evenly spaced points covering `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

fn curve_point(
    data: &ToyDistribution,
    dist: &DistanceMatrix,
    params: &PathParams,
    t: f64,
    samples: usize,
    rng: &mut crate::Rng,
) -> Result<CurvePoint> {
    let layout = data.layout();
    let sched = FrameSchedule::uniform(layout.frames, t);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let (x1, _) = data.sample(rng);
        let xt = sample_xt(&x1, &sched, dist, params, rng)?;
        let total: f64 = x1
            .tokens()
            .iter()
            .zip(xt.tokens())
            .map(|(&a, &b)| dist.get(a as usize, b as usize))
            .sum();
        values.push(total / layout.len() as f64);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(CurvePoint {
        t,
        mean_distance: mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

/// Builds the curve; point `i` draws from its own stream `(seed, i)`.
pub fn distance_curve(
    data: &ToyDistribution,
    dist: &DistanceMatrix,
    params: &PathParams,
    t_grid: &[f64],
    samples_per_point: usize,
    seed: u64,
) -> Result<DistanceCurve> {
    if samples_per_point == 0 {
        return Err(Error::invalid("samples_per_point must be at least 1"));
    }
    if t_grid.is_empty() {
        return Err(Error::invalid("empty time grid"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("time grid must be strictly increasing inside [0, 1]"));
    }
    if dist.k() != data.k() {
        return Err(Error::invalid("codebook size does not match the data vocabulary"));
    }
    let points = t_grid
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            curve_point(
                data,
                dist,
                params,
                t,
                samples_per_point,
                &mut crate::rng_stream(seed, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceCurve { points })
}

/// Closed-form `E[d(x_0, x1)]` at `t = 0`, where `x_0` is uniform noise.
pub fn uniform_noise_expectation(data: &ToyDistribution, dist: &DistanceMatrix) -> f64 {
    let k = data.k();
    let d = data.layout().len();
    let avg_to: Vec<f64> = (0..k).map(|v| dist.row(v).iter().sum::<f64>() / k as f64).collect();
    (0..d)
        .map(|pos| data.marginal(pos).iter().zip(&avg_to).map(|(m, a)| m * a).sum::<f64>())
        .sum::<f64>()
        / d as f64
}

pub fn pearson_xy(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::invalid("pearson needs at least 3 paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Numeric("pearson correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between `t` and the mean distance.
pub fn pearson(curve: &DistanceCurve) -> Result<f64> {
    let ts: Vec<f64> = curve.points.iter().map(|p| p.t).collect();
    let ds: Vec<f64> = curve.points.iter().map(|p| p.mean_distance).collect();
    pearson_xy(&ts, &ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSettings {
    #[serde(default = "default_grid_points")]
    pub t_grid_points: usize,
    #[serde(default = "default_samples")]
    pub samples_per_point: usize,
    /// Coverage is measured between `eps` and `1 - eps`.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_min_coverage")]
    pub min_coverage: f64,
}

fn default_grid_points() -> usize {
    41
}
fn default_samples() -> usize {
    2048
}
fn default_eps() -> f64 {
    0.02
}
fn default_min_coverage() -> f64 {
    0.95
}

impl Default for CalibSettings {
    fn default() -> Self {
        CalibSettings {
            t_grid_points: default_grid_points(),
            samples_per_point: default_samples(),
            eps: default_eps(),
            min_coverage: default_min_coverage(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibCell {
    pub alpha: f64,
    pub c: f64,
    /// `None` when the curve is flat.
    pub pearson: Option<f64>,
    pub coverage: f64,
    pub curve: DistanceCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub cells: Vec<CalibCell>,
    pub selected_alpha: f64,
    pub selected_c: f64,
    /// True when no pair reached `min_coverage`; the selection then falls
    /// back to the best coverage.
    pub coverage_warning: bool,
    pub seed: u64,
}

impl CalibReport {
    pub fn selected(&self) -> &CalibCell {
        self.cells
            .iter()
            .find(|c| c.alpha == self.selected_alpha && c.c == self.selected_c)
            .expect("selected pair is one of the cells")
    }
}

/// Evaluates every `(alpha, c)` pair and selects the most linear one among
/// those whose curve makes at least `min_coverage` of its full drop (noise
/// expectation to zero) inside `[eps, 1 - eps]`. Ties go to smaller `c`, then smaller `alpha`.
pub fn grid_search(
    alpha_set: &[f64],
    c_set: &[f64],
    data: &ToyDistribution,
    dist: &DistanceMatrix,
    settings: &CalibSettings,
    seed: u64,
) -> Result<CalibReport> {
    if alpha_set.is_empty() || c_set.is_empty() {
        return Err(Error::invalid("grid search needs nonempty alpha and c sets"));
    }
    if !(settings.eps > 0.0 && settings.eps < 0.5) {
        return Err(Error::invalid(format!(
            "coverage eps {} outside (0, 0.5)",
            settings.eps
        )));
    }
    let grid = uniform_grid(settings.t_grid_points);
    // the curve always runs from the uniform-noise expectation down to zero
    let full_drop = uniform_noise_expectation(data, dist);
    let pairs: Vec<(f64, f64)> = alpha_set
        .iter()
        .flat_map(|&a| c_set.iter().map(move |&c| (a, c)))
        .collect();
    let cells = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(alpha, c))| {
            let params = PathParams::new(alpha, c, 1.0)?;
            let cell_seed = seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
            let curve = distance_curve(data, dist, &params, &grid, settings.samples_per_point, cell_seed)?;
            let ends = distance_curve(
                data,
                dist,
                &params,
                &[settings.eps, 1.0 - settings.eps],
                settings.samples_per_point,
                cell_seed.wrapping_add(1),
            )?;
            let (lo, hi) = (ends.points[0].mean_distance, ends.points[1].mean_distance);
            let coverage = if full_drop > 0.0 {
                ((lo - hi) / full_drop).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let pearson = pearson(&curve).ok();
            Ok(CalibCell {
                alpha,
                c,
                pearson,
                coverage,
                curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let better = |a: &CalibCell, b: &CalibCell| {
        let ra = a.pearson.map_or(-1.0, f64::abs);
        let rb = b.pearson.map_or(-1.0, f64::abs);
        ra > rb || (ra == rb && (a.c < b.c || (a.c == b.c && a.alpha < b.alpha)))
    };
    let eligible: Vec<&CalibCell> = cells.iter().filter(|c| c.coverage >= settings.min_coverage).collect();
    let (chosen, warning) = if eligible.is_empty() {
        let best = cells
            .iter()
            .fold(&cells[0], |b, c| if c.coverage > b.coverage { c } else { b });
        log::warn!("no (alpha, c) pair reached coverage {}", settings.min_coverage);
        (best, true)
    } else {
        (
            eligible
                .iter()
                .copied()
                .fold(eligible[0], |b, c| if better(c, b) { c } else { b }),
            false,
        )
    };
    let (selected_alpha, selected_c) = (chosen.alpha, chosen.c);
    Ok(CalibReport {
        cells,
        selected_alpha,
        selected_c,
        coverage_warning: warning,
        seed,
    })
}
