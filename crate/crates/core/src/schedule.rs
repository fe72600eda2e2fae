//! Per-frame timestep assignment: asynchronous noise for training and the
//! inference task modes (synchronous, first-frame conditioned, start-end,
//! sliding-window extrapolation).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codebook::DistanceMatrix;
use crate::error::{Error, Result};
use crate::path::{sample_xt, PathParams};
use crate::predictor::Predictor;
use crate::sequence::{FrameLayout, TokenSequence};
use crate::velocity::{sample, SamplerConfig};

/// Times per frame, plus which frames are fixed by conditioning (`t = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSchedule {
    times: Vec<f64>,
    pinned: Vec<bool>,
}

impl FrameSchedule {
    pub fn new(times: Vec<f64>, pinned: Vec<bool>) -> Result<Self> {
        if times.len() != pinned.len() || times.is_empty() {
            return Err(Error::invalid(
                "schedule needs equal, nonzero numbers of times and pin flags",
            ));
        }
        for (i, (&t, &p)) in times.iter().zip(&pinned).enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain {
                    t,
                    msg: "schedule times must lie in [0, 1]",
                });
            }
            if p && t != 1.0 {
                return Err(Error::invalid(format!("frame {i} is pinned but has t = {t}")));
            }
        }
        Ok(FrameSchedule { times, pinned })
    }

    /// Every frame at time `t`, nothing pinned.
    pub fn uniform(frames: usize, t: f64) -> Self {
        FrameSchedule {
            times: vec![t; frames],
            pinned: vec![false; frames],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Applies the resolution shift to every unpinned frame.
    pub fn shifted(&self, lambda: f64) -> Result<Self> {
        let times = self
            .times
            .iter()
            .map(|&t| crate::path::shift_time(t, lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameSchedule {
            times,
            pinned: self.pinned.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum TaskMode {
    #[serde(alias = "sync")]
    SyncGenerate,
    /// First frame given.
    #[serde(alias = "i2v")]
    ImageConditioned,
    /// First and last frames given.
    StartEnd,
    /// The first `history_len` frames carry re-noised history held at
    /// `history_noise_t`.
    Extrapolate { history_len: usize, history_noise_t: f64 },
}

impl TaskMode {
    pub const DEFAULT_HISTORY_LEN: usize = 13;
    pub const DEFAULT_HISTORY_NOISE_T: f64 = 0.9;

    pub fn extrapolate_default() -> Self {
        TaskMode::Extrapolate {
            history_len: Self::DEFAULT_HISTORY_LEN,
            history_noise_t: Self::DEFAULT_HISTORY_NOISE_T,
        }
    }

    pub fn check(&self, layout: FrameLayout) -> Result<()> {
        let n = layout.frames;
        match *self {
            TaskMode::SyncGenerate => Ok(()),
            TaskMode::ImageConditioned if n < 2 => {
                Err(Error::invalid("image-conditioned mode needs at least 2 frames"))
            }
            TaskMode::StartEnd if n < 3 => Err(Error::invalid("start-end mode needs at least 3 frames")),
            TaskMode::Extrapolate {
                history_len,
                history_noise_t,
            } => {
                if history_len == 0 || history_len >= n {
                    return Err(Error::invalid(format!(
                        "extrapolation history {history_len} must be in [1, {n})"
                    )));
                }
                if !(history_noise_t > 0.0 && history_noise_t <= 1.0) {
                    return Err(Error::invalid(format!(
                        "history noise time {history_noise_t} must be in (0, 1]"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Frames whose content comes from conditioning and is never integrated.
    pub fn frozen_frames(&self, layout: FrameLayout) -> Vec<bool> {
        let n = layout.frames;
        (0..n)
            .map(|f| match *self {
                TaskMode::SyncGenerate => false,
                TaskMode::ImageConditioned => f == 0,
                TaskMode::StartEnd => f == 0 || f == n - 1,
                TaskMode::Extrapolate { history_len, .. } => f < history_len,
            })
            .collect()
    }

    /// Whether the mode requires conditioning content.
    pub fn needs_content(&self) -> bool {
        !matches!(self, TaskMode::SyncGenerate)
    }
}

/// Source of per-step frame schedules for the sampler. [`TaskMode`] covers
/// the supported tasks; other asynchronous grids can implement this.
pub trait InferenceGrid: Sync {
    fn schedule(&self, layout: FrameLayout, step: usize, steps: usize) -> Result<FrameSchedule>;
    fn frozen(&self, layout: FrameLayout) -> Vec<bool>;
}

impl InferenceGrid for TaskMode {
    fn schedule(&self, layout: FrameLayout, step: usize, steps: usize) -> Result<FrameSchedule> {
        inference_schedule(self, layout, step, steps)
    }

    fn frozen(&self, layout: FrameLayout) -> Vec<bool> {
        self.frozen_frames(layout)
    }
}

/// Training schedule: independent `t_i ~ U(0, 1)` per frame.
pub fn train_schedule(layout: FrameLayout, rng: &mut crate::Rng) -> FrameSchedule {
    let times = (0..layout.frames).map(|_| rng.gen::<f64>()).collect();
    FrameSchedule {
        times,
        pinned: vec![false; layout.frames],
    }
}

/// Schedule for Euler step `step` of `steps` (1-based); unshifted times.
pub fn inference_schedule(mode: &TaskMode, layout: FrameLayout, step: usize, steps: usize) -> Result<FrameSchedule> {
    if step == 0 || step > steps {
        return Err(Error::invalid(format!("step {step} outside 1..={steps}")));
    }
    mode.check(layout)?;
    let t = (step - 1) as f64 / steps as f64;
    let n = layout.frames;
    let mut times = vec![t; n];
    let mut pinned = vec![false; n];
    match *mode {
        TaskMode::SyncGenerate => {}
        TaskMode::ImageConditioned | TaskMode::StartEnd => {
            for (f, frozen) in mode.frozen_frames(layout).into_iter().enumerate() {
                if frozen {
                    times[f] = 1.0;
                    pinned[f] = true;
                }
            }
        }
        TaskMode::Extrapolate {
            history_len,
            history_noise_t,
        } => {
            times[..history_len].fill(history_noise_t);
        }
    }
    FrameSchedule::new(times, pinned)
}

/// Sliding-window extrapolation.
///
/// Each window re-noises the last `history_len` generated frames once at
/// `history_noise_t` through the forward path, samples the remaining
/// `window.frames - history_len` frames, and appends them. The returned
/// sequence keeps the original (clean) history and has exactly
/// `target_frames` frames.
#[allow(clippy::too_many_arguments)]
pub fn extrapolate_run(
    predictor: &dyn Predictor,
    condition: Option<usize>,
    initial: &TokenSequence,
    target_frames: usize,
    window: FrameLayout,
    mode: TaskMode,
    config: &SamplerConfig,
    dist: &DistanceMatrix,
    rng: &mut crate::Rng,
) -> Result<TokenSequence> {
    let TaskMode::Extrapolate {
        history_len,
        history_noise_t,
    } = mode
    else {
        return Err(Error::invalid("extrapolate_run needs an extrapolate task mode"));
    };
    mode.check(window)?;
    let have = initial.layout().frames;
    if window.tokens_per_frame != initial.layout().tokens_per_frame {
        return Err(Error::invalid("window and initial clip differ in tokens per frame"));
    }
    if target_frames < have {
        return Err(Error::invalid(format!(
            "target {target_frames} frames is shorter than the clip ({have})"
        )));
    }
    if history_len > have {
        return Err(Error::invalid(format!(
            "history of {history_len} frames does not fit in a {have}-frame clip"
        )));
    }
    let new_per_window = window.frames - history_len;
    let mut out = initial.clone();
    let noise_params: PathParams = config.params;
    while out.layout().frames < target_frames {
        let frames = out.layout().frames;
        let history = out.slice_frames(frames - history_len..frames)?;
        let noisy = sample_xt(
            &history,
            &FrameSchedule::uniform(history_len, history_noise_t),
            dist,
            &noise_params,
            rng,
        )?;
        let mut content = noisy.into_tokens();
        content.resize(window.len(), 0);
        let content = TokenSequence::new(window, content)?;
        let generated = sample(predictor, condition, window, config, &mode, Some(&content), dist, rng)?;
        let remaining = target_frames - frames;
        let take = new_per_window.min(remaining);
        let fresh = generated.slice_frames(history_len..history_len + take)?;
        out = out.concat(&fresh)?;
    }
    Ok(out)
}
