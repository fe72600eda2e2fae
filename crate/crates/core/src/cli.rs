//! Command-line entry points. Every command reads a JSON [`RunConfig`],
//! applies flag overrides, writes the resolved config to `run_meta.json`
//! and then its own artifacts into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{grid_search, CalibSettings};
use crate::codebook::{synth_codebook, Codebook, CodebookSpec, DistanceMatrix};
use crate::error::{Error, Result};
use crate::eval::{exact_tv, step_sweep, EvalTask, SamplerKind, SweepArm};
use crate::io;
use crate::path::PathParams;
use crate::predictor::{train, TrainConfig, TrainableModel};
use crate::predictor::{Checkpoint, Corruption, MaskedOracle, ModelDims, OraclePredictor, Predictor};
use crate::schedule::{extrapolate_run, TaskMode};
use crate::sequence::{FrameLayout, SequenceRecord, TokenSequence};
use crate::toydata::{build_task, emit_dataset, ToyDistribution, ToyTaskSpec};
use crate::velocity::{sample, ClampPolicy, SamplerConfig};

#[derive(Debug, Parser)]
#[command(
    name = "metricflow",
    version,
    about = "Metric-path discrete diffusion on toy token tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the toy task, write q.json, codebook.json and a JSONL dataset.
    SynthData,
    /// Grid-search the path parameters (alpha, c) for linear distance decay.
    Calibrate,
    /// Train the small predictor; writes checkpoint.json and loss.csv.
    Train,
    /// Draw samples; writes samples.jsonl and summary.json.
    Sample,
    /// Sweep sampler arms over steps and shifts; writes sweep.csv and sweep.json.
    Sweep,
    /// Extend clips drawn from the task; writes extrapolated.jsonl.
    Extrapolate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Calibrate => "calibrate",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Sweep => "sweep",
            Command::Extrapolate => "extrapolate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sync,
    I2v,
    StartEnd,
    Extrapolate,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub mode: Option<ModeArg>,
    /// Sampling steps T.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Timestep shift lambda.
    #[arg(long, global = true)]
    pub shift: Option<f64>,
    #[arg(long, global = true)]
    pub cfg_scale: Option<f64>,
    /// `oracle`, `masked-oracle` or `trained:<checkpoint>`.
    #[arg(long, global = true)]
    pub predictor: Option<String>,
    #[arg(long, global = true)]
    pub history_len: Option<usize>,
    #[arg(long, global = true)]
    pub history_noise_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Defaults to 1 for single-frame tasks and 3 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

fn default_alpha() -> f64 {
    PathParams::default().alpha
}
fn default_c() -> f64 {
    PathParams::default().c
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection {
            alpha: default_alpha(),
            c: default_c(),
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// Defaults to 25 for single-frame tasks and 50 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_cfg")]
    pub cfg_scale: f64,
    #[serde(default)]
    pub clamp: ClampPolicy,
}

fn default_cfg() -> f64 {
    SamplerConfig::DEFAULT_CFG_SCALE
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            steps: None,
            cfg_scale: default_cfg(),
            clamp: ClampPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Metric,
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub objective: Objective,
    pub embed: usize,
    pub hidden: usize,
    pub use_time_input: bool,
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            objective: Objective::Metric,
            embed: 16,
            hidden: 32,
            use_time_input: true,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibSection {
    pub alpha_set: Vec<f64>,
    pub c_set: Vec<f64>,
    pub settings: CalibSettings,
}

impl Default for CalibSection {
    fn default() -> Self {
        CalibSection {
            alpha_set: vec![0.5, 1.0, 2.0],
            c_set: vec![1.0, 5.0, 10.0],
            settings: CalibSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub id: String,
    pub kind: SamplerKind,
    pub predictor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub arms: Vec<ArmSpec>,
    pub steps: Vec<usize>,
    /// Empty means the resolved shift only.
    pub lambdas: Vec<f64>,
    pub samples_per_cell: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            arms: vec![
                ArmSpec {
                    id: "uniform".into(),
                    kind: SamplerKind::Uniform,
                    predictor: "oracle".into(),
                },
                ArmSpec {
                    id: "masked".into(),
                    kind: SamplerKind::Masked,
                    predictor: "masked-oracle".into(),
                },
            ],
            steps: vec![1, 2, 4, 8, 16, 32, 64],
            lambdas: Vec::new(),
            samples_per_cell: 2000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapolateSection {
    /// Defaults to four times the task's frame count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_frames: Option<usize>,
}

/// Full run configuration. After resolution every defaulted field is
/// explicit, and the resolved form is what `run_meta.json` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Synthesize the codebook from this spec ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<CodebookSpec>,
    /// ... or load it from this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook_path: Option<PathBuf>,
    pub task: ToyTaskSpec,
    #[serde(default)]
    pub path: PathSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default = "default_mode")]
    pub mode: TaskMode,
    #[serde(default = "default_predictor")]
    pub predictor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<usize>,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub calibration: CalibSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub extrapolate: ExtrapolateSection,
    /// Required; there is no wall-clock seeding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Not recorded in `run_meta.json` so outputs do not depend on where
    /// they are written.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Informational; present in `run_meta.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_version: Option<String>,
}

fn default_mode() -> TaskMode {
    TaskMode::SyncGenerate
}
fn default_predictor() -> String {
    "oracle".into()
}
fn default_num_samples() -> usize {
    1000
}

/// Parsed `--predictor` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredictorChoice {
    Oracle,
    MaskedOracle,
    Trained(PathBuf),
}

impl PredictorChoice {
    pub fn parse(field: &str, s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(PredictorChoice::Oracle),
            "masked-oracle" => Ok(PredictorChoice::MaskedOracle),
            _ => match s.strip_prefix("trained:") {
                Some(p) if !p.is_empty() => {
                    let path = PathBuf::from(p);
                    if !path.is_file() {
                        return Err(Error::Config(format!("{field}: checkpoint not found: {p}")));
                    }
                    Ok(PredictorChoice::Trained(path))
                }
                _ => Err(Error::Config(format!(
                    "{field}: expected oracle, masked-oracle or trained:<path>, got {s:?}"
                ))),
            },
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_to_string(path)?)
    }

    /// Applies flag overrides and fills every default, then validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(steps) = o.steps {
            self.sampler.steps = Some(steps);
        }
        if let Some(shift) = o.shift {
            self.path.lambda = Some(shift);
        }
        if let Some(cfg) = o.cfg_scale {
            self.sampler.cfg_scale = cfg;
        }
        if let Some(p) = &o.predictor {
            self.predictor = p.clone();
        }
        let (hist_len, hist_t) = match self.mode {
            TaskMode::Extrapolate {
                history_len,
                history_noise_t,
            } => (history_len, history_noise_t),
            _ => (TaskMode::DEFAULT_HISTORY_LEN, TaskMode::DEFAULT_HISTORY_NOISE_T),
        };
        if let Some(mode) = o.mode {
            self.mode = match mode {
                ModeArg::Sync => TaskMode::SyncGenerate,
                ModeArg::I2v => TaskMode::ImageConditioned,
                ModeArg::StartEnd => TaskMode::StartEnd,
                ModeArg::Extrapolate => TaskMode::Extrapolate {
                    history_len: hist_len,
                    history_noise_t: hist_t,
                },
            };
        }
        if let TaskMode::Extrapolate {
            history_len,
            history_noise_t,
        } = &mut self.mode
        {
            if let Some(h) = o.history_len {
                *history_len = h;
            }
            if let Some(t) = o.history_noise_t {
                *history_noise_t = t;
            }
        } else if o.history_len.is_some() || o.history_noise_t.is_some() {
            return Err(Error::Config(
                "--history-len/--history-noise-t need the extrapolate mode".into(),
            ));
        }

        if self.seed.is_none() {
            return Err(Error::Config(
                "seed: required (set it in the config or pass --seed)".into(),
            ));
        }
        match (&self.codebook, &self.codebook_path) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "codebook and codebook_path are mutually exclusive".into(),
                ))
            }
            (None, None) => return Err(Error::Config("codebook_path: missing (or give a codebook spec)".into())),
            (None, Some(p)) if !p.is_file() => {
                return Err(Error::Config(format!("codebook_path: file not found: {}", p.display())))
            }
            _ => {}
        }
        self.task.validate().map_err(config_err("task"))?;
        let single = self.task.layout.frames == 1;
        self.path.lambda.get_or_insert(if single { 1.0 } else { 3.0 });
        self.sampler.steps.get_or_insert(if single { 25 } else { 50 });
        self.params().validate().map_err(config_err("path"))?;
        self.sampler_config().validate().map_err(config_err("sampler"))?;
        self.mode.check(self.task.layout).map_err(config_err("mode"))?;
        PredictorChoice::parse("predictor", &self.predictor)?;
        for arm in &self.sweep.arms {
            PredictorChoice::parse("sweep.arms.predictor", &arm.predictor)?;
        }
        if let Some(c) = self.condition {
            if c >= build_task(&self.task).map_err(config_err("task"))?.num_classes() {
                return Err(Error::Config(format!(
                    "condition: class {c} does not exist for this task"
                )));
            }
        }
        self.train.optimizer.seed = self.seed.unwrap_or_default();
        self.library_version = Some(crate::VERSION.to_string());
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved config has a seed")
    }

    pub fn params(&self) -> PathParams {
        PathParams {
            alpha: self.path.alpha,
            c: self.path.c,
            lambda: self.path.lambda.unwrap_or(1.0),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.sampler.steps.unwrap_or(1),
            params: self.params(),
            cfg_scale: self.sampler.cfg_scale,
            clamp: self.sampler.clamp,
        }
    }

    pub fn load_codebook(&self) -> Result<Codebook> {
        match (&self.codebook, &self.codebook_path) {
            (Some(spec), _) => synth_codebook(spec),
            (None, Some(p)) => Codebook::load(p),
            (None, None) => Err(Error::Config("codebook_path: missing".into())),
        }
    }
}

fn config_err(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Io { .. } => e,
        other => Error::Config(format!("{field}: {other}")),
    }
}

/// Everything a command needs, built once from the resolved config.
struct Setup {
    config: RunConfig,
    out: PathBuf,
    codebook: Codebook,
    dist: DistanceMatrix,
    q: ToyDistribution,
}

impl Setup {
    fn new(config: RunConfig) -> Result<Self> {
        let out = config
            .out
            .clone()
            .ok_or_else(|| Error::Config("out: required (pass --out)".into()))?;
        let codebook = config.load_codebook()?;
        let dist = codebook.distance_matrix()?;
        let q = build_task(&config.task)?;
        if codebook.k() != q.k() {
            return Err(Error::Config(format!(
                "codebook has {} entries but the task uses k = {}",
                codebook.k(),
                q.k()
            )));
        }
        Ok(Setup {
            config,
            out,
            codebook,
            dist,
            q,
        })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn predictor(&self, field: &str, choice: &str) -> Result<Box<dyn Predictor + '_>> {
        let p: Box<dyn Predictor> = match PredictorChoice::parse(field, choice)? {
            PredictorChoice::Oracle => Box::new(OraclePredictor::new(&self.q, &self.dist, self.config.params())),
            PredictorChoice::MaskedOracle => Box::new(MaskedOracle { q: &self.q }),
            PredictorChoice::Trained(path) => {
                let model = Checkpoint::load(&path)?.into_model()?;
                let dims = model.dims();
                if dims.k != self.q.k() || dims.layout() != self.q.layout() {
                    return Err(Error::Config(format!(
                        "{field}: checkpoint {} does not match the task layout or vocabulary",
                        path.display()
                    )));
                }
                Box::new(model)
            }
        };
        Ok(p)
    }

    /// Target distribution for TV: conditional on the class if one is set.
    fn target(&self) -> Result<ToyDistribution> {
        match self.config.condition {
            Some(c) => self.q.conditional(c),
            None => Ok(self.q.clone()),
        }
    }
}

/// Stream indices keep the commands' random draws disjoint.
const STREAM_DATA: u64 = 1;
const STREAM_CONTENT: u64 = 2;
const STREAM_CHAINS: u64 = 3;

#[derive(Debug, Serialize)]
struct SampleSummary {
    num_samples: usize,
    steps: usize,
    lambda: f64,
    /// Exact TV to the task distribution; sync mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    tv: Option<f64>,
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let path = cli
        .overrides
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("config: required (pass --config <path>)".into()))?;
    let config = RunConfig::load(path)?.resolve(&cli.overrides)?;
    run_command(cli.command, config)
}

/// Runs `command` on an already resolved config.
pub fn run_command(command: Command, config: RunConfig) -> Result<()> {
    let setup = Setup::new(config)?;
    io::write_json(&setup.file("run_meta.json"), &setup.config)?;
    log::info!("{} -> {}", command.name(), setup.out.display());
    match command {
        Command::SynthData => synth_data(&setup),
        Command::Calibrate => calibrate(&setup),
        Command::Train => train_cmd(&setup),
        Command::Sample => sample_cmd(&setup),
        Command::Sweep => sweep_cmd(&setup),
        Command::Extrapolate => extrapolate_cmd(&setup),
    }
}

fn synth_data(s: &Setup) -> Result<()> {
    s.codebook.save(&s.file("codebook.json"))?;
    s.q.save(&s.file("q.json"))?;
    let mut rng = crate::rng_stream(s.config.seed(), STREAM_DATA);
    emit_dataset(&s.q, s.config.num_samples, &mut rng, &s.file("dataset.jsonl"))
}

fn calibrate(s: &Setup) -> Result<()> {
    let cal = &s.config.calibration;
    let report = grid_search(
        &cal.alpha_set,
        &cal.c_set,
        &s.q,
        &s.dist,
        &cal.settings,
        s.config.seed(),
    )?;
    io::write_json(&s.file("calibration.json"), &report)?;
    let mut cells = String::from("alpha,c,pearson,coverage,selected\n");
    let mut curves = String::from("alpha,c,t,mean_distance,std,n\n");
    for cell in &report.cells {
        let selected = cell.alpha == report.selected_alpha && cell.c == report.selected_c;
        let r = cell.pearson.map_or_else(String::new, |r| r.to_string());
        let _ = writeln!(cells, "{},{},{r},{},{selected}", cell.alpha, cell.c, cell.coverage);
        for p in &cell.curve.points {
            let _ = writeln!(
                curves,
                "{},{},{},{},{},{}",
                cell.alpha, cell.c, p.t, p.mean_distance, p.std, p.n
            );
        }
    }
    io::write_atomic(&s.file("calibration.csv"), cells.as_bytes())?;
    io::write_atomic(&s.file("curves.csv"), curves.as_bytes())
}

fn train_cmd(s: &Setup) -> Result<()> {
    let t = &s.config.train;
    let mut dims = ModelDims::new(s.q.k(), s.q.layout(), s.q.num_classes());
    dims.embed = t.embed;
    dims.hidden = t.hidden;
    dims.use_time_input = t.use_time_input;
    let corruption = match t.objective {
        Objective::Metric => Corruption::Metric {
            dist: &s.dist,
            params: s.config.params(),
        },
        Objective::Masked => {
            dims.vocab_in = s.q.k() + 1;
            Corruption::Mask
        }
    };
    let mut model = TrainableModel::new(dims, s.config.seed())?;
    let trace = train(&mut model, &s.q, &t.optimizer, corruption)?;
    io::write_atomic(&s.file("loss.csv"), trace.to_csv().as_bytes())?;
    Checkpoint::new(&model, &t.optimizer).save(&s.file("checkpoint.json"))
}

fn to_records(samples: &[TokenSequence], cond: Option<usize>) -> Vec<SequenceRecord> {
    samples.iter().map(|x| SequenceRecord::new(x, cond)).collect()
}

fn sample_cmd(s: &Setup) -> Result<()> {
    let c = &s.config;
    let predictor = s.predictor("predictor", &c.predictor)?;
    let layout = s.q.layout();
    let sconf = c.sampler_config();
    let seed = c.seed();
    let samples: Vec<TokenSequence> = (0..c.num_samples)
        .into_par_iter()
        .map(|i| {
            let content = if c.mode.needs_content() {
                Some(s.q.sample(&mut crate::rng_stream(seed ^ STREAM_CONTENT, i as u64)).0)
            } else {
                None
            };
            let mut rng = crate::rng_stream(seed ^ STREAM_CHAINS, i as u64);
            sample(
                &*predictor,
                c.condition,
                layout,
                &sconf,
                &c.mode,
                content.as_ref(),
                &s.dist,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    let tv = match c.mode {
        TaskMode::SyncGenerate if !samples.is_empty() => Some(exact_tv(&samples, &s.target()?)?),
        _ => None,
    };
    io::write_jsonl(&s.file("samples.jsonl"), &to_records(&samples, c.condition))?;
    let summary = SampleSummary {
        num_samples: samples.len(),
        steps: sconf.steps,
        lambda: sconf.params.lambda,
        tv,
    };
    io::write_json(&s.file("summary.json"), &summary)
}

fn sweep_cmd(s: &Setup) -> Result<()> {
    let c = &s.config;
    let predictors = c
        .sweep
        .arms
        .iter()
        .map(|a| s.predictor("sweep.arms.predictor", &a.predictor))
        .collect::<Result<Vec<_>>>()?;
    for (arm, p) in c.sweep.arms.iter().zip(&predictors) {
        let masked_input = matches!(arm.kind, SamplerKind::Masked);
        // masked arms need a MASK symbol; uniform arms must not see one
        let ok = match PredictorChoice::parse("sweep.arms.predictor", &arm.predictor)? {
            PredictorChoice::Oracle => !masked_input,
            PredictorChoice::MaskedOracle => masked_input,
            PredictorChoice::Trained(path) => {
                let dims = Checkpoint::load(&path)?.dims;
                (dims.vocab_in > dims.k) == masked_input && p.k() == s.q.k()
            }
        };
        if !ok {
            return Err(Error::Config(format!(
                "sweep.arms: predictor {:?} does not fit a {:?} arm",
                arm.predictor, arm.kind
            )));
        }
    }
    let arms: Vec<SweepArm> = c
        .sweep
        .arms
        .iter()
        .zip(&predictors)
        .map(|(a, p)| SweepArm {
            id: &a.id,
            kind: a.kind,
            predictor: &**p,
        })
        .collect();
    let target = s.target()?;
    let task_id = format!(
        "{:?}-{}x{}-k{}",
        c.task.kind, c.task.layout.frames, c.task.layout.tokens_per_frame, c.task.k
    )
    .to_lowercase();
    let task = EvalTask {
        id: &task_id,
        q: &target,
        dist: &s.dist,
        params: c.params(),
        cfg_scale: c.sampler.cfg_scale,
        clamp: c.sampler.clamp,
        condition: c.condition,
    };
    let lambdas = if c.sweep.lambdas.is_empty() {
        vec![c.params().lambda]
    } else {
        c.sweep.lambdas.clone()
    };
    let report = step_sweep(
        &arms,
        &task,
        &c.sweep.steps,
        &lambdas,
        c.sweep.samples_per_cell,
        c.seed(),
    )?;
    io::write_atomic(&s.file("sweep.csv"), report.to_csv().as_bytes())?;
    io::write_json(&s.file("sweep.json"), &report)
}

fn extrapolate_cmd(s: &Setup) -> Result<()> {
    let c = &s.config;
    let mode = match c.mode {
        m @ TaskMode::Extrapolate { .. } => m,
        _ => TaskMode::extrapolate_default(),
    };
    let window: FrameLayout = s.q.layout();
    mode.check(window).map_err(config_err("mode"))?;
    let target_frames = c.extrapolate.target_frames.unwrap_or(4 * window.frames);
    if target_frames < window.frames {
        return Err(Error::Config(format!(
            "extrapolate.target_frames: {target_frames} is shorter than the {}-frame window",
            window.frames
        )));
    }
    let predictor = s.predictor("predictor", &c.predictor)?;
    let sconf = c.sampler_config();
    let seed = c.seed();
    let clips: Vec<TokenSequence> = (0..c.num_samples)
        .into_par_iter()
        .map(|i| {
            let initial = s.q.sample(&mut crate::rng_stream(seed ^ STREAM_CONTENT, i as u64)).0;
            let mut rng = crate::rng_stream(seed ^ STREAM_CHAINS, i as u64);
            extrapolate_run(
                &*predictor,
                c.condition,
                &initial,
                target_frames,
                window,
                mode,
                &sconf,
                &s.dist,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    io::write_jsonl(&s.file("extrapolated.jsonl"), &to_records(&clips, c.condition))
}
