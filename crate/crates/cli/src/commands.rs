use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use odesynth::autodiff::Tape;
use odesynth::cells::CellKind;
use odesynth::data::{
    load_ecg_csv, read_windows, synth_dynamical_ecg, synth_sine, window, write_windows,
    SignalWindow, SineSpec, SourceLabel, SYNTH_ECG_RATE,
};
use odesynth::eval::{export_report, MetricReport};
use odesynth::models::{
    BaselineConfig, BaselineLstmGenerator, CdeDiscConfig, CdeDiscriminator, Checkpoint,
    ConvDiscConfig, ConvDiscriminator, ConvNodeConfig, ConvNodeDiscriminator, Discriminator,
    Generator, OdeEcgConfig, OdeEcgGenerator, OdeGenerator, OdeGeneratorConfig,
};
use odesynth::odesolve::SolverConfig;
use odesynth::rng::{derive_seed, seeded};
use odesynth::training::{split_dataset, train_gan, train_ode_ecg_generator, LossHistory, TrainConfig};

use crate::config::{parse, Configurable, DataSource, ModelKind, Settings, SynthKind};
use crate::CliError;

pub const RESOLVED_FILE: &str = "resolved.cfg";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "losses.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_resolved(dir: &Path, cfg: &impl Configurable) -> Result<(), CliError> {
    create_dir(dir)?;
    let path = dir.join(RESOLVED_FILE);
    fs::write(&path, cfg.render())
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        Err(CliError::Usage(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MakeDataConfig {
    pub kind: SynthKind,
    pub count: usize,
    pub seq_length: usize,
    pub seed: u64,
    pub freq_min: f64,
    pub freq_max: f64,
    pub amp_min: f64,
    pub amp_max: f64,
    pub bpm: f64,
    pub noise_scale: f64,
    pub stride: usize,
    pub out: PathBuf,
}

impl Default for MakeDataConfig {
    fn default() -> Self {
        let sine = SineSpec::default();
        Self {
            kind: SynthKind::Sine,
            count: sine.count,
            seq_length: sine.length,
            seed: 0,
            freq_min: sine.freq_range.0,
            freq_max: sine.freq_range.1,
            amp_min: sine.amp_range.0,
            amp_max: sine.amp_range.1,
            bpm: 60.0,
            noise_scale: 0.0,
            stride: 120,
            out: PathBuf::from("data"),
        }
    }
}

impl Configurable for MakeDataConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool, CliError> {
        match key {
            "kind" => self.kind = parse(key, v)?,
            "count" => self.count = parse(key, v)?,
            "seq_length" => self.seq_length = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "freq_min" => self.freq_min = parse(key, v)?,
            "freq_max" => self.freq_max = parse(key, v)?,
            "amp_min" => self.amp_min = parse(key, v)?,
            "amp_max" => self.amp_max = parse(key, v)?,
            "bpm" => self.bpm = parse(key, v)?,
            "noise_scale" => self.noise_scale = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "out" => self.out = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("kind", self.kind.to_string()),
            ("count", self.count.to_string()),
            ("seq_length", self.seq_length.to_string()),
            ("seed", self.seed.to_string()),
            ("freq_min", self.freq_min.to_string()),
            ("freq_max", self.freq_max.to_string()),
            ("amp_min", self.amp_min.to_string()),
            ("amp_max", self.amp_max.to_string()),
            ("bpm", self.bpm.to_string()),
            ("noise_scale", self.noise_scale.to_string()),
            ("stride", self.stride.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }
}

fn dyn_ecg_windows(
    count: usize,
    seq_length: usize,
    stride: usize,
    bpm: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<SignalWindow>, CliError> {
    positive("stride", stride)?;
    let samples = (count - 1) * stride + seq_length;
    let duration = samples as f64 / SYNTH_ECG_RATE;
    let record = synth_dynamical_ecg(duration, bpm, noise_scale, seed)?;
    let mut ws = window(&record, 0, seq_length, stride)?;
    ws.truncate(count);
    Ok(ws)
}

fn synthesize(cfg: &MakeDataConfig) -> Result<Vec<SignalWindow>, CliError> {
    positive("count", cfg.count)?;
    positive("seq_length", cfg.seq_length)?;
    match cfg.kind {
        SynthKind::Sine => {
            let spec = SineSpec {
                count: cfg.count,
                length: cfg.seq_length,
                freq_range: (cfg.freq_min, cfg.freq_max),
                amp_range: (cfg.amp_min, cfg.amp_max),
            };
            Ok(synth_sine(&spec, cfg.seed)?)
        }
        SynthKind::DynEcg => dyn_ecg_windows(
            cfg.count,
            cfg.seq_length,
            cfg.stride,
            cfg.bpm,
            cfg.noise_scale,
            cfg.seed,
        ),
    }
}

/// Writes a synthetic dataset: one CSV per window plus a manifest.
pub fn make_data(settings: &Settings) -> Result<MakeDataConfig, CliError> {
    let mut cfg = MakeDataConfig::default();
    cfg.apply(settings)?;
    let windows = synthesize(&cfg)?;
    write_resolved(&cfg.out, &cfg)?;
    write_windows(&cfg.out, &windows, cfg.seed)?;
    log::info!("wrote {} windows to {}", windows.len(), cfg.out.display());
    Ok(cfg)
}

/// Everything `train` needs; defaults depend on the model kind.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunConfig {
    pub model: ModelKind,
    pub data: DataSource,
    pub cell: CellKind,
    pub train: TrainConfig,
    pub time_step: f64,
    pub solver_steps: usize,
    pub noise_std: f64,
    pub bpm: f64,
    pub noise_scale: f64,
    pub sampling_rate: Option<f64>,
    pub channel: usize,
    pub stride: usize,
    pub out: PathBuf,
}

impl TrainRunConfig {
    pub fn defaults(model: ModelKind) -> Self {
        let (train, solver, time_step, noise_std) = if model.is_adversarial() {
            let g = OdeGeneratorConfig::default();
            (TrainConfig::gan(), g.solver, g.time_step, g.noise_std)
        } else {
            let g = OdeEcgConfig::default();
            (TrainConfig::ode_rnn(), g.solver, g.time_step, g.noise_std)
        };
        let solver_steps = match solver.discretization {
            odesynth::odesolve::Discretization::Steps(n) => n,
            odesynth::odesolve::Discretization::StepSize(_) => 1,
        };
        Self {
            model,
            data: DataSource::Sine,
            cell: CellKind::Gru,
            train,
            time_step,
            solver_steps,
            noise_std,
            bpm: 60.0,
            noise_scale: 0.0,
            sampling_rate: None,
            channel: 0,
            stride: 120,
            out: PathBuf::from("run"),
        }
    }

    /// Defaults of the selected model, then `settings`.
    pub fn resolve(settings: &Settings) -> Result<Self, CliError> {
        let model = match settings.get("model") {
            Some(m) => parse("model", m)?,
            None => ModelKind::OdeRnn,
        };
        let mut cfg = Self::defaults(model);
        cfg.apply(settings)?;
        cfg.train
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        positive("solver_steps", cfg.solver_steps)?;
        positive("stride", cfg.stride)?;
        Ok(cfg)
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig::rk4(self.solver_steps)
    }

    pub fn spec(&self) -> ModelSpec {
        let t = &self.train;
        let generator = match self.model {
            ModelKind::OdeRnn => GeneratorSpec::OdeEcg(OdeEcgConfig {
                cell: self.cell,
                channels: 1,
                hidden_dim: t.hidden_dim,
                noise_std: self.noise_std,
                time_step: self.time_step,
                solver: self.solver(),
            }),
            ModelKind::BaselineGan => GeneratorSpec::Baseline(BaselineConfig {
                hidden_dim: t.hidden_dim,
                ..BaselineConfig::default()
            }),
            _ => GeneratorSpec::Ode(OdeGeneratorConfig {
                channels: 1,
                latent_dim: t.hidden_dim,
                noise_std: self.noise_std,
                time_step: self.time_step,
                solver: self.solver(),
            }),
        };
        let discriminator = match self.model {
            ModelKind::OdeRnn => None,
            ModelKind::OdeGan | ModelKind::BaselineGan => Some(DiscSpec::Conv(ConvDiscConfig {
                seq_length: t.seq_length,
                batch_size: t.batch_size,
                ..ConvDiscConfig::default()
            })),
            ModelKind::OdeGan2Convnode => Some(DiscSpec::ConvNode(ConvNodeConfig {
                seq_length: t.seq_length,
                ..ConvNodeConfig::default()
            })),
            ModelKind::OdeGan2Cde => Some(DiscSpec::Cde(CdeDiscConfig {
                hidden_channels: t.hidden_dim,
                seq_length: t.seq_length,
                ..CdeDiscConfig::default()
            })),
        };
        ModelSpec {
            model: self.model,
            seq_length: t.seq_length,
            generator,
            discriminator,
        }
    }
}

impl Configurable for TrainRunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool, CliError> {
        let t = &mut self.train;
        match key {
            "model" => self.model = parse(key, v)?,
            "data" => self.data = parse(key, v)?,
            "cell" => {
                self.cell = match v.trim() {
                    "gru" => CellKind::Gru,
                    "lstm" => CellKind::Lstm,
                    _ => return Err(CliError::Usage(format!("cell must be gru or lstm, got `{v}`"))),
                }
            }
            "batch_size" => t.batch_size = parse(key, v)?,
            "datasize" => t.datasize = parse(key, v)?,
            "seq_length" => t.seq_length = parse(key, v)?,
            "hidden_dim" => t.hidden_dim = parse(key, v)?,
            "lr" => t.learning_rate = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "iterations" => t.iterations = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "grad_noise" => t.grad_noise = parse(key, v)?,
            "split_ratio" => t.split_ratio = parse(key, v)?,
            "time_step" => self.time_step = parse(key, v)?,
            "solver_steps" => self.solver_steps = parse(key, v)?,
            "noise_std" => self.noise_std = parse(key, v)?,
            "bpm" => self.bpm = parse(key, v)?,
            "noise_scale" => self.noise_scale = parse(key, v)?,
            "sampling_rate" => {
                self.sampling_rate = match v.trim() {
                    "" | "auto" => None,
                    s => Some(parse(key, s)?),
                }
            }
            "channel" => self.channel = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "out" => self.out = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let cell = match self.cell {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        };
        vec![
            ("model", self.model.to_string()),
            ("data", self.data.to_string()),
            ("cell", cell.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("datasize", t.datasize.to_string()),
            ("seq_length", t.seq_length.to_string()),
            ("hidden_dim", t.hidden_dim.to_string()),
            ("lr", t.learning_rate.to_string()),
            ("epochs", t.epochs.to_string()),
            ("iterations", t.iterations.to_string()),
            ("seed", t.seed.to_string()),
            ("grad_noise", t.grad_noise.to_string()),
            ("split_ratio", t.split_ratio.to_string()),
            ("time_step", self.time_step.to_string()),
            ("solver_steps", self.solver_steps.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("bpm", self.bpm.to_string()),
            ("noise_scale", self.noise_scale.to_string()),
            (
                "sampling_rate",
                self.sampling_rate.map_or("auto".into(), |r| r.to_string()),
            ),
            ("channel", self.channel.to_string()),
            ("stride", self.stride.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeneratorSpec {
    OdeEcg(OdeEcgConfig),
    Ode(OdeGeneratorConfig),
    Baseline(BaselineConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiscSpec {
    Conv(ConvDiscConfig),
    ConvNode(ConvNodeConfig),
    Cde(CdeDiscConfig),
}

/// Architecture recorded in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub seq_length: usize,
    pub generator: GeneratorSpec,
    pub discriminator: Option<DiscSpec>,
}

pub enum AnyGenerator {
    OdeEcg(OdeEcgGenerator),
    Ode(OdeGenerator),
    Baseline(BaselineLstmGenerator),
}

impl AnyGenerator {
    pub fn build(spec: &GeneratorSpec, seed: u64) -> Result<Self, CliError> {
        let rng = &mut seeded(seed);
        Ok(match spec {
            GeneratorSpec::OdeEcg(c) => AnyGenerator::OdeEcg(OdeEcgGenerator::new(c.clone(), rng)?),
            GeneratorSpec::Ode(c) => AnyGenerator::Ode(OdeGenerator::new(c.clone(), rng)?),
            GeneratorSpec::Baseline(c) => {
                AnyGenerator::Baseline(BaselineLstmGenerator::new(c.clone(), rng)?)
            }
        })
    }

    pub fn as_dyn(&self) -> &dyn Generator {
        match self {
            AnyGenerator::OdeEcg(g) => g,
            AnyGenerator::Ode(g) => g,
            AnyGenerator::Baseline(g) => g,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn Generator {
        match self {
            AnyGenerator::OdeEcg(g) => g,
            AnyGenerator::Ode(g) => g,
            AnyGenerator::Baseline(g) => g,
        }
    }
}

pub fn build_discriminator(spec: &DiscSpec, seed: u64) -> Result<Box<dyn Discriminator>, CliError> {
    let rng = &mut seeded(seed);
    Ok(match spec {
        DiscSpec::Conv(c) => Box::new(ConvDiscriminator::new(c.clone(), rng)?),
        DiscSpec::ConvNode(c) => Box::new(ConvNodeDiscriminator::new(c.clone(), rng)?),
        DiscSpec::Cde(c) => Box::new(CdeDiscriminator::new(c.clone(), rng)?),
    })
}

fn checkpoint(
    spec: &ModelSpec,
    generator: &dyn Generator,
    discriminator: Option<&dyn Discriminator>,
) -> odesynth::Result<Checkpoint> {
    let mut ck = Checkpoint::new(spec.model.name(), spec)?.with_store("generator", generator.params());
    if let Some(d) = discriminator {
        ck = ck.with_store("discriminator", d.params());
    }
    Ok(ck)
}

/// Loads, windows and splits the configured data; returns `(train, test)`.
pub fn load_dataset(cfg: &TrainRunConfig) -> Result<(Vec<SignalWindow>, Vec<SignalWindow>), CliError> {
    let t = &cfg.train;
    let total = ((t.datasize as f64 / t.split_ratio).round() as usize).max(2);
    let data_seed = derive_seed(t.seed, &[11]);
    let windows = match &cfg.data {
        DataSource::Sine => synth_sine(
            &SineSpec {
                count: total,
                length: t.seq_length,
                ..SineSpec::default()
            },
            data_seed,
        )?,
        DataSource::DynEcg => {
            dyn_ecg_windows(total, t.seq_length, cfg.stride, cfg.bpm, cfg.noise_scale, data_seed)?
        }
        DataSource::Path(p) if p.is_dir() => read_windows(p)?.0,
        DataSource::Path(p) if p.is_file() => {
            let rec = load_ecg_csv(p, cfg.sampling_rate, SourceLabel::NormalSinus)?;
            window(&rec, cfg.channel, t.seq_length, cfg.stride)?
        }
        DataSource::Path(p) => {
            return Err(CliError::Usage(format!("data source {} does not exist", p.display())))
        }
    };
    if let Some(w) = windows.iter().find(|w| w.len() != t.seq_length) {
        return Err(CliError::Usage(format!(
            "data windows have length {}, expected seq_length {}",
            w.len(),
            t.seq_length
        )));
    }
    if windows.len() < 2 {
        return Err(CliError::Usage(format!(
            "need at least 2 windows, data yields {}",
            windows.len()
        )));
    }
    let (mut train, test) = split_dataset(&windows, t.split_ratio, derive_seed(t.seed, &[12]))?;
    train.truncate(t.datasize);
    Ok((train, test))
}

pub struct TrainOutcome {
    pub config: TrainRunConfig,
    pub history: LossHistory,
    pub checkpoint: PathBuf,
}

/// Trains the configured model and writes the resolved config, per-epoch
/// checkpoint, loss CSV/SVG and the held-out windows under `test/`.
pub fn train(settings: &Settings) -> Result<TrainOutcome, CliError> {
    let cfg = TrainRunConfig::resolve(settings)?;
    write_resolved(&cfg.out, &cfg)?;
    let (train_set, test_set) = load_dataset(&cfg)?;
    write_windows(cfg.out.join("test"), &test_set, cfg.train.seed)?;
    log::info!(
        "training {} on {} windows ({} held out)",
        cfg.model,
        train_set.len(),
        test_set.len()
    );
    let spec = cfg.spec();
    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    let model_seed = derive_seed(cfg.train.seed, &[13]);
    let mut generator = AnyGenerator::build(&spec.generator, model_seed)?;
    let history = match (&mut generator, &spec.discriminator) {
        (AnyGenerator::OdeEcg(g), None) => {
            train_ode_ecg_generator(g, &train_set, &cfg.train, |_, _, g| {
                checkpoint(&spec, g, None)?.save(&ck_path)
            })?
        }
        (g, Some(ds)) => {
            let mut d = build_discriminator(ds, derive_seed(cfg.train.seed, &[14]))?;
            train_gan(g.as_dyn_mut(), d.as_mut(), &train_set, &cfg.train, |_, g, d| {
                checkpoint(&spec, g, Some(d))?.save(&ck_path)
            })?
        }
        _ => return Err(CliError::Usage("model and discriminator do not match".into())),
    };
    export_report(&cfg.out, None, Some(&history), &[], None, cfg.train.seed)?;
    Ok(TrainOutcome {
        config: cfg,
        history,
        checkpoint: ck_path,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub checkpoint: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("run").join(CHECKPOINT_FILE),
            count: 5,
            seed: 0,
            reference: None,
            out: PathBuf::from("generated"),
        }
    }
}

impl Configurable for GenerateConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool, CliError> {
        match key {
            "checkpoint" => self.checkpoint = parse(key, v)?,
            "count" => self.count = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "reference" => {
                self.reference = match v.trim() {
                    "" | "none" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "out" => self.out = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("checkpoint", self.checkpoint.display().to_string()),
            ("count", self.count.to_string()),
            ("seed", self.seed.to_string()),
            (
                "reference",
                self.reference
                    .as_ref()
                    .map_or("none".into(), |p| p.display().to_string()),
            ),
            ("out", self.out.display().to_string()),
        ]
    }
}

/// Restores the generator stored in a checkpoint.
pub fn load_generator(path: &Path) -> Result<(ModelSpec, AnyGenerator), CliError> {
    let ck = Checkpoint::load(path)?;
    let spec: ModelSpec = ck.config()?;
    if spec.model.name() != ck.kind {
        return Err(CliError::Usage(format!(
            "checkpoint kind `{}` does not match its configuration",
            ck.kind
        )));
    }
    let mut g = AnyGenerator::build(&spec.generator, 0)?;
    ck.restore("generator", g.as_dyn_mut().params_mut())?;
    Ok((spec, g))
}

/// Samples `count` windows of the checkpoint's sequence length.
pub fn sample_signals(
    spec: &ModelSpec,
    generator: &dyn Generator,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CliError> {
    positive("count", count)?;
    let tape = Tape::new();
    let p = generator.params().bind_frozen(&tape);
    let mut rng = seeded(derive_seed(seed, &[21]));
    let out = generator.sample(&p, &tape, count, spec.seq_length, &mut rng)?;
    let v = out.value();
    Ok(v.data().chunks(spec.seq_length).map(<[f64]>::to_vec).collect())
}

/// Writes `count` generated windows (CSV plus manifest) and an overlay plot.
pub fn generate(settings: &Settings) -> Result<Vec<Vec<f64>>, CliError> {
    let mut cfg = GenerateConfig::default();
    cfg.apply(settings)?;
    positive("count", cfg.count)?;
    let (spec, g) = load_generator(&cfg.checkpoint)?;
    write_resolved(&cfg.out, &cfg)?;
    let signals = sample_signals(&spec, g.as_dyn(), cfg.count, cfg.seed)?;
    let reference = match &cfg.reference {
        Some(dir) => Some(read_windows(dir)?.0.swap_remove(0).values),
        None => None,
    };
    export_report(&cfg.out, None, None, &signals, reference.as_deref(), cfg.seed)?;
    Ok(signals)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateConfig {
    pub real: PathBuf,
    pub generated: PathBuf,
    pub out: PathBuf,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            real: PathBuf::from("data"),
            generated: PathBuf::from("generated").join("signals"),
            out: PathBuf::from("report"),
        }
    }
}

impl Configurable for EvaluateConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool, CliError> {
        match key {
            "real" => self.real = parse(key, v)?,
            "generated" => self.generated = parse(key, v)?,
            "out" => self.out = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("real", self.real.display().to_string()),
            ("generated", self.generated.display().to_string()),
            ("out", self.out.display().to_string()),
        ]
    }
}

fn values(windows: Vec<SignalWindow>) -> Vec<Vec<f64>> {
    windows.into_iter().map(|w| w.values).collect()
}

/// Compares two window sets and writes `metrics.csv` and an overlay.
pub fn evaluate(settings: &Settings) -> Result<MetricReport, CliError> {
    let mut cfg = EvaluateConfig::default();
    cfg.apply(settings)?;
    let real = values(read_windows(&cfg.real)?.0);
    let generated = values(read_windows(&cfg.generated)?.0);
    let report = MetricReport::compute(&generated, &real)?;
    write_resolved(&cfg.out, &cfg)?;
    let dir = &cfg.out;
    fs::write(dir.join("metrics.csv"), report.to_csv())
        .map_err(|e| CliError::Usage(format!("cannot write metrics: {e}")))?;
    let overlay = odesynth::eval::line_plot_svg(
        "real vs generated",
        &[("generated", &generated[0]), ("real", &real[0])],
    );
    fs::write(dir.join("overlay.svg"), overlay)
        .map_err(|e| CliError::Usage(format!("cannot write overlay: {e}")))?;
    log::info!("mmd {:.6}, rmse to nearest {:.6}", report.mmd_rbf, report.rmse_to_nearest);
    Ok(report)
}
