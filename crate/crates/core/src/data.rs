//! ECG record ingestion, windowing and normalization, plus synthetic sine and
//! dynamical-model ECG sources.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::odesolve::{integrate_final, ode_fn, SolverConfig};
use crate::rng::{seeded, standard_normal};
use crate::{Error, Result};

/// Default window length in samples.
pub const SEQ_LENGTH: usize = 240;

/// Sampling rate of [`synth_dynamical_ecg`] output, Hz.
pub const SYNTH_ECG_RATE: f64 = 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLabel {
    NormalSinus,
    Arrhythmia,
    Synthetic,
}

/// A two-lead recording.
#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    pub sampling_rate: f64,
    pub channels: [Vec<f64>; 2],
    pub source: SourceLabel,
}

impl EcgRecord {
    pub fn new(sampling_rate: f64, channels: [Vec<f64>; 2], source: SourceLabel) -> Result<Self> {
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sampling rate must be positive, got {sampling_rate}"
            )));
        }
        if channels[0].len() != channels[1].len() {
            return Err(Error::InvalidInput(format!(
                "channel lengths differ: {} vs {}",
                channels[0].len(),
                channels[1].len()
            )));
        }
        Ok(Self {
            sampling_rate,
            channels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels[0].is_empty()
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `t,ch1,ch2` or `ch1,ch2` rows, skipping a non-numeric first line.
///
/// The sampling rate comes from `sampling_rate` when given, otherwise from
/// the time column.
pub fn load_ecg_csv(
    path: impl AsRef<Path>,
    sampling_rate: Option<f64>,
    source: SourceLabel,
) -> Result<EcgRecord> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_error(path, line, format!("not a number: {e}"))),
        };
        if values.len() != 2 && values.len() != 3 {
            return Err(parse_error(
                path,
                line,
                format!("expected 2 or 3 columns, found {}", values.len()),
            ));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_error(
                    path,
                    line,
                    format!("ragged row: {} columns after {w}", values.len()),
                ))
            }
            _ => {}
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_error(path, line, "non-finite value"));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no data rows", path.display())));
    }
    let timed = width == Some(3);
    let off = usize::from(timed);
    let ch1 = rows.iter().map(|r| r[off]).collect();
    let ch2 = rows.iter().map(|r| r[off + 1]).collect();
    let rate = match (sampling_rate, timed) {
        (Some(r), _) => r,
        (None, true) => {
            if rows.len() < 2 {
                return Err(Error::InvalidInput(
                    "cannot infer a sampling rate from a single row".into(),
                ));
            }
            let span = rows[rows.len() - 1][0] - rows[0][0];
            if !(span > 0.0) {
                return Err(Error::InvalidInput("time column is not increasing".into()));
            }
            (rows.len() - 1) as f64 / span
        }
        (None, false) => {
            return Err(Error::InvalidInput(format!(
                "{} has no time column; a sampling rate is required",
                path.display()
            )))
        }
    };
    EcgRecord::new(rate, [ch1, ch2], source)
}

/// Min-max scaling applied to one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.max > self.min {
            self.min + v * (self.max - self.min)
        } else {
            self.min
        }
    }
}

/// Scales `values` to `[0, 1]`; constant input maps to `0.5`.
pub fn normalize(values: &[f64]) -> Result<(Vec<f64>, Normalization)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty window".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value at index {i}")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm = Normalization { min, max };
    Ok((values.iter().map(|&v| norm.apply(v)).collect(), norm))
}

/// A normalized fixed-length segment; sample `i` sits at `i / sampling_rate`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalWindow {
    pub values: Vec<f64>,
    pub sampling_rate: f64,
    pub norm: Normalization,
    /// Offset of the first sample in the source record.
    pub start: usize,
}

impl SignalWindow {
    pub fn from_raw(raw: &[f64], sampling_rate: f64, start: usize) -> Result<Self> {
        let (values, norm) = normalize(raw)?;
        Ok(Self {
            values,
            sampling_rate,
            norm,
            start,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|i| i as f64 / self.sampling_rate)
            .collect()
    }

    /// Values in the original units.
    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.norm.invert(v)).collect()
    }
}

/// Number of windows [`window`] yields for a record of `n` samples.
pub fn window_count(n: usize, seq_length: usize, stride: usize) -> usize {
    if n < seq_length || stride == 0 {
        0
    } else {
        (n - seq_length) / stride + 1
    }
}

/// Cuts one channel into normalized windows starting every `stride` samples.
pub fn window(
    record: &EcgRecord,
    channel: usize,
    seq_length: usize,
    stride: usize,
) -> Result<Vec<SignalWindow>> {
    if stride == 0 || seq_length == 0 {
        return Err(Error::InvalidInput("seq_length and stride must be positive".into()));
    }
    let values = record.channels.get(channel).ok_or_else(|| {
        Error::InvalidInput(format!("channel {channel} out of range (records have 2)"))
    })?;
    if values.len() < seq_length {
        log::warn!(
            "record has {} samples, fewer than seq_length {seq_length}; no windows",
            values.len()
        );
        return Ok(Vec::new());
    }
    (0..window_count(values.len(), seq_length, stride))
        .map(|k| {
            let start = k * stride;
            SignalWindow::from_raw(&values[start..start + seq_length], record.sampling_rate, start)
        })
        .collect()
}

/// Stacks windows into a `[B, L]` batch.
pub fn batch_tensor(windows: &[&SignalWindow]) -> Result<Tensor> {
    let len = windows.first().map_or(0, |w| w.len());
    if len == 0 || windows.iter().any(|w| w.len() != len) {
        return Err(Error::InvalidInput("batch windows must be nonempty and equal length".into()));
    }
    let data = windows.iter().flat_map(|w| w.values.iter().copied()).collect();
    Ok(Tensor::new(vec![windows.len(), len], data)?)
}

/// Parameters of [`synth_sine`]. Frequencies are in cycles per window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineSpec {
    pub count: usize,
    pub length: usize,
    pub freq_range: (f64, f64),
    pub amp_range: (f64, f64),
}

impl Default for SineSpec {
    fn default() -> Self {
        Self {
            count: 100,
            length: SEQ_LENGTH,
            freq_range: (1.0, 3.0),
            amp_range: (0.5, 1.5),
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")))
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Raw sinusoid `A sin(2π f i / length + φ)`.
pub fn sine_samples(length: usize, freq: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..length)
        .map(|i| amp * (TAU * freq * i as f64 / length as f64 + phase).sin())
        .collect()
}

/// Random sinusoid windows with uniform frequency, amplitude and phase.
pub fn synth_sine(spec: &SineSpec, seed: u64) -> Result<Vec<SignalWindow>> {
    check_range("freq_range", spec.freq_range)?;
    check_range("amp_range", spec.amp_range)?;
    if spec.count == 0 || spec.length < 2 {
        return Err(Error::InvalidInput("count must be positive and length at least 2".into()));
    }
    let mut rng = seeded(seed);
    (0..spec.count)
        .map(|_| {
            let freq = draw(&mut rng, spec.freq_range);
            let amp = draw(&mut rng, spec.amp_range);
            let phase = rng.random_range(0.0..TAU);
            let raw = sine_samples(spec.length, freq, amp, phase);
            SignalWindow::from_raw(&raw, spec.length as f64, 0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Wave {
    pub name: String,
    pub theta: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct WaveTable {
    pub wave: Vec<Wave>,
}

impl WaveTable {
    /// The bundled P, Q, R, S, T table.
    pub fn pqrst() -> Self {
        toml::from_str(include_str!("../data/pqrst.toml")).expect("bundled wave table parses")
    }
}

/// State trajectory of the dynamical ECG model, one row per output sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EcgTrajectory {
    pub sampling_rate: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Integrates the three-variable model
///
/// ```text
/// dx/dt = αx − ωy,  dy/dt = αy + ωx,  α = 1 − √(x² + y²)
/// dz/dt = −Σ aᵢ Δθᵢ exp(−Δθᵢ² / 2bᵢ²) − z,  Δθᵢ = (θ − θᵢ) mod 2π
/// ```
///
/// with `ω = 2π · bpm / 60`, starting from `(1, 0, 0)`.
pub fn simulate_dynamical_ecg(
    table: &WaveTable,
    duration_s: f64,
    heart_rate_bpm: f64,
    sampling_rate: f64,
) -> Result<EcgTrajectory> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidInput(format!("duration must be positive, got {duration_s}")));
    }
    if !(30.0..=200.0).contains(&heart_rate_bpm) {
        return Err(Error::InvalidInput(format!(
            "heart rate must be within 30..=200 bpm, got {heart_rate_bpm}"
        )));
    }
    if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
        return Err(Error::InvalidInput("sampling rate must be positive".into()));
    }
    let omega = TAU * heart_rate_bpm / 60.0;
    let n = (duration_s * sampling_rate).round() as usize;
    let dt = 1.0 / sampling_rate;
    let solver = SolverConfig::rk4(4);
    let mut traj = EcgTrajectory {
        sampling_rate,
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
    };
    let mut state = [1.0, 0.0, 0.0];
    for i in 0..n {
        traj.x.push(state[0]);
        traj.y.push(state[1]);
        traj.z.push(state[2]);
        if i + 1 == n {
            break;
        }
        let tape = Tape::new();
        let field = ode_fn(|_, s: Var<'_>| {
            let v = s.value();
            let [x, y, z] = [v.data()[0], v.data()[1], v.data()[2]];
            let alpha = 1.0 - x.hypot(y);
            let theta = y.atan2(x);
            let bumps: f64 = table
                .wave
                .iter()
                .map(|w| {
                    let d = wrap_angle(theta - w.theta);
                    w.a * d * (-d * d / (2.0 * w.b * w.b)).exp()
                })
                .sum();
            let d = vec![alpha * x - omega * y, alpha * y + omega * x, -bumps - z];
            Ok(s.tape().constant(Tensor::vector(d)))
        });
        let y0 = tape.constant(Tensor::vector(state.to_vec()));
        let t0 = i as f64 * dt;
        let next = integrate_final(&field, y0, t0, t0 + dt, &solver)?.value();
        state.copy_from_slice(next.data());
    }
    Ok(traj)
}

/// Synthetic two-lead ECG from the dynamical model at [`SYNTH_ECG_RATE`];
/// both leads carry the `z` trace plus independent Gaussian noise of
/// standard deviation `noise_scale`.
pub fn synth_dynamical_ecg(
    duration_s: f64,
    heart_rate_bpm: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<EcgRecord> {
    if !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(Error::InvalidInput(format!("noise_scale must be >= 0, got {noise_scale}")));
    }
    let traj =
        simulate_dynamical_ecg(&WaveTable::pqrst(), duration_s, heart_rate_bpm, SYNTH_ECG_RATE)?;
    let mut rng = seeded(seed);
    let mut lead = || -> Vec<f64> {
        traj.z
            .iter()
            .map(|&z| z + noise_scale * standard_normal(&mut rng))
            .collect()
    };
    let channels = [lead(), lead()];
    EcgRecord::new(SYNTH_ECG_RATE, channels, SourceLabel::Synthetic)
}

/// Provenance of a dataset written by [`write_windows`].
#[derive(Clone, Debug, PartialEq)]
pub struct WindowEntry {
    pub file: String,
    pub seed: u64,
    pub start: usize,
    pub sampling_rate: f64,
    pub norm: Normalization,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// Writes each window as `index,value` CSV plus a manifest listing files,
/// seed, offsets and normalization.
pub fn write_windows(dir: impl AsRef<Path>, windows: &[SignalWindow], seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = csv::Writer::from_path(&manifest_path).map_err(|e| csv_error(&manifest_path, e))?;
    manifest
        .write_record(["file", "seed", "start", "sampling_rate", "min", "max"])
        .map_err(|e| csv_error(&manifest_path, e))?;
    let mut files = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        let name = format!("window_{k:05}.csv");
        let path = dir.join(&name);
        let mut out = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        out.write_record(["index", "value"]).map_err(|e| csv_error(&path, e))?;
        for (i, v) in w.values.iter().enumerate() {
            out.write_record([i.to_string(), v.to_string()])
                .map_err(|e| csv_error(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        manifest
            .write_record([
                name,
                seed.to_string(),
                w.start.to_string(),
                w.sampling_rate.to_string(),
                w.norm.min.to_string(),
                w.norm.max.to_string(),
            ])
            .map_err(|e| csv_error(&manifest_path, e))?;
        files.push(path);
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(files)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_error(path, line, format!("bad or missing column {}", i + 1)))
}

/// Reads a dataset written by [`write_windows`].
pub fn read_windows(dir: impl AsRef<Path>) -> Result<(Vec<SignalWindow>, Vec<WindowEntry>)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut reader = csv::Reader::from_path(&manifest_path).map_err(|e| csv_error(&manifest_path, e))?;
    let mut windows = Vec::new();
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(&manifest_path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let entry = WindowEntry {
            file: field(&manifest_path, line, &rec, 0)?,
            seed: field(&manifest_path, line, &rec, 1)?,
            start: field(&manifest_path, line, &rec, 2)?,
            sampling_rate: field(&manifest_path, line, &rec, 3)?,
            norm: Normalization {
                min: field(&manifest_path, line, &rec, 4)?,
                max: field(&manifest_path, line, &rec, 5)?,
            },
        };
        let path = dir.join(&entry.file);
        let mut wr = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let mut values = Vec::new();
        for r in wr.records() {
            let r = r.map_err(|e| csv_error(&path, e))?;
            let line = r.position().map_or(0, |p| p.line() as usize);
            let v: f64 = field(&path, line, &r, 1)?;
            if !v.is_finite() {
                return Err(parse_error(&path, line, "non-finite value"));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::InvalidInput(format!("{} holds no samples", path.display())));
        }
        windows.push(SignalWindow {
            values,
            sampling_rate: entry.sampling_rate,
            norm: entry.norm,
            start: entry.start,
        });
        entries.push(entry);
    }
    if windows.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no windows", manifest_path.display())));
    }
    Ok((windows, entries))
}
