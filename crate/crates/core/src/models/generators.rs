use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{GruIds, Linear, LstmIds, LstmLayer};
use super::params::{Bound, ParamStore};
use crate::autodiff::{concat_cols, Tape, Tensor, Var};
use crate::cells::{ode_rnn_unroll, AnyCell, CellKind, GruOdeParams, LstmOdeParams};
use crate::odesolve::SolverConfig;
use crate::rng::{normal_tensor, SeededRng};
use crate::{Error, Result};

/// Model time grid `t_i = i · time_step`.
pub fn time_grid(len: usize, time_step: f64) -> Vec<f64> {
    (0..len).map(|i| i as f64 * time_step).collect()
}

/// A generator usable in adversarial training.
pub trait Generator {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn channels(&self) -> usize;

    /// Draws a batch of `len`-sample signals, `[B, len·C]`.
    fn sample<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: usize,
        len: usize,
        rng: &mut SeededRng,
    ) -> Result<Var<'t>>;
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidConfig(format!("{name} must be positive")));
    }
    Ok(())
}

fn check_time_step(dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time_step must be positive, got {dt}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
enum CellIds {
    Gru(GruIds),
    Lstm(LstmIds),
}

impl CellIds {
    fn register(
        store: &mut ParamStore,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        match kind {
            CellKind::Gru => {
                CellIds::Gru(GruIds::register(store, "cell", GruOdeParams::init(input_dim, hidden_dim, rng)))
            }
            CellKind::Lstm => CellIds::Lstm(LstmIds::register(
                store,
                "cell",
                LstmOdeParams::init(input_dim, hidden_dim, rng),
            )),
        }
    }

    fn bind<'t>(&self, p: &Bound<'t>) -> Result<AnyCell<'t>> {
        Ok(match self {
            CellIds::Gru(ids) => AnyCell::Gru(ids.bind(p)?),
            CellIds::Lstm(ids) => AnyCell::Lstm(ids.bind(p)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeEcgConfig {
    pub cell: CellKind,
    pub channels: usize,
    pub hidden_dim: usize,
    /// Standard deviation of the noise added to the encoded initial state.
    pub noise_std: f64,
    /// Model time between consecutive samples.
    pub time_step: f64,
    pub solver: SolverConfig,
}

impl Default for OdeEcgConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            channels: 1,
            hidden_dim: 50,
            noise_std: 0.1,
            time_step: 1.0,
            solver: SolverConfig::rk4(2),
        }
    }
}

/// ODE-RNN signal generator: the hidden state starts from the encoded first
/// sample plus noise and evolves under a continuous recurrent cell; a linear
/// readout emits one sample per grid time.
#[derive(Clone, Debug)]
pub struct OdeEcgGenerator {
    pub config: OdeEcgConfig,
    store: ParamStore,
    cell: CellIds,
    encoder: Linear,
    readout: Linear,
}

impl OdeEcgGenerator {
    pub fn new(config: OdeEcgConfig, rng: &mut impl Rng) -> Result<Self> {
        check_positive("channels", config.channels)?;
        check_positive("hidden_dim", config.hidden_dim)?;
        check_time_step(config.time_step)?;
        config.solver.validate()?;
        let (c, h) = (config.channels, config.hidden_dim);
        let mut store = ParamStore::new();
        let cell = CellIds::register(&mut store, config.cell, c, h, rng);
        let encoder = Linear::new(&mut store, "encoder", c, h, 1.0, rng);
        let readout = Linear::new(&mut store, "readout", h, c, 1.0, rng);
        Ok(Self {
            config,
            store,
            cell,
            encoder,
            readout,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn times(&self, len: usize) -> Vec<f64> {
        time_grid(len, self.config.time_step)
    }

    /// Noise `z` for a batch, `[B, hidden]`.
    pub fn sample_noise(&self, batch: usize, rng: &mut impl Rng) -> Tensor {
        normal_tensor(&[batch, self.config.hidden_dim], self.config.noise_std, rng)
    }

    fn initial_state<'t>(&self, p: &Bound<'t>, y0: &Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
        let enc = self.encoder.forward(p, y0)?;
        if noise.shape() != enc.shape().as_slice() {
            return Err(Error::InvalidInput(format!(
                "noise {:?} does not match state {:?}",
                noise.shape(),
                enc.shape()
            )));
        }
        Ok(enc.add(&y0.tape().constant(noise.clone()))?)
    }

    fn readouts<'t>(&self, p: &Bound<'t>, hs: &[Var<'t>]) -> Result<Var<'t>> {
        let ys = hs
            .iter()
            .map(|h| self.readout.forward(p, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(concat_cols(&ys)?)
    }

    fn check_signal(&self, signal: &Tensor, ts: &[f64]) -> Result<usize> {
        let c = self.config.channels;
        match signal.shape() {
            [_, w] if *w == ts.len() * c && !ts.is_empty() => Ok(signal.shape()[0]),
            s => Err(Error::InvalidInput(format!(
                "signal {s:?} does not match {} times × {c} channels",
                ts.len()
            ))),
        }
    }

    /// Predictions with the observed signal as input: the hidden state is
    /// driven by `x_i` over `[t_i, t_{i+1}]` and the output at `t_i` only
    /// depends on samples before `t_i` (and on `x_0` through the initial
    /// state). `signal` is `[B, L·C]`; returns `[B, L·C]`.
    pub fn teacher_forced<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        signal: &Tensor,
        ts: &[f64],
        noise: &Tensor,
    ) -> Result<Var<'t>> {
        self.check_signal(signal, ts)?;
        let c = self.config.channels;
        let x = tape.constant(signal.clone());
        let inputs = (0..ts.len())
            .map(|i| x.slice_cols(i * c, c))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let cell = self.cell.bind(p)?;
        let h0 = self.initial_state(p, &inputs[0], noise)?;
        let hs = ode_rnn_unroll(&cell, h0, ts, &self.config.solver, |i, _| Ok(inputs[i]))?;
        self.readouts(p, &hs)
    }

    /// Free-running generation from `y0` (`[B, C]`): each emitted sample is
    /// fed back as the next input.
    pub fn generate<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        y0: &Tensor,
        ts: &[f64],
        noise: &Tensor,
    ) -> Result<Var<'t>> {
        if ts.is_empty() {
            return Err(Error::InvalidInput("time grid is empty".into()));
        }
        let c = self.config.channels;
        if y0.shape().len() != 2 || y0.shape()[1] != c {
            return Err(Error::InvalidInput(format!("y0 {:?} is not [B, {c}]", y0.shape())));
        }
        let y0 = tape.constant(y0.clone());
        let cell: AnyCell<'t> = self.cell.bind(p)?;
        let h0 = self.initial_state(p, &y0, noise)?;
        let hs = ode_rnn_unroll(&cell, h0, ts, &self.config.solver, |_, h| match h {
            None => Ok(y0),
            Some(h) => self.readout.forward(p, h),
        })?;
        self.readouts(p, &hs)
    }
}

impl Generator for OdeEcgGenerator {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn channels(&self) -> usize {
        self.config.channels
    }

    fn sample<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: usize,
        len: usize,
        rng: &mut SeededRng,
    ) -> Result<Var<'t>> {
        let y0 = sample_y0(batch, self.config.channels, rng);
        let noise = self.sample_noise(batch, rng);
        self.generate(p, tape, &y0, &self.times(len), &noise)
    }
}

/// Initial values uniform in `[0, 1)`, the range of normalized windows.
pub fn sample_y0(batch: usize, channels: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..batch * channels).map(|_| rng.random::<f64>()).collect();
    Tensor::new(vec![batch, channels], data).expect("positive extents")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeGeneratorConfig {
    pub channels: usize,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub time_step: f64,
    pub solver: SolverConfig,
}

impl Default for OdeGeneratorConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            latent_dim: 50,
            noise_std: 0.1,
            time_step: 1.0,
            solver: SolverConfig::rk4(1),
        }
    }
}

/// Adversarial ODE generator: a latent state initialised from the encoded
/// `y0` plus noise evolves under a continuous GRU field (`GeneratorFunc`)
/// whose input is `y0`; a linear readout gives each sample's offset from `y0`.
#[derive(Clone, Debug)]
pub struct OdeGenerator {
    pub config: OdeGeneratorConfig,
    store: ParamStore,
    func: GruIds,
    encoder: Linear,
    readout: Linear,
}

impl OdeGenerator {
    pub fn new(config: OdeGeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        check_positive("channels", config.channels)?;
        check_positive("latent_dim", config.latent_dim)?;
        check_time_step(config.time_step)?;
        config.solver.validate()?;
        let (c, h) = (config.channels, config.latent_dim);
        let mut store = ParamStore::new();
        let func = GruIds::register(&mut store, "func", GruOdeParams::init(c, h, rng));
        let encoder = Linear::new(&mut store, "encoder", c, h, 1.0, rng);
        let readout = Linear::new(&mut store, "readout", h, c, 1.0, rng);
        Ok(Self {
            config,
            store,
            func,
            encoder,
            readout,
        })
    }

    pub fn times(&self, len: usize) -> Vec<f64> {
        time_grid(len, self.config.time_step)
    }

    pub fn sample_noise(&self, batch: usize, rng: &mut impl Rng) -> Tensor {
        normal_tensor(&[batch, self.config.latent_dim], self.config.noise_std, rng)
    }

    /// Solves the latent ODE from `y0` (`[B, C]`) and emits `y0 + readout(h_t)`
    /// at every grid time, `[B, L·C]`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        y0: &Tensor,
        ts: &[f64],
        noise: &Tensor,
    ) -> Result<Var<'t>> {
        if ts.is_empty() {
            return Err(Error::InvalidInput("time grid is empty".into()));
        }
        let y0 = tape.constant(y0.clone());
        let cell = self.func.bind(p)?;
        let enc = self.encoder.forward(p, &y0)?;
        if noise.shape() != enc.shape().as_slice() {
            return Err(Error::InvalidInput(format!(
                "noise {:?} does not match latent {:?}",
                noise.shape(),
                enc.shape()
            )));
        }
        let h0 = enc.add(&tape.constant(noise.clone()))?;
        let hs = ode_rnn_unroll(&cell, h0, ts, &self.config.solver, |_, _| Ok(y0))?;
        let ys = hs
            .iter()
            .map(|h| Ok(self.readout.forward(p, h)?.add(&y0)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(concat_cols(&ys)?)
    }
}

impl Generator for OdeGenerator {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn channels(&self) -> usize {
        self.config.channels
    }

    fn sample<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: usize,
        len: usize,
        rng: &mut SeededRng,
    ) -> Result<Var<'t>> {
        let y0 = sample_y0(batch, self.config.channels, rng);
        let noise = self.sample_noise(batch, rng);
        self.forward(p, tape, &y0, &self.times(len), &noise)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub channels: usize,
    pub noise_dim: usize,
    pub hidden_dim: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            noise_dim: 5,
            hidden_dim: 50,
        }
    }
}

/// Two stacked discrete LSTM layers over per-step noise, then a linear layer.
#[derive(Clone, Debug)]
pub struct BaselineLstmGenerator {
    pub config: BaselineConfig,
    store: ParamStore,
    first: LstmLayer,
    second: LstmLayer,
    output: Linear,
}

impl BaselineLstmGenerator {
    pub fn new(config: BaselineConfig, rng: &mut impl Rng) -> Result<Self> {
        check_positive("channels", config.channels)?;
        check_positive("noise_dim", config.noise_dim)?;
        check_positive("hidden_dim", config.hidden_dim)?;
        let mut store = ParamStore::new();
        let first = LstmLayer::new(&mut store, "lstm1", config.noise_dim, config.hidden_dim, rng);
        let second = LstmLayer::new(&mut store, "lstm2", config.hidden_dim, config.hidden_dim, rng);
        let output = Linear::new(&mut store, "fc", config.hidden_dim, config.channels, 1.0, rng);
        Ok(Self {
            config,
            store,
            first,
            second,
            output,
        })
    }

    /// Per-step noise `[B, len·noise_dim]`, standard normal.
    pub fn sample_noise(&self, batch: usize, len: usize, rng: &mut impl Rng) -> Tensor {
        normal_tensor(&[batch, len * self.config.noise_dim], 1.0, rng)
    }

    /// Unrolls over `noise` (`[B, len·noise_dim]`) and returns `[B, len·C]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, noise: &Tensor) -> Result<Var<'t>> {
        let nd = self.config.noise_dim;
        let (batch, width) = match noise.shape() {
            [b, w] if w % nd == 0 && *w > 0 => (*b, *w),
            s => return Err(Error::InvalidInput(format!("noise {s:?} is not [B, len·{nd}]"))),
        };
        let z = tape.constant(noise.clone());
        let hd = self.config.hidden_dim;
        let zero = tape.constant(Tensor::zeros(&[batch, hd]));
        let (mut h1, mut c1, mut h2, mut c2) = (zero, zero, zero, zero);
        let mut ys = Vec::with_capacity(width / nd);
        for i in 0..width / nd {
            let x = z.slice_cols(i * nd, nd)?;
            (h1, c1) = self.first.step(p, &x, &h1, &c1)?;
            (h2, c2) = self.second.step(p, &h1, &h2, &c2)?;
            ys.push(self.output.forward(p, &h2)?);
        }
        Ok(concat_cols(&ys)?)
    }
}

impl Generator for BaselineLstmGenerator {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn channels(&self) -> usize {
        self.config.channels
    }

    fn sample<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: usize,
        len: usize,
        rng: &mut SeededRng,
    ) -> Result<Var<'t>> {
        check_positive("length", len)?;
        let noise = self.sample_noise(batch, len, rng);
        self.forward(p, tape, &noise)
    }
}
