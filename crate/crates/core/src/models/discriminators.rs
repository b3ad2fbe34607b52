use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv, Linear};
use super::params::{Bound, ParamStore};
use crate::autodiff::{minibatch_discrimination, Tape, Tensor, Var};
use crate::interpolation::{cde_integrate, SplineBasis, SplineControl};
use crate::odesolve::{integrate_final, ode_fn, SolverConfig};
use crate::rng::{normal_tensor, uniform_tensor};
use crate::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;

/// Scale applied to the output heads' initial weights so that untrained
/// discriminators start near `σ(0) = 0.5`.
const HEAD_GAIN: f64 = 0.1;

/// Scores candidate signals as real (near 1) or generated (near 0).
///
/// `candidate` and `reference` are `[B, seq_length]`. Pairwise models compare
/// each candidate against its reference; the others ignore `reference`.
pub trait Discriminator {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn seq_length(&self) -> usize;
    /// Real-probabilities, `[B, 1]`.
    fn forward<'t>(
        &self,
        p: &Bound<'t>,
        candidate: &Var<'t>,
        reference: &Var<'t>,
    ) -> Result<Var<'t>>;
}

fn batch_of(x: &Var<'_>, seq_length: usize) -> Result<usize> {
    match x.shape().as_slice() {
        [b, l] if *l == seq_length => Ok(*b),
        s => Err(Error::InvalidInput(format!(
            "discriminator input {s:?} is not [B, {seq_length}]"
        ))),
    }
}

/// Layer settings of the convolutional discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvDiscConfig {
    pub seq_length: usize,
    pub batch_size: usize,
    /// Normal (rather than uniform) initialization of the minibatch projection.
    pub minibatch_normal_init: bool,
    pub num_cv: usize,
    pub cv1_out: usize,
    pub cv1_k: (usize, usize),
    pub cv1_s: (usize, usize),
    /// Max-pool window (and stride) along time after the first conv.
    pub p1_k: usize,
    pub cv2_out: usize,
    pub cv2_k: (usize, usize),
    pub cv2_s: (usize, usize),
    pub p2_k: usize,
    pub mb_kernels: usize,
    pub mb_kernel_dim: usize,
}

impl Default for ConvDiscConfig {
    fn default() -> Self {
        Self {
            seq_length: 240,
            batch_size: 64,
            minibatch_normal_init: true,
            num_cv: 2,
            cv1_out: 32,
            cv1_k: (1, 5),
            cv1_s: (1, 1),
            p1_k: 2,
            cv2_out: 64,
            cv2_k: (1, 5),
            cv2_s: (1, 1),
            p2_k: 2,
            mb_kernels: 5,
            mb_kernel_dim: 3,
        }
    }
}

impl ConvDiscConfig {
    /// Width of the flattened conv stack output.
    pub fn flatten_size(&self) -> Result<usize> {
        let mut w = self.seq_length;
        for (k, s, p) in [(self.cv1_k, self.cv1_s, self.p1_k), (self.cv2_k, self.cv2_s, self.p2_k)] {
            if k.0 != 1 || k.1 > w {
                return Err(Error::InvalidConfig(format!(
                    "kernel {k:?} does not fit a 1×{w} feature map"
                )));
            }
            w = Conv::out_extent(w, k.1, s.1, 0);
            if p == 0 || p > w {
                return Err(Error::InvalidConfig(format!("pool {p} does not fit width {w}")));
            }
            w = (w - p) / p + 1;
        }
        Ok(self.cv2_out * w)
    }
}

/// Two conv / leaky-ReLU / max-pool stages, minibatch discrimination and a
/// sigmoid head, over signals viewed as `1 × L` single-channel images.
#[derive(Clone, Debug)]
pub struct ConvDiscriminator {
    pub config: ConvDiscConfig,
    store: ParamStore,
    conv1: Conv,
    conv2: Conv,
    projection: super::params::ParamId,
    head: Linear,
    flatten: usize,
}

impl ConvDiscriminator {
    pub fn new(config: ConvDiscConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.num_cv != 2 {
            return Err(Error::InvalidConfig(format!(
                "num_cv must be 2, got {}",
                config.num_cv
            )));
        }
        if config.cv1_s.0 == 0 || config.cv1_s.1 == 0 || config.cv2_s.0 == 0 || config.cv2_s.1 == 0 {
            return Err(Error::InvalidConfig("conv strides must be >= 1".into()));
        }
        if config.mb_kernels == 0 || config.mb_kernel_dim == 0 {
            return Err(Error::InvalidConfig("minibatch kernel sizes must be positive".into()));
        }
        let flatten = config.flatten_size()?;
        let mut store = ParamStore::new();
        let conv1 = Conv::new(&mut store, "conv1", 1, config.cv1_out, config.cv1_k, config.cv1_s, (0, 0), rng);
        let conv2 = Conv::new(
            &mut store,
            "conv2",
            config.cv1_out,
            config.cv2_out,
            config.cv2_k,
            config.cv2_s,
            (0, 0),
            rng,
        );
        let pq = config.mb_kernels * config.mb_kernel_dim;
        let proj = if config.minibatch_normal_init {
            normal_tensor(&[flatten, pq], 0.1, rng)
        } else {
            uniform_tensor(&[flatten, pq], 1.0 / (flatten as f64).sqrt(), rng)
        };
        let projection = store.add("minibatch.t", proj);
        let head = Linear::new(&mut store, "head", flatten + config.mb_kernels, 1, HEAD_GAIN, rng);
        Ok(Self {
            config,
            store,
            conv1,
            conv2,
            projection,
            head,
            flatten,
        })
    }

    pub fn flatten_size(&self) -> usize {
        self.flatten
    }

    pub fn score<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let b = batch_of(x, self.config.seq_length)?;
        let c = &self.config;
        let x = x.reshape(&[b, 1, 1, c.seq_length])?;
        let x = self.conv1.forward(p, &x)?.leaky_relu(LEAKY_SLOPE);
        let x = x.maxpool2d((1, c.p1_k), (1, c.p1_k))?;
        let x = self.conv2.forward(p, &x)?.leaky_relu(LEAKY_SLOPE);
        let x = x.maxpool2d((1, c.p2_k), (1, c.p2_k))?;
        let x = x.reshape(&[b, self.flatten])?;
        let x = minibatch_discrimination(&x, &p.get(self.projection), c.mb_kernels, c.mb_kernel_dim)?;
        Ok(self.head.forward(p, &x)?.sigmoid())
    }
}

impl Discriminator for ConvDiscriminator {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn seq_length(&self) -> usize {
        self.config.seq_length
    }

    fn forward<'t>(&self, p: &Bound<'t>, candidate: &Var<'t>, _: &Var<'t>) -> Result<Var<'t>> {
        self.score(p, candidate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvNodeConfig {
    pub seq_length: usize,
    pub channels: usize,
    pub conv_k: (usize, usize),
    pub conv_s: (usize, usize),
    /// Kernel of the convolution inside `DiscriminatorFunc` (same padding).
    pub func_k: (usize, usize),
    /// Integration horizon of the NODE layer.
    pub node_time: f64,
    pub solver: SolverConfig,
    pub pool_k: usize,
}

impl Default for ConvNodeConfig {
    fn default() -> Self {
        Self {
            seq_length: 240,
            channels: 32,
            conv_k: (1, 5),
            conv_s: (1, 2),
            func_k: (1, 3),
            node_time: 1.0,
            solver: SolverConfig::rk4(2),
            pool_k: 2,
        }
    }
}

/// Conv layer, NODE layer `ds/dt = tanh(conv(s))`, two conv/max-pool pairs
/// and a sigmoid head.
#[derive(Clone, Debug)]
pub struct ConvNodeDiscriminator {
    pub config: ConvNodeConfig,
    store: ParamStore,
    stem: Conv,
    func: Conv,
    pairs: [Conv; 2],
    head: Linear,
    flatten: usize,
}

impl ConvNodeDiscriminator {
    pub fn new(config: ConvNodeConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = &config;
        if c.func_k.0 != 1 || c.func_k.1 % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "func_k must be (1, odd), got {:?}",
                c.func_k
            )));
        }
        if c.conv_k.0 != 1 || c.conv_s.0 == 0 || c.conv_s.1 == 0 || c.pool_k == 0 || c.channels == 0 {
            return Err(Error::InvalidConfig("invalid conv settings".into()));
        }
        if !(c.node_time.is_finite() && c.node_time > 0.0) {
            return Err(Error::InvalidConfig("node_time must be positive".into()));
        }
        c.solver.validate()?;
        let mut w = c.seq_length;
        if c.conv_k.1 > w {
            return Err(Error::InvalidConfig("stem kernel wider than signal".into()));
        }
        w = Conv::out_extent(w, c.conv_k.1, c.conv_s.1, 0);
        for _ in 0..2 {
            if c.conv_k.1 > w {
                return Err(Error::InvalidConfig(format!("kernel does not fit width {w}")));
            }
            w = Conv::out_extent(w, c.conv_k.1, 1, 0);
            if c.pool_k > w {
                return Err(Error::InvalidConfig(format!("pool does not fit width {w}")));
            }
            w = (w - c.pool_k) / c.pool_k + 1;
        }
        let flatten = c.channels * w;
        let ch = c.channels;
        let mut store = ParamStore::new();
        let stem = Conv::new(&mut store, "stem", 1, ch, c.conv_k, c.conv_s, (0, 0), rng);
        let func = Conv::new(&mut store, "func", ch, ch, c.func_k, (1, 1), (0, c.func_k.1 / 2), rng);
        let pairs = [
            Conv::new(&mut store, "pair1", ch, ch, c.conv_k, (1, 1), (0, 0), rng),
            Conv::new(&mut store, "pair2", ch, ch, c.conv_k, (1, 1), (0, 0), rng),
        ];
        let head = Linear::new(&mut store, "head", flatten, 1, HEAD_GAIN, rng);
        Ok(Self {
            config,
            store,
            stem,
            func,
            pairs,
            head,
            flatten,
        })
    }

    /// Full forward pass; with `node = false` the NODE layer is skipped.
    pub fn score_with<'t>(&self, p: &Bound<'t>, x: &Var<'t>, node: bool) -> Result<Var<'t>> {
        let c = &self.config;
        let b = batch_of(x, c.seq_length)?;
        let x = x.reshape(&[b, 1, 1, c.seq_length])?;
        let mut s = self.stem.forward(p, &x)?.leaky_relu(LEAKY_SLOPE);
        if node {
            let field = ode_fn(|_, y| Ok(self.func.forward(p, &y)?.tanh()));
            s = integrate_final(&field, s, 0.0, c.node_time, &c.solver)?;
        }
        for conv in &self.pairs {
            s = conv.forward(p, &s)?.leaky_relu(LEAKY_SLOPE);
            s = s.maxpool2d((1, c.pool_k), (1, c.pool_k))?;
        }
        let s = s.reshape(&[b, self.flatten])?;
        Ok(self.head.forward(p, &s)?.sigmoid())
    }
}

impl Discriminator for ConvNodeDiscriminator {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn seq_length(&self) -> usize {
        self.config.seq_length
    }

    fn forward<'t>(&self, p: &Bound<'t>, candidate: &Var<'t>, _: &Var<'t>) -> Result<Var<'t>> {
        self.score_with(p, candidate, true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdeDiscConfig {
    /// Path channels: time, candidate, reference.
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub output_channels: usize,
    /// Knot count of the path.
    pub seq_length: usize,
    /// Discretization of each knot interval.
    pub solver: SolverConfig,
}

impl Default for CdeDiscConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            hidden_channels: 50,
            output_channels: 1,
            seq_length: 240,
            solver: SolverConfig::rk4(1),
        }
    }
}

/// Neural CDE over the spline path `U = (t, candidate, reference)`; the
/// hidden state starts at zero and a sigmoid readout of its final value
/// scores the candidate.
#[derive(Clone, Debug)]
pub struct CdeDiscriminator {
    pub config: CdeDiscConfig,
    store: ParamStore,
    field: Linear,
    readout: Linear,
    basis: SplineBasis,
    times: Tensor,
}

impl CdeDiscriminator {
    pub fn new(config: CdeDiscConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.input_channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "input_channels must be 3 (time, candidate, reference), got {}",
                config.input_channels
            )));
        }
        if config.output_channels != 1 {
            return Err(Error::InvalidConfig("output_channels must be 1".into()));
        }
        if config.hidden_channels == 0 {
            return Err(Error::InvalidConfig("hidden_channels must be positive".into()));
        }
        if config.seq_length < 2 {
            return Err(Error::TooFewKnots(config.seq_length));
        }
        config.solver.validate()?;
        let (h, c) = (config.hidden_channels, config.input_channels);
        let mut store = ParamStore::new();
        let field = Linear::new(&mut store, "field", h, h * c, 1.0, rng);
        // zero state must not be a fixed point of the untrained field
        let bias = uniform_tensor(&[h * c], 1.0 / (h as f64).sqrt(), rng);
        *store.get_mut(field.b) = bias;
        let readout = Linear::new(&mut store, "readout", h, 1, HEAD_GAIN, rng);
        let n = config.seq_length;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let basis = SplineBasis::new(&ts)?;
        Ok(Self {
            config,
            store,
            field,
            readout,
            basis,
            times: Tensor::vector(ts),
        })
    }

    pub fn knots(&self) -> &[f64] {
        self.basis.times()
    }

    /// Final hidden state `[B, hidden]`.
    pub fn hidden<'t>(
        &self,
        p: &Bound<'t>,
        candidate: &Var<'t>,
        reference: &Var<'t>,
    ) -> Result<Var<'t>> {
        let n = self.config.seq_length;
        let b = batch_of(candidate, n)?;
        if batch_of(reference, n)? != b {
            return Err(Error::InvalidInput("candidate and reference batches differ".into()));
        }
        let tape: &'t Tape = candidate.tape();
        let mut tdata = Vec::with_capacity(b * n);
        for _ in 0..b {
            tdata.extend_from_slice(self.times.data());
        }
        let time = tape.constant(Tensor::new(vec![b, n], tdata)?);
        let control = SplineControl::new(&self.basis, vec![time, *candidate, *reference])?;
        let z0 = tape.constant(Tensor::zeros(&[b, self.config.hidden_channels]));
        let field = |z: &Var<'t>| -> Result<Var<'t>> { Ok(self.field.forward(p, z)?.tanh()) };
        cde_integrate(tape, field, z0, &control, &self.config.solver)
    }
}

impl Discriminator for CdeDiscriminator {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn seq_length(&self) -> usize {
        self.config.seq_length
    }

    fn forward<'t>(
        &self,
        p: &Bound<'t>,
        candidate: &Var<'t>,
        reference: &Var<'t>,
    ) -> Result<Var<'t>> {
        let z = self.hidden(p, candidate, reference)?;
        Ok(self.readout.forward(p, &z)?.sigmoid())
    }
}
