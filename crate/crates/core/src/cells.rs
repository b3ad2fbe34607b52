//! Continuous-time recurrent cells and the ODE-RNN sequence pass.
//!
//! States and inputs are row-major batches: `x` is `[B, d_in]`, the state is
//! `[B, d_h]`, and weights act on the right (`x · W`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gru_ode_fused, Tape, Tensor, Var};
use crate::odesolve::{integrate_final, ode_fn, SolverConfig};
use crate::rng::uniform_tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

/// A vector field driven by an input held constant over each interval.
pub trait OdeCell<'t> {
    /// Input projection computed once per interval.
    type Drive;

    fn input_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn drive(&self, x: &Var<'t>) -> Result<Self::Drive>;
    fn derivative(&self, state: &Var<'t>, drive: &Self::Drive) -> Result<Var<'t>>;
    /// The exposed hidden vector for a state.
    fn hidden(&self, state: &Var<'t>, drive: &Self::Drive) -> Result<Var<'t>>;
}

/// Owned parameters of the continuous GRU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruOdeParams {
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_u: Tensor,
    pub u_u: Tensor,
    pub b_u: Tensor,
    pub w_g: Tensor,
    pub u_g: Tensor,
    pub b_g: Tensor,
}

impl GruOdeParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[input_dim, hidden_dim]);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        Self {
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_u: w(),
            u_u: u(),
            b_u: b(),
            w_g: w(),
            u_g: u(),
            b_g: b(),
        }
    }

    /// Uniform `±1/sqrt(d_h)` initialization, biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden_dim);
        for t in [&mut p.w_r, &mut p.u_r, &mut p.w_u, &mut p.u_u, &mut p.w_g, &mut p.u_g] {
            *t = uniform_tensor(t.shape(), k, rng);
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_r, &self.u_r, &self.b_r, &self.w_u, &self.u_u, &self.b_u, &self.w_g,
            &self.u_g, &self.b_g,
        ]
    }

    /// Places every tensor on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<GruOdeCell<'t>> {
        let v = self.tensors().map(|t| tape.leaf(t.clone()));
        GruOdeCell::new(v)
    }
}

/// The continuous GRU bound on a tape:
///
/// ```text
/// r = σ(x·W_r + h·U_r + b_r)
/// u = σ(x·W_u + h·U_u + b_u)
/// g = tanh(x·W_g + (r⊙h)·U_g + b_g)
/// dh/dt = (1 - u) ⊙ (g - h)
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruOdeCell<'t> {
    pub w_r: Var<'t>,
    pub u_r: Var<'t>,
    pub b_r: Var<'t>,
    pub w_u: Var<'t>,
    pub u_u: Var<'t>,
    pub b_u: Var<'t>,
    pub w_g: Var<'t>,
    pub u_g: Var<'t>,
    pub b_g: Var<'t>,
    input_dim: usize,
    hidden_dim: usize,
}

impl<'t> GruOdeCell<'t> {
    /// Vars in the order `W_r, U_r, b_r, W_u, U_u, b_u, W_g, U_g, b_g`.
    pub fn new(v: [Var<'t>; 9]) -> Result<Self> {
        let ws = v[0].shape();
        if ws.len() != 2 {
            return Err(Error::InvalidInput(format!("W_r must be a matrix, got {ws:?}")));
        }
        let (input_dim, hidden_dim) = (ws[0], ws[1]);
        for (i, var) in v.iter().enumerate() {
            let expected = match i % 3 {
                0 => vec![input_dim, hidden_dim],
                1 => vec![hidden_dim, hidden_dim],
                _ => vec![hidden_dim],
            };
            if var.value().numel() != expected.iter().product::<usize>()
                || (i % 3 != 2 && var.shape() != expected)
            {
                return Err(Error::InvalidInput(format!(
                    "GRU parameter {i} has shape {:?}, expected {expected:?}",
                    var.shape()
                )));
            }
        }
        Ok(Self {
            w_r: v[0],
            u_r: v[1],
            b_r: v[2],
            w_u: v[3],
            u_u: v[4],
            b_u: v[5],
            w_g: v[6],
            u_g: v[7],
            b_g: v[8],
            input_dim,
            hidden_dim,
        })
    }

    pub fn params(&self) -> [Var<'t>; 9] {
        [
            self.w_r, self.u_r, self.b_r, self.w_u, self.u_u, self.b_u, self.w_g, self.u_g,
            self.b_g,
        ]
    }
}

/// Projected GRU input `(x·W_r + b_r, x·W_u + b_u, x·W_g + b_g)`.
#[derive(Clone, Copy, Debug)]
pub struct GruDrive<'t> {
    pub r: Var<'t>,
    pub u: Var<'t>,
    pub g: Var<'t>,
}

impl<'t> OdeCell<'t> for GruOdeCell<'t> {
    type Drive = GruDrive<'t>;

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn state_dim(&self) -> usize {
        self.hidden_dim
    }

    fn drive(&self, x: &Var<'t>) -> Result<GruDrive<'t>> {
        check_input(x, self.input_dim)?;
        Ok(GruDrive {
            r: x.matmul(&self.w_r)?.add_row(&self.b_r)?,
            u: x.matmul(&self.w_u)?.add_row(&self.b_u)?,
            g: x.matmul(&self.w_g)?.add_row(&self.b_g)?,
        })
    }

    fn derivative(&self, h: &Var<'t>, d: &GruDrive<'t>) -> Result<Var<'t>> {
        Ok(gru_ode_fused(
            h, &d.r, &d.u, &d.g, &self.u_r, &self.u_u, &self.u_g,
        )?)
    }

    fn hidden(&self, h: &Var<'t>, _: &GruDrive<'t>) -> Result<Var<'t>> {
        Ok(*h)
    }
}

/// Owned parameters of the continuous LSTM. Gate blocks are packed along
/// columns in the order input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmOdeParams {
    /// `[d_in, 4·d_h]`
    pub w: Tensor,
    /// `[d_h, 4·d_h]`
    pub u: Tensor,
    /// `[4·d_h]`
    pub b: Tensor,
}

impl LstmOdeParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input_dim, 4 * hidden_dim]),
            u: Tensor::zeros(&[hidden_dim, 4 * hidden_dim]),
            b: Tensor::zeros(&[4 * hidden_dim]),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        Self {
            w: uniform_tensor(&[input_dim, 4 * hidden_dim], k, rng),
            u: uniform_tensor(&[hidden_dim, 4 * hidden_dim], k, rng),
            b: Tensor::zeros(&[4 * hidden_dim]),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<LstmOdeCell<'t>> {
        LstmOdeCell::new(
            tape.leaf(self.w.clone()),
            tape.leaf(self.u.clone()),
            tape.leaf(self.b.clone()),
        )
    }
}

/// The continuous LSTM bound on a tape. The ODE state is the cell `c`;
/// gates read the input and `tanh(c)`:
///
/// ```text
/// [i f o g] = [σ σ σ tanh](x·W + tanh(c)·U + b)
/// dc/dt = i ⊙ g - (1 - f) ⊙ c
/// h = o ⊙ tanh(c)
/// ```
#[derive(Clone, Copy, Debug)]
pub struct LstmOdeCell<'t> {
    pub w: Var<'t>,
    pub u: Var<'t>,
    pub b: Var<'t>,
    input_dim: usize,
    hidden_dim: usize,
}

impl<'t> LstmOdeCell<'t> {
    pub fn new(w: Var<'t>, u: Var<'t>, b: Var<'t>) -> Result<Self> {
        let ws = w.shape();
        if ws.len() != 2 || ws[1] % 4 != 0 || ws[1] == 0 {
            return Err(Error::InvalidInput(format!("LSTM W has shape {ws:?}")));
        }
        let (input_dim, hidden_dim) = (ws[0], ws[1] / 4);
        if u.shape() != [hidden_dim, 4 * hidden_dim] || b.value().numel() != 4 * hidden_dim {
            return Err(Error::InvalidInput(format!(
                "LSTM U {:?} / b {:?} inconsistent with hidden {hidden_dim}",
                u.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            w,
            u,
            b,
            input_dim,
            hidden_dim,
        })
    }

    pub fn params(&self) -> [Var<'t>; 3] {
        [self.w, self.u, self.b]
    }

    fn gates(&self, c: &Var<'t>, xw: &Var<'t>) -> Result<[Var<'t>; 5]> {
        let hd = self.hidden_dim;
        let tc = c.tanh();
        let a = xw.add(&tc.matmul(&self.u)?)?;
        Ok([
            a.slice_cols(0, hd)?.sigmoid(),
            a.slice_cols(hd, hd)?.sigmoid(),
            a.slice_cols(2 * hd, hd)?.sigmoid(),
            a.slice_cols(3 * hd, hd)?.tanh(),
            tc,
        ])
    }
}

impl<'t> OdeCell<'t> for LstmOdeCell<'t> {
    /// `x·W + b`
    type Drive = Var<'t>;

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn state_dim(&self) -> usize {
        self.hidden_dim
    }

    fn drive(&self, x: &Var<'t>) -> Result<Var<'t>> {
        check_input(x, self.input_dim)?;
        Ok(x.matmul(&self.w)?.add_row(&self.b)?)
    }

    fn derivative(&self, c: &Var<'t>, xw: &Var<'t>) -> Result<Var<'t>> {
        check_state(c, self.hidden_dim)?;
        let [i, f, _, g, _] = self.gates(c, xw)?;
        Ok(i.mul(&g)?.sub(&f.one_minus().mul(c)?)?)
    }

    fn hidden(&self, c: &Var<'t>, xw: &Var<'t>) -> Result<Var<'t>> {
        let [_, _, o, _, tc] = self.gates(c, xw)?;
        Ok(o.mul(&tc)?)
    }
}

fn check_input(x: &Var<'_>, input_dim: usize) -> Result<()> {
    let s = x.shape();
    if s.len() != 2 || s[1] != input_dim {
        return Err(Error::InvalidInput(format!(
            "cell input has shape {s:?}, expected [B, {input_dim}]"
        )));
    }
    Ok(())
}

fn check_state(h: &Var<'_>, hidden_dim: usize) -> Result<()> {
    let s = h.shape();
    if s.len() != 2 || s[1] != hidden_dim {
        return Err(Error::InvalidInput(format!(
            "cell state has shape {s:?}, expected [B, {hidden_dim}]"
        )));
    }
    Ok(())
}

/// Either cell behind one type, for models that choose at runtime.
#[derive(Clone, Copy, Debug)]
pub enum AnyCell<'t> {
    Gru(GruOdeCell<'t>),
    Lstm(LstmOdeCell<'t>),
}

#[derive(Clone, Copy, Debug)]
pub enum AnyDrive<'t> {
    Gru(GruDrive<'t>),
    Lstm(Var<'t>),
}

impl<'t> OdeCell<'t> for AnyCell<'t> {
    type Drive = AnyDrive<'t>;

    fn input_dim(&self) -> usize {
        match self {
            AnyCell::Gru(c) => c.input_dim(),
            AnyCell::Lstm(c) => c.input_dim(),
        }
    }

    fn state_dim(&self) -> usize {
        match self {
            AnyCell::Gru(c) => c.state_dim(),
            AnyCell::Lstm(c) => c.state_dim(),
        }
    }

    fn drive(&self, x: &Var<'t>) -> Result<AnyDrive<'t>> {
        Ok(match self {
            AnyCell::Gru(c) => AnyDrive::Gru(c.drive(x)?),
            AnyCell::Lstm(c) => AnyDrive::Lstm(c.drive(x)?),
        })
    }

    fn derivative(&self, state: &Var<'t>, drive: &AnyDrive<'t>) -> Result<Var<'t>> {
        match (self, drive) {
            (AnyCell::Gru(c), AnyDrive::Gru(d)) => c.derivative(state, d),
            (AnyCell::Lstm(c), AnyDrive::Lstm(d)) => c.derivative(state, d),
            _ => Err(Error::InvalidInput("drive built by a different cell".into())),
        }
    }

    fn hidden(&self, state: &Var<'t>, drive: &AnyDrive<'t>) -> Result<Var<'t>> {
        match (self, drive) {
            (AnyCell::Gru(c), AnyDrive::Gru(d)) => c.hidden(state, d),
            (AnyCell::Lstm(c), AnyDrive::Lstm(d)) => c.hidden(state, d),
            _ => Err(Error::InvalidInput("drive built by a different cell".into())),
        }
    }
}

/// Evolves `state` over `[t0, t1]` with the drive held fixed.
pub fn evolve<'t, C: OdeCell<'t>>(
    cell: &C,
    state: Var<'t>,
    drive: &C::Drive,
    t0: f64,
    t1: f64,
    config: &SolverConfig,
) -> Result<Var<'t>> {
    let field = ode_fn(|_, y| cell.derivative(&y, drive));
    integrate_final(&field, state, t0, t1, config)
}

fn check_times(ts: &[f64]) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::InvalidInput("time grid is empty".into()));
    }
    if let Some(i) = ts.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonIncreasingTimes { index: i + 1 });
    }
    Ok(())
}

/// ODE-RNN pass where the input for interval `i` may depend on the hidden
/// vector at `t_i` (as in free-running generation).
///
/// `input(i, hidden_i)` supplies `x_i`, held over `[t_i, t_{i+1}]`. Returns
/// the hidden vector at every grid time; the first is that of `state0`.
pub fn ode_rnn_unroll<'t, C, F>(
    cell: &C,
    state0: Var<'t>,
    ts: &[f64],
    config: &SolverConfig,
    mut input: F,
) -> Result<Vec<Var<'t>>>
where
    C: OdeCell<'t>,
    F: FnMut(usize, Option<&Var<'t>>) -> Result<Var<'t>>,
{
    check_times(ts)?;
    config.validate()?;
    let mut state = state0;
    let mut out = Vec::with_capacity(ts.len());
    let mut prev_hidden: Option<Var<'t>> = None;
    for i in 0..ts.len() {
        let x = input(i, prev_hidden.as_ref())?;
        let drive = cell.drive(&x)?;
        let h = cell.hidden(&state, &drive)?;
        out.push(h);
        if i + 1 < ts.len() {
            state = evolve(cell, state, &drive, ts[i], ts[i + 1], config)?;
        }
        prev_hidden = Some(h);
    }
    Ok(out)
}

/// ODE-RNN pass over observed inputs with zero-order hold.
///
/// `xs[i]` (`[B, d_in]`) drives the cell over `[t_i, t_{i+1}]`. Returns one
/// hidden vector per time point.
pub fn ode_rnn_forward<'t, C: OdeCell<'t>>(
    cell: &C,
    xs: &[Var<'t>],
    ts: &[f64],
    state0: Var<'t>,
    config: &SolverConfig,
) -> Result<Vec<Var<'t>>> {
    if xs.len() != ts.len() {
        return Err(Error::InvalidInput(format!(
            "{} inputs for {} time points",
            xs.len(),
            ts.len()
        )));
    }
    ode_rnn_unroll(cell, state0, ts, config, |i, _| Ok(xs[i]))
}

/// Zero initial state `[B, d_h]`.
pub fn zero_state<'t>(tape: &'t Tape, batch: usize, hidden_dim: usize) -> Var<'t> {
    tape.constant(Tensor::zeros(&[batch, hidden_dim]))
}
