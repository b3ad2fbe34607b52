//! Fixed-step explicit integration recorded on the autodiff tape.
//!
//! Gradients flow by backpropagating through the unrolled steps, so they are
//! exact for the discretized system.

use serde::{Deserialize, Serialize};

use crate::autodiff::{lincomb, rk4_combine, Var};
use crate::{Error, Result};

/// Vector field `dy/dt = f(t, y)`; the returned tensor has `y`'s shape.
pub trait OdeFunc<'t> {
    fn eval(&self, t: f64, y: Var<'t>) -> Result<Var<'t>>;
}

impl<'t, F> OdeFunc<'t> for F
where
    F: Fn(f64, Var<'t>) -> Result<Var<'t>>,
{
    fn eval(&self, t: f64, y: Var<'t>) -> Result<Var<'t>> {
        self(t, y)
    }
}

/// Pins a closure's signature so it can be used as an [`OdeFunc`].
pub fn ode_fn<'t, F>(f: F) -> F
where
    F: Fn(f64, Var<'t>) -> Result<Var<'t>>,
{
    f
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

/// How a span is cut into steps. Exactly one of the two drives
/// discretization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Maximum step length; the span is split into `ceil(span / h)` equal steps.
    StepSize(f64),
    /// Fixed number of equal steps per integrated span.
    Steps(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub discretization: Discretization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::rk4(4)
    }
}

impl SolverConfig {
    pub fn rk4(steps: usize) -> Self {
        Self {
            method: Method::Rk4,
            discretization: Discretization::Steps(steps),
        }
    }

    pub fn euler(steps: usize) -> Self {
        Self {
            method: Method::Euler,
            discretization: Discretization::Steps(steps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.discretization {
            Discretization::StepSize(h) if !(h.is_finite() && h > 0.0) => Err(
                Error::InvalidConfig(format!("step size must be positive, got {h}")),
            ),
            Discretization::Steps(0) => {
                Err(Error::InvalidConfig("step count must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Number of steps used over `[t0, t1]`.
    pub fn steps_for(&self, t0: f64, t1: f64) -> Result<usize> {
        self.validate()?;
        if !(t1 > t0) {
            return Err(Error::InvalidSpan { t0, t1 });
        }
        Ok(match self.discretization {
            Discretization::Steps(n) => n,
            Discretization::StepSize(h) => (((t1 - t0) / h) - 1e-9).ceil().max(1.0) as usize,
        })
    }
}

fn ensure_finite(v: &Var<'_>, t: f64) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

pub fn euler_step<'t>(f: &impl OdeFunc<'t>, y: Var<'t>, t: f64, h: f64) -> Result<Var<'t>> {
    check_step(h)?;
    let k = f.eval(t, y)?;
    ensure_finite(&k, t)?;
    Ok(lincomb(&[(y, 1.0), (k, h)])?)
}

/// Classical four-stage Runge–Kutta step.
pub fn rk4_step<'t>(f: &impl OdeFunc<'t>, y: Var<'t>, t: f64, h: f64) -> Result<Var<'t>> {
    check_step(h)?;
    let half = 0.5 * h;
    let k1 = f.eval(t, y)?;
    ensure_finite(&k1, t)?;
    let y2 = lincomb(&[(y, 1.0), (k1, half)])?;
    let k2 = f.eval(t + half, y2)?;
    ensure_finite(&k2, t + half)?;
    let y3 = lincomb(&[(y, 1.0), (k2, half)])?;
    let k3 = f.eval(t + half, y3)?;
    ensure_finite(&k3, t + half)?;
    let y4 = lincomb(&[(y, 1.0), (k3, h)])?;
    let k4 = f.eval(t + h, y4)?;
    ensure_finite(&k4, t + h)?;
    let next = rk4_combine(&y, [&k1, &k2, &k3, &k4], h)?;
    ensure_finite(&next, t + h)?;
    Ok(next)
}

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("step must be positive, got {h}")))
    }
}

pub fn step<'t>(
    method: Method,
    f: &impl OdeFunc<'t>,
    y: Var<'t>,
    t: f64,
    h: f64,
) -> Result<Var<'t>> {
    match method {
        Method::Euler => euler_step(f, y, t, h),
        Method::Rk4 => rk4_step(f, y, t, h),
    }
}

/// States at `t0 + i·(t1 - t0)/n` for `i = 0..=n`.
#[derive(Debug)]
pub struct Trajectory<'t> {
    pub times: Vec<f64>,
    pub states: Vec<Var<'t>>,
}

impl<'t> Trajectory<'t> {
    pub fn last(&self) -> Var<'t> {
        *self.states.last().expect("trajectory holds at least y0")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub(crate) fn grid_time(t0: f64, t1: f64, i: usize, n: usize) -> f64 {
    t0 + (i as f64) * (t1 - t0) / (n as f64)
}

/// Integrates `f` from `t0` to `t1`, returning every intermediate state.
pub fn integrate<'t>(
    f: &impl OdeFunc<'t>,
    y0: Var<'t>,
    t0: f64,
    t1: f64,
    config: &SolverConfig,
) -> Result<Trajectory<'t>> {
    let n = config.steps_for(t0, t1)?;
    ensure_finite(&y0, t0)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(t0);
    states.push(y0);
    let mut y = y0;
    for i in 0..n {
        let (ta, tb) = (grid_time(t0, t1, i, n), grid_time(t0, t1, i + 1, n));
        y = step(config.method, f, y, ta, tb - ta)?;
        times.push(tb);
        states.push(y);
    }
    Ok(Trajectory { times, states })
}

/// Like [`integrate`] but only returns the final state.
pub fn integrate_final<'t>(
    f: &impl OdeFunc<'t>,
    y0: Var<'t>,
    t0: f64,
    t1: f64,
    config: &SolverConfig,
) -> Result<Var<'t>> {
    let n = config.steps_for(t0, t1)?;
    ensure_finite(&y0, t0)?;
    let mut y = y0;
    for i in 0..n {
        let (ta, tb) = (grid_time(t0, t1, i, n), grid_time(t0, t1, i + 1, n));
        y = step(config.method, f, y, ta, tb - ta)?;
    }
    Ok(y)
}
