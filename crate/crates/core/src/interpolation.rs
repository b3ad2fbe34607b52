//! Natural cubic spline paths and controlled differential equations
//! `dz = f(z) dX`.

use crate::autodiff::{channel_contract, concat_cols, Tape, Tensor, Var};
use crate::odesolve::{integrate_final, ode_fn, SolverConfig};
use crate::{Error, Result};

fn check_knots(ts: &[f64]) -> Result<()> {
    if ts.len() < 2 {
        return Err(Error::TooFewKnots(ts.len()));
    }
    if let Some(i) = ts.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonIncreasingTimes { index: i + 1 });
    }
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("knot times must be finite".into()));
    }
    Ok(())
}

/// Index `i` of the segment `[t_i, t_{i+1}]` holding `t`; knots belong to
/// the segment on their right except the last.
fn segment(ts: &[f64], t: f64) -> Result<usize> {
    let (start, end) = (ts[0], ts[ts.len() - 1]);
    if !(t >= start && t <= end) {
        return Err(Error::OutOfRange { t, start, end });
    }
    let i = ts.partition_point(|&k| k <= t);
    Ok(i.saturating_sub(1).min(ts.len() - 2))
}

/// Solves the natural-spline system for second derivatives, one right-hand
/// side per column of `rhs` (`[N, cols]`, row-major). The first and last rows
/// of the result are zero.
fn solve_second_derivatives(ts: &[f64], rhs: &[f64], cols: usize) -> Vec<f64> {
    let n = ts.len();
    let mut m = vec![0.0; n * cols];
    if n < 3 {
        return m;
    }
    let h: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    // Thomas algorithm on the interior unknowns 1..n-1.
    let k = n - 2;
    let mut cp = vec![0.0; k];
    let mut dp = vec![0.0; k * cols];
    for r in 0..k {
        let i = r + 1;
        let (a, b, c) = (h[i - 1], 2.0 * (h[i - 1] + h[i]), h[i]);
        let denom = if r == 0 { b } else { b - a * cp[r - 1] };
        cp[r] = c / denom;
        for j in 0..cols {
            let prev = if r == 0 { 0.0 } else { dp[(r - 1) * cols + j] };
            dp[r * cols + j] = (rhs[i * cols + j] - a * prev) / denom;
        }
    }
    for r in (0..k).rev() {
        for j in 0..cols {
            let next = if r + 1 < k { m[(r + 2) * cols + j] } else { 0.0 };
            m[(r + 1) * cols + j] = dp[r * cols + j] - cp[r] * next;
        }
    }
    m
}

/// Right-hand side `6·(Δy_i/h_i − Δy_{i−1}/h_{i−1})` of the spline system.
fn spline_rhs(ts: &[f64], y: &[f64], cols: usize) -> Vec<f64> {
    let n = ts.len();
    let mut rhs = vec![0.0; n * cols];
    for i in 1..n.saturating_sub(1) {
        let (h0, h1) = (ts[i] - ts[i - 1], ts[i + 1] - ts[i]);
        for j in 0..cols {
            let (a, b, c) = (y[(i - 1) * cols + j], y[i * cols + j], y[(i + 1) * cols + j]);
            rhs[i * cols + j] = 6.0 * ((c - b) / h1 - (b - a) / h0);
        }
    }
    rhs
}

/// A natural cubic spline through `C` channels of knot values.
#[derive(Clone, Debug, PartialEq)]
pub struct CdePath {
    times: Vec<f64>,
    /// `[N, C]`
    values: Vec<f64>,
    /// Second derivatives at the knots, `[N, C]`.
    second: Vec<f64>,
    channels: usize,
}

/// Fits a natural cubic spline per channel to `values` (`[N, C]`, or `[N]`
/// for one channel) at strictly increasing `ts`.
pub fn fit_natural_cubic_spline(ts: &[f64], values: &Tensor) -> Result<CdePath> {
    check_knots(ts)?;
    let channels = match values.shape() {
        [n] if *n == ts.len() => 1,
        [n, c] if *n == ts.len() => *c,
        s => {
            return Err(Error::InvalidInput(format!(
                "spline values {s:?} for {} knots",
                ts.len()
            )))
        }
    };
    let rhs = spline_rhs(ts, values.data(), channels);
    let second = solve_second_derivatives(ts, &rhs, channels);
    Ok(CdePath {
        times: ts.to_vec(),
        values: values.data().to_vec(),
        second,
        channels,
    })
}

impl CdePath {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn parts(&self, t: f64) -> Result<(usize, f64, f64, f64)> {
        let i = segment(&self.times, t)?;
        let h = self.times[i + 1] - self.times[i];
        Ok((i, h, self.times[i + 1] - t, t - self.times[i]))
    }

    pub fn eval(&self, t: f64) -> Result<Tensor> {
        let (i, h, a, b) = self.parts(t)?;
        let c = self.channels;
        let data = (0..c)
            .map(|j| {
                let (y0, y1) = (self.values[i * c + j], self.values[(i + 1) * c + j]);
                let (m0, m1) = (self.second[i * c + j], self.second[(i + 1) * c + j]);
                m0 * a.powi(3) / (6.0 * h)
                    + m1 * b.powi(3) / (6.0 * h)
                    + (y0 / h - m0 * h / 6.0) * a
                    + (y1 / h - m1 * h / 6.0) * b
            })
            .collect();
        Ok(Tensor::vector(data))
    }

    pub fn derivative(&self, t: f64) -> Result<Tensor> {
        let (i, h, a, b) = self.parts(t)?;
        let c = self.channels;
        let data = (0..c)
            .map(|j| {
                let (y0, y1) = (self.values[i * c + j], self.values[(i + 1) * c + j]);
                let (m0, m1) = (self.second[i * c + j], self.second[(i + 1) * c + j]);
                -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) + (y1 - y0) / h
                    - (m1 - m0) * h / 6.0
            })
            .collect();
        Ok(Tensor::vector(data))
    }

    pub fn second_derivative(&self, t: f64) -> Result<Tensor> {
        let (i, h, a, b) = self.parts(t)?;
        let c = self.channels;
        let data = (0..c)
            .map(|j| (self.second[i * c + j] * a + self.second[(i + 1) * c + j] * b) / h)
            .collect();
        Ok(Tensor::vector(data))
    }

    /// One-sided derivatives `(left, right)` at an interior knot, evaluated
    /// from the polynomials of the two adjacent segments.
    pub fn knot_jumps(&self, knot: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.times.len();
        if knot == 0 || knot + 1 >= n {
            return Err(Error::InvalidInput(format!("knot {knot} is not interior")));
        }
        let c = self.channels;
        let seg = |i: usize, at_left_end: bool| -> (Vec<f64>, Vec<f64>) {
            let h = self.times[i + 1] - self.times[i];
            let (a, b) = if at_left_end { (h, 0.0) } else { (0.0, h) };
            (0..c)
                .map(|j| {
                    let (y0, y1) = (self.values[i * c + j], self.values[(i + 1) * c + j]);
                    let (m0, m1) = (self.second[i * c + j], self.second[(i + 1) * c + j]);
                    let d1 = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) + (y1 - y0) / h
                        - (m1 - m0) * h / 6.0;
                    let d2 = (m0 * a + m1 * b) / h;
                    (d1, d2)
                })
                .unzip()
        };
        let (l1, l2) = seg(knot - 1, false);
        let (r1, r2) = seg(knot, true);
        Ok((
            l1.iter().zip(&r1).map(|(a, b)| a - b).collect(),
            l2.iter().zip(&r2).map(|(a, b)| a - b).collect(),
        ))
    }
}

/// Linear maps from knot values to spline values and derivatives on a fixed
/// knot grid, so a spline through on-tape values stays differentiable.
#[derive(Clone, Debug)]
pub struct SplineBasis {
    times: Vec<f64>,
    /// `second = S · y`, `S` is `[N, N]`.
    s: Vec<f64>,
}

impl SplineBasis {
    pub fn new(ts: &[f64]) -> Result<Self> {
        check_knots(ts)?;
        let n = ts.len();
        // Columns of the identity pushed through the spline system.
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let rhs = spline_rhs(ts, &eye, n);
        let s = solve_second_derivatives(ts, &rhs, n);
        Ok(Self {
            times: ts.to_vec(),
            s,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Weights `w` with `X'(t) = Σ_k w_k y_k`.
    pub fn derivative_weights(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.times.len();
        let i = segment(&self.times, t)?;
        let h = self.times[i + 1] - self.times[i];
        let (a, b) = (self.times[i + 1] - t, t - self.times[i]);
        let (s0, s1) = (&self.s[i * n..(i + 1) * n], &self.s[(i + 1) * n..(i + 2) * n]);
        let (c0, c1) = (-a * a / (2.0 * h) + h / 6.0, b * b / (2.0 * h) - h / 6.0);
        let mut w: Vec<f64> = s0.iter().zip(s1).map(|(p, q)| c0 * p + c1 * q).collect();
        w[i] -= 1.0 / h;
        w[i + 1] += 1.0 / h;
        Ok(w)
    }

    /// Weights `w` with `X(t) = Σ_k w_k y_k`.
    pub fn value_weights(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.times.len();
        let i = segment(&self.times, t)?;
        let h = self.times[i + 1] - self.times[i];
        let (a, b) = (self.times[i + 1] - t, t - self.times[i]);
        let (s0, s1) = (&self.s[i * n..(i + 1) * n], &self.s[(i + 1) * n..(i + 2) * n]);
        let (c0, c1) = (a.powi(3) / (6.0 * h) - a * h / 6.0, b.powi(3) / (6.0 * h) - b * h / 6.0);
        let mut w: Vec<f64> = s0.iter().zip(s1).map(|(p, q)| c0 * p + c1 * q).collect();
        w[i] += a / h;
        w[i + 1] += b / h;
        Ok(w)
    }
}

/// A control path whose derivative can be placed on the tape as `[B, C]`.
pub trait Control<'t> {
    fn channels(&self) -> usize;
    fn knots(&self) -> &[f64];
    fn derivative(&self, tape: &'t Tape, t: f64) -> Result<Var<'t>>;
}

impl<'t> Control<'t> for CdePath {
    fn channels(&self) -> usize {
        self.channels
    }

    fn knots(&self) -> &[f64] {
        &self.times
    }

    fn derivative(&self, tape: &'t Tape, t: f64) -> Result<Var<'t>> {
        let d = CdePath::derivative(self, t)?;
        Ok(tape.constant(d.reshaped(vec![1, self.channels])?))
    }
}

/// Batched spline control over on-tape knot values: each channel is a
/// `[B, N]` var on the basis grid.
pub struct SplineControl<'a, 't> {
    basis: &'a SplineBasis,
    channels: Vec<Var<'t>>,
}

impl<'a, 't> SplineControl<'a, 't> {
    pub fn new(basis: &'a SplineBasis, channels: Vec<Var<'t>>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidInput("control needs at least one channel".into()))?
            .shape();
        for c in &channels {
            let s = c.shape();
            if s.len() != 2 || s[1] != basis.len() || s[0] != first[0] {
                return Err(Error::InvalidInput(format!(
                    "control channel {s:?} does not match [{}, {}]",
                    first[0],
                    basis.len()
                )));
            }
        }
        Ok(Self { basis, channels })
    }
}

impl<'t> Control<'t> for SplineControl<'_, 't> {
    fn channels(&self) -> usize {
        self.channels.len()
    }

    fn knots(&self) -> &[f64] {
        self.basis.times()
    }

    fn derivative(&self, tape: &'t Tape, t: f64) -> Result<Var<'t>> {
        let w = self.basis.derivative_weights(t)?;
        let w = tape.constant(Tensor::new(vec![self.basis.len(), 1], w)?);
        let cols = self
            .channels
            .iter()
            .map(|c| c.matmul(&w))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(concat_cols(&cols)?)
    }
}

/// Integrates `dz/dt = f(z) · dX/dt` from the first to the last knot,
/// discretizing each knot interval with `config`.
///
/// `field(z)` maps `[B, d_h]` to `[B, d_h·C]`, each row holding a `d_h × C`
/// matrix in row-major order.
pub fn cde_integrate<'t, F, X>(
    tape: &'t Tape,
    field: F,
    z0: Var<'t>,
    path: &X,
    config: &SolverConfig,
) -> Result<Var<'t>>
where
    F: Fn(&Var<'t>) -> Result<Var<'t>>,
    X: Control<'t> + ?Sized,
{
    let channels = path.channels();
    let vector_field = ode_fn(|t, z: Var<'t>| {
        let f = field(&z)?;
        let cols = *f.shape().last().unwrap_or(&0);
        let zs = z.shape();
        if cols != zs[zs.len() - 1] * channels {
            return Err(Error::ChannelMismatch {
                expected: zs[zs.len() - 1] * channels,
                got: cols,
            });
        }
        let dx = path.derivative(tape, t)?;
        Ok(channel_contract(&f, &dx, channels)?)
    });
    let knots = path.knots();
    let mut z = z0;
    for w in knots.windows(2) {
        z = integrate_final(&vector_field, z, w[0], w[1], config)?;
    }
    Ok(z)
}
