//! Central finite-difference oracle for checking analytic gradients.
//!
//! The numeric side only ever evaluates the forward pass on constant
//! leaves, so it shares no code with the backward sweep it checks.

use rand::Rng;

use super::{AutodiffError, Tape, Tensor, Var};
use crate::rng::seeded;

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor in [`relative_error`]; keeps near-zero gradients from
/// turning rounding noise into huge relative errors.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.probes
            .iter()
            .map(Probe::relative_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
    }
}

/// Picks `count` distinct `(input, element)` coordinates uniformly at random.
pub fn sample_coordinates(inputs: &[Tensor], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let mut rng = seeded(seed);
    let mut flat: Vec<usize> = Vec::with_capacity(count.min(total));
    while flat.len() < count.min(total) {
        let c = rng.random_range(0..total);
        if !flat.contains(&c) {
            flat.push(c);
        }
    }
    flat.into_iter()
        .map(|mut c| {
            for (i, t) in inputs.iter().enumerate() {
                if c < t.numel() {
                    return (i, c);
                }
                c -= t.numel();
            }
            unreachable!()
        })
        .collect()
}

/// Every coordinate of every input.
pub fn all_coordinates(inputs: &[Tensor]) -> Vec<(usize, usize)> {
    inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect()
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences at the given coordinates.
pub fn check<E, F>(
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    step: f64,
    f: F,
) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &leaves)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|v| grads.wrt_or_zeros(*v)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, E> {
        let tape = Tape::new();
        let consts: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &consts)?.value().item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut probes = Vec::with_capacity(coords.len());
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let plus = eval(&work)?;
        work[i].data_mut()[j] = orig - step;
        let minus = eval(&work)?;
        work[i].data_mut()[j] = orig;
        probes.push(Probe {
            input: i,
            index: j,
            analytic: analytic[i].data()[j],
            numeric: (plus - minus) / (2.0 * step),
        });
    }
    Ok(GradCheckReport { probes })
}
