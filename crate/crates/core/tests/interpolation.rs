use odesynth::autodiff::gradcheck::{check, sample_coordinates, DEFAULT_STEP};
use odesynth::autodiff::{channel_contract, Tape, Tensor, Var};
use odesynth::interpolation::{
    cde_integrate, fit_natural_cubic_spline, CdePath, SplineBasis, SplineControl,
};
use odesynth::odesolve::{integrate_final, ode_fn, SolverConfig};
use odesynth::rng::{normal_tensor, seeded};
use proptest::prelude::*;
use rand::Rng;

fn random_knots(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mut t = rng.random_range(-1.0..1.0);
    (0..n)
        .map(|_| {
            t += rng.random_range(0.05..0.6);
            t
        })
        .collect()
}

fn random_path(n: usize, c: usize, seed: u64) -> (Vec<f64>, Tensor, CdePath) {
    let ts = random_knots(n, seed);
    let ys = normal_tensor(&[n, c], 1.0, &mut seeded(seed + 1));
    let p = fit_natural_cubic_spline(&ts, &ys).unwrap();
    (ts, ys, p)
}

#[test]
fn interpolates_every_knot() {
    for seed in 0..10 {
        let (ts, ys, p) = random_path(12, 3, seed);
        for (i, &t) in ts.iter().enumerate() {
            let v = p.eval(t).unwrap();
            for j in 0..3 {
                assert!((v.data()[j] - ys.data()[i * 3 + j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn continuity_and_natural_boundary() {
    for seed in 0..10 {
        let (ts, _, p) = random_path(15, 2, seed);
        for k in 1..ts.len() - 1 {
            let (d1, d2) = p.knot_jumps(k).unwrap();
            assert!(d1.iter().all(|v| v.abs() < 1e-9), "C1 jump {d1:?}");
            assert!(d2.iter().all(|v| v.abs() < 1e-9), "C2 jump {d2:?}");
        }
        for t in [p.start(), p.end()] {
            assert!(p.second_derivative(t).unwrap().data().iter().all(|v| v.abs() < 1e-9));
        }
    }
}

#[test]
fn derivative_matches_finite_differences() {
    let (ts, _, p) = random_path(10, 2, 42);
    let h = 1e-6;
    for k in 0..200 {
        let t = ts[0] + 1e-5 + (ts[9] - ts[0] - 2e-5) * k as f64 / 199.0;
        let num: Vec<f64> = p
            .eval(t + h)
            .unwrap()
            .data()
            .iter()
            .zip(p.eval(t - h).unwrap().data())
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        for (a, n) in p.derivative(t).unwrap().data().iter().zip(&num) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n} at {t}");
        }
    }
}

#[test]
fn constant_path_has_zero_derivative() {
    let ts = random_knots(7, 3);
    let p = fit_natural_cubic_spline(&ts, &Tensor::full(&[7, 2], 4.2)).unwrap();
    for k in 0..50 {
        let t = ts[0] + (ts[6] - ts[0]) * k as f64 / 49.0;
        assert!(p.derivative(t).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn basis_weights_reproduce_the_fitted_spline() {
    let (ts, ys, p) = random_path(9, 1, 5);
    let basis = SplineBasis::new(&ts).unwrap();
    for k in 0..100 {
        let t = ts[0] + (ts[8] - ts[0]) * k as f64 / 99.0;
        let dot = |w: Vec<f64>| w.iter().zip(ys.data()).map(|(a, b)| a * b).sum::<f64>();
        assert!((dot(basis.value_weights(t).unwrap()) - p.eval(t).unwrap().item()).abs() < 1e-12);
        assert!(
            (dot(basis.derivative_weights(t).unwrap()) - p.derivative(t).unwrap().item()).abs()
                < 1e-12
        );
    }
}

/// `f(z) = tanh(z·A + b)` reshaped to `[B, d_h·C]`.
fn tanh_field<'t>(a: Var<'t>, b: Var<'t>) -> impl Fn(&Var<'t>) -> odesynth::Result<Var<'t>> {
    move |z| Ok(z.matmul(&a)?.add_row(&b)?.tanh())
}

#[test]
fn constant_path_leaves_state_unchanged() {
    let ts = random_knots(6, 8);
    let path = fit_natural_cubic_spline(&ts, &Tensor::full(&[6, 2], -1.0)).unwrap();
    let tape = Tape::new();
    let a = tape.constant(normal_tensor(&[3, 6], 1.0, &mut seeded(1)));
    let b = tape.constant(normal_tensor(&[6], 1.0, &mut seeded(2)));
    let z0 = tape.constant(Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap());
    let z = cde_integrate(&tape, tanh_field(a, b), z0, &path, &SolverConfig::rk4(2)).unwrap();
    for (x, y) in z.value().data().iter().zip([0.1, 0.2, 0.3]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn identity_field_on_linear_path_adds_increment() {
    let c = 3;
    let path = fit_natural_cubic_spline(
        &[0.0, 1.0],
        &Tensor::matrix(2, c, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap(),
    )
    .unwrap();
    let tape = Tape::new();
    let eye = tape.constant(Tensor::identity(c).reshaped(vec![1, c * c]).unwrap());
    let z0 = tape.constant(Tensor::matrix(1, c, vec![0.5, -1.0, 2.0]).unwrap());
    let z = cde_integrate(&tape, |_: &Var| Ok(eye), z0, &path, &SolverConfig::rk4(4)).unwrap();
    for (x, y) in z.value().data().iter().zip([1.5, 0.0, 3.0]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matches_expanded_vector_field_oracle() {
    for seed in 0..5 {
        let (ts, _, path) = random_path(8, 2, seed);
        let tape = Tape::new();
        let a = tape.constant(normal_tensor(&[4, 8], 0.7, &mut seeded(seed + 10)));
        let b = tape.constant(normal_tensor(&[8], 0.3, &mut seeded(seed + 11)));
        let z0 = tape.constant(normal_tensor(&[1, 4], 1.0, &mut seeded(seed + 12)));
        let cfg = SolverConfig::rk4(3);
        let z = cde_integrate(&tape, tanh_field(a, b), z0, &path, &cfg).unwrap();

        // plain ODE g(t, z) = f(z)·X'(t), integrated knot to knot
        let expanded = ode_fn(|t, z: Var| {
            let f = z.matmul(&a)?.add_row(&b)?.tanh();
            let d = path.derivative(t)?.reshaped(vec![1, 2])?;
            Ok(channel_contract(&f, &tape.constant(d), 2)?)
        });
        let mut y = z0;
        for w in ts.windows(2) {
            y = integrate_final(&expanded, y, w[0], w[1], &cfg).unwrap();
        }
        for (p, q) in z.value().data().iter().zip(y.value().data()) {
            assert!((p - q).abs() < 1e-9);
        }
    }
}

#[test]
fn channel_mismatch_is_reported() {
    let (_, _, path) = random_path(4, 2, 1);
    let tape = Tape::new();
    let z0 = tape.constant(Tensor::zeros(&[1, 3]));
    let bad = tape.constant(Tensor::zeros(&[1, 9]));
    let r = cde_integrate(&tape, |_: &Var| Ok(bad), z0, &path, &SolverConfig::rk4(1));
    assert!(matches!(r, Err(odesynth::Error::ChannelMismatch { expected: 6, got: 9 })));
}

#[test]
fn invariant_to_affine_time_reparameterization() {
    let (ts, ys, path) = random_path(7, 2, 21);
    let tape = Tape::new();
    let a = tape.constant(normal_tensor(&[3, 6], 0.8, &mut seeded(1)));
    let b = tape.constant(normal_tensor(&[6], 0.3, &mut seeded(2)));
    let z0 = tape.constant(normal_tensor(&[1, 3], 1.0, &mut seeded(3)));
    let cfg = SolverConfig::rk4(4);
    let z = cde_integrate(&tape, tanh_field(a, b), z0, &path, &cfg).unwrap();
    for (scale, shift) in [(2.5, -3.0), (0.1, 10.0)] {
        let ts2: Vec<f64> = ts.iter().map(|t| scale * t + shift).collect();
        let p2 = fit_natural_cubic_spline(&ts2, &ys).unwrap();
        let z2 = cde_integrate(&tape, tanh_field(a, b), z0, &p2, &cfg).unwrap();
        for (p, q) in z.value().data().iter().zip(z2.value().data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}

#[test]
fn spline_control_matches_fitted_path() {
    let (ts, ys, path) = random_path(10, 2, 30);
    let basis = SplineBasis::new(&ts).unwrap();
    let tape = Tape::new();
    let chan = |j: usize| {
        let d: Vec<f64> = (0..10).map(|i| ys.data()[i * 2 + j]).collect();
        tape.constant(Tensor::matrix(1, 10, d).unwrap())
    };
    let control = SplineControl::new(&basis, vec![chan(0), chan(1)]).unwrap();
    let a = tape.constant(normal_tensor(&[3, 6], 0.8, &mut seeded(1)));
    let b = tape.constant(normal_tensor(&[6], 0.3, &mut seeded(2)));
    let z0 = tape.constant(normal_tensor(&[1, 3], 1.0, &mut seeded(3)));
    let cfg = SolverConfig::rk4(2);
    let z1 = cde_integrate(&tape, tanh_field(a, b), z0, &path, &cfg).unwrap();
    let z2 = cde_integrate(&tape, tanh_field(a, b), z0, &control, &cfg).unwrap();
    for (p, q) in z1.value().data().iter().zip(z2.value().data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let ts = random_knots(6, 4);
    let basis = SplineBasis::new(&ts).unwrap();
    let inputs = [
        normal_tensor(&[2, 4], 1.0, &mut seeded(1)),   // z0
        normal_tensor(&[4, 8], 0.6, &mut seeded(2)),   // A
        normal_tensor(&[8], 0.3, &mut seeded(3)),      // b
        normal_tensor(&[2, 6], 1.0, &mut seeded(4)),   // knot values, channel 0
    ];
    let other = normal_tensor(&[2, 6], 1.0, &mut seeded(5));
    let coords = sample_coordinates(&inputs, 40, 9);
    let report = check::<odesynth::Error, _>(&inputs, &coords, DEFAULT_STEP, |tape, v| {
        let control = SplineControl::new(&basis, vec![v[3], tape.constant(other.clone())])?;
        let z = cde_integrate(tape, tanh_field(v[1], v[2]), v[0], &control, &SolverConfig::rk4(2))?;
        Ok(z.tanh().sum())
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-4, "{:?}", report.worst());
}

proptest! {
    #[test]
    fn knot_residual_and_continuity(n in 2usize..30, seed in 0u64..1000) {
        let (ts, ys, p) = random_path(n, 1, seed);
        for (i, &t) in ts.iter().enumerate() {
            prop_assert!((p.eval(t).unwrap().item() - ys.data()[i]).abs() < 1e-12);
        }
        for k in 1..n.saturating_sub(1) {
            let (d1, d2) = p.knot_jumps(k).unwrap();
            prop_assert!(d1[0].abs() < 1e-9 && d2[0].abs() < 1e-9);
        }
    }
}
