use odesynth::autodiff::{concat_cols, Tape, Tensor, Var};
use odesynth::odesolve::{integrate, integrate_final, ode_fn, Method, SolverConfig};
use odesynth::Result;
use proptest::prelude::*;

fn decay_error(method: Method, n: usize) -> f64 {
    let tape = Tape::new();
    let y0 = tape.constant(Tensor::scalar(1.0));
    let f = ode_fn(|_, y| Ok(y.neg()));
    let cfg = match method {
        Method::Rk4 => SolverConfig::rk4(n),
        Method::Euler => SolverConfig::euler(n),
    };
    let y1 = integrate_final(&f, y0, 0.0, 1.0, &cfg).unwrap().value().item();
    (y1 - (-1f64).exp()).abs()
}

/// Least-squares slope of log(error) against log(1/n).
fn convergence_slope(method: Method) -> f64 {
    let pts: Vec<(f64, f64)> = [10usize, 20, 40, 80]
        .iter()
        .map(|&n| ((1.0 / n as f64).ln(), decay_error(method, n).ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn convergence_orders() {
    let rk4 = convergence_slope(Method::Rk4);
    let euler = convergence_slope(Method::Euler);
    assert!((rk4 - 4.0).abs() < 0.2, "rk4 slope {rk4}");
    assert!((euler - 1.0).abs() < 0.2, "euler slope {euler}");
}

#[test]
fn exponential_growth_reaches_e() {
    let tape = Tape::new();
    let y0 = tape.constant(Tensor::scalar(1.0));
    let f = ode_fn(|_, y| Ok(y));
    let traj = integrate(&f, y0, 0.0, 1.0, &SolverConfig::rk4(100)).unwrap();
    assert_eq!(traj.len(), 101);
    assert!((traj.last().value().item() - std::f64::consts::E).abs() < 1e-6);
}

fn rotation<'t>(_: f64, y: Var<'t>) -> Result<Var<'t>> {
    let a = y.slice_cols(0, 1)?;
    let b = y.slice_cols(1, 1)?;
    Ok(concat_cols(&[b.neg(), a])?)
}

#[test]
fn rotation_conserves_norm() {
    let tape = Tape::new();
    let y0 = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let traj = integrate(&rotation, y0, 0.0, 2.0 * std::f64::consts::PI, &SolverConfig::rk4(1000)).unwrap();
    for s in &traj.states {
        let v = s.value();
        let r = (v.data()[0].powi(2) + v.data()[1].powi(2)).sqrt();
        assert!((r - 1.0).abs() < 1e-5);
    }
    let end = traj.last().value();
    assert!((end.data()[0] - 1.0).abs() < 1e-5 && end.data()[1].abs() < 1e-5);
}

#[test]
fn gradient_wrt_initial_state_is_exponential() {
    for (a, t0, t1) in [(-1.3, 0.0, 1.0), (0.7, 0.5, 2.0), (2.0, -1.0, 0.0)] {
        let tape = Tape::new();
        let y0 = tape.leaf(Tensor::vector(vec![0.4, -1.1]));
        let f = ode_fn(move |_, y| Ok(y.scale(a)));
        let y1 = integrate_final(&f, y0, t0, t1, &SolverConfig::rk4(200)).unwrap();
        let g = tape.backward(y1.sum()).unwrap();
        for v in g.wrt(y0).unwrap().data() {
            assert!((v - (a * (t1 - t0)).exp()).abs() < 1e-5, "{v}");
        }
    }
}

#[test]
fn gradient_wrt_field_parameter_matches_finite_differences() {
    use odesynth::autodiff::gradcheck::{all_coordinates, check, DEFAULT_STEP};
    let inputs = [Tensor::vector(vec![0.3, -0.8]), Tensor::vector(vec![0.9, 1.4])];
    let report = check::<odesynth::Error, _>(&inputs, &all_coordinates(&inputs), DEFAULT_STEP, |_, v| {
        let w = v[1];
        let f = ode_fn(move |_, y| Ok(y.mul(&w)?.tanh()));
        Ok(integrate_final(&f, v[0], 0.0, 1.5, &SolverConfig::rk4(8))?.sum())
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-4, "{:?}", report.worst());
}

proptest! {
    #[test]
    fn timestamps_exact(t0 in -5.0f64..5.0, span in 0.01f64..10.0, n in 1usize..50) {
        let tape = Tape::new();
        let y0 = tape.constant(Tensor::scalar(1.0));
        let f = ode_fn(|_, y| Ok(y.neg()));
        let t1 = t0 + span;
        let traj = integrate(&f, y0, t0, t1, &SolverConfig::euler(n)).unwrap();
        prop_assert_eq!(traj.times.len(), n + 1);
        for (i, &t) in traj.times.iter().enumerate() {
            prop_assert_eq!(t, t0 + (i as f64) * (t1 - t0) / (n as f64));
        }
    }

    #[test]
    fn rejects_non_positive_spans(t0 in -5.0f64..5.0, back in 0.0f64..3.0) {
        let tape = Tape::new();
        let y0 = tape.constant(Tensor::scalar(1.0));
        let f = ode_fn(|_, y| Ok(y));
        prop_assert!(integrate(&f, y0, t0, t0 - back, &SolverConfig::rk4(4)).is_err());
    }
}
