use odesynth::autodiff::gradcheck::{self, all_coordinates, sample_coordinates, DEFAULT_STEP};
use odesynth::autodiff::{
    bce_loss, channel_contract, concat_cols, gru_ode_fused, lincomb, minibatch_discrimination,
    mse_loss, AutodiffError, Elementwise, Tape, Tensor, Var,
};
use odesynth::rng::{normal_tensor, seeded, uniform_tensor};
use proptest::prelude::*;

type R<'t> = Result<Var<'t>, AutodiffError>;

fn rand(shape: &[usize], seed: u64) -> Tensor {
    normal_tensor(shape, 1.0, &mut seeded(seed))
}

/// Weights the output by a fixed pseudo-random tensor so every output
/// coordinate contributes a distinct amount to the scalar.
fn weighted_sum<'t>(v: Var<'t>, seed: u64) -> R<'t> {
    let w = v.tape().constant(rand(&v.shape(), seed ^ 0xABCD));
    Ok(v.mul(&w)?.sum())
}

fn assert_gradcheck<F>(inputs: &[Tensor], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> R<'t>,
{
    let coords = all_coordinates(inputs);
    let coords = if coords.len() > 60 {
        sample_coordinates(inputs, 60, inputs.len() as u64 + 17)
    } else {
        coords
    };
    let report = gradcheck::check(inputs, &coords, DEFAULT_STEP, f).unwrap();
    let worst = report.worst().cloned();
    assert!(
        report.max_relative_error() < 1e-4,
        "max relative error {} at {:?}",
        report.max_relative_error(),
        worst
    );
}

#[test]
fn matmul_examples() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let id = tape.constant(Tensor::identity(2));
    assert_eq!(a.matmul(&id).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    let b = tape.constant(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), vec![2, 1]);
    assert_eq!(c.value().data(), &[17.0, 39.0]);
    let grads = tape.backward(c.sum()).unwrap();
    assert_eq!(grads.wrt(a).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
}

#[test]
fn matmul_gradient_agrees_with_finite_differences() {
    let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap();
    let report = gradcheck::check(&[a, b], &[(0, 0), (0, 1), (0, 2), (0, 3)], 1e-5, |_, v| -> R {
        Ok(v[0].matmul(&v[1])?.sum())
    })
    .unwrap();
    let numeric: Vec<f64> = report.probes.iter().map(|p| p.numeric).collect();
    for (n, e) in numeric.iter().zip([5.0, 6.0, 5.0, 6.0]) {
        assert!((n - e).abs() < 1e-6);
    }
}

#[test]
fn matmul_shape_mismatch() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(a.matmul(&b), Err(AutodiffError::Shape { .. })));
}

#[test]
fn elementwise_examples() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    assert_eq!(z.elementwise(Elementwise::Tanh, None).unwrap().value().item(), 0.0);
    assert_eq!(z.elementwise(Elementwise::Sigmoid, None).unwrap().value().item(), 0.5);
    let l3 = tape.constant(Tensor::scalar(3f64.ln()));
    assert!((l3.sigmoid().value().item() - 0.75).abs() < 1e-15);
    let big = tape.constant(Tensor::vector(vec![-800.0, 800.0]));
    let s = big.sigmoid().value();
    assert!(s.is_finite());
    assert_eq!(s.data(), &[0.0, 1.0]);
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.constant(Tensor::vector(vec![3.0, 5.0]));
    assert_eq!(a.elementwise(Elementwise::Add, Some(&b)).unwrap().value().data(), &[4.0, 7.0]);
    assert_eq!(a.elementwise(Elementwise::Mul, Some(&b)).unwrap().value().data(), &[3.0, 10.0]);
    assert_eq!(a.elementwise(Elementwise::Sub, Some(&b)).unwrap().value().data(), &[-2.0, -3.0]);
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    assert!(a.elementwise(Elementwise::Add, Some(&c)).is_err());
    assert!(a.elementwise(Elementwise::Mul, None).is_err());
}

#[test]
fn conv2d_examples() {
    let tape = Tape::new();
    let x = tape.constant(rand(&[2, 1, 3, 4], 1));
    let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = x.conv2d(&w, Some(&b), (1, 1), (0, 0)).unwrap();
    assert_eq!(y.value().data(), x.value().data());

    let zero = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let w = tape.constant(rand(&[2, 1, 2, 2], 2));
    let bias = tape.constant(Tensor::vector(vec![0.5, -1.5]));
    let y = zero.conv2d(&w, Some(&bias), (1, 1), (0, 0)).unwrap();
    assert_eq!(y.value().data(), &[0.5, 0.5, 0.5, 0.5, -1.5, -1.5, -1.5, -1.5]);

    let ones = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = ones.conv2d(&k, None, (1, 1), (0, 0)).unwrap();
    assert_eq!(y.shape(), vec![1, 1, 2, 2]);
    assert_eq!(y.value().data(), &[4.0; 4]);

    let big = tape.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
    assert!(matches!(
        ones.conv2d(&big, None, (1, 1), (0, 0)),
        Err(AutodiffError::KernelTooLarge { .. })
    ));
    assert!(ones.conv2d(&big, None, (1, 1), (1, 1)).is_ok());
}

/// Direct sliding-window cross-correlation.
fn naive_conv(
    x: &Tensor,
    w: &Tensor,
    b: &[f64],
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<usize>, Vec<f64>) {
    let (bs, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = Vec::new();
    for s in 0..bs {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let ii = (i * stride.0 + di) as isize - pad.0 as isize;
                                let jj = (j * stride.1 + dj) as isize - pad.1 as isize;
                                if ii < 0 || jj < 0 || ii as usize >= h || jj as usize >= wd {
                                    continue;
                                }
                                let xv = x.data()[((s * c + ic) * h + ii as usize) * wd + jj as usize];
                                let wv = w.data()[((oc * c + ic) * kh + di) * kw + dj];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![bs, o, oh, ow], out)
}

#[test]
fn conv2d_output_extent_grid() {
    let tape = Tape::new();
    for (h, w) in [(5, 7), (6, 6), (1, 9)] {
        for kh in 1..=3usize.min(h + 2) {
            for kw in 1..=3 {
                for s in 1..=3 {
                    for p in 0..=2 {
                        if kh > h + 2 * p || kw > w + 2 * p {
                            continue;
                        }
                        let xt = rand(&[2, 2, h, w], (h * 100 + kh * 10 + s) as u64);
                        let wt = rand(&[3, 2, kh, kw], (kw * 7 + p) as u64);
                        let bt = vec![0.1, -0.2, 0.3];
                        let x = tape.constant(xt.clone());
                        let wv = tape.constant(wt.clone());
                        let bv = tape.constant(Tensor::vector(bt.clone()));
                        let y = x.conv2d(&wv, Some(&bv), (s, s), (p, p)).unwrap();
                        let expected_h = (h + 2 * p - kh) / s + 1;
                        let expected_w = (w + 2 * p - kw) / s + 1;
                        assert_eq!(y.shape(), vec![2, 3, expected_h, expected_w]);
                        let (shape, data) = naive_conv(&xt, &wt, &bt, (s, s), (p, p));
                        assert_eq!(shape, y.shape());
                        for (a, b) in data.iter().zip(y.value().data()) {
                            assert!((a - b).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn maxpool_examples() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::full(&[1, 2, 4, 6], 3.5));
    let y = c.maxpool2d((2, 2), (2, 2)).unwrap();
    assert_eq!(y.shape(), vec![1, 2, 2, 3]);
    assert!(y.value().data().iter().all(|&v| v == 3.5));

    let x = tape.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = x.maxpool2d((2, 2), (2, 2)).unwrap();
    assert_eq!(y.value().data(), &[4.0]);
    assert!(matches!(
        x.maxpool2d((3, 1), (1, 1)),
        Err(AutodiffError::KernelTooLarge { .. })
    ));
}

#[test]
fn maxpool_gradient_routes_to_argmax_first_on_ties() {
    let tape = Tape::new();
    let x = tape.leaf(
        Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 7.0, 2.0, 2.0, 3.0, -1.0, 0.0, 2.0],
        )
        .unwrap(),
    );
    let y = x.maxpool2d((2, 2), (2, 2)).unwrap();
    assert_eq!(y.value().data(), &[7.0, 2.0]);
    let g = tape.backward(y.sum()).unwrap();
    assert_eq!(
        g.wrt(x).unwrap().data(),
        &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    );

    // finite differences away from ties agree with the routing rule
    let xt = Tensor::new(vec![1, 1, 2, 4], vec![1.0, 7.0, 2.5, 2.0, 3.0, -1.0, 0.0, 2.2]).unwrap();
    let report = gradcheck::check(&[xt], &all_coordinates(&[Tensor::zeros(&[8])]), 1e-5, |_, v| -> R {
        Ok(v[0].maxpool2d((2, 2), (2, 2))?.sum())
    })
    .unwrap();
    let numeric: Vec<f64> = report.probes.iter().map(|p| p.numeric.round()).collect();
    assert_eq!(numeric, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(report.max_relative_error() < 1e-6);
}

#[test]
fn minibatch_discrimination_examples() {
    let tape = Tape::new();
    let row: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
    let feats = tape.constant(
        Tensor::matrix(4, 6, row.iter().cycle().take(24).copied().collect()).unwrap(),
    );
    let proj = tape.constant(rand(&[6, 15], 3));
    let out = minibatch_discrimination(&feats, &proj, 5, 3).unwrap();
    assert_eq!(out.shape(), vec![4, 11]);
    let ov = out.value();
    for r in 0..4 {
        let vals = &ov.data()[r * 11..(r + 1) * 11];
        assert_eq!(&vals[..6], row.as_slice());
        assert!(vals[6..].iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    let single = tape.constant(rand(&[1, 6], 4));
    let out = minibatch_discrimination(&single, &proj, 5, 3).unwrap();
    assert!(out.value().data()[6..].iter().all(|&v| v == 0.0));

    let big = tape.constant(rand(&[64, 32], 5));
    let proj = tape.constant(rand(&[32, 15], 6));
    assert_eq!(
        minibatch_discrimination(&big, &proj, 5, 3).unwrap().shape(),
        vec![64, 37]
    );
}

#[test]
fn bce_examples() {
    let tape = Tape::new();
    let one = tape.constant(Tensor::vector(vec![1.0, 1.0]));
    assert!(bce_loss(&one, &one).unwrap().value().item().abs() < 1e-6);
    let half = tape.constant(Tensor::vector(vec![0.5, 0.5]));
    let t = tape.constant(Tensor::vector(vec![0.0, 1.0]));
    assert!((bce_loss(&half, &t).unwrap().value().item() - 2f64.ln()).abs() < 1e-12);
    let p = tape.constant(Tensor::scalar(0.75));
    let t = tape.constant(Tensor::scalar(1.0));
    assert!((bce_loss(&p, &t).unwrap().value().item() + 0.75f64.ln()).abs() < 1e-12);
    let zero = tape.constant(Tensor::scalar(0.0));
    let l = bce_loss(&zero, &t).unwrap().value().item();
    assert!(l.is_finite() && (l + 1e-7f64.ln()).abs() < 1e-9);
    assert!(bce_loss(&half, &p).is_err());
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let g = tape.backward(x.mul(&x).unwrap()).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 6.0);

    let tape = Tape::new();
    let p = tape.leaf(rand(&[3, 4], 9));
    let g = tape.backward(p.sum()).unwrap();
    assert!(g.wrt(p).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_errors() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        tape.backward(x.tanh()),
        Err(AutodiffError::NonScalarLoss(_))
    ));
    let loss = x.sum();
    tape.backward(loss).unwrap();
    assert_eq!(tape.backward(loss).unwrap_err(), AutodiffError::StaleTape);
    let other = Tape::new();
    let y = other.leaf(Tensor::scalar(1.0));
    assert_eq!(tape.backward(y).unwrap_err(), AutodiffError::ForeignVar);
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::scalar(2.0));
    let x = tape.leaf(Tensor::scalar(3.0));
    let unused = tape.leaf(Tensor::scalar(1.0));
    let g = tape.backward(c.mul(&x).unwrap()).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 2.0);
    assert!(g.wrt(c).is_none());
    assert!(g.wrt(unused).is_none());
    assert_eq!(g.wrt_or_zeros(unused).item(), 0.0);
}

#[test]
fn using_a_tensor_twice_doubles_its_gradient() {
    let xt = rand(&[3, 3], 11);
    let single = {
        let tape = Tape::new();
        let x = tape.leaf(xt.clone());
        let g = tape.backward(x.tanh().sum()).unwrap();
        g.wrt(x).unwrap().clone()
    };
    let tape = Tape::new();
    let x = tape.leaf(xt);
    let t = x.tanh().sum();
    let g = tape.backward(lincomb(&[(t, 1.0), (x.tanh().sum(), 1.0)]).unwrap()).unwrap();
    for (a, b) in g.wrt(x).unwrap().data().iter().zip(single.data()) {
        assert_eq!(*a, 2.0 * b);
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let tape = Tape::new();
        let x = tape.leaf(rand(&[2, 1, 4, 6], 21));
        let w = tape.leaf(rand(&[3, 1, 2, 3], 22));
        let y = x.conv2d(&w, None, (1, 1), (0, 1)).unwrap().tanh();
        let loss = y.mean();
        let v = loss.value().item();
        let g = tape.backward(loss).unwrap();
        (v.to_bits(), g.wrt(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn tanh_of_matmul_matches_finite_differences() {
    for seed in 0..20 {
        assert_gradcheck(&[rand(&[4, 3], seed), rand(&[3, 2], seed + 100)], |_, v| {
            Ok(v[0].matmul(&v[1])?.tanh().sum())
        });
    }
}

#[test]
fn pointwise_primitives_match_finite_differences() {
    for seed in 0..20 {
        let inputs = [rand(&[3, 4], seed), rand(&[3, 4], seed + 50), rand(&[4], seed + 90)];
        assert_gradcheck(&inputs, move |_, v| {
            let a = v[0].sigmoid().mul(&v[1])?;
            let b = v[1].tanh().sub(&v[0].leaky_relu(0.2))?;
            let c = a.add(&b)?.add_row(&v[2])?.affine(1.5, -0.3).one_minus();
            let d = c.reshape(&[4, 3])?.slice_cols(1, 2)?;
            let e = concat_cols(&[d, v[0].reshape(&[4, 3])?.neg()])?;
            let f = lincomb(&[(e.mean().scale(3.0), 0.5), (e.sum(), 0.25)])?;
            weighted_sum(e, seed)?.add(&f)
        });
    }
}

#[test]
fn conv2d_matches_finite_differences() {
    for seed in 0..20 {
        let stride = (1 + seed as usize % 2, 1 + seed as usize % 3);
        let padding = (seed as usize % 2, (seed as usize / 2) % 2);
        let inputs = [rand(&[2, 2, 4, 7], seed), rand(&[3, 2, 2, 3], seed + 1), rand(&[3], seed + 2)];
        assert_gradcheck(&inputs, move |_, v| {
            let y = v[0].conv2d(&v[1], Some(&v[2]), stride, padding)?;
            weighted_sum(y, seed)
        });
    }
}

#[test]
fn maxpool_matches_finite_differences() {
    for seed in 0..20 {
        let inputs = [rand(&[2, 2, 4, 6], seed)];
        assert_gradcheck(&inputs, move |_, v| {
            let y = v[0].maxpool2d((2, 2), (1 + seed as usize % 2, 2))?;
            weighted_sum(y, seed)
        });
    }
}

#[test]
fn minibatch_discrimination_matches_finite_differences() {
    for seed in 0..20 {
        let inputs = [rand(&[5, 4], seed), normal_tensor(&[4, 15], 0.3, &mut seeded(seed + 7))];
        assert_gradcheck(&inputs, move |_, v| {
            weighted_sum(minibatch_discrimination(&v[0], &v[1], 5, 3)?, seed)
        });
    }
}

#[test]
fn losses_match_finite_differences() {
    for seed in 0..20 {
        let p = uniform_tensor(&[6], 0.45, &mut seeded(seed));
        let p = Tensor::new(vec![6], p.data().iter().map(|v| v + 0.5).collect()).unwrap();
        let target = Tensor::vector(vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        assert_gradcheck(&[p, rand(&[6], seed + 3), rand(&[6], seed + 4)], |tape, v| {
            let t = tape.constant(target.clone());
            bce_loss(&v[0], &t)?.add(&mse_loss(&v[1], &v[2])?)
        });
    }
}

#[test]
fn bce_gradient_vanishes_outside_clamp() {
    let tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
    let t = tape.constant(Tensor::vector(vec![1.0, 0.0]));
    let g = tape.backward(bce_loss(&p, &t).unwrap()).unwrap();
    assert!(g.wrt(p).unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn channel_contract_matches_finite_differences() {
    for seed in 0..20 {
        let inputs = [rand(&[3, 4 * 2], seed), rand(&[3, 2], seed + 5)];
        assert_gradcheck(&inputs, move |_, v| {
            weighted_sum(channel_contract(&v[0], &v[1], 2)?, seed)
        });
    }
}

#[test]
fn channel_contract_value() {
    let tape = Tape::new();
    let f = tape.constant(Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let v = tape.constant(Tensor::matrix(1, 2, vec![10.0, 100.0]).unwrap());
    assert_eq!(channel_contract(&f, &v, 2).unwrap().value().data(), &[210.0, 430.0]);
}

/// The fused GRU field written out with ordinary primitives.
fn gru_field_composed<'t>(v: &[Var<'t>]) -> R<'t> {
    let (h, xr, xu, xg, ur, uu, ug) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
    let r = xr.add(&h.matmul(&ur)?)?.sigmoid();
    let u = xu.add(&h.matmul(&uu)?)?.sigmoid();
    let g = xg.add(&r.mul(&h)?.matmul(&ug)?)?.tanh();
    u.one_minus().mul(&g.sub(&h)?)
}

fn gru_inputs(seed: u64) -> Vec<Tensor> {
    let mut v: Vec<Tensor> = (0..4).map(|i| rand(&[3, 4], seed * 10 + i)).collect();
    for i in 0..3 {
        v.push(normal_tensor(&[4, 4], 0.5, &mut seeded(seed * 10 + 4 + i)));
    }
    v
}

#[test]
fn fused_gru_field_equals_composed_form() {
    let inputs = gru_inputs(1);
    let tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let fused = gru_ode_fused(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]).unwrap();
    let composed = gru_field_composed(&v).unwrap();
    for (a, b) in fused.value().data().iter().zip(composed.value().data()) {
        assert!((a - b).abs() < 1e-14);
    }
    let loss = weighted_sum(fused, 3).unwrap().add(&weighted_sum(composed, 3).unwrap().neg()).unwrap();
    // loss is identically zero; the two halves must cancel in the gradient too
    let g = tape.backward(loss).unwrap();
    for var in &v {
        assert!(g.wrt(*var).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn fused_gru_field_matches_finite_differences() {
    for seed in 0..20 {
        assert_gradcheck(&gru_inputs(seed), move |_, v| {
            let y = gru_ode_fused(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6])?;
            weighted_sum(y, seed)
        });
    }
}

proptest! {
    #[test]
    fn backward_is_linear_in_loss_scale(seed in 0u64..1000, c in -3.0f64..3.0) {
        let xt = rand(&[2, 3], seed);
        let grad = |scale: f64| {
            let tape = Tape::new();
            let x = tape.leaf(xt.clone());
            let g = tape.backward(x.tanh().sum().scale(scale)).unwrap();
            g.wrt(x).unwrap().clone()
        };
        let (g1, gc) = (grad(1.0), grad(c));
        for (a, b) in g1.data().iter().zip(gc.data()) {
            prop_assert!((a * c - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..100) {
        let (a, b) = (rand(&[m, k], seed), rand(&[k, n], seed + 1));
        let tape = Tape::new();
        let c = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
        for i in 0..m {
            for j in 0..n {
                let e: f64 = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum();
                prop_assert!((c.value().data()[i * n + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_ops_stay_finite(seed in 0u64..1000, scale in 1.0f64..1e3) {
        let tape = Tape::new();
        let x = tape.constant(normal_tensor(&[4, 5], scale, &mut seeded(seed)));
        let t = tape.constant(Tensor::full(&[4, 5], 1.0));
        prop_assert!(x.tanh().value().is_finite());
        let s = x.sigmoid();
        prop_assert!(s.value().is_finite());
        prop_assert!(bce_loss(&s, &t).unwrap().value().is_finite());
    }
}
