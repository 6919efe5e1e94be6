use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapejig::autodiff::{
    channel_stats, grad_check, softmax_cross_entropy_value, GradCheckOptions, ParamGroup, ParamSet, Tape, Var,
};
use shapejig::Tensor;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

// ---- naive oracles -------------------------------------------------------

fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ks = k.shape();
    let (o, kh, kw) = (ks[0], ks[2], ks[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((oi * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..d).map(|k| a.data()[i * d + k] * b.data()[k * m + j]).sum();
        }
    }
    out
}

fn naive_maxpool(x: &Tensor, win: usize, stride: usize) -> Vec<f64> {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (oh, ow) = ((h - win) / stride + 1, (w - win) / stride + 1);
    let mut out = Vec::new();
    for p in 0..planes {
        for y in 0..oh {
            for xo in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for i in 0..win {
                    for j in 0..win {
                        m = m.max(x.data()[p * h * w + (y * stride + i) * w + xo * stride + j]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

fn run(f: impl FnOnce(&mut Tape) -> Var) -> (Tape, Var) {
    let mut tape = Tape::new();
    let v = f(&mut tape);
    (tape, v)
}

// ---- conv2d ----------------------------------------------------------------

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[1, 1, 4, 4]);
    let (tape, y) = run(|t| {
        let xv = t.constant(x.clone());
        let k = t.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        t.conv2d(xv, k, 1, 0).unwrap()
    });
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv_all_ones_sums() {
    let (tape, y) = run(|t| {
        let xv = t.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = t.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        t.conv2d(xv, k, 1, 0).unwrap()
    });
    assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).item(), 9.0);
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[2, 3, 8, 8]);
    let k = rand_tensor(&mut rng, &[4, 3, 3, 3]);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
        let (tape, y) = run(|t| {
            let xv = t.constant(x.clone());
            let kv = t.constant(k.clone());
            t.conv2d(xv, kv, stride, pad).unwrap()
        });
        let want = naive_conv(&x, &k, stride, pad);
        let got = tape.value(y).data();
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}: {a} vs {b}");
        }
    }
}

#[test]
fn conv_channel_mismatch_is_error() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let k = t.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let err = t.conv2d(x, k, 1, 0).unwrap_err().to_string();
    assert!(err.contains("channels"), "{err}");
}

// ---- dense -----------------------------------------------------------------

#[test]
fn dense_identity_and_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    let (tape, y) = run(|t| {
        let xv = t.constant(x.clone());
        let w = t.constant(eye);
        let b = t.constant(Tensor::zeros(&[4]));
        t.dense(xv, w, b).unwrap()
    });
    assert_eq!(tape.value(y), &x);

    let b = Tensor::new(vec![2], vec![0.5, -2.0]).unwrap();
    let (tape, y) = run(|t| {
        let xv = t.constant(x.clone());
        let w = t.constant(Tensor::zeros(&[4, 2]));
        let bv = t.constant(b.clone());
        t.dense(xv, w, bv).unwrap()
    });
    for row in tape.value(y).data().chunks(2) {
        assert_eq!(row, b.data());
    }
}

#[test]
fn dense_matches_naive_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 5]);
    let w = rand_tensor(&mut rng, &[5, 2]);
    let (tape, y) = run(|t| {
        let xv = t.constant(x.clone());
        let wv = t.constant(w.clone());
        let b = t.constant(Tensor::zeros(&[2]));
        t.dense(xv, wv, b).unwrap()
    });
    for (a, b) in tape.value(y).data().iter().zip(naive_matmul(&x, &w)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dense_dimension_mismatch() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 3]));
    let w = t.constant(Tensor::zeros(&[4, 2]));
    let b = t.constant(Tensor::zeros(&[2]));
    assert!(t.dense(x, w, b).is_err());
}

// ---- relu ------------------------------------------------------------------

#[test]
fn relu_values_and_gradient() {
    let (tape, y) = run(|t| {
        let x = t.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        t.relu(x)
    });
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
    let r = t.relu(x);
    let s = t.sum(r).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).data(), &[0.0, 1.0]);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::full(&[5], -0.5));
    let r = t.relu(x);
    assert!(t.value(r).data().iter().all(|&v| v == 0.0));
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(0.0));
    let r = t.relu(x);
    let g = t.backward(r).unwrap();
    assert_eq!(g.wrt(x).item(), 0.0);
}

// ---- maxpool -----------------------------------------------------------------

#[test]
fn maxpool_basic_and_ties() {
    let (tape, y) = run(|t| {
        let x = t.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        t.maxpool2d(x, 2, 2).unwrap()
    });
    assert_eq!(tape.value(y).item(), 4.0);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::full(&[1, 1, 4, 4], 3.0));
    let p = t.maxpool2d(x, 2, 2).unwrap();
    assert!(t.value(p).data().iter().all(|&v| v == 3.0));
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap().wrt(x);
    let want = [
        1.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, //
        1.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 0.0,
    ];
    assert_eq!(g.data(), &want);
}

#[test]
fn maxpool_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[1, 1, 6, 6]);
    let (tape, y) = run(|t| {
        let xv = t.constant(x.clone());
        t.maxpool2d(xv, 2, 2).unwrap()
    });
    assert_eq!(tape.value(y).data(), naive_maxpool(&x, 2, 2).as_slice());
}

#[test]
fn maxpool_window_too_large() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(t.maxpool2d(x, 3, 1).is_err());
}

// ---- softmax cross-entropy --------------------------------------------------

#[test]
fn xent_uniform_and_saturated() {
    let v = softmax_cross_entropy_value(&Tensor::zeros(&[3, 7]), &[0, 3, 6]).unwrap();
    assert!((v - 7f64.ln()).abs() < 1e-12);
    assert!((v - 1.9459).abs() < 1e-4);

    let mut logits = Tensor::zeros(&[1, 4]);
    logits.data_mut()[2] = 50.0;
    let v = softmax_cross_entropy_value(&logits, &[2]).unwrap();
    assert!(v < 1e-9);
}

#[test]
fn xent_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits = Tensor::from_fn(&[4, 5], |_| rng.gen_range(-3.0..3.0));
    let labels = [0, 4, 2, 2];
    let got = softmax_cross_entropy_value(&logits, &labels).unwrap();
    // Direct, unstabilised evaluation is exact enough at this range.
    let mut want = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * 5..(i + 1) * 5];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        want += -(row[y].exp() / z).ln();
    }
    want /= 4.0;
    assert!((got - want).abs() < 1e-13, "{got} vs {want}");
}

#[test]
fn xent_out_of_range_label() {
    let err = softmax_cross_entropy_value(&Tensor::zeros(&[1, 3]), &[3]).unwrap_err();
    assert!(err.to_string().contains("label 3"));
}

// ---- channel stats -------------------------------------------------------------

#[test]
fn channel_stats_simple_cases() {
    let (m, s) = channel_stats(&Tensor::full(&[1, 1, 2, 2], 5.0)).unwrap();
    assert_eq!((m.item(), s.item()), (5.0, 0.0));
    let (m, s) = channel_stats(&Tensor::new(vec![1, 1, 1, 2], vec![1.0, 3.0]).unwrap()).unwrap();
    assert_eq!((m.item(), s.item()), (2.0, 1.0));
}

#[test]
fn channel_stats_match_two_pass_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    let (m, s) = channel_stats(&x).unwrap();
    for p in 0..6 {
        let plane = &x.data()[p * 16..(p + 1) * 16];
        let mean = plane.iter().sum::<f64>() / 16.0;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!((m.data()[p] - mean).abs() < 1e-14);
        assert!((s.data()[p] - var.sqrt()).abs() < 1e-14);
    }
}

// ---- backward ----------------------------------------------------------------

#[test]
fn backward_square() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0));
    let sq = t.mul(x, x).unwrap();
    let loss = t.sum(sq).unwrap();
    assert_eq!(t.backward(loss).unwrap().wrt(x).item(), 6.0);
}

#[test]
fn backward_unused_parameter_is_zero() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0));
    let unused = t.leaf(Tensor::full(&[2], 1.0));
    let loss = t.scale(x, 2.0).unwrap();
    let g = t.backward(loss).unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
}

#[test]
fn backward_on_non_scalar_is_error() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(&[3]));
    assert!(t.backward(x).is_err());
}

#[test]
fn gradients_accumulate_over_fan_out() {
    // loss = sum(x) + sum(3x) => d/dx = 4
    let mut t = Tape::new();
    let x = t.leaf(Tensor::full(&[3], 1.0));
    let a = t.sum(x).unwrap();
    let x3 = t.scale(x, 3.0).unwrap();
    let b = t.sum(x3).unwrap();
    let loss = t.add(a, b).unwrap();
    assert_eq!(t.backward(loss).unwrap().wrt(x).data(), &[4.0, 4.0, 4.0]);
}

#[test]
fn non_finite_values_are_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(1e308));
    assert!(t.scale(x, 10.0).is_err());
}

// ---- finite-difference checks for every primitive -----------------------------

fn single_param(shape: &[usize], rng: &mut ChaCha8Rng) -> ParamSet {
    let mut ps = ParamSet::new();
    ps.insert("x", ParamGroup::Features, rand_tensor(rng, shape)).unwrap();
    ps
}

fn check_primitive(name: &str, ps: &ParamSet, f: impl Fn(&mut Tape, Var) -> Var) {
    let report = grad_check(
        |t, vars| {
            let x = vars.get("x")?;
            let y = f(t, x);
            // Project through fixed random weights so every output matters.
            let n = t.value(y).numel();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let w = t.constant(Tensor::from_fn(t.value(y).shape(), |_| rng.gen_range(-1.0..1.0)));
            let prod = t.mul(y, w)?;
            t.sum(prod)
        },
        ps,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{name}: {report:?}");
}

#[test]
fn every_primitive_passes_finite_differences_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(3..7);
        let w = rng.gen_range(3..7);
        let shape4 = [n, c, h, w];
        let ps = single_param(&shape4, &mut rng);

        let kernel = rand_tensor(&mut rng, &[2, c, 3, 3]);
        check_primitive(&format!("conv input #{trial}"), &ps, |t, x| {
            let k = t.constant(kernel.clone());
            t.conv2d(x, k, 1, 1).unwrap()
        });
        let input = rand_tensor(&mut rng, &[n, c, h, w]);
        let kshape = [2, c, 2, 2];
        let kps = single_param(&kshape, &mut rng);
        check_primitive(&format!("conv kernel #{trial}"), &kps, |t, k| {
            let x = t.constant(input.clone());
            t.conv2d(x, k, 2, 1).unwrap()
        });
        let bias_ps = single_param(&[c], &mut rng);
        check_primitive(&format!("channel_bias #{trial}"), &bias_ps, |t, b| {
            let x = t.constant(input.clone());
            t.channel_bias(x, b).unwrap()
        });
        check_primitive(&format!("relu #{trial}"), &ps, |t, x| t.relu(x));
        check_primitive(&format!("maxpool #{trial}"), &ps, |t, x| t.maxpool2d(x, 2, 1).unwrap());
        check_primitive(&format!("channel_mean #{trial}"), &ps, |t, x| {
            t.channel_mean(x).unwrap()
        });
        check_primitive(&format!("channel_std #{trial}"), &ps, |t, x| t.channel_std(x).unwrap());
        check_primitive(&format!("l2_norm #{trial}"), &ps, |t, x| t.l2_norm(x).unwrap());

        let d = rng.gen_range(1..6);
        let m = rng.gen_range(1..5);
        let rows = rng.gen_range(1..4);
        let mat = single_param(&[rows, d], &mut rng);
        let weight = rand_tensor(&mut rng, &[d, m]);
        let bias = rand_tensor(&mut rng, &[m]);
        check_primitive(&format!("dense input #{trial}"), &mat, |t, x| {
            let w = t.constant(weight.clone());
            let b = t.constant(bias.clone());
            t.dense(x, w, b).unwrap()
        });
        let wps = single_param(&[d, m], &mut rng);
        let xin = rand_tensor(&mut rng, &[rows, d]);
        check_primitive(&format!("dense weight #{trial}"), &wps, |t, w| {
            let x = t.constant(xin.clone());
            let b = t.constant(bias.clone());
            t.dense(x, w, b).unwrap()
        });
        let labels: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..d)).collect();
        check_primitive(&format!("xent #{trial}"), &mat, |t, x| {
            t.softmax_cross_entropy(x, &labels).unwrap()
        });
        check_primitive(&format!("rows #{trial}"), &mat, |t, x| t.rows(x, 0, rows).unwrap());
        check_primitive(&format!("mul/sub #{trial}"), &mat, |t, x| {
            let sq = t.mul(x, x).unwrap();
            t.sub(sq, x).unwrap()
        });
    }
}

#[test]
fn gradcheck_linear_model_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ps = ParamSet::new();
    ps.insert("w", ParamGroup::Classifier, rand_tensor(&mut rng, &[4, 3]))
        .unwrap();
    ps.insert("b", ParamGroup::Classifier, rand_tensor(&mut rng, &[3]))
        .unwrap();
    let x = rand_tensor(&mut rng, &[5, 4]);
    let report = grad_check(
        |t, v| {
            let xv = t.constant(x.clone());
            let y = t.dense(xv, v.get("w")?, v.get("b")?)?;
            t.sum(y)
        },
        &ps,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed());
    assert!(report.max_error() < 1e-9, "{}", report.max_error());
}

#[test]
fn gradcheck_flags_a_wrong_backward_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ps = ParamSet::new();
    ps.insert("x", ParamGroup::Features, rand_tensor(&mut rng, &[6]))
        .unwrap();
    // forward x^2 with a deliberately wrong derivative x (true: 2x)
    let report = grad_check(
        |t, v| {
            let y = t.elementwise(v.get("x")?, |x| x * x, |x| x)?;
            t.sum(y)
        },
        &ps,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(!report.passed());
    assert!(report.params[0].max_rel_error > 0.4);
}

#[test]
fn gradcheck_detects_nondeterminism() {
    use std::cell::Cell;
    let calls = Cell::new(0.0);
    let mut ps = ParamSet::new();
    ps.insert("x", ParamGroup::Features, Tensor::scalar(1.0)).unwrap();
    let err = grad_check(
        |t, v| {
            calls.set(calls.get() + 1.0);
            let bump = t.constant(Tensor::scalar(calls.get()));
            t.add(v.get("x")?, bump)
        },
        &ps,
        &GradCheckOptions::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("non-deterministic"));
}

// ---- properties -----------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rand_tensor(&mut rng, &[1, 2, 4, 4]);
        let k = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let build_f = |t: &mut Tape, x: Var| {
            let kv = t.constant(k.clone());
            let c = t.conv2d(x, kv, 1, 1).unwrap();
            let r = t.relu(c);
            t.l2_norm(r).unwrap()
        };
        let build_g = |t: &mut Tape, x: Var| {
            let sq = t.mul(x, x).unwrap();
            let m = t.channel_std(sq).unwrap();
            t.sum(m).unwrap()
        };
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone());
            let loss = match which {
                0 => build_f(&mut t, x),
                1 => build_g(&mut t, x),
                _ => {
                    let f = build_f(&mut t, x);
                    let g = build_g(&mut t, x);
                    let fa = t.scale(f, a).unwrap();
                    let gb = t.scale(g, b).unwrap();
                    t.add(fa, gb).unwrap()
                }
            };
            t.backward(loss).unwrap().wrt(x)
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gc.numel() {
            let want = a * gf.data()[i] + b * gg.data()[i];
            prop_assert!((gc.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn xent_is_shift_invariant(seed in any::<u64>(), shift in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::from_fn(&[3, 6], |_| rng.gen_range(-5.0..5.0));
        let labels = [1usize, 5, 0];
        let base = softmax_cross_entropy_value(&logits, &labels).unwrap();
        let shifted = softmax_cross_entropy_value(&logits.map(|x| x + shift), &labels).unwrap();
        prop_assert!((base - shifted).abs() < 1e-10);
    }
}
