//! Gradient and semantics checks for every tape operation: spec'd example
//! values plus central finite-difference verification on random inputs.

use pointdet_core::fdcheck::{check_input_gradient, check_param_gradients};
use pointdet_core::nn::{BatchNorm, Linear, Mode};
use pointdet_core::ops::{batch_norm_train, concat, softmax_cross_entropy};
use pointdet_core::param::ParamSet;
use pointdet_core::tensor::Tensor;
use pointdet_core::{Tape64, Tensor64};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Random values in [-1,1] bounded away from zero, for ops with a kink
/// at the origin that central differences would straddle.
fn rand_tensor_off_zero(rng: &mut ChaCha20Rng, shape: &[usize], margin: f64) -> Tensor64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

#[test]
fn matmul_identity_and_scalar_examples() {
    let tape = Tape64::new();
    let i2 = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = tape.constant(Tensor::from_vec(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
    let out = i2.matmul(&m).unwrap();
    assert_eq!(out.value().data(), &[3.0, 4.0, 5.0, 6.0]);

    let a = tape.constant(Tensor::from_vec(vec![1, 1], vec![2.0]).unwrap());
    let b = tape.constant(Tensor::from_vec(vec![1, 1], vec![3.0]).unwrap());
    assert_eq!(a.matmul(&b).unwrap().value().data(), &[6.0]);
}

#[test]
fn matmul_random_matches_triple_loop() {
    let mut r = rng(11);
    let a = rand_tensor(&mut r, &[4, 5]);
    let b = rand_tensor(&mut r, &[5, 3]);
    let tape = Tape64::new();
    let out = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..5 {
                acc += a.data()[i * 5 + k] * b.data()[k * 3 + j];
            }
            assert!((out.value().data()[i * 3 + j] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_mismatch_reports_both_shapes() {
    let tape = Tape64::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    let err = a.matmul(&b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

#[test]
fn matmul_gradients_including_broadcast() {
    let mut r = rng(12);
    for (ash, bsh) in [
        (vec![4, 5], vec![5, 3]),
        (vec![2, 3, 4], vec![4, 2]),
        (vec![2, 3, 4], vec![2, 4, 2]),
        (vec![1, 3, 4], vec![5, 4, 2]),
        (vec![2, 1, 2, 3], vec![1, 4, 3, 2]),
    ] {
        let a = rand_tensor(&mut r, &ash);
        let b = rand_tensor(&mut r, &bsh);
        let bb = b.clone();
        let rep = check_input_gradient(&a, H, 1, move |t, v| v.matmul(&t.constant(bb.clone())))
            .unwrap();
        assert!(rep.max_rel_err < TOL, "dA {ash:?}x{bsh:?}: {rep}");
        let aa = a.clone();
        let rep = check_input_gradient(&b, H, 2, move |t, v| t.constant(aa.clone()).matmul(v))
            .unwrap();
        assert!(rep.max_rel_err < TOL, "dB {ash:?}x{bsh:?}: {rep}");
    }
}

#[test]
fn elementwise_op_gradients() {
    let mut r = rng(13);
    let x = rand_tensor(&mut r, &[3, 4]);
    let y = rand_tensor(&mut r, &[3, 4]);

    let yy = y.clone();
    let rep = check_input_gradient(&x, H, 3, move |t, v| v.add(&t.constant(yy.clone()))).unwrap();
    assert!(rep.max_rel_err < TOL, "add: {rep}");

    let yy = y.clone();
    let rep = check_input_gradient(&x, H, 4, move |t, v| t.constant(yy.clone()).sub(v)).unwrap();
    assert!(rep.max_rel_err < TOL, "sub rhs: {rep}");

    let yy = y.clone();
    let rep = check_input_gradient(&x, H, 5, move |t, v| v.mul(&t.constant(yy.clone()))).unwrap();
    assert!(rep.max_rel_err < TOL, "mul: {rep}");

    let rep = check_input_gradient(&x, H, 6, |_, v| v.scale(-1.75)).unwrap();
    assert!(rep.max_rel_err < TOL, "scale: {rep}");

    let rep = check_input_gradient(&x, H, 7, |_, v| v.add_scalar(0.3)).unwrap();
    assert!(rep.max_rel_err < TOL, "add_scalar: {rep}");

    let off = rand_tensor_off_zero(&mut r, &[3, 4], 0.05);
    let rep = check_input_gradient(&off, H, 8, |_, v| v.relu()).unwrap();
    assert!(rep.max_rel_err < TOL, "relu: {rep}");

    let rep = check_input_gradient(&off, H, 9, |_, v| v.abs()).unwrap();
    assert!(rep.max_rel_err < TOL, "abs: {rep}");

    // Clamp bounds chosen off the sample grid so no input sits within h
    // of a bound.
    let rep = check_input_gradient(&off, H, 10, |_, v| v.clamp(-0.531, 0.642)).unwrap();
    assert!(rep.max_rel_err < TOL, "clamp: {rep}");
}

#[test]
fn relu_example_and_dead_gradient() {
    let tape = Tape64::new();
    let x = tape.constant(Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    assert_eq!(x.relu().unwrap().value().data(), &[0.0, 0.0, 2.0]);

    // All-negative input: gradient of sum(relu(x)) is exactly zero.
    let set = ParamSet::new();
    let p = set
        .root()
        .param("x", Tensor::from_vec(vec![3], vec![-1.0, -0.5, -2.0]).unwrap());
    let tape = Tape64::new();
    let loss = tape.param(&p).relu().unwrap().sum_all().unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(p.grad().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_of_sum_is_all_ones() {
    let set = ParamSet::new();
    let p = set.root().param("x", Tensor::zeros(&[2, 3]));
    let tape = Tape64::new();
    let loss = tape.param(&p).sum_all().unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(p.grad().data(), &[1.0; 6]);
}

#[test]
fn backward_twice_is_an_error() {
    let set = ParamSet::new();
    let p = set.root().param("x", Tensor::zeros(&[2]));
    let tape = Tape64::new();
    let loss = tape.param(&p).sum_all().unwrap();
    tape.backward(&loss).unwrap();
    assert!(tape.backward(&loss).is_err());
}

#[test]
fn non_scalar_loss_rejected() {
    let set = ParamSet::new();
    let p = set.root().param("x", Tensor::zeros(&[2]));
    let tape = Tape64::new();
    let v = tape.param(&p);
    assert!(tape.backward(&v).is_err());
}

#[test]
fn max_reduce_tie_takes_first_occurrence() {
    let tape = Tape64::new();
    let x = tape.constant(Tensor::from_vec(vec![3], vec![3.0, 1.0, 3.0]).unwrap());
    let (v, arg) = x.max_axis(0).unwrap();
    assert_eq!(v.value().data(), &[3.0]);
    assert_eq!(arg, vec![0]);
}

#[test]
fn max_reduce_gradient_is_one_hot_and_conserving() {
    let mut r = rng(14);
    let set = ParamSet::new();
    let p = set.root().param("x", rand_tensor(&mut r, &[2, 5, 3]));
    let tape = Tape64::new();
    let (v, arg) = tape.param(&p).max_axis(1).unwrap();
    let loss = v.sum_all().unwrap();
    tape.backward(&loss).unwrap();
    let g = p.grad();
    // Each (batch, channel) slice routes exactly one unit of gradient, to
    // the argmax row.
    let mut per_slice = vec![0.0; 6];
    for b in 0..2 {
        for m in 0..5 {
            for c in 0..3 {
                let gv = g.data()[(b * 5 + m) * 3 + c];
                assert!(gv == 0.0 || gv == 1.0);
                if gv == 1.0 {
                    assert_eq!(arg[b * 3 + c], m);
                }
                per_slice[b * 3 + c] += gv;
            }
        }
    }
    assert_eq!(per_slice, vec![1.0; 6]);
}

#[test]
fn max_axis_gradient_matches_finite_differences() {
    let mut r = rng(15);
    // Jitter entries apart so no pair is within h of a tie.
    let base = rand_tensor(&mut r, &[2, 6, 3]);
    let data: Vec<f64> = base
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + (i % 7) as f64 * 1e-3)
        .collect();
    let x = Tensor::from_vec(vec![2, 6, 3], data).unwrap();
    let rep = check_input_gradient(&x, H, 16, |_, v| Ok(v.max_axis(1)?.0)).unwrap();
    assert!(rep.max_rel_err < TOL, "max_axis: {rep}");
}

#[test]
fn structural_op_gradients() {
    let mut r = rng(17);
    let x = rand_tensor(&mut r, &[2, 3, 4]);

    let rep = check_input_gradient(&x, H, 18, |_, v| v.reshape(&[6, 4])).unwrap();
    assert!(rep.max_rel_err < TOL, "reshape: {rep}");

    let rep = check_input_gradient(&x, H, 19, |_, v| v.permute(&[2, 0, 1])).unwrap();
    assert!(rep.max_rel_err < TOL, "permute: {rep}");

    let rep = check_input_gradient(&x, H, 20, |_, v| v.repeat_new_axis(1, 5)).unwrap();
    assert!(rep.max_rel_err < TOL, "repeat_new_axis: {rep}");

    let rep = check_input_gradient(&x, H, 21, |_, v| {
        v.gather_axis1(&[2, 2, 0, 1, 1, 2], 3)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "gather_axis1: {rep}");

    let other = rand_tensor(&mut r, &[2, 2, 4]);
    let rep = check_input_gradient(&x, H, 22, move |t, v| {
        concat(&[v.clone(), t.constant(other.clone())], 1)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "concat: {rep}");

    let w = rand_tensor(&mut r, &[2, 3, 4]);
    let x4 = rand_tensor(&mut r, &[2, 3, 4, 5]);
    let rep = check_input_gradient(&x4, H, 23, move |_, v| v.weighted_sum_k(&w)).unwrap();
    assert!(rep.max_rel_err < TOL, "weighted_sum_k: {rep}");

    let rep = check_input_gradient(&x, H, 24, |_, v| v.mean_all()).unwrap();
    assert!(rep.max_rel_err < TOL, "mean_all: {rep}");

    let rep = check_input_gradient(&x, H, 25, |_, v| v.softmax_last()).unwrap();
    assert!(rep.max_rel_err < TOL, "softmax_last: {rep}");
}

#[test]
fn split_gradients_cover_both_pieces() {
    let mut r = rng(40);
    let x = rand_tensor(&mut r, &[2, 7, 3]);
    let rep = check_input_gradient(&x, H, 41, |t, v| {
        let parts = v.split(1, &[3, 4])?;
        let a = parts[0].mul(&t.constant(Tensor::full(&[2, 3, 3], 0.7)))?;
        let b = parts[1].mul(&t.constant(Tensor::full(&[2, 4, 3], -1.3)))?;
        concat(&[a, b], 1)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "split: {rep}");

    let tape = Tape64::new();
    let v = tape.constant(x.clone());
    let parts = v.split(1, &[3, 4]).unwrap();
    let back = concat(&parts, 1).unwrap();
    assert!(back.value().bit_eq(&x));
}

#[test]
fn concat_then_split_round_trips() {
    let mut r = rng(26);
    let a = rand_tensor(&mut r, &[2, 3]);
    let b = rand_tensor(&mut r, &[2, 4]);
    let joined = Tensor::concat(&[&a, &b], 1).unwrap();
    let parts = joined.split(1, &[3, 4]).unwrap();
    assert!(parts[0].bit_eq(&a));
    assert!(parts[1].bit_eq(&b));
}

#[test]
fn linear_identity_and_small_example() {
    let tape = Tape64::new();
    let x = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::zeros(&[2]));
    assert_eq!(
        x.linear(&w, &b).unwrap().value().data(),
        &[1.0, 2.0, 3.0, 4.0]
    );

    let x = tape.constant(Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let w = tape.constant(Tensor::from_vec(vec![1, 2], vec![2.0, 3.0]).unwrap());
    let b = tape.constant(Tensor::from_vec(vec![1], vec![1.0]).unwrap());
    assert_eq!(x.linear(&w, &b).unwrap().value().data(), &[6.0]);
}

#[test]
fn linear_gradients_for_all_three_operands() {
    let mut r = rng(27);
    let x = rand_tensor(&mut r, &[3, 2, 4]);
    let set = ParamSet::new();
    let lin = Linear::new(&set.root().child("lin"), 4, 5, &mut r);
    let xx = x.clone();
    let rep = check_param_gradients(&set, H, move || {
        let tape = Tape64::new();
        let y = lin.forward(&tape, &tape.constant(xx.clone()))?;
        let loss = y.mul(&tape.constant(Tensor::full(&[3, 2, 5], 0.37)))?.sum_all()?;
        Ok((tape, loss))
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "linear params: {rep}");

    let w = rand_tensor(&mut r, &[5, 4]);
    let b = rand_tensor(&mut r, &[5]);
    let rep = check_input_gradient(&x, H, 28, move |t, v| {
        v.linear(&t.constant(w.clone()), &t.constant(b.clone()))
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "linear input: {rep}");
}

#[test]
fn softmax_cross_entropy_gradient_and_zero_weight_rows() {
    let mut r = rng(29);
    let logits = rand_tensor(&mut r, &[6, 4]);
    let targets = vec![0, 3, 1, 2, 1, 0];
    let weights = vec![1.0, 0.0, 1.0, 1.0, 0.0, 2.0];
    let t2 = targets.clone();
    let w2 = weights.clone();
    let rep = check_input_gradient(&logits, H, 30, move |_, v| {
        softmax_cross_entropy(v, &t2, &w2)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "softmax_ce: {rep}");

    // All-zero weights collapse to exactly zero loss.
    let tape = Tape64::new();
    let v = tape.constant(logits.clone());
    let loss = softmax_cross_entropy(&v, &targets, &[0.0; 6]).unwrap();
    assert_eq!(loss.value().item(), 0.0);
}

#[test]
fn batch_norm_constant_input_yields_bias() {
    let set = ParamSet::new();
    let bn = BatchNorm::new(&set.root().child("bn"), 2);
    bn.beta
        .set_value(Tensor::from_vec(vec![2], vec![0.7, -0.3]).unwrap());
    let tape = Tape64::new();
    let x = tape.constant(Tensor::full(&[4, 2], 5.0));
    let y = bn.forward_2d(&tape, &x, Mode::Train).unwrap();
    for row in 0..4 {
        assert_eq!(y.value().data()[row * 2], 0.7);
        assert_eq!(y.value().data()[row * 2 + 1], -0.3);
    }
}

#[test]
fn batch_norm_two_point_population_variance() {
    let set = ParamSet::new();
    let bn = BatchNorm::new(&set.root().child("bn"), 1);
    let tape = Tape64::new();
    let x = tape.constant(Tensor::from_vec(vec![2, 1], vec![0.0, 2.0]).unwrap());
    let y = bn.forward_2d(&tape, &x, Mode::Train).unwrap();
    // Population variance of {0, 2} is 1; the eps guard shifts the
    // normalized values just inside ±1.
    assert!((y.value().data()[0] + 1.0).abs() < 1e-5);
    assert!((y.value().data()[1] - 1.0).abs() < 1e-5);
}

#[test]
fn batch_norm_statistics_on_random_input() {
    let mut r = rng(31);
    // Channel-last view of a [4, 8, 16] activation: 64 positions per
    // channel.
    let x = rand_tensor(&mut r, &[64, 8]);
    let set = ParamSet::new();
    let bn = BatchNorm::new(&set.root().child("bn"), 8);
    let tape = Tape64::new();
    let y = bn
        .forward_2d(&tape, &tape.constant(x), Mode::Train)
        .unwrap()
        .value();
    for c in 0..8 {
        let col: Vec<f64> = (0..64).map(|i| y.data()[i * 8 + c]).collect();
        let mean: f64 = col.iter().sum::<f64>() / 64.0;
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
    }
}

#[test]
fn batch_norm_running_stats_momentum() {
    let set = ParamSet::new();
    let bn = BatchNorm::new(&set.root().child("bn"), 1);
    let tape = Tape64::new();
    let x = tape.constant(Tensor::from_vec(vec![2, 1], vec![0.0, 2.0]).unwrap());
    bn.forward_2d(&tape, &x, Mode::Train).unwrap();
    // Fresh stats are (0, 1); batch stats are (1, 1).
    assert!((bn.running_mean.value().data()[0] - 0.1).abs() < 1e-12);
    assert!((bn.running_var.value().data()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn batch_norm_single_row_train_is_an_error() {
    let set = ParamSet::new();
    let bn = BatchNorm::new(&set.root().child("bn"), 3);
    let tape = Tape64::new();
    let x = tape.constant(Tensor::zeros(&[1, 3]));
    assert!(bn.forward_2d(&tape, &x, Mode::Train).is_err());
    assert!(bn.forward_2d(&tape, &x, Mode::Eval).is_ok());
}

#[test]
fn batch_norm_gradients_train_and_eval() {
    let mut r = rng(32);
    let x = rand_tensor(&mut r, &[6, 3]);
    let gamma = rand_tensor_off_zero(&mut r, &[3], 0.3);
    let beta = rand_tensor(&mut r, &[3]);

    let (g2, b2) = (gamma.clone(), beta.clone());
    let rep = check_input_gradient(&x, H, 33, move |t, v| {
        Ok(batch_norm_train(v, &t.constant(g2.clone()), &t.constant(b2.clone()), 1e-5)?.0)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "bn train input: {rep}");

    let set = ParamSet::new();
    let bn = BatchNorm::new(&set.root().child("bn"), 3);
    let xx = x.clone();
    let rep = check_param_gradients(&set, H, move || {
        let tape = Tape64::new();
        let y = bn.forward_2d(&tape, &tape.constant(xx.clone()), Mode::Train)?;
        let loss = y.mul(&tape.constant(Tensor::full(&[6, 3], 0.21)))?.sum_all()?;
        Ok((tape, loss))
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "bn train params: {rep}");

    let set = ParamSet::new();
    let bn = BatchNorm::new(&set.root().child("bn"), 3);
    bn.running_mean
        .set_value(Tensor::from_vec(vec![3], vec![0.1, -0.2, 0.05]).unwrap());
    bn.running_var
        .set_value(Tensor::from_vec(vec![3], vec![0.8, 1.3, 0.6]).unwrap());
    let xx = x.clone();
    let rep = check_param_gradients(&set, H, move || {
        let tape = Tape64::new();
        let y = bn.forward_2d(&tape, &tape.constant(xx.clone()), Mode::Eval)?;
        let loss = y.mul(&tape.constant(Tensor::full(&[6, 3], 0.43)))?.sum_all()?;
        Ok((tape, loss))
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "bn eval params: {rep}");
}

#[test]
fn composite_mlp_gradient_check() {
    // Two linear layers with a train-mode normalization and ReLU between
    // them, the building block every module reuses.
    let mut r = rng(34);
    let set = ParamSet::new();
    let root = set.root();
    let l1 = Linear::new(&root.child("l1"), 4, 6, &mut r);
    let bn = BatchNorm::new(&root.child("bn"), 6);
    let l2 = Linear::new(&root.child("l2"), 6, 2, &mut r);
    let x = rand_tensor(&mut r, &[5, 4]);
    let rep = check_param_gradients(&set, H, move || {
        let tape = Tape64::new();
        let h = l1.forward(&tape, &tape.constant(x.clone()))?;
        let h = bn.forward_2d(&tape, &h, Mode::Train)?.relu()?;
        let y = l2.forward(&tape, &h)?;
        let loss = y.mul(&tape.constant(Tensor::full(&[5, 2], 0.61)))?.sum_all()?;
        Ok((tape, loss))
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "composite mlp: {rep}");
}

#[test]
fn unreachable_parameter_gradient_is_zero() {
    let mut r = rng(35);
    let set = ParamSet::new();
    let used = set.root().param("used", rand_tensor(&mut r, &[3]));
    let unused = set.root().param("unused", rand_tensor(&mut r, &[2]));
    let tape = Tape64::new();
    let loss = tape.param(&used).sum_all().unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(used.grad().data(), &[1.0; 3]);
    assert_eq!(unused.grad().data(), &[0.0; 2]);
}

#[test]
fn forward_backward_is_bit_reproducible() {
    let run = || {
        let mut r = rng(36);
        let set = ParamSet::new();
        let root = set.root();
        let l1 = Linear::new(&root.child("l1"), 3, 8, &mut r);
        let bn = BatchNorm::new(&root.child("bn"), 8);
        let l2 = Linear::new(&root.child("l2"), 8, 1, &mut r);
        let x = rand_tensor(&mut r, &[4, 3]);
        let tape = Tape64::new();
        let h = l1.forward(&tape, &tape.constant(x)).unwrap();
        let h = bn.forward_2d(&tape, &h, Mode::Train).unwrap().relu().unwrap();
        let loss = l2.forward(&tape, &h).unwrap().sum_all().unwrap();
        tape.backward(&loss).unwrap();
        let grads: Vec<Tensor64> = set.params().iter().map(|p| p.grad()).collect();
        (loss.value(), grads)
    };
    let (la, ga) = run();
    let (lb, gb) = run();
    assert!(la.bit_eq(&lb));
    for (a, b) in ga.iter().zip(&gb) {
        assert!(a.bit_eq(b));
    }
}

#[test]
fn non_finite_forward_is_an_error() {
    let tape = Tape64::new();
    let big = tape.constant(Tensor::full(&[2, 2], 1e308));
    assert!(big.add(&big).is_err());
    let z = tape.constant(Tensor::full(&[1], 0.0));
    let inf = z.add_scalar(f64::INFINITY);
    assert!(inf.is_err());
}
