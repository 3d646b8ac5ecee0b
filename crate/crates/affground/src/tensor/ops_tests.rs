use proptest::prelude::*;
use rand::Rng;

use super::{finite_difference_grad, max_rel_err, Tensor};
use crate::error::Error;
use crate::rng::{rng_for, uniform_sym};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rand_tensor(shape: &[usize], seed: u64, limit: f64) -> Tensor {
    let mut rng = rng_for(seed, &[0xa]);
    let data = (0..shape.iter().product()).map(|_| uniform_sym(&mut rng, limit)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// FD check of `loss(x)` against the analytic gradient of `x`.
fn check_grad(loss: impl Fn(&Tensor) -> Tensor, at: &Tensor) {
    let x = at.requires_grad(true);
    let l = loss(&x);
    l.backward().unwrap();
    let analytic = x.grad().expect("analytic grad missing");
    let numeric = finite_difference_grad(|t| loss(t).item(), at, FD_STEP);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < FD_TOL, "gradient mismatch: max rel err {err:.3e}");
}

#[test]
fn matmul_identity() {
    let i2 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let a = Tensor::from_vec(&[2, 2], vec![2.0, 1.0, 0.0, 3.0]).unwrap();
    let c = i2.matmul(&a).unwrap();
    assert_eq!(c.data(), a.data());
}

#[test]
fn matmul_dot_product() {
    // [[1,2]] x [[3],[4]] = [[11]]
    let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
    assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
}

#[test]
fn matmul_rejects_mismatch() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[4, 5]);
    assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
}

#[test]
fn matmul_gradients_match_fd() {
    for seed in 0..5 {
        let a0 = rand_tensor(&[3, 4], seed, 1.0);
        let b0 = rand_tensor(&[4, 2], seed + 100, 1.0);
        let weights = rand_tensor(&[3, 2], seed + 200, 1.0);
        let w = weights.clone();
        let b = b0.clone();
        check_grad(move |a| a.matmul(&b).unwrap().mul(&w).unwrap().sum(), &a0);
        let w = weights.clone();
        let a = a0.clone();
        check_grad(move |b| a.matmul(b).unwrap().mul(&w).unwrap().sum(), &b0);
    }
}

#[test]
fn conv2d_identity_kernel() {
    let x = rand_tensor(&[1, 5, 5], 1, 1.0);
    let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 5, 5]);
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv2d_zero_kernel() {
    let x = rand_tensor(&[2, 4, 4], 2, 1.0);
    let k = Tensor::zeros(&[3, 2, 3, 3]);
    let y = x.conv2d(&k, 1, 1).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

/// Independent nested-loop convolution oracle.
fn conv_oracle(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, ks) = (k.shape()[0], k.shape()[2]);
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..ci {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = oy as isize * stride as isize + ky as isize - pad as isize;
                            let ix = ox as isize * stride as isize + kx as isize - pad as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                let xv = x.data()[(c * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((o * ci + c) * ks + ky) * ks + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let x = rand_tensor(&[2, 4, 4], 3, 1.0);
    let k = rand_tensor(&[3, 2, 3, 3], 4, 1.0);
    let y = x.conv2d(&k, 1, 1).unwrap();
    let expect = conv_oracle(&x, &k, 1, 1);
    for (a, b) in y.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn conv2d_strided_matches_oracle() {
    let x = rand_tensor(&[3, 7, 7], 5, 1.0);
    let k = rand_tensor(&[2, 3, 3, 3], 6, 1.0);
    let y = x.conv2d(&k, 2, 1).unwrap();
    assert_eq!(y.shape(), &[2, 4, 4]);
    let expect = conv_oracle(&x, &k, 2, 1);
    for (a, b) in y.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv2d_rejects_bad_geometry() {
    let x = Tensor::zeros(&[1, 2, 2]);
    let k = Tensor::zeros(&[1, 1, 5, 5]);
    assert!(matches!(x.conv2d(&k, 1, 0), Err(Error::Shape(_))));
    let k_even = Tensor::zeros(&[1, 1, 2, 2]);
    assert!(matches!(x.conv2d(&k_even, 1, 0), Err(Error::Shape(_))));
}

#[test]
fn conv2d_gradients_match_fd() {
    for seed in 0..3 {
        let x0 = rand_tensor(&[2, 5, 5], 10 + seed, 1.0);
        let k0 = rand_tensor(&[3, 2, 3, 3], 20 + seed, 0.5);
        let w = rand_tensor(&[3, 5, 5], 30 + seed, 1.0);
        let (k, wt) = (k0.clone(), w.clone());
        check_grad(move |x| x.conv2d(&k, 1, 1).unwrap().mul(&wt).unwrap().sum(), &x0);
        let (x, wt) = (x0.clone(), w.clone());
        check_grad(move |k| x.conv2d(k, 1, 1).unwrap().mul(&wt).unwrap().sum(), &k0);
        // strided case
        let k0s = rand_tensor(&[2, 2, 3, 3], 40 + seed, 0.5);
        let ws = rand_tensor(&[2, 3, 3], 50 + seed, 1.0);
        let (k, wt) = (k0s.clone(), ws.clone());
        check_grad(move |x| x.conv2d(&k, 2, 1).unwrap().mul(&wt).unwrap().sum(), &x0);
        let (x, wt) = (x0.clone(), ws.clone());
        check_grad(move |k| x.conv2d(k, 2, 1).unwrap().mul(&wt).unwrap().sum(), &k0s);
    }
}

#[test]
fn softmax_uniform_for_equal_logits() {
    for t in [0.3, 1.0, 5.0] {
        let x = Tensor::full(&[2, 4], 3.7);
        let p = x.softmax_rows(t).unwrap();
        for &v in p.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn softmax_rejects_non_positive_temperature() {
    let x = Tensor::zeros(&[1, 3]);
    assert!(matches!(x.softmax_rows(0.0), Err(Error::Config(_))));
    assert!(matches!(x.softmax_rows(-1.0), Err(Error::Config(_))));
}

#[test]
fn softmax_shift_invariance() {
    let x = rand_tensor(&[3, 5], 7, 4.0);
    let p1 = x.softmax_rows(2.0).unwrap();
    // add a constant to row 1; rows 0 and 2 must stay bit-identical and
    // row 1 must agree to 1e-12 (the shift itself rounds the inputs)
    let mut shifted = x.data().to_vec();
    for v in &mut shifted[5..10] {
        *v += 123.456;
    }
    let p2 = Tensor::from_vec(&[3, 5], shifted).unwrap().softmax_rows(2.0).unwrap();
    assert_eq!(&p1.data()[0..5], &p2.data()[0..5]);
    assert_eq!(&p1.data()[10..15], &p2.data()[10..15]);
    for (a, b) in p1.data()[5..10].iter().zip(&p2.data()[5..10]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_gradients_match_fd() {
    for seed in 0..5 {
        let x0 = rand_tensor(&[2, 4], 60 + seed, 2.0);
        let w = rand_tensor(&[2, 4], 70 + seed, 1.0);
        for t in [0.5, 1.0, 3.0] {
            let wt = w.clone();
            check_grad(move |x| x.softmax_rows(t).unwrap().mul(&wt).unwrap().sum(), &x0);
        }
    }
}

#[test]
fn gap_of_constant_map() {
    let x = Tensor::full(&[3, 4, 4], 2.5);
    let g = x.gap().unwrap();
    assert_eq!(g.shape(), &[3]);
    for &v in g.data() {
        assert!((v - 2.5).abs() < 1e-15);
    }
}

#[test]
fn gap_gradients_match_fd() {
    let x0 = rand_tensor(&[2, 3, 3], 80, 1.0);
    let w = rand_tensor(&[2], 81, 1.0);
    check_grad(move |x| x.gap().unwrap().mul(&w).unwrap().sum(), &x0);
}

#[test]
fn channel_max_single_channel_is_identity() {
    let x = rand_tensor(&[1, 3, 3], 9, 1.0);
    let m = x.channel_max().unwrap();
    assert_eq!(m.shape(), &[3, 3]);
    assert_eq!(m.data(), x.data());
}

#[test]
fn channel_max_dominates_every_slice() {
    let x = rand_tensor(&[4, 5, 5], 11, 2.0);
    let m = x.channel_max().unwrap();
    let hw = 25;
    for c in 0..4 {
        for p in 0..hw {
            assert!(m.data()[p] >= x.data()[c * hw + p]);
        }
    }
}

#[test]
fn channel_max_ties_route_grad_to_lowest_channel() {
    // both channels equal: gradient must go to channel 0 only
    let x = Tensor::full(&[2, 2, 2], 1.0).requires_grad(true);
    let m = x.channel_max().unwrap();
    m.sum().backward().unwrap();
    let g = x.grad().unwrap();
    assert_eq!(&g[0..4], &[1.0; 4]);
    assert_eq!(&g[4..8], &[0.0; 4]);
}

#[test]
fn channel_max_gradients_match_fd() {
    // distinct values keep the argmax stable under the FD step
    let x0 = rand_tensor(&[3, 4, 4], 12, 5.0);
    let w = rand_tensor(&[4, 4], 13, 1.0);
    check_grad(move |x| x.channel_max().unwrap().mul(&w).unwrap().sum(), &x0);
}

#[test]
fn sum_backward_is_ones() {
    let x = rand_tensor(&[2, 3], 14, 1.0).requires_grad(true);
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn l2_loss_at_minimum_has_zero_grad() {
    let x = rand_tensor(&[5], 15, 1.0).requires_grad(true);
    let detached = x.stop_gradient();
    let l = x.l2_loss(&detached).unwrap();
    assert_eq!(l.item(), 0.0);
    l.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0; 5]);
}

#[test]
fn l2_loss_gradients_match_fd() {
    let a0 = rand_tensor(&[6], 16, 1.0);
    let b = rand_tensor(&[6], 17, 1.0);
    check_grad(move |a| a.l2_loss(&b).unwrap(), &a0);
}

#[test]
fn cross_entropy_values_and_grads() {
    let logits = rand_tensor(&[5], 18, 2.0);
    // value oracle: -log softmax[label]
    let l = logits.cross_entropy(3).unwrap().item();
    let exps: Vec<f64> = logits.data().iter().map(|v| v.exp()).collect();
    let p3 = exps[3] / exps.iter().sum::<f64>();
    assert!((l + p3.ln()).abs() < 1e-12);
    check_grad(move |x| x.cross_entropy(3).unwrap(), &logits);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let logits = Tensor::zeros(&[4]);
    assert!(matches!(logits.cross_entropy(4), Err(Error::Label(_))));
}

#[test]
fn stop_gradient_product_rule() {
    // loss = sum(sg(x) * x)  =>  d/dx = sg(x) = x values (not 2x)
    let x = rand_tensor(&[4], 19, 1.0).requires_grad(true);
    let frozen = x.stop_gradient();
    let loss = frozen.mul(&x).unwrap().sum();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), x.data());
}

#[test]
fn stop_gradient_blocks_all_flow() {
    let x = rand_tensor(&[4], 21, 1.0).requires_grad(true);
    let loss = x.stop_gradient().scale(3.0).sum().add_scalar(1.0);
    // nothing differentiable feeds the loss; backward has no tape to run
    assert!(loss.backward().is_err());
    assert!(x.grad().is_none());
}

#[test]
fn three_layer_network_grads_match_fd() {
    // dense -> relu -> dense -> relu -> dense -> CE, all parameters checked
    for seed in 0..3 {
        let mut rng = rng_for(seed, &[0xbeef]);
        let dims = [4usize, 6, 5, 3];
        let x = rand_tensor(&[1, dims[0]], 90 + seed, 1.0);
        let mats: Vec<Tensor> = (0..3)
            .map(|i| {
                let data =
                    (0..dims[i] * dims[i + 1]).map(|_| uniform_sym(&mut rng, 0.8)).collect();
                Tensor::from_vec(&[dims[i], dims[i + 1]], data).unwrap()
            })
            .collect();
        let forward = |ws: &[Tensor]| {
            let h1 = x.matmul(&ws[0]).unwrap().relu();
            let h2 = h1.matmul(&ws[1]).unwrap().relu();
            let logits = h2.matmul(&ws[2]).unwrap().reshape(&[dims[3]]).unwrap();
            logits.cross_entropy(1).unwrap()
        };
        for check_idx in 0..3 {
            let mats_c = mats.clone();
            let loss_of = move |t: &Tensor| {
                let mut ws = mats_c.clone();
                ws[check_idx] = t.clone();
                ws
            };
            let builder = loss_of.clone();
            check_grad(
                move |t| {
                    let ws = builder(t);
                    forward(&ws)
                },
                &mats[check_idx],
            );
        }
    }
}

#[test]
fn op_sequence_is_bit_deterministic() {
    let run = || {
        let mut rng = rng_for(42, &[1, 2, 3]);
        let x = Tensor::from_vec(&[2, 3, 3], (0..18).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let k = Tensor::from_vec(&[2, 2, 3, 3], (0..36).map(|_| rng.gen::<f64>() - 0.5).collect())
            .unwrap();
        let y = x.conv2d(&k, 1, 1).unwrap().relu().gap().unwrap();
        y.data().to_vec()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..4, cols in 1usize..6, seed in 0u64..500) {
        let x = rand_tensor(&[rows, cols], seed, 10.0);
        let p = x.softmax_rows(1.0).unwrap();
        for r in 0..rows {
            let s: f64 = p.data()[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_output_non_negative(seed in 0u64..500) {
        let x = rand_tensor(&[17], seed, 3.0);
        prop_assert!(x.relu().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn reshape_round_trip(seed in 0u64..200) {
        let x = rand_tensor(&[3, 4], seed, 1.0);
        let y = x.reshape(&[2, 6]).unwrap().reshape(&[3, 4]).unwrap();
        prop_assert_eq!(x.data(), y.data());
    }
}
