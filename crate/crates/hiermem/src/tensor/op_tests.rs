//! Oracle tests for the op set.
//!
//! Reference implementations here are deliberately naive (triple-loop matmul,
//! quadruple-loop convolution, direct exp/sum softmax) and independent of the
//! op code paths they check.

use super::{finite_difference_check, GradCheckConfig, Tensor};
use crate::error::Result;
use crate::rng::Rng;

// ── Oracles ───────────────────────────────────────────────────────────

fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let denom: f64 = x.iter().map(|v| v.exp()).sum();
    x.iter().map(|v| v.exp() / denom).collect()
}

#[allow(clippy::too_many_arguments)]
fn conv2d_oracle(
    x: &[f64],
    kernel: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as i64 - padding as i64;
                            let ix = (ox * stride + kx) as i64 - padding as i64;
                            if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * kernel[((co * c_in + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol,
            "element {i}: got {g}, want {w} (tol {tol})"
        );
    }
}

/// Finite-difference check of `build` against every tensor in `params`.
/// The loss is a fixed random weighting of the output so each output element
/// contributes a distinct cotangent.
fn check_op_grads(
    build: impl Fn() -> Result<Tensor>,
    params: Vec<(&str, Tensor)>,
    tol: f64,
    seed: u64,
) {
    let probe = build().expect("forward");
    let mut rng = Rng::new(seed ^ 0x5eed);
    let weights = Tensor::rand_uniform(&probe.shape(), -1.0, 1.0, &mut rng);
    let named: Vec<(String, Tensor)> = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let mut f = || Ok(build()?.mul(&weights)?.sum_all());
    let cfg = GradCheckConfig {
        tolerance: tol,
        ..GradCheckConfig::default()
    };
    let report = finite_difference_check(&mut f, &named, &cfg).expect("gradcheck");
    assert!(report.passed(), "gradients off: {:?}", report.worst());
}

fn rand_param(shape: &[usize], rng: &mut Rng) -> Tensor {
    let t = Tensor::rand_uniform(shape, -1.0, 1.0, rng);
    t.set_requires_grad(true);
    t
}

// ── matmul ────────────────────────────────────────────────────────────

#[test]
fn matmul_identity() {
    let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let a = Tensor::from_vec(&[2, 2], vec![3.0, -1.0, 2.5, 7.0]).unwrap();
    let out = eye.matmul(&a).unwrap();
    assert_eq!(out.data(), a.data());
}

#[test]
fn matmul_small_known_product() {
    let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap();
    let out = a.matmul(&b).unwrap();
    assert_eq!(out.shape(), vec![2, 1]);
    assert_eq!(out.data(), vec![17.0, 39.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = Rng::new(21);
    let a = Tensor::rand_uniform(&[5, 7], -2.0, 2.0, &mut rng);
    let b = Tensor::rand_uniform(&[7, 4], -2.0, 2.0, &mut rng);
    let got = a.matmul(&b).unwrap();
    let want = matmul_oracle(&a.data(), &b.data(), 5, 7, 4);
    assert_close(&got.data(), &want, 1e-12);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[4, 2]);
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_grads_match_finite_differences() {
    let mut rng = Rng::new(31);
    let a = rand_param(&[3, 4], &mut rng);
    let b = rand_param(&[4, 2], &mut rng);
    check_op_grads(
        || a.matmul(&b),
        vec![("a", a.clone()), ("b", b.clone())],
        1e-6,
        31,
    );
}

#[test]
fn matmul_associativity_on_random_triples() {
    let mut rng = Rng::new(47);
    for _ in 0..20 {
        let a = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let c = Tensor::rand_uniform(&[5, 2], -1.0, 1.0, &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap().data();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap().data();
        for (l, r) in left.iter().zip(&right) {
            let rel = (l - r).abs() / (l.abs().max(r.abs()) + 1e-12);
            assert!(rel < 1e-9, "associativity broke: {l} vs {r}");
        }
    }
}

// ── softmax ───────────────────────────────────────────────────────────

#[test]
fn softmax_uniform_input() {
    let x = Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
    let s = x.softmax(0).unwrap().data();
    assert_close(&s, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1e-15);
}

#[test]
fn softmax_analytic_ratio() {
    let x = Tensor::from_vec(&[2], vec![0.0, 3.0f64.ln()]).unwrap();
    let s = x.softmax(0).unwrap().data();
    assert_close(&s, &[0.25, 0.75], 1e-15);
}

#[test]
fn softmax_matches_direct_oracle() {
    let vals = vec![1.0, 2.0, 3.0];
    let x = Tensor::from_vec(&[3], vals.clone()).unwrap();
    let got = x.softmax(0).unwrap().data();
    assert_close(&got, &softmax_oracle(&vals), 1e-14);
}

#[test]
fn softmax_rows_sum_to_one_even_at_extremes() {
    let mut rng = Rng::new(3);
    for _ in 0..50 {
        let mut vals = vec![0.0; 4 * 6];
        rng.fill_uniform(&mut vals, -700.0, 700.0);
        let x = Tensor::from_vec(&[4, 6], vals).unwrap();
        let s = x.softmax(1).unwrap().data();
        for r in 0..4 {
            let sum: f64 = s[r * 6..(r + 1) * 6].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
            assert!(s[r * 6..(r + 1) * 6].iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn softmax_rejects_nan() {
    let x = Tensor::from_vec(&[2], vec![f64::NAN, 0.0]).unwrap();
    assert!(x.softmax(0).is_err());
}

#[test]
fn softmax_grads() {
    let mut rng = Rng::new(5);
    let x = rand_param(&[3, 5], &mut rng);
    check_op_grads(|| x.softmax(1), vec![("x", x.clone())], 1e-4, 5);
}

// ── conv2d ────────────────────────────────────────────────────────────

#[test]
fn conv2d_delta_kernel_is_identity() {
    let mut rng = Rng::new(9);
    let x = Tensor::rand_uniform(&[2, 5, 5], -1.0, 1.0, &mut rng);
    // One delta kernel per channel: out[c] == in[c].
    let mut kd = vec![0.0; 2 * 2 * 3 * 3];
    for c in 0..2 {
        kd[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    let kernel = Tensor::from_vec(&[2, 2, 3, 3], kd).unwrap();
    let out = x.conv2d(&kernel, 1, 1).unwrap();
    assert_eq!(out.shape(), vec![2, 5, 5]);
    assert_close(&out.data(), &x.data(), 0.0);
}

#[test]
fn conv2d_ones_kernel_on_constant_field() {
    let c = 2.5;
    let x = Tensor::full(&[1, 5, 5], c);
    let kernel = Tensor::full(&[1, 1, 3, 3], 1.0);
    let out = x.conv2d(&kernel, 1, 0).unwrap();
    assert_eq!(out.shape(), vec![1, 3, 3]);
    for v in out.data() {
        assert!((v - 9.0 * c).abs() < 1e-12);
    }
}

#[test]
fn conv2d_matches_quadruple_loop_oracle() {
    let mut rng = Rng::new(13);
    let x = Tensor::rand_uniform(&[1, 5, 5], -1.0, 1.0, &mut rng);
    let kernel = Tensor::rand_uniform(&[3, 1, 3, 3], -1.0, 1.0, &mut rng);
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let got = x.conv2d(&kernel, stride, padding).unwrap();
        let want = conv2d_oracle(&x.data(), &kernel.data(), 1, 5, 5, 3, 3, stride, padding);
        assert_close(&got.data(), &want, 1e-12);
    }
}

#[test]
fn conv2d_rejects_empty_output_and_even_kernels() {
    let x = Tensor::zeros(&[1, 2, 2]);
    let k3 = Tensor::zeros(&[1, 1, 3, 3]);
    assert!(x.conv2d(&k3, 1, 0).is_err()); // 2−3 < 0
    let k2 = Tensor::zeros(&[1, 1, 2, 2]);
    let x4 = Tensor::zeros(&[1, 4, 4]);
    assert!(x4.conv2d(&k2, 1, 0).is_err()); // even kernel
}

#[test]
fn conv2d_grads() {
    let mut rng = Rng::new(17);
    let x = rand_param(&[2, 6, 6], &mut rng);
    let kernel = rand_param(&[3, 2, 3, 3], &mut rng);
    check_op_grads(
        || x.conv2d(&kernel, 2, 1),
        vec![("x", x.clone()), ("k", kernel.clone())],
        1e-4,
        17,
    );
}

// ── elementwise and shape ops ─────────────────────────────────────────

#[test]
fn relu_definition() {
    let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(x.relu().data(), vec![0.0, 0.0, 2.0]);
}

#[test]
fn nearest_upsample_replicates() {
    let v = 0.37;
    let x = Tensor::from_vec(&[1, 1, 1], vec![v]).unwrap();
    let up = x.upsample_nearest(2).unwrap();
    assert_eq!(up.shape(), vec![1, 2, 2]);
    assert_eq!(up.data(), vec![v; 4]);
}

#[test]
fn bilinear_upsample_preserves_constants() {
    let x = Tensor::full(&[2, 3, 3], 1.25);
    let up = x.upsample_bilinear(2).unwrap();
    assert_eq!(up.shape(), vec![2, 6, 6]);
    for v in up.data() {
        assert!((v - 1.25).abs() < 1e-15);
    }
}

#[test]
fn concat_forced_shape() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 5]);
    let out = Tensor::concat(&[&a, &b], 1).unwrap();
    assert_eq!(out.shape(), vec![2, 8]);
    // Mismatch on the non-concat axis must fail.
    let c = Tensor::zeros(&[3, 5]);
    assert!(Tensor::concat(&[&a, &c], 1).is_err());
}

#[test]
fn narrow_slices_and_restores() {
    let x = Tensor::from_vec(&[2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
    let s = x.narrow(1, 1, 2).unwrap();
    assert_eq!(s.shape(), vec![2, 2]);
    assert_eq!(s.data(), vec![1.0, 2.0, 5.0, 6.0]);
    assert!(x.narrow(1, 3, 2).is_err());
}

#[test]
fn sigmoid_is_finite_for_extreme_inputs() {
    let x = Tensor::from_vec(&[4], vec![-1e9, -30.0, 30.0, 1e9]).unwrap();
    let s = x.sigmoid().data();
    assert!(s.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
}

#[test]
fn exp_ln_guards_keep_outputs_finite() {
    let x = Tensor::from_vec(&[3], vec![800.0, 0.0, -800.0]).unwrap();
    assert!(x.exp().data().iter().all(|v| v.is_finite()));
    let y = Tensor::from_vec(&[3], vec![0.0, 1e-320, 2.0]).unwrap();
    assert!(y.ln().data().iter().all(|v| v.is_finite()));
}

#[test]
fn reductions_match_direct_sums() {
    let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(x.sum_axis(0).unwrap().data(), vec![5.0, 7.0, 9.0]);
    assert_eq!(x.sum_axis(1).unwrap().data(), vec![6.0, 15.0]);
    assert_eq!(x.mean_axis(1).unwrap().data(), vec![2.0, 5.0]);
    assert_eq!(x.max_axis(0).unwrap().data(), vec![4.0, 5.0, 6.0]);
    assert_eq!(x.mean_all().item(), 3.5);
}

#[test]
fn pooling_shapes_and_values() {
    let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(x.avg_pool2d(2, 2).unwrap().data(), vec![2.5]);
    assert_eq!(x.max_pool2d(2, 2).unwrap().data(), vec![4.0]);
}

#[test]
fn tokens_map_round_trip() {
    let mut rng = Rng::new(2);
    let tokens = Tensor::rand_uniform(&[12, 5], -1.0, 1.0, &mut rng);
    let map = tokens.tokens_to_map(3, 4).unwrap();
    assert_eq!(map.shape(), vec![5, 3, 4]);
    let back = map.map_to_tokens().unwrap();
    assert_eq!(back.data(), tokens.data());
}

// ── gradient sweep over the remaining differentiable ops ──────────────

#[test]
fn elementwise_binary_grads() {
    let mut rng = Rng::new(101);
    let a = rand_param(&[3, 4], &mut rng);
    let b = rand_param(&[3, 4], &mut rng);
    check_op_grads(|| a.add(&b), vec![("a", a.clone()), ("b", b.clone())], 1e-6, 1);
    check_op_grads(|| a.sub(&b), vec![("a", a.clone()), ("b", b.clone())], 1e-6, 2);
    check_op_grads(|| a.mul(&b), vec![("a", a.clone()), ("b", b.clone())], 1e-5, 3);
    // Divisor bounded away from zero.
    let c = Tensor::rand_uniform(&[3, 4], 0.5, 2.0, &mut rng);
    c.set_requires_grad(true);
    check_op_grads(|| a.div(&c), vec![("a", a.clone()), ("c", c.clone())], 1e-4, 4);
}

#[test]
fn unary_grads() {
    let mut rng = Rng::new(103);
    // Keep relu inputs away from the kink at 0.
    let vals: Vec<f64> = (0..12)
        .map(|_| {
            let v = rng.uniform(0.1, 1.0);
            if rng.next_f64() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    let x = Tensor::param(&[3, 4], vals).unwrap();
    check_op_grads(|| Ok(x.relu()), vec![("x", x.clone())], 1e-5, 11);
    check_op_grads(|| Ok(x.sigmoid()), vec![("x", x.clone())], 1e-5, 12);
    check_op_grads(|| Ok(x.exp()), vec![("x", x.clone())], 1e-5, 13);
    check_op_grads(|| Ok(x.scale(-2.5)), vec![("x", x.clone())], 1e-6, 14);
    check_op_grads(|| Ok(x.add_scalar(3.0)), vec![("x", x.clone())], 1e-6, 15);

    let p = Tensor::rand_uniform(&[6], 0.1, 0.9, &mut rng);
    p.set_requires_grad(true);
    check_op_grads(|| Ok(p.ln()), vec![("p", p.clone())], 1e-5, 16);
    check_op_grads(|| Ok(p.pow_scalar(2.0)), vec![("p", p.clone())], 1e-5, 17);
    check_op_grads(|| Ok(p.pow_scalar(0.5)), vec![("p", p.clone())], 1e-4, 18);
}

#[test]
fn shape_op_grads() {
    let mut rng = Rng::new(107);
    let x = rand_param(&[3, 4], &mut rng);
    let y = rand_param(&[3, 2], &mut rng);
    check_op_grads(|| x.reshape(&[2, 6]), vec![("x", x.clone())], 1e-6, 21);
    check_op_grads(|| x.transpose2d(), vec![("x", x.clone())], 1e-6, 22);
    check_op_grads(
        || Tensor::concat(&[&x, &y], 1),
        vec![("x", x.clone()), ("y", y.clone())],
        1e-6,
        23,
    );
    check_op_grads(|| x.narrow(1, 1, 2), vec![("x", x.clone())], 1e-6, 24);
}

#[test]
fn reduction_grads() {
    let mut rng = Rng::new(109);
    let x = rand_param(&[3, 4], &mut rng);
    check_op_grads(|| Ok(x.sum_all()), vec![("x", x.clone())], 1e-6, 31);
    check_op_grads(|| Ok(x.mean_all()), vec![("x", x.clone())], 1e-6, 32);
    check_op_grads(|| x.sum_axis(0), vec![("x", x.clone())], 1e-6, 33);
    check_op_grads(|| x.mean_axis(1), vec![("x", x.clone())], 1e-6, 34);
    check_op_grads(|| x.max_axis(1), vec![("x", x.clone())], 1e-5, 35);
}

#[test]
fn map_layout_grads() {
    let mut rng = Rng::new(113);
    let x = rand_param(&[3, 4, 4], &mut rng);
    let bias = rand_param(&[3], &mut rng);
    let cgate = Tensor::rand_uniform(&[3], 0.1, 0.9, &mut rng);
    cgate.set_requires_grad(true);
    let sgate = Tensor::rand_uniform(&[1, 4, 4], 0.1, 0.9, &mut rng);
    sgate.set_requires_grad(true);

    check_op_grads(
        || x.add_channel_bias(&bias),
        vec![("x", x.clone()), ("b", bias.clone())],
        1e-6,
        41,
    );
    check_op_grads(
        || x.mul_channel_gate(&cgate),
        vec![("x", x.clone()), ("g", cgate.clone())],
        1e-5,
        42,
    );
    check_op_grads(
        || x.mul_spatial_gate(&sgate),
        vec![("x", x.clone()), ("g", sgate.clone())],
        1e-5,
        43,
    );
    check_op_grads(|| x.avg_pool2d(2, 2), vec![("x", x.clone())], 1e-6, 44);
    check_op_grads(|| x.max_pool2d(2, 2), vec![("x", x.clone())], 1e-5, 45);
    check_op_grads(|| x.upsample_nearest(2), vec![("x", x.clone())], 1e-6, 46);
    check_op_grads(|| x.upsample_bilinear(2), vec![("x", x.clone())], 1e-5, 47);

    let rows = rand_param(&[5, 3], &mut rng);
    let rbias = rand_param(&[3], &mut rng);
    check_op_grads(
        || rows.add_row_bias(&rbias),
        vec![("x", rows.clone()), ("b", rbias.clone())],
        1e-6,
        48,
    );
}
