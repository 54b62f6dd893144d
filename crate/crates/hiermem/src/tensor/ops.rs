//! Forward operations and their backward closures.
//!
//! Conventions, fixed here so the oracles in the test-suite are unambiguous:
//! * `conv2d` is cross-correlation (no kernel flip).
//! * `relu` has derivative 0 at 0.
//! * `sigmoid` clamps its input to ±30 before exponentiation; `exp` clamps at
//!   +700; `ln` floors its argument at 1e-300. Finite inputs therefore always
//!   produce finite outputs.
//! * Reductions over an axis drop that axis (a full reduction yields shape
//!   `[1]`).
//! * `upsample_bilinear` places sample points at pixel centers and clamps at
//!   the border (the align_corners=false convention).

use super::Tensor;
use crate::error::{Error, Result};

const SIGMOID_CLAMP: f64 = 30.0;
const EXP_CLAMP: f64 = 700.0;
const LN_FLOOR: f64 = 1e-300;

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, shape: &[usize], detail: impl Into<String>) -> Error {
    Error::InvalidShape {
        op,
        shape: shape.to_vec(),
        detail: detail.into(),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Split a shape at `axis` into (outer, axis length, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape.to_vec();
    out.remove(axis);
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl Tensor {
    fn binary_elementwise(
        &self,
        rhs: &Tensor,
        op: &'static str,
        fwd: impl Fn(f64, f64) -> f64,
        bwd: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(mismatch(op, &ls, &rs));
        }
        let data: Vec<f64> = {
            let a = self.data_ref();
            let b = rhs.data_ref();
            a.iter().zip(b.iter()).map(|(&x, &y)| fwd(x, y)).collect()
        };
        Ok(Tensor::from_op(
            ls,
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |parents, _out, grad| {
                let (da, db): (Vec<f64>, Vec<f64>) = {
                    let a = parents[0].data_ref();
                    let b = parents[1].data_ref();
                    grad.iter()
                        .zip(a.iter().zip(b.iter()))
                        .map(|(&g, (&x, &y))| bwd(g, x, y))
                        .unzip()
                };
                parents[0].accum_grad(&da);
                parents[1].accum_grad(&db);
            }),
        ))
    }

    // ── Elementwise binary ────────────────────────────────────────────

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(rhs, "add", |x, y| x + y, |g, _, _| (g, g))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(rhs, "sub", |x, y| x - y, |g, _, _| (g, -g))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(rhs, "mul", |x, y| x * y, |g, x, y| (g * y, g * x))
    }

    /// Elementwise division. The divisor must be nonzero everywhere.
    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        if rhs.data_ref().contains(&0.0) {
            return Err(Error::NonFiniteInput { op: "div" });
        }
        self.binary_elementwise(
            rhs,
            "div",
            |x, y| x / y,
            |g, x, y| (g / y, -g * x / (y * y)),
        )
    }

    // ── Scalar and unary ──────────────────────────────────────────────

    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data_ref().iter().map(|&x| c * x).collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let d: Vec<f64> = grad.iter().map(|&g| c * g).collect();
                parents[0].accum_grad(&d);
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data_ref().iter().map(|&x| x + c).collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|parents, _out, grad| parents[0].accum_grad(grad)),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data_ref().iter().map(|&x| x.max(0.0)).collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|parents, _out, grad| {
                let d: Vec<f64> = {
                    let x = parents[0].data_ref();
                    grad.iter()
                        .zip(x.iter())
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect()
                };
                parents[0].accum_grad(&d);
            }),
        )
    }

    /// Logistic function of the input clamped to ±30.
    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f64> = self
            .data_ref()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)).exp()))
            .collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|parents, out, grad| {
                let d: Vec<f64> = {
                    let x = parents[0].data_ref();
                    grad.iter()
                        .zip(out.iter().zip(x.iter()))
                        .map(|(&g, (&s, &v))| {
                            if v.abs() >= SIGMOID_CLAMP {
                                0.0
                            } else {
                                g * s * (1.0 - s)
                            }
                        })
                        .collect()
                };
                parents[0].accum_grad(&d);
            }),
        )
    }

    /// Exponential with the input clamped at +700 to stay finite.
    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self
            .data_ref()
            .iter()
            .map(|&x| x.min(EXP_CLAMP).exp())
            .collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|parents, out, grad| {
                let d: Vec<f64> = {
                    let x = parents[0].data_ref();
                    grad.iter()
                        .zip(out.iter().zip(x.iter()))
                        .map(|(&g, (&e, &v))| if v > EXP_CLAMP { 0.0 } else { g * e })
                        .collect()
                };
                parents[0].accum_grad(&d);
            }),
        )
    }

    /// Natural log of the input floored at 1e-300.
    pub fn ln(&self) -> Tensor {
        let data: Vec<f64> = self
            .data_ref()
            .iter()
            .map(|&x| x.max(LN_FLOOR).ln())
            .collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|parents, _out, grad| {
                let d: Vec<f64> = {
                    let x = parents[0].data_ref();
                    grad.iter()
                        .zip(x.iter())
                        .map(|(&g, &v)| if v < LN_FLOOR { 0.0 } else { g / v })
                        .collect()
                };
                parents[0].accum_grad(&d);
            }),
        )
    }

    /// Elementwise power with the base clamped at 0 (used on probabilities).
    pub fn pow_scalar(&self, e: f64) -> Tensor {
        let data: Vec<f64> = self
            .data_ref()
            .iter()
            .map(|&x| x.max(0.0).powf(e))
            .collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let d: Vec<f64> = {
                    let x = parents[0].data_ref();
                    grad.iter()
                        .zip(x.iter())
                        .map(|(&g, &v)| {
                            let b = v.max(0.0);
                            if e == 0.0 || (b == 0.0 && e < 1.0) || v < 0.0 {
                                0.0
                            } else {
                                g * e * b.powf(e - 1.0)
                            }
                        })
                        .collect()
                };
                parents[0].accum_grad(&d);
            }),
        )
    }

    // ── Shape ─────────────────────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.numel() {
            return Err(invalid(
                "reshape",
                shape,
                format!("cannot reshape {} elements", self.numel()),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data(),
            vec![self.clone()],
            Box::new(|parents, _out, grad| parents[0].accum_grad(grad)),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(invalid("transpose2d", &s, "rank-2 required"));
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose_raw(&self.data_ref(), r, c);
        Ok(Tensor::from_op(
            vec![c, r],
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                parents[0].accum_grad(&transpose_raw(grad, c, r));
            }),
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", &[], "needs at least one part"))?;
        let base = first.shape();
        let (outer, _, inner) = axis_split(&base, axis)?;
        let mut axis_total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(mismatch("concat", &base, &s));
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;

        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for p in parts {
            let ps = p.shape();
            let pa = ps[axis];
            let src = p.data_ref();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * pa * inner;
                data[dst_start..dst_start + pa * inner]
                    .copy_from_slice(&src[src_start..src_start + pa * inner]);
            }
            offset += pa;
        }

        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let part_axis: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(Tensor::from_op(
            shape,
            data,
            parents,
            Box::new(move |parents, _out, grad| {
                let mut offset = 0;
                for (p, &pa) in parents.iter().zip(&part_axis) {
                    let mut d = vec![0.0; outer * pa * inner];
                    for o in 0..outer {
                        let src_start = (o * axis_total + offset) * inner;
                        let dst_start = o * pa * inner;
                        d[dst_start..dst_start + pa * inner]
                            .copy_from_slice(&grad[src_start..src_start + pa * inner]);
                    }
                    p.accum_grad(&d);
                    offset += pa;
                }
            }),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        let (outer, extent, inner) = axis_split(&shape, axis)?;
        if len == 0 || start + len > extent {
            return Err(invalid(
                "narrow",
                &shape,
                format!("slice {start}..{} out of range", start + len),
            ));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        {
            let src = self.data_ref();
            for o in 0..outer {
                let src_start = (o * extent + start) * inner;
                let dst_start = o * len * inner;
                data[dst_start..dst_start + len * inner]
                    .copy_from_slice(&src[src_start..src_start + len * inner]);
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut d = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let dst_start = (o * extent + start) * inner;
                    let src_start = o * len * inner;
                    d[dst_start..dst_start + len * inner]
                        .copy_from_slice(&grad[src_start..src_start + len * inner]);
                }
                parents[0].accum_grad(&d);
            }),
        ))
    }

    // ── Linear algebra ────────────────────────────────────────────────

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(mismatch("matmul", &ls, &rs));
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let data = {
            let a = self.data_ref();
            let b = rhs.data_ref();
            matmul_raw(&a, &b, m, k, n)
        };
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |parents, _out, grad| {
                let (da, db) = {
                    let a = parents[0].data_ref();
                    let b = parents[1].data_ref();
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let bt = transpose_raw(&b, k, n);
                    let at = transpose_raw(&a, m, k);
                    (
                        matmul_raw(grad, &bt, m, n, k),
                        matmul_raw(&at, grad, k, m, n),
                    )
                };
                parents[0].accum_grad(&da);
                parents[1].accum_grad(&db);
            }),
        ))
    }

    // ── Reductions ────────────────────────────────────────────────────

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data_ref().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(|parents, _out, grad| {
                let n = parents[0].numel();
                parents[0].accum_grad(&vec![grad[0]; n]);
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        let s: f64 = self.data_ref().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s / n],
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let count = parents[0].numel();
                parents[0].accum_grad(&vec![grad[0] / n; count]);
            }),
        )
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Tensor> {
        let shape = self.shape();
        let (outer, extent, inner) = axis_split(&shape, axis)?;
        let denom = if mean { extent as f64 } else { 1.0 };
        let mut data = vec![0.0; outer * inner];
        {
            let src = self.data_ref();
            for o in 0..outer {
                for a in 0..extent {
                    for i in 0..inner {
                        data[o * inner + i] += src[(o * extent + a) * inner + i];
                    }
                }
            }
        }
        if mean {
            for v in data.iter_mut() {
                *v /= denom;
            }
        }
        Ok(Tensor::from_op(
            reduced_shape(&shape, axis),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut d = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    for a in 0..extent {
                        for i in 0..inner {
                            d[(o * extent + a) * inner + i] = grad[o * inner + i] / denom;
                        }
                    }
                }
                parents[0].accum_grad(&d);
            }),
        ))
    }

    /// Maximum over `axis`; the subgradient routes to the first maximum.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        let (outer, extent, inner) = axis_split(&shape, axis)?;
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        {
            let src = self.data_ref();
            for o in 0..outer {
                for a in 0..extent {
                    for i in 0..inner {
                        let v = src[(o * extent + a) * inner + i];
                        let slot = o * inner + i;
                        if v > data[slot] {
                            data[slot] = v;
                            argmax[slot] = (o * extent + a) * inner + i;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            reduced_shape(&shape, axis),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut d = vec![0.0; parents[0].numel()];
                for (slot, &src_idx) in argmax.iter().enumerate() {
                    d[src_idx] += grad[slot];
                }
                parents[0].accum_grad(&d);
            }),
        ))
    }

    /// Numerically stable softmax along `axis`. Rejects non-finite input.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        let (outer, extent, inner) = axis_split(&shape, axis)?;
        if self.data_ref().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { op: "softmax" });
        }
        let mut data = vec![0.0; self.numel()];
        {
            let src = self.data_ref();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * extent + a) * inner + i;
                    let mut max = f64::NEG_INFINITY;
                    for a in 0..extent {
                        max = max.max(src[idx(a)]);
                    }
                    let mut denom = 0.0;
                    for a in 0..extent {
                        let e = (src[idx(a)] - max).exp();
                        data[idx(a)] = e;
                        denom += e;
                    }
                    for a in 0..extent {
                        data[idx(a)] /= denom;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |parents, out, grad| {
                // ds_a = s_a (g_a − Σ_b g_b s_b) per slice
                let mut d = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * extent + a) * inner + i;
                        let mut dot = 0.0;
                        for a in 0..extent {
                            dot += grad[idx(a)] * out[idx(a)];
                        }
                        for a in 0..extent {
                            d[idx(a)] = out[idx(a)] * (grad[idx(a)] - dot);
                        }
                    }
                }
                parents[0].accum_grad(&d);
            }),
        ))
    }

    // ── Row-wise broadcast (token layouts [N, C]) ─────────────────────

    /// `x[n,c] + b[c]` for `x: [N, C]`, `b: [C]`.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (xs, bs) = (self.shape(), bias.shape());
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(mismatch("add_row_bias", &xs, &bs));
        }
        let (n, c) = (xs[0], xs[1]);
        let data: Vec<f64> = {
            let x = self.data_ref();
            let b = bias.data_ref();
            (0..n * c).map(|i| x[i] + b[i % c]).collect()
        };
        Ok(Tensor::from_op(
            xs,
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |parents, _out, grad| {
                parents[0].accum_grad(grad);
                let mut db = vec![0.0; c];
                for i in 0..n {
                    for j in 0..c {
                        db[j] += grad[i * c + j];
                    }
                }
                parents[1].accum_grad(&db);
            }),
        ))
    }

    // ── Map-layout ops ([C, H, W]) ────────────────────────────────────

    /// Cross-correlation of `self: [C_in, H, W]` with `kernel:
    /// [C_out, C_in, k, k]` (odd k). Output spatial extent is
    /// `floor((H + 2·padding − k)/stride) + 1`.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (xs, ks) = (self.shape(), kernel.shape());
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != ks[3] {
            return Err(mismatch("conv2d", &xs, &ks));
        }
        let k = ks[2];
        if k % 2 == 0 {
            return Err(invalid("conv2d", &ks, "kernel side must be odd"));
        }
        if stride == 0 {
            return Err(invalid("conv2d", &xs, "stride must be positive"));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let c_out = ks[0];
        let h_num = (h + 2 * padding) as i64 - k as i64;
        let w_num = (w + 2 * padding) as i64 - k as i64;
        if h_num < 0 || w_num < 0 {
            return Err(invalid("conv2d", &xs, "output dimension would be empty"));
        }
        let oh = (h_num as usize) / stride + 1;
        let ow = (w_num as usize) / stride + 1;

        let mut data = vec![0.0; c_out * oh * ow];
        {
            let x = self.data_ref();
            let kd = kernel.data_ref();
            for co in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as i64 - padding as i64;
                                if iy < 0 || iy >= h as i64 {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as i64 - padding as i64;
                                    if ix < 0 || ix >= w as i64 {
                                        continue;
                                    }
                                    acc += x[(ci * h + iy as usize) * w + ix as usize]
                                        * kd[((co * c_in + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        data[(co * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![c_out, oh, ow],
            data,
            vec![self.clone(), kernel.clone()],
            Box::new(move |parents, _out, grad| {
                let (dx, dk) = {
                    let x = parents[0].data_ref();
                    let kd = parents[1].data_ref();
                    let mut dx = vec![0.0; c_in * h * w];
                    let mut dk = vec![0.0; c_out * c_in * k * k];
                    for co in 0..c_out {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad[(co * oh + oy) * ow + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    for ky in 0..k {
                                        let iy = (oy * stride + ky) as i64 - padding as i64;
                                        if iy < 0 || iy >= h as i64 {
                                            continue;
                                        }
                                        for kx in 0..k {
                                            let ix = (ox * stride + kx) as i64 - padding as i64;
                                            if ix < 0 || ix >= w as i64 {
                                                continue;
                                            }
                                            let xi = (ci * h + iy as usize) * w + ix as usize;
                                            let kidx = ((co * c_in + ci) * k + ky) * k + kx;
                                            dx[xi] += g * kd[kidx];
                                            dk[kidx] += g * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    (dx, dk)
                };
                parents[0].accum_grad(&dx);
                parents[1].accum_grad(&dk);
            }),
        ))
    }

    /// `x[c,y,x] + b[c]` for a map layout.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (xs, bs) = (self.shape(), bias.shape());
        if xs.len() != 3 || bs.len() != 1 || bs[0] != xs[0] {
            return Err(mismatch("add_channel_bias", &xs, &bs));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let data: Vec<f64> = {
            let x = self.data_ref();
            let b = bias.data_ref();
            (0..c * hw).map(|i| x[i] + b[i / hw]).collect()
        };
        Ok(Tensor::from_op(
            xs,
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |parents, _out, grad| {
                parents[0].accum_grad(grad);
                let mut db = vec![0.0; c];
                for (i, &g) in grad.iter().enumerate() {
                    db[i / hw] += g;
                }
                parents[1].accum_grad(&db);
            }),
        ))
    }

    /// Per-channel scaling: `x[c,·,·] * gate[c]`.
    pub fn mul_channel_gate(&self, gate: &Tensor) -> Result<Tensor> {
        let (xs, gs) = (self.shape(), gate.shape());
        if xs.len() != 3 || gs.len() != 1 || gs[0] != xs[0] {
            return Err(mismatch("mul_channel_gate", &xs, &gs));
        }
        let hw = xs[1] * xs[2];
        let c = xs[0];
        let data: Vec<f64> = {
            let x = self.data_ref();
            let g = gate.data_ref();
            (0..c * hw).map(|i| x[i] * g[i / hw]).collect()
        };
        Ok(Tensor::from_op(
            xs,
            data,
            vec![self.clone(), gate.clone()],
            Box::new(move |parents, _out, grad| {
                let (dx, dg) = {
                    let x = parents[0].data_ref();
                    let g = parents[1].data_ref();
                    let mut dx = vec![0.0; c * hw];
                    let mut dg = vec![0.0; c];
                    for i in 0..c * hw {
                        dx[i] = grad[i] * g[i / hw];
                        dg[i / hw] += grad[i] * x[i];
                    }
                    (dx, dg)
                };
                parents[0].accum_grad(&dx);
                parents[1].accum_grad(&dg);
            }),
        ))
    }

    /// Per-position scaling: `x[·,y,x] * gate[0,y,x]` with `gate: [1, H, W]`.
    pub fn mul_spatial_gate(&self, gate: &Tensor) -> Result<Tensor> {
        let (xs, gs) = (self.shape(), gate.shape());
        if xs.len() != 3 || gs != [1, xs[1], xs[2]] {
            return Err(mismatch("mul_spatial_gate", &xs, &gs));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let data: Vec<f64> = {
            let x = self.data_ref();
            let g = gate.data_ref();
            (0..c * hw).map(|i| x[i] * g[i % hw]).collect()
        };
        Ok(Tensor::from_op(
            xs,
            data,
            vec![self.clone(), gate.clone()],
            Box::new(move |parents, _out, grad| {
                let (dx, dg) = {
                    let x = parents[0].data_ref();
                    let g = parents[1].data_ref();
                    let mut dx = vec![0.0; c * hw];
                    let mut dg = vec![0.0; hw];
                    for i in 0..c * hw {
                        dx[i] = grad[i] * g[i % hw];
                        dg[i % hw] += grad[i] * x[i];
                    }
                    (dx, dg)
                };
                parents[0].accum_grad(&dx);
                parents[1].accum_grad(&dg);
            }),
        ))
    }

    /// Non-overlapping-or-strided average pooling over `[C, H, W]`.
    pub fn avg_pool2d(&self, k: usize, stride: usize) -> Result<Tensor> {
        self.pool2d(k, stride, false)
    }

    /// Max pooling; the subgradient routes to the first maximum per window.
    pub fn max_pool2d(&self, k: usize, stride: usize) -> Result<Tensor> {
        self.pool2d(k, stride, true)
    }

    fn pool2d(&self, k: usize, stride: usize, maximum: bool) -> Result<Tensor> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(invalid("pool2d", &xs, "rank-3 [C,H,W] required"));
        }
        if k == 0 || stride == 0 || k > xs[1] || k > xs[2] {
            return Err(invalid("pool2d", &xs, format!("window {k} stride {stride}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let mut data = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; if maximum { c * oh * ow } else { 0 }];
        {
            let x = self.data_ref();
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let slot = (ci * oh + oy) * ow + ox;
                        if maximum {
                            let mut best = f64::NEG_INFINITY;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let xi = (ci * h + oy * stride + ky) * w + ox * stride + kx;
                                    if x[xi] > best {
                                        best = x[xi];
                                        argmax[slot] = xi;
                                    }
                                }
                            }
                            data[slot] = best;
                        } else {
                            let mut acc = 0.0;
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc += x[(ci * h + oy * stride + ky) * w + ox * stride + kx];
                                }
                            }
                            data[slot] = acc / (k * k) as f64;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut d = vec![0.0; c * h * w];
                if maximum {
                    for (slot, &xi) in argmax.iter().enumerate() {
                        d[xi] += grad[slot];
                    }
                } else {
                    let inv = 1.0 / (k * k) as f64;
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad[(ci * oh + oy) * ow + ox] * inv;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        d[(ci * h + oy * stride + ky) * w + ox * stride + kx] += g;
                                    }
                                }
                            }
                        }
                    }
                }
                parents[0].accum_grad(&d);
            }),
        ))
    }

    /// Integer-factor nearest-neighbor upsampling of `[C, H, W]`.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let xs = self.shape();
        if xs.len() != 3 || factor == 0 {
            return Err(invalid("upsample_nearest", &xs, "rank-3 and factor ≥ 1"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h * factor, w * factor);
        let mut data = vec![0.0; c * oh * ow];
        {
            let x = self.data_ref();
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        data[(ci * oh + oy) * ow + ox] =
                            x[(ci * h + oy / factor) * w + ox / factor];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut d = vec![0.0; c * h * w];
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            d[(ci * h + oy / factor) * w + ox / factor] +=
                                grad[(ci * oh + oy) * ow + ox];
                        }
                    }
                }
                parents[0].accum_grad(&d);
            }),
        ))
    }

    /// Integer-factor bilinear upsampling, pixel-center sampling with border
    /// clamp.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor> {
        let xs = self.shape();
        if xs.len() != 3 || factor == 0 {
            return Err(invalid("upsample_bilinear", &xs, "rank-3 and factor ≥ 1"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h * factor, w * factor);

        // Per output coordinate: source index pair and interpolation weight.
        let taps = |out: usize, extent: usize| -> (usize, usize, f64) {
            let src = (out as f64 + 0.5) / factor as f64 - 0.5;
            let lo = src.floor();
            let t = src - lo;
            let i0 = (lo.max(0.0) as usize).min(extent - 1);
            let i1 = ((lo + 1.0).max(0.0) as usize).min(extent - 1);
            (i0, i1, t)
        };
        let ytaps: Vec<_> = (0..oh).map(|oy| taps(oy, h)).collect();
        let xtaps: Vec<_> = (0..ow).map(|ox| taps(ox, w)).collect();

        let mut data = vec![0.0; c * oh * ow];
        {
            let x = self.data_ref();
            for ci in 0..c {
                for (oy, &(y0, y1, ty)) in ytaps.iter().enumerate() {
                    for (ox, &(x0, x1, tx)) in xtaps.iter().enumerate() {
                        let v00 = x[(ci * h + y0) * w + x0];
                        let v01 = x[(ci * h + y0) * w + x1];
                        let v10 = x[(ci * h + y1) * w + x0];
                        let v11 = x[(ci * h + y1) * w + x1];
                        let top = v00 + tx * (v01 - v00);
                        let bot = v10 + tx * (v11 - v10);
                        data[(ci * oh + oy) * ow + ox] = top + ty * (bot - top);
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut d = vec![0.0; c * h * w];
                for ci in 0..c {
                    for (oy, &(y0, y1, ty)) in ytaps.iter().enumerate() {
                        for (ox, &(x0, x1, tx)) in xtaps.iter().enumerate() {
                            let g = grad[(ci * oh + oy) * ow + ox];
                            d[(ci * h + y0) * w + x0] += g * (1.0 - ty) * (1.0 - tx);
                            d[(ci * h + y0) * w + x1] += g * (1.0 - ty) * tx;
                            d[(ci * h + y1) * w + x0] += g * ty * (1.0 - tx);
                            d[(ci * h + y1) * w + x1] += g * ty * tx;
                        }
                    }
                }
                parents[0].accum_grad(&d);
            }),
        ))
    }

    // ── Layout helpers ────────────────────────────────────────────────

    /// `[H·W, C]` token layout → `[C, H, W]` map layout.
    pub fn tokens_to_map(&self, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] != h * w {
            return Err(invalid("tokens_to_map", &s, format!("expected [{}x{}, C]", h, w)));
        }
        self.transpose2d()?.reshape(&[s[1], h, w])
    }

    /// `[C, H, W]` map layout → `[H·W, C]` token layout.
    pub fn map_to_tokens(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(invalid("map_to_tokens", &s, "rank-3 required"));
        }
        self.reshape(&[s[0], s[1] * s[2]])?.transpose2d()
    }
}
