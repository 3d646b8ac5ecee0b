//! Differentiable tensor operations.
//!
//! Each op validates shapes, computes the forward value, and (when any
//! input tracks gradients) records a backward closure on the thread tape.
//! All math is f64; reductions run in fixed order so repeated runs are
//! bit-identical.

use super::tape::{record, should_record};
use super::Tensor;
use crate::error::{Error, Result};

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl Tensor {
    /// Matrix product of rank-2 tensors: `[m×k] × [k×n] -> [m×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 2 || other.shape().len() != 2 {
            return Err(shape_err(format!(
                "matmul expects rank-2 tensors, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(shape_err(format!(
                "matmul inner dimensions disagree: {m}x{k} times {k2}x{n}"
            )));
        }
        let out = matmul_raw(self.data(), other.data(), m, k, n);
        let rg = should_record(&[self, other]);
        let y = Tensor::op_output(vec![m, n], out, rg);
        if rg {
            record(
                vec![self.clone(), other.clone()],
                y.clone(),
                Box::new(move |gout, inputs, wants| {
                    let (a, b) = (&inputs[0], &inputs[1]);
                    let ga = wants[0].then(|| matmul_nt(gout, b.data(), m, n, k));
                    let gb = wants[1].then(|| matmul_tn(a.data(), gout, m, k, n));
                    vec![ga, gb]
                }),
            );
        }
        Ok(y)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(shape_err(format!(
                "transpose expects a rank-2 tensor, got {:?}",
                self.shape()
            )));
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let out = transpose_raw(self.data(), m, n);
        let rg = should_record(&[self]);
        let y = Tensor::op_output(vec![n, m], out, rg);
        if rg {
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, _inputs, _wants| vec![Some(transpose_raw(gout, n, m))]),
            );
        }
        Ok(y)
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `x: [c_in×h×w]`, `kernel: [c_out×c_in×k×k]`, square odd kernel.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let xs = self.shape();
        let ks = kernel.shape();
        if xs.len() != 3 || ks.len() != 4 {
            return Err(shape_err(format!(
                "conv2d expects x[c,h,w] and kernel[co,ci,k,k], got {xs:?} and {ks:?}"
            )));
        }
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let (co, kci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kci != ci {
            return Err(shape_err(format!(
                "conv2d channel mismatch: input has {ci}, kernel expects {kci}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err(format!("conv2d kernel must be square and odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(shape_err("conv2d stride must be positive".into()));
        }
        let oh = (h + 2 * padding).checked_sub(kh).map(|d| d / stride + 1);
        let ow = (w + 2 * padding).checked_sub(kw).map(|d| d / stride + 1);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(shape_err(format!(
                    "conv2d output dims non-positive for input {h}x{w}, kernel {kh}, stride {stride}, padding {padding}"
                )))
            }
        };

        let out = conv2d_raw(self.data(), kernel.data(), ci, h, w, co, kh, stride, padding, oh, ow);
        let rg = should_record(&[self, kernel]);
        let y = Tensor::op_output(vec![co, oh, ow], out, rg);
        if rg {
            record(
                vec![self.clone(), kernel.clone()],
                y.clone(),
                Box::new(move |gout, inputs, wants| {
                    let (x, k) = (&inputs[0], &inputs[1]);
                    let mut gx = wants[0].then(|| vec![0.0; x.numel()]);
                    let mut gk = wants[1].then(|| vec![0.0; k.numel()]);
                    conv2d_backward_raw(
                        gout,
                        x.data(),
                        k.data(),
                        ci,
                        h,
                        w,
                        co,
                        kh,
                        stride,
                        padding,
                        oh,
                        ow,
                        gx.as_deref_mut(),
                        gk.as_deref_mut(),
                    );
                    vec![gx, gk]
                }),
            );
        }
        Ok(y)
    }

    /// Add a per-channel bias to a `[c×h×w]` map.
    pub fn add_bias_chw(&self, bias: &Tensor) -> Result<Tensor> {
        let xs = self.shape();
        if xs.len() != 3 || bias.shape() != [xs[0]] {
            return Err(shape_err(format!(
                "add_bias_chw expects x[c,h,w] and bias[c], got {:?} and {:?}",
                xs,
                bias.shape()
            )));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let mut out = self.data().to_vec();
        for ch in 0..c {
            let b = bias.data()[ch];
            for v in &mut out[ch * hw..(ch + 1) * hw] {
                *v += b;
            }
        }
        let rg = should_record(&[self, bias]);
        let y = Tensor::op_output(xs.to_vec(), out, rg);
        if rg {
            record(
                vec![self.clone(), bias.clone()],
                y.clone(),
                Box::new(move |gout, _inputs, wants| {
                    let gx = wants[0].then(|| gout.to_vec());
                    let gb = wants[1].then(|| {
                        (0..c).map(|ch| gout[ch * hw..(ch + 1) * hw].iter().sum()).collect()
                    });
                    vec![gx, gb]
                }),
            );
        }
        Ok(y)
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_elementwise(other, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_elementwise(other, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_elementwise(other, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    fn zip_elementwise(
        &self,
        other: &Tensor,
        name: &str,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!(
                "{name} expects identical shapes, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let out: Vec<f64> = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        let rg = should_record(&[self, other]);
        let y = Tensor::op_output(self.shape().to_vec(), out, rg);
        if rg {
            record(
                vec![self.clone(), other.clone()],
                y.clone(),
                Box::new(move |gout, inputs, wants| {
                    let (a, b) = (&inputs[0], &inputs[1]);
                    let mut ga = wants[0].then(|| vec![0.0; gout.len()]);
                    let mut gb = wants[1].then(|| vec![0.0; gout.len()]);
                    for i in 0..gout.len() {
                        let (da, db) = df(gout[i], a.data()[i], b.data()[i]);
                        if let Some(v) = ga.as_mut() {
                            v[i] = da;
                        }
                        if let Some(v) = gb.as_mut() {
                            v[i] = db;
                        }
                    }
                    vec![ga, gb]
                }),
            );
        }
        Ok(y)
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        self.map_elementwise(move |v| c * v, move |g, _, _| g * c)
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map_elementwise(move |v| v + c, |g, _, _| g)
    }

    /// Natural log, elementwise. Caller guards the domain.
    pub fn ln(&self) -> Tensor {
        self.map_elementwise(|v| v.ln(), |g, x, _| g / x)
    }

    /// Elementwise max(0, x). Subgradient 0 at the kink.
    pub fn relu(&self) -> Tensor {
        self.map_elementwise(|v| v.max(0.0), |g, x, _| if x > 0.0 { g } else { 0.0 })
    }

    fn map_elementwise(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&v| f(v)).collect();
        let rg = should_record(&[self]);
        let y = Tensor::op_output(self.shape().to_vec(), out, rg);
        if rg {
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, inputs, _wants| {
                    let x = &inputs[0];
                    let g = gout
                        .iter()
                        .enumerate()
                        .map(|(i, &go)| df(go, x.data()[i], 0.0))
                        .collect();
                    vec![Some(g)]
                }),
            );
        }
        y
    }

    /// Row-wise softmax of a rank-2 tensor at temperature `t`.
    ///
    /// Row maxima are subtracted before exponentiation; the output is
    /// exactly invariant to adding a constant to a row of logits.
    pub fn softmax_rows(&self, t: f64) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(shape_err(format!(
                "softmax_rows expects a rank-2 tensor, got {:?}",
                self.shape()
            )));
        }
        if t <= 0.0 {
            return Err(Error::Config(format!("softmax temperature must be positive, got {t}")));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.data()[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (i, &v) in row.iter().enumerate() {
                let e = ((v - m) / t).exp();
                out[r * cols + i] = e;
                sum += e;
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v /= sum;
            }
        }
        let rg = should_record(&[self]);
        let y = Tensor::op_output(vec![rows, cols], out, rg);
        if rg {
            let probs = y.data_arc();
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, _inputs, _wants| {
                    // dL/dx_j = (p_j / t) * (g_j - sum_k g_k p_k), per row
                    let mut gx = vec![0.0; gout.len()];
                    for r in 0..rows {
                        let p = &probs[r * cols..(r + 1) * cols];
                        let g = &gout[r * cols..(r + 1) * cols];
                        let dot: f64 = g.iter().zip(p).map(|(&gi, &pi)| gi * pi).sum();
                        for j in 0..cols {
                            gx[r * cols + j] = p[j] * (g[j] - dot) / t;
                        }
                    }
                    vec![Some(gx)]
                }),
            );
        }
        Ok(y)
    }

    /// Global average pooling: `[c×h×w] -> [c]`.
    pub fn gap(&self) -> Result<Tensor> {
        if self.shape().len() != 3 {
            return Err(shape_err(format!("gap expects [c,h,w], got {:?}", self.shape())));
        }
        let (c, hw) = (self.shape()[0], self.shape()[1] * self.shape()[2]);
        let out: Vec<f64> =
            (0..c).map(|ch| self.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        let rg = should_record(&[self]);
        let y = Tensor::op_output(vec![c], out, rg);
        if rg {
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, _inputs, _wants| {
                    let mut gx = vec![0.0; c * hw];
                    for ch in 0..c {
                        let g = gout[ch] / hw as f64;
                        for v in &mut gx[ch * hw..(ch + 1) * hw] {
                            *v = g;
                        }
                    }
                    vec![Some(gx)]
                }),
            );
        }
        Ok(y)
    }

    /// Per-pixel maximum over channels: `[c×h×w] -> [h×w]`.
    ///
    /// Backward routes the gradient only to the argmax channel; ties go to
    /// the lowest channel index, keeping the pass deterministic.
    pub fn channel_max(&self) -> Result<Tensor> {
        if self.shape().len() != 3 {
            return Err(shape_err(format!("channel_max expects [c,h,w], got {:?}", self.shape())));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let hw = h * w;
        let mut out = vec![f64::NEG_INFINITY; hw];
        let mut argmax = vec![0usize; hw];
        for ch in 0..c {
            for p in 0..hw {
                let v = self.data()[ch * hw + p];
                if v > out[p] {
                    out[p] = v;
                    argmax[p] = ch;
                }
            }
        }
        let rg = should_record(&[self]);
        let y = Tensor::op_output(vec![h, w], out, rg);
        if rg {
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, _inputs, _wants| {
                    let mut gx = vec![0.0; c * hw];
                    for p in 0..hw {
                        gx[argmax[p] * hw + p] = gout[p];
                    }
                    vec![Some(gx)]
                }),
            );
        }
        Ok(y)
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let rg = should_record(&[self]);
        let y = Tensor::op_output(vec![], vec![total], rg);
        if rg {
            let n = self.numel();
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, _inputs, _wants| vec![Some(vec![gout[0]; n])]),
            );
        }
        y
    }

    /// Euclidean distance `||a - b||_2` as a scalar.
    ///
    /// At coincident operands the norm has no derivative; the subgradient 0
    /// is used so optimization at the exact minimum stays finite.
    pub fn l2_loss(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!(
                "l2_loss expects identical shapes, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let sq: f64 = self.data().iter().zip(other.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let norm = sq.sqrt();
        let rg = should_record(&[self, other]);
        let y = Tensor::op_output(vec![], vec![norm], rg);
        if rg {
            record(
                vec![self.clone(), other.clone()],
                y.clone(),
                Box::new(move |gout, inputs, wants| {
                    let (a, b) = (&inputs[0], &inputs[1]);
                    if norm == 0.0 {
                        let zero = vec![0.0; a.numel()];
                        return vec![
                            wants[0].then(|| zero.clone()),
                            wants[1].then(|| zero)
                        ];
                    }
                    let s = gout[0] / norm;
                    let ga = wants[0].then(|| {
                        a.data().iter().zip(b.data()).map(|(&x, &yv)| s * (x - yv)).collect()
                    });
                    let gb = wants[1].then(|| {
                        a.data().iter().zip(b.data()).map(|(&x, &yv)| s * (yv - x)).collect()
                    });
                    vec![ga, gb]
                }),
            );
        }
        Ok(y)
    }

    /// Softmax cross-entropy of a logit vector against an integer label.
    pub fn cross_entropy(&self, label: usize) -> Result<Tensor> {
        if self.shape().len() != 1 {
            return Err(shape_err(format!(
                "cross_entropy expects a rank-1 logit vector, got {:?}",
                self.shape()
            )));
        }
        let n = self.shape()[0];
        if label >= n {
            return Err(Error::Label(format!("label {label} out of range for {n} classes")));
        }
        let logits = self.data();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - logits[label];
        let rg = should_record(&[self]);
        let y = Tensor::op_output(vec![], vec![loss], rg);
        if rg {
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, inputs, _wants| {
                    let logits = inputs[0].data();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
                    let g = logits
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let p = (v - m).exp() / sum;
                            gout[0] * (p - if i == label { 1.0 } else { 0.0 })
                        })
                        .collect();
                    vec![Some(g)]
                }),
            );
        }
        Ok(y)
    }

    /// View with a new shape over the same elements.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(shape_err(format!(
                "reshape from {:?} to {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let rg = should_record(&[self]);
        let y = Tensor::op_output(shape.to_vec(), self.data().to_vec(), rg);
        if rg {
            record(
                vec![self.clone()],
                y.clone(),
                Box::new(move |gout, _inputs, _wants| vec![Some(gout.to_vec())]),
            );
        }
        Ok(y)
    }

    /// Arithmetic mean of same-shape tensors.
    pub fn mean_of(tensors: &[Tensor]) -> Result<Tensor> {
        if tensors.is_empty() {
            return Err(shape_err("mean_of requires at least one tensor".into()));
        }
        let mut acc = tensors[0].clone();
        for t in &tensors[1..] {
            acc = acc.add(t)?;
        }
        Ok(acc.scale(1.0 / tensors.len() as f64))
    }
}

// Raw row-major matrix helpers shared by the forward and backward passes.

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a [m×n] × b^T` where b is `[k×n]`: result `[m×k]`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            let mut s = 0.0;
            for l in 0..n {
                s += a[i * n + l] * b[j * n + l];
            }
            out[i * k + j] = s;
        }
    }
    out
}

/// `a^T × b` where a is `[m×k]`, b is `[m×n]`: result `[k×n]`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for l in 0..m {
        for i in 0..k {
            let av = a[l * k + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_raw(
    x: &[f64],
    k: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..ci {
                    for ky in 0..ksize {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &x[c * h * w + iy as usize * w..c * h * w + (iy as usize + 1) * w];
                        let krow = &k[((o * ci + c) * ksize + ky) * ksize..((o * ci + c) * ksize + ky + 1) * ksize];
                        for kx in 0..ksize {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += xrow[ix as usize] * krow[kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_raw(
    gout: &[f64],
    x: &[f64],
    k: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    mut gx: Option<&mut [f64]>,
    mut gk: Option<&mut [f64]>,
) {
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gout[(o * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for c in 0..ci {
                    for ky in 0..ksize {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..ksize {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = c * h * w + iy as usize * w + ix as usize;
                            let kidx = ((o * ci + c) * ksize + ky) * ksize + kx;
                            if let Some(gk) = gk.as_deref_mut() {
                                gk[kidx] += g * x[xi];
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                gx[xi] += g * k[kidx];
                            }
                        }
                    }
                }
            }
        }
    }
}
