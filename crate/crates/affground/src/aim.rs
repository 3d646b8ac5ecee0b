//! Affordance invariance mining.
//!
//! Factors the concatenated non-negative exocentric features into a shared
//! dictionary `W` and per-image coefficients `H` by multiplicative updates,
//! reconstructs the invariant component `M = W*H`, and fuses it back into
//! each feature map through a residual convolution. A momentum accumulator
//! carries the dictionary prior across batches.
//!
//! The factorization itself runs outside gradient tracking: gradients
//! reach trainable weights only through the residual path and the
//! convolution applied to the frozen reconstruction.

use rand::Rng;

use crate::encoder::ConvLayer;
use crate::error::{Error, Result};
use crate::rng::{rng_for, uniform_pos, uniform_sym, xavier_limit};
use crate::tensor::{no_grad, Tensor};

/// Guard added to multiplicative-update denominators; the bare ratios
/// divide by zero at sparse iterates.
pub const NMF_DENOM_GUARD: f64 = 1e-12;

/// Shared non-negative dictionary with its momentum accumulator.
#[derive(Clone, Debug)]
pub struct DictionaryState {
    /// Accumulated prior `W0`, shape `[c, r]`, entrywise non-negative.
    pub w0: Tensor,
    /// Momentum in [0, 1].
    pub alpha: f64,
    pub c: usize,
    pub r: usize,
}

impl DictionaryState {
    pub fn init(c: usize, r: usize, alpha: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("dictionary momentum must be in [0,1], got {alpha}")));
        }
        let mut rng = rng_for(seed, &[0xd1c7]);
        let w0 = Tensor::from_vec(&[c, r], (0..c * r).map(|_| uniform_pos(&mut rng)).collect())?;
        Ok(DictionaryState { w0, alpha, c, r })
    }

    /// Momentum update `W0 <- alpha*W0 + (1-alpha)*W_mean`.
    pub fn update_momentum(&mut self, w_mean: &Tensor) -> Result<()> {
        if w_mean.shape() != [self.c, self.r] {
            return Err(Error::Shape(format!(
                "dictionary update expects [{}, {}], got {:?}",
                self.c,
                self.r,
                w_mean.shape()
            )));
        }
        if let Some(neg) = w_mean.data().iter().find(|v| **v < 0.0) {
            return Err(Error::Domain(format!("dictionary update with negative entry {neg}")));
        }
        let a = self.alpha;
        let data = self
            .w0
            .data()
            .iter()
            .zip(w_mean.data())
            .map(|(&w0, &wm)| a * w0 + (1.0 - a) * wm)
            .collect();
        self.w0 = Tensor::from_vec(&[self.c, self.r], data)?;
        Ok(())
    }
}

/// Outcome of a multiplicative-update factorization.
#[derive(Clone, Debug)]
pub struct NmfResult {
    /// Dictionary `[c, r]`, non-negative.
    pub w: Tensor,
    /// Coefficients `[r, m]`, non-negative.
    pub h: Tensor,
    /// Frobenius error before any update, then after each iteration.
    pub reconstruction_errors: Vec<f64>,
}

fn check_nonneg(name: &str, t: &Tensor) -> Result<()> {
    if let Some(neg) = t.data().iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!("{name} has negative entry {neg}")));
    }
    Ok(())
}

fn frob_error(x: &[f64], w: &[f64], h: &[f64], c: usize, r: usize, m: usize) -> f64 {
    let wh = crate::tensor::matmul_raw(w, h, c, r, m);
    x.iter().zip(&wh).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Factorize `X [c,m] >= 0` as `W*H` by alternating multiplicative updates,
/// `H` first then `W` per iteration. Pure data routine; never touches the
/// tape, and the returned tensors are constants.
pub fn nmf_factorize(
    x: &Tensor,
    w_init: &Tensor,
    h_init: &Tensor,
    iters: usize,
) -> Result<NmfResult> {
    if x.shape().len() != 2 || w_init.shape().len() != 2 || h_init.shape().len() != 2 {
        return Err(Error::Shape("nmf_factorize expects rank-2 inputs".into()));
    }
    let (c, m) = (x.rows(), x.cols());
    let r = w_init.cols();
    if w_init.rows() != c || h_init.rows() != r || h_init.cols() != m {
        return Err(Error::Shape(format!(
            "nmf shapes disagree: X {:?}, W {:?}, H {:?}",
            x.shape(),
            w_init.shape(),
            h_init.shape()
        )));
    }
    if iters == 0 {
        return Err(Error::Config("nmf_factorize needs at least one iteration".into()));
    }
    check_nonneg("X", x)?;
    check_nonneg("W_init", w_init)?;
    check_nonneg("H_init", h_init)?;

    let xd = x.data();
    let mut w = w_init.data().to_vec();
    let mut h = h_init.data().to_vec();
    let mut errors = Vec::with_capacity(iters + 1);
    errors.push(frob_error(xd, &w, &h, c, r, m));

    for _ in 0..iters {
        // H <- H .* (W^T X) ./ (W^T W H + delta)
        let wt_x = matmul_tn(&w, xd, c, r, m);
        let wt_w = matmul_tn(&w, &w, c, r, r);
        let wt_w_h = crate::tensor::matmul_raw(&wt_w, &h, r, r, m);
        for i in 0..h.len() {
            h[i] *= wt_x[i] / (wt_w_h[i] + NMF_DENOM_GUARD);
        }
        // W <- W .* (X H^T) ./ (W H H^T + delta)
        let x_ht = matmul_nt(xd, &h, c, m, r);
        let h_ht = matmul_nt(&h, &h, r, m, r);
        let w_h_ht = crate::tensor::matmul_raw(&w, &h_ht, c, r, r);
        for i in 0..w.len() {
            w[i] *= x_ht[i] / (w_h_ht[i] + NMF_DENOM_GUARD);
        }
        errors.push(frob_error(xd, &w, &h, c, r, m));
    }

    Ok(NmfResult {
        w: Tensor::from_vec(&[c, r], w)?,
        h: Tensor::from_vec(&[r, m], h)?,
        reconstruction_errors: errors,
    })
}

/// `a^T b` with a `[k,m]`, b `[k,n]` -> `[m,n]`.
fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for l in 0..k {
        for i in 0..m {
            let av = a[l * m + i];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[l * n + j];
            }
        }
    }
    out
}

/// `a b^T` with a `[m,k]`, b `[n,k]` -> `[m,n]`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[j * k + l];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Trainable pieces of the mining module.
#[derive(Clone, Debug)]
pub struct AimParams {
    /// 1x1 conv reducing `c_feat` to `c`; ReLU keeps the result non-negative.
    pub reduce: ConvLayer,
    /// 1x1 conv mapping the reconstruction back to `c_feat` for the residual sum.
    pub residual: ConvLayer,
    pub nmf_iters: usize,
}

impl AimParams {
    pub fn init(c_feat: usize, c: usize, nmf_iters: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0xa13]);
        AimParams {
            reduce: conv1x1(&mut rng, c_feat, c),
            residual: conv1x1(&mut rng, c, c_feat),
            nmf_iters,
        }
    }
}

pub(crate) fn conv1x1(rng: &mut impl Rng, c_in: usize, c_out: usize) -> ConvLayer {
    let limit = xavier_limit(c_in, c_out);
    let kernel = Tensor::param(
        &[c_out, c_in, 1, 1],
        (0..c_out * c_in).map(|_| uniform_sym(rng, limit)).collect(),
    )
    .unwrap();
    let bias = Tensor::param(&[c_out], vec![0.0; c_out]).unwrap();
    ConvLayer { kernel, bias, stride: 1, padding: 0 }
}

/// Reduce a feature map to a non-negative `[c, h*w]` matrix.
pub fn reduce_nonneg(z: &Tensor, reduce: &ConvLayer) -> Result<Tensor> {
    let x = reduce.apply(z)?.relu();
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.reshape(&[c, h * w])
}

/// Output of [`aim_forward`].
pub struct AimOutput {
    /// Fused features, one per exocentric image, same shape as the inputs.
    pub fused: Vec<Tensor>,
    /// Converged dictionary for this group, `[c, r]`, detached.
    pub w_batch: Tensor,
    /// Converged coefficients, `[r, n*h*w]`, detached.
    pub h_batch: Tensor,
    /// Frobenius errors from the factorization.
    pub reconstruction_errors: Vec<f64>,
}

/// Frozen factorization results, for replaying a forward pass with the
/// stop-gradient region held fixed (finite-difference checks).
#[derive(Clone)]
pub struct AimFrozen {
    pub w_batch: Tensor,
    pub m_parts: Vec<Tensor>,
}

/// Mine invariant features from `N >= 1` same-shape exocentric feature maps.
///
/// Reduces each `Z_i`, concatenates along pixels, factorizes with the
/// dictionary prior as `W` seed, splits the reconstruction back per image,
/// and fuses through `ReLU(Z_i + f(M_i))`.
pub fn aim_forward(
    z_list: &[Tensor],
    dict: &DictionaryState,
    params: &AimParams,
    h_seed: u64,
    frozen: Option<&AimFrozen>,
) -> Result<AimOutput> {
    if z_list.is_empty() {
        return Err(Error::Dataset("aim_forward needs at least one exocentric feature map".into()));
    }
    let shape = z_list[0].shape().to_vec();
    for z in z_list {
        if z.shape() != shape {
            return Err(Error::Shape(format!(
                "aim_forward expects same-shape inputs, got {:?} and {:?}",
                shape,
                z.shape()
            )));
        }
    }
    let n = z_list.len();
    let (h, w) = (shape[1], shape[2]);
    let hw = h * w;
    let c = dict.c;

    let (w_batch, h_batch, m_parts, errors) = match frozen {
        Some(f) => (f.w_batch.clone(), None, f.m_parts.clone(), Vec::new()),
        None => {
            // Reduction feeds only the factorization, which runs detached.
            let xs: Vec<Tensor> = z_list
                .iter()
                .map(|z| Ok(reduce_nonneg(z, &params.reduce)?.stop_gradient()))
                .collect::<Result<_>>()?;
            let mut x_data = Vec::with_capacity(c * n * hw);
            for row in 0..c {
                for x in &xs {
                    x_data.extend_from_slice(&x.data()[row * hw..(row + 1) * hw]);
                }
            }
            let x = Tensor::from_vec(&[c, n * hw], x_data)?;

            let mut rng = rng_for(h_seed, &[0x41f]);
            let h_init = Tensor::from_vec(
                &[dict.r, n * hw],
                (0..dict.r * n * hw).map(|_| uniform_pos(&mut rng)).collect(),
            )?;
            let nmf = no_grad(|| nmf_factorize(&x, &dict.w0, &h_init, params.nmf_iters))?;

            let m = no_grad(|| nmf.w.matmul(&nmf.h))?;
            // Undo the concatenation: image i owns columns [i*hw, (i+1)*hw).
            let mut parts = Vec::with_capacity(n);
            for i in 0..n {
                let mut part = Vec::with_capacity(c * hw);
                for row in 0..c {
                    let base = row * n * hw + i * hw;
                    part.extend_from_slice(&m.data()[base..base + hw]);
                }
                parts.push(Tensor::from_vec(&[c, h, w], part)?);
            }
            (nmf.w, Some(nmf.h), parts, nmf.reconstruction_errors)
        }
    };

    let fused = z_list
        .iter()
        .zip(&m_parts)
        .map(|(z, m)| Ok(params.residual.apply(m)?.add(z)?.relu()))
        .collect::<Result<Vec<_>>>()?;

    let h_batch = match h_batch {
        Some(hb) => hb,
        None => Tensor::zeros(&[dict.r, n * hw]),
    };
    Ok(AimOutput { fused, w_batch, h_batch, reconstruction_errors: errors })
}
