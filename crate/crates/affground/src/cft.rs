//! Cross-view feature transfer.
//!
//! Matches each egocentric feature pixel against the mined dictionary
//! bases (softmax over bases), optionally refines dictionary and
//! coefficients by a few alternating multiplicative updates on local
//! copies, reconstructs the activated component, fuses it residually into
//! the egocentric features, and scores how well the fused map preserves
//! the per-pixel maxima of a plain projection of the raw features.

use crate::aim::{conv1x1, nmf_factorize};
use crate::encoder::ConvLayer;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::{no_grad, Tensor};

/// Per-pixel distribution over dictionary bases, stored as `[r, h*w]`.
#[derive(Clone, Debug)]
pub struct MatchMatrix {
    pub h_ego: Tensor,
}

/// Softmax-normalized dense comparison of egocentric pixels against the
/// dictionary: column p of the result is pixel p's distribution over the
/// `r` bases. Differentiable w.r.t. `x_ego`; `w` is treated as data.
pub fn dense_match(x_ego: &Tensor, w: &Tensor) -> Result<MatchMatrix> {
    if x_ego.shape().len() != 2 || w.shape().len() != 2 || x_ego.rows() != w.rows() {
        return Err(Error::Shape(format!(
            "dense_match expects X [c,hw] and W [c,r] with matching c, got {:?} and {:?}",
            x_ego.shape(),
            w.shape()
        )));
    }
    let scores = x_ego.transpose()?.matmul(&w.stop_gradient())?; // [hw, r]
    let probs = scores.softmax_rows(1.0)?;
    Ok(MatchMatrix { h_ego: probs.transpose()? })
}

/// Trainable pieces of the transfer module.
#[derive(Clone, Debug)]
pub struct CftParams {
    /// 1x1 conv reducing `c_feat` to `c`; ReLU enforces non-negativity.
    pub reduce: ConvLayer,
    /// 1x1 conv mapping the reconstruction back to `c_feat`.
    pub residual: ConvLayer,
    /// Project layer: 1x1 conv to `c` channels plus ReLU.
    pub project: ConvLayer,
    /// Alternating refinement iterations (0 disables refinement).
    pub refine_iters: usize,
}

impl CftParams {
    pub fn init(c_feat: usize, c: usize, refine_iters: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0xcf7]);
        CftParams {
            reduce: conv1x1(&mut rng, c_feat, c),
            residual: conv1x1(&mut rng, c, c_feat),
            project: conv1x1(&mut rng, c_feat, c),
            refine_iters,
        }
    }
}

/// Output of [`cft_forward`].
pub struct CftOutput {
    /// Fused egocentric features, same shape as `Z_ego`.
    pub f_tilde: Tensor,
    /// Alignment loss between the channel maxima of the fused map and of
    /// the projected raw features.
    pub l_kt: Tensor,
    /// Reconstruction error `||X_ego - W H_ego||_F` before and after each
    /// refinement iteration (empty when refinement is disabled).
    pub refine_errors: Vec<f64>,
}

/// Frozen refinement output for stop-gradient-respecting replays.
#[derive(Clone)]
pub struct CftFrozen {
    pub m_ego: Option<Tensor>,
}

/// Transfer mined affordance structure onto one egocentric feature map.
///
/// The refinement mutates local copies of `W` and `H_ego` only; the caller
/// keeps ownership of the dictionary it passed in.
pub fn cft_forward(
    z_ego: &Tensor,
    w_batch: &Tensor,
    params: &CftParams,
    frozen: Option<&CftFrozen>,
) -> Result<CftOutput> {
    if z_ego.shape().len() != 3 {
        return Err(Error::Shape(format!("cft_forward expects [c,h,w], got {:?}", z_ego.shape())));
    }
    if let Some(neg) = w_batch.data().iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!("cft_forward dictionary has negative entry {neg}")));
    }
    let (h, w_sp) = (z_ego.shape()[1], z_ego.shape()[2]);
    let hw = h * w_sp;
    let c = w_batch.rows();

    let x_ego = params.reduce.apply(z_ego)?.relu().reshape(&[c, hw])?;
    let matched = dense_match(&x_ego, w_batch)?;

    let mut refine_errors = Vec::new();
    let m_ego = if let Some(f) = frozen {
        match &f.m_ego {
            Some(m) => m.clone(),
            None => w_batch.stop_gradient().matmul(&matched.h_ego)?,
        }
    } else if params.refine_iters > 0 {
        // Alternating updates adapt local copies to this image; the result
        // enters the graph as a constant.
        let nmf = no_grad(|| {
            nmf_factorize(
                &x_ego.stop_gradient(),
                &w_batch.stop_gradient(),
                &matched.h_ego.stop_gradient(),
                params.refine_iters,
            )
        })?;
        refine_errors = nmf.reconstruction_errors;
        no_grad(|| nmf.w.matmul(&nmf.h))?
    } else {
        // No refinement: reconstruct straight from the differentiable match.
        w_batch.stop_gradient().matmul(&matched.h_ego)?
    };

    let m_maps = m_ego.reshape(&[c, h, w_sp])?;
    let f_tilde = params.residual.apply(&m_maps)?.add(z_ego)?.relu();

    let v_tilde = f_tilde.channel_max()?;
    let projected = params.project.apply(z_ego)?.relu();
    let v_bar = projected.channel_max()?;
    let l_kt = v_tilde.l2_loss(&v_bar)?;

    Ok(CftOutput { f_tilde, l_kt, refine_errors })
}
