//! Occlusion erasing: per-part score regression and feature re-weighting.
//!
//! Each of the 4 part features runs through an independent submodule
//! (compress to c/4, layer norm, regress to a scalar, sigmoid) and is scaled
//! by its score. Mask supervision is a plain mean squared error.

use crate::encoder::{LN_EPS, PARTS};
use crate::error::{FedError, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamSet, Tensor};

struct OemSubmodule {
    w_cp: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    w_rg: ParamId,
}

pub struct Oem {
    subs: Vec<OemSubmodule>,
    pub channels: usize,
}

pub struct OemOutput {
    /// Re-weighted part features, `[4 x c]`.
    pub weighted: Var,
    /// Occlusion scores in (0,1), `[4 x 1]`, top to bottom.
    pub scores: Var,
}

impl Oem {
    pub fn init(channels: usize, params: &mut ParamSet, rng: &mut Rng) -> Result<Oem> {
        if channels % PARTS != 0 {
            return Err(FedError::Config(format!(
                "oem: channels {channels} not divisible by {PARTS}"
            )));
        }
        let cq = channels / 4;
        let mut subs = Vec::with_capacity(PARTS);
        for i in 0..PARTS {
            let p = |s: &str| format!("oem.part{i}.{s}");
            subs.push(OemSubmodule {
                w_cp: params.add(&p("w_cp"), Tensor::uniform_fan_in(vec![cq, channels], channels, rng))?,
                ln_g: params.add(&p("ln.gain"), Tensor::new(vec![1, cq], vec![1.0; cq])?)?,
                ln_b: params.add(&p("ln.bias"), Tensor::zeros(vec![1, cq]))?,
                w_rg: params.add(&p("w_rg"), Tensor::uniform_fan_in(vec![1, cq], cq, rng))?,
            });
        }
        Ok(Oem { subs, channels })
    }

    /// `parts` is `[4 x c]`. Per part i: s_i = sigmoid(W_rg LN(W_cp f_i)),
    /// f'_i = s_i * f_i.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, parts: Var) -> Result<OemOutput> {
        let (rows, c) = g.shape(parts);
        if rows != PARTS || c != self.channels {
            return Err(FedError::Dim {
                op: "oem_forward",
                lhs: vec![rows, c],
                rhs: vec![PARTS, self.channels],
            });
        }
        let mut weighted = Vec::with_capacity(PARTS);
        let mut scores = Vec::with_capacity(PARTS);
        for (i, sub) in self.subs.iter().enumerate() {
            let f_i = g.slice_rows(parts, i, i + 1)?;
            let w_cp = g.param(params, sub.w_cp);
            let z = g.matmul_nt(f_i, w_cp)?;
            let ln_g = g.param(params, sub.ln_g);
            let ln_b = g.param(params, sub.ln_b);
            let z = g.layer_norm(z, ln_g, ln_b, LN_EPS)?;
            let w_rg = g.param(params, sub.w_rg);
            let logit = g.matmul_nt(z, w_rg)?;
            let s = g.sigmoid(logit);
            scores.push(s);
            weighted.push(g.mul_rows(f_i, s)?);
        }
        Ok(OemOutput {
            weighted: g.concat_rows(&weighted)?,
            scores: g.concat_rows(&scores)?,
        })
    }
}

/// Mean squared error between the 4 scores and a 4-entry target,
/// `(1/4) * sum_i (s_i - t_i)^2`.
pub fn mse_loss(g: &mut Graph, scores: Var, target: [f32; 4]) -> Result<Var> {
    let (r, c) = g.shape(scores);
    if (r, c) != (PARTS, 1) {
        return Err(FedError::Dim { op: "mse_loss", lhs: vec![r, c], rhs: vec![PARTS, 1] });
    }
    let t = g.leaf_col(&target)?;
    let diff = g.sub(scores, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}
