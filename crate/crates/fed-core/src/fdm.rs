//! Feature diffusion: multi-head cross attention from a pedestrian feature
//! to K memory centers of other identities, an occlusion-score-gated
//! residual, and two post-norm feed-forward stages.
//!
//! The module only participates in training; the inference embedding never
//! touches it.

use crate::encoder::{LN_EPS, PARTS};
use crate::error::{FedError, Result};
use crate::graph::{Graph, Var};
use crate::memory::MemoryBank;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FdmConfig {
    pub heads: usize,
    pub k: usize,
}

impl Default for FdmConfig {
    fn default() -> Self {
        FdmConfig { heads: 8, k: 8 }
    }
}

struct Ffn {
    ln_g: ParamId,
    ln_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Ffn {
    fn init(prefix: &str, dim: usize, params: &mut ParamSet, rng: &mut Rng) -> Result<Ffn> {
        let hidden = 2 * dim;
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(Ffn {
            ln_g: params.add(&p("ln.gain"), Tensor::new(vec![1, dim], vec![1.0; dim])?)?,
            ln_b: params.add(&p("ln.bias"), Tensor::zeros(vec![1, dim]))?,
            w1: params.add(&p("w1"), Tensor::uniform_fan_in(vec![dim, hidden], dim, rng))?,
            b1: params.add(&p("b1"), Tensor::zeros(vec![1, hidden]))?,
            w2: params.add(&p("w2"), Tensor::uniform_fan_in(vec![hidden, dim], hidden, rng))?,
            b2: params.add(&p("b2"), Tensor::zeros(vec![1, dim]))?,
        })
    }

    /// Post-norm arrangement: the (residual-inclusive) input is normalized,
    /// then passed through the two-layer network.
    fn apply(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let ln_g = g.param(params, self.ln_g);
        let ln_b = g.param(params, self.ln_b);
        let h = g.layer_norm(x, ln_g, ln_b, LN_EPS)?;
        let (w1, b1) = (g.param(params, self.w1), g.param(params, self.b1));
        let (w2, b2) = (g.param(params, self.w2), g.param(params, self.b2));
        let h = g.matmul(h, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let h = g.matmul(h, w2)?;
        g.add_row(h, b2)
    }
}

pub struct Fdm {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    ffn1: Ffn,
    ffn2: Ffn,
    /// Flattened feature dimension d = 4 * c; projections are square (d' = d).
    pub dim: usize,
}

/// Cross-attention output plus the per-head weight rows for inspection.
pub struct CrossAttention {
    pub out: Var,
    pub head_weights: Vec<Var>,
}

/// Intermediate values of a diffusion pass, for tests that pin the gate
/// endpoint identities.
pub struct FdmTrace {
    pub out: Var,
    pub diffused: Var,
    pub pre_ffn2: Var,
}

/// Multi-head cross attention with explicit projection vars.
///
/// Per head h: logits_i = Q_h . K_{i,h} / sqrt(d_k), weights = softmax over
/// the K centers, head output = sum_i weights_i V_{i,h}; heads concatenate
/// in head order.
pub fn cross_attention_with(
    g: &mut Graph,
    f: Var,
    centers: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    heads: usize,
) -> Result<CrossAttention> {
    let (rows, d) = g.shape(f);
    let (k_count, cd) = g.shape(centers);
    if rows != 1 || cd != d {
        return Err(FedError::Dim { op: "cross_attention", lhs: vec![rows, d], rhs: vec![k_count, cd] });
    }
    if k_count == 0 {
        return Err(FedError::Contract("cross_attention: need at least one center".into()));
    }
    let (_, dq) = g.shape(w_q);
    if dq % heads != 0 {
        return Err(FedError::Config(format!(
            "cross_attention: projection dim {dq} not divisible by {heads} heads"
        )));
    }
    let dk = dq / heads;
    let scale = 1.0 / (dk as f32).sqrt();
    let q = g.matmul(f, w_q)?;
    let keys = g.matmul(centers, w_k)?;
    let values = g.matmul(centers, w_v)?;
    let mut outs = Vec::with_capacity(heads);
    let mut head_weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, (h + 1) * dk)?;
        let kh = g.slice_cols(keys, h * dk, (h + 1) * dk)?;
        let vh = g.slice_cols(values, h * dk, (h + 1) * dk)?;
        let logits = g.matmul_nt(qh, kh)?;
        let logits = g.scale(logits, scale);
        let weights = g.softmax_rows(logits)?;
        head_weights.push(weights);
        outs.push(g.matmul(weights, vh)?);
    }
    Ok(CrossAttention { out: g.concat_cols(&outs)?, head_weights })
}

impl Fdm {
    pub fn init(dim: usize, params: &mut ParamSet, rng: &mut Rng) -> Result<Fdm> {
        if dim % PARTS != 0 {
            return Err(FedError::Config(format!("fdm: dim {dim} not divisible by {PARTS}")));
        }
        Ok(Fdm {
            w_q: params.add("fdm.wq", Tensor::uniform_fan_in(vec![dim, dim], dim, rng))?,
            w_k: params.add("fdm.wk", Tensor::uniform_fan_in(vec![dim, dim], dim, rng))?,
            w_v: params.add("fdm.wv", Tensor::uniform_fan_in(vec![dim, dim], dim, rng))?,
            ffn1: Ffn::init("fdm.ffn1", dim, params, rng)?,
            ffn2: Ffn::init("fdm.ffn2", dim, params, rng)?,
            dim,
        })
    }

    pub fn cross_attention(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        f: Var,
        centers: Var,
        heads: usize,
    ) -> Result<CrossAttention> {
        let w_q = g.param(params, self.w_q);
        let w_k = g.param(params, self.w_k);
        let w_v = g.param(params, self.w_v);
        cross_attention_with(g, f, centers, w_q, w_k, w_v, heads)
    }

    pub fn apply_ffn1(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        self.ffn1.apply(g, params, x)
    }

    pub fn apply_ffn2(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        self.ffn2.apply(g, params, x)
    }

    /// Full diffusion pass: search the bank for the K nearest other-identity
    /// centers of `f`'s current value, cross-attend, transform, gate each
    /// part's channels by its occlusion score, add `f` back, transform again.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        f: Var,
        scores: Var,
        bank: &MemoryBank,
        id: usize,
        cfg: FdmConfig,
    ) -> Result<Var> {
        Ok(self.forward_traced(g, params, f, scores, bank, id, cfg)?.out)
    }

    pub fn forward_traced(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        f: Var,
        scores: Var,
        bank: &MemoryBank,
        id: usize,
        cfg: FdmConfig,
    ) -> Result<FdmTrace> {
        let (sr, sc) = g.shape(scores);
        if (sr, sc) != (PARTS, 1) {
            return Err(FedError::Dim { op: "fdm_forward", lhs: vec![sr, sc], rhs: vec![PARTS, 1] });
        }
        let nearest = bank.search(g.value(f), id, cfg.k)?;
        let mut center_rows = Vec::with_capacity(cfg.k * bank.dim);
        for &cid in &nearest {
            center_rows.extend_from_slice(bank.center(cid));
        }
        let centers = g.leaf(cfg.k, bank.dim, center_rows)?;
        let attn = self.cross_attention(g, params, f, centers, cfg.heads)?;
        let diffused = attn.out;
        let transformed = self.ffn1.apply(g, params, diffused)?;
        // gate: part i's score multiplies channels [i*c, (i+1)*c)
        let c = self.dim / PARTS;
        let by_part = g.reshape(transformed, PARTS, c)?;
        let gated = g.mul_rows(by_part, scores)?;
        let gated = g.reshape(gated, 1, self.dim)?;
        let pre_ffn2 = g.add(gated, f)?;
        let out = self.ffn2.apply(g, params, pre_ffn2)?;
        Ok(FdmTrace { out, diffused, pre_ffn2 })
    }
}
