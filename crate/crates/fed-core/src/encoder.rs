//! Shared ViT-style feature extractor.
//!
//! Images are cut into non-overlapping patches, linearly embedded, prepended
//! with a learned cls token plus position embeddings, and run through
//! pre-norm transformer blocks. Grid tokens are mean-pooled into 4 horizontal
//! band features aligned with the occlusion-mask stripes.

use crate::error::{FedError, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamSet, Tensor};

pub const LN_EPS: f32 = 1e-5;
pub const PARTS: usize = 4;
pub const FINAL_GAIN_INIT: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub patch: usize,
    pub depth: usize,
    pub channels: usize,
    pub heads: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: 64x32 images, patch 8, 4 blocks, 64 channels.
    pub fn desk() -> Self {
        EncoderConfig { image_h: 64, image_w: 32, patch: 8, depth: 4, channels: 64, heads: 4 }
    }

    /// Paper-scale preset: 256x128 images, patch 16, 768 channels (n = 128).
    pub fn paper() -> Self {
        EncoderConfig {
            image_h: 256,
            image_w: 128,
            patch: 16,
            depth: 12,
            channels: 768,
            heads: 12,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch, self.image_w / self.patch)
    }

    /// Number of grid tokens n.
    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return Err(FedError::Config(format!(
                "image {}x{} not divisible by patch {}",
                self.image_h, self.image_w, self.patch
            )));
        }
        if self.channels % self.heads != 0 {
            return Err(FedError::Config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if (self.image_h / self.patch) % PARTS != 0 {
            return Err(FedError::Config(format!(
                "patch-grid height {} not divisible by {PARTS} part bands",
                self.image_h / self.patch
            )));
        }
        if self.channels % PARTS != 0 {
            return Err(FedError::Config(format!(
                "channels {} not divisible by {PARTS}",
                self.channels
            )));
        }
        if self.depth == 0 {
            return Err(FedError::Config("encoder depth must be >= 1".into()));
        }
        Ok(())
    }
}

struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    patch_w: ParamId,
    patch_b: ParamId,
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    ln_f_g: ParamId,
    ln_f_b: ParamId,
}

fn ones(n: usize) -> Tensor {
    Tensor::new(vec![1, n], vec![1.0; n]).unwrap()
}

fn zeros_row(n: usize) -> Tensor {
    Tensor::zeros(vec![1, n])
}

impl Encoder {
    pub fn init(cfg: EncoderConfig, params: &mut ParamSet, rng: &mut Rng) -> Result<Encoder> {
        cfg.validate()?;
        let c = cfg.channels;
        let pdim = 3 * cfg.patch * cfg.patch;
        let n = cfg.tokens();
        let patch_w = params.add(
            "encoder.patch.w",
            Tensor::uniform_fan_in(vec![pdim, c], pdim, rng),
        )?;
        let patch_b = params.add("encoder.patch.b", zeros_row(c))?;
        let cls = params.add("encoder.cls", Tensor::uniform_fan_in(vec![1, c], c, rng))?;
        let pos = params.add(
            "encoder.pos",
            Tensor::uniform_fan_in(vec![n + 1, c], c, rng),
        )?;
        let hidden = 4 * c;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let p = |s: &str| format!("encoder.block{i}.{s}");
            blocks.push(Block {
                ln1_g: params.add(&p("ln1.gain"), ones(c))?,
                ln1_b: params.add(&p("ln1.bias"), zeros_row(c))?,
                wq: params.add(&p("attn.wq"), Tensor::uniform_fan_in(vec![c, c], c, rng))?,
                bq: params.add(&p("attn.bq"), zeros_row(c))?,
                wk: params.add(&p("attn.wk"), Tensor::uniform_fan_in(vec![c, c], c, rng))?,
                bk: params.add(&p("attn.bk"), zeros_row(c))?,
                wv: params.add(&p("attn.wv"), Tensor::uniform_fan_in(vec![c, c], c, rng))?,
                bv: params.add(&p("attn.bv"), zeros_row(c))?,
                wo: params.add(&p("attn.wo"), Tensor::uniform_fan_in(vec![c, c], c, rng))?,
                bo: params.add(&p("attn.bo"), zeros_row(c))?,
                ln2_g: params.add(&p("ln2.gain"), ones(c))?,
                ln2_b: params.add(&p("ln2.bias"), zeros_row(c))?,
                w1: params.add(&p("ffn.w1"), Tensor::uniform_fan_in(vec![c, hidden], c, rng))?,
                b1: params.add(&p("ffn.b1"), zeros_row(hidden))?,
                w2: params.add(
                    &p("ffn.w2"),
                    Tensor::uniform_fan_in(vec![hidden, c], hidden, rng),
                )?,
                b2: params.add(&p("ffn.b2"), zeros_row(c))?,
            });
        }
        // small final gain keeps feature norms (and the low-temperature
        // contrastive logits downstream) in a trainable range at init
        let ln_f_g = params.add(
            "encoder.ln_f.gain",
            Tensor::new(vec![1, c], vec![FINAL_GAIN_INIT; c])?,
        )?;
        let ln_f_b = params.add("encoder.ln_f.bias", zeros_row(c))?;
        Ok(Encoder { cfg, patch_w, patch_b, cls, pos, blocks, ln_f_g, ln_f_b })
    }

    /// Flattens the image into a constant `[n x 3*p*p]` patch matrix,
    /// row-major over the patch grid, (channel, dy, dx) within a patch.
    fn patch_matrix(&self, image: &Image) -> Vec<f32> {
        let p = self.cfg.patch;
        let (gh, gw) = self.cfg.grid();
        let mut out = Vec::with_capacity(gh * gw * 3 * p * p);
        for gy in 0..gh {
            for gx in 0..gw {
                for c in 0..3 {
                    for dy in 0..p {
                        for dx in 0..p {
                            out.push(image.get(c, gy * p + dy, gx * p + dx));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn encode(&self, g: &mut Graph, params: &ParamSet, image: &Image) -> Result<Var> {
        Ok(self.encode_with_attention(g, params, image)?.0)
    }

    /// As `encode`, additionally returning the per-block per-head attention
    /// weight matrices for inspection.
    pub fn encode_with_attention(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        image: &Image,
    ) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.cfg;
        if image.h != cfg.image_h || image.w != cfg.image_w {
            return Err(FedError::Config(format!(
                "encode: image {}x{} does not match configured {}x{}",
                image.h, image.w, cfg.image_h, cfg.image_w
            )));
        }
        let c = cfg.channels;
        let n = cfg.tokens();
        let pdim = 3 * cfg.patch * cfg.patch;
        let heads = cfg.heads;
        let dk = c / heads;
        let scale = 1.0 / (dk as f32).sqrt();

        let patches = g.leaf(n, pdim, self.patch_matrix(image))?;
        let w = g.param(params, self.patch_w);
        let b = g.param(params, self.patch_b);
        let embedded = g.matmul(patches, w)?;
        let embedded = g.add_row(embedded, b)?;

        let cls = g.param(params, self.cls);
        let mut x = g.concat_rows(&[cls, embedded])?;
        let pos = g.param(params, self.pos);
        x = g.add(x, pos)?;

        let mut attn_vars = Vec::new();
        for blk in &self.blocks {
            // attention sublayer, pre-norm
            let ln1_g = g.param(params, blk.ln1_g);
            let ln1_b = g.param(params, blk.ln1_b);
            let h = g.layer_norm(x, ln1_g, ln1_b, LN_EPS)?;
            let (wq, bq) = (g.param(params, blk.wq), g.param(params, blk.bq));
            let (wk, bk) = (g.param(params, blk.wk), g.param(params, blk.bk));
            let (wv, bv) = (g.param(params, blk.wv), g.param(params, blk.bv));
            let q = g.matmul(h, wq)?;
            let q = g.add_row(q, bq)?;
            let k = g.matmul(h, wk)?;
            let k = g.add_row(k, bk)?;
            let v = g.matmul(h, wv)?;
            let v = g.add_row(v, bv)?;
            let mut head_outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qs = g.slice_cols(q, hd * dk, (hd + 1) * dk)?;
                let ks = g.slice_cols(k, hd * dk, (hd + 1) * dk)?;
                let vs = g.slice_cols(v, hd * dk, (hd + 1) * dk)?;
                let logits = g.matmul_nt(qs, ks)?;
                let logits = g.scale(logits, scale);
                let weights = g.softmax_rows(logits)?;
                attn_vars.push(weights);
                head_outs.push(g.matmul(weights, vs)?);
            }
            let attn = g.concat_cols(&head_outs)?;
            let (wo, bo) = (g.param(params, blk.wo), g.param(params, blk.bo));
            let proj = g.matmul(attn, wo)?;
            let proj = g.add_row(proj, bo)?;
            x = g.add(x, proj)?;

            // feed-forward sublayer, pre-norm
            let ln2_g = g.param(params, blk.ln2_g);
            let ln2_b = g.param(params, blk.ln2_b);
            let h2 = g.layer_norm(x, ln2_g, ln2_b, LN_EPS)?;
            let (w1, b1) = (g.param(params, blk.w1), g.param(params, blk.b1));
            let (w2, b2) = (g.param(params, blk.w2), g.param(params, blk.b2));
            let f = g.matmul(h2, w1)?;
            let f = g.add_row(f, b1)?;
            let f = g.relu(f);
            let f = g.matmul(f, w2)?;
            let f = g.add_row(f, b2)?;
            x = g.add(x, f)?;
        }
        // final norm keeps token (and therefore feature) scale bounded
        let ln_f_g = g.param(params, self.ln_f_g);
        let ln_f_b = g.param(params, self.ln_f_b);
        x = g.layer_norm(x, ln_f_g, ln_f_b, LN_EPS)?;
        Ok((x, attn_vars))
    }

    /// Row 0 of the token matrix.
    pub fn cls_token(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        g.slice_rows(tokens, 0, 1)
    }

    /// Mean-pools the grid tokens into 4 contiguous horizontal bands.
    pub fn part_pool(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let (rows, _) = g.shape(tokens);
        let n = rows - 1;
        if n % PARTS != 0 {
            return Err(FedError::Config(format!(
                "part_pool: {n} grid tokens not divisible by {PARTS}"
            )));
        }
        let grid = g.slice_rows(tokens, 1, rows)?;
        let band = n / PARTS;
        let mut pool = vec![0.0f32; PARTS * n];
        for b in 0..PARTS {
            for j in b * band..(b + 1) * band {
                pool[b * n + j] = 1.0 / band as f32;
            }
        }
        let pool = g.leaf(PARTS, n, pool)?;
        g.matmul(pool, grid)
    }
}
