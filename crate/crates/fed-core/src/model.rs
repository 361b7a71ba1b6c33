//! Full two-branch model: shared encoder, OEM, FDM and classifier heads.
//!
//! Both branches run through literally the same parameter set; a branch is
//! just a forward pass over a different image. The inference embedding is
//! the flattened post-OEM feature; FDM and the heads only exist for
//! training.

use crate::encoder::{Encoder, EncoderConfig, PARTS};
use crate::error::{FedError, Result};
use crate::fdm::{Fdm, FdmConfig};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::oem::Oem;
use crate::rng::stream;
use crate::tensor::{ParamId, ParamSet, Tensor};

pub const HEAD_INIT_SCALE: f32 = 2.0;

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fdm: FdmConfig,
    /// Number of training identities; sizes the classifier heads and banks.
    pub train_ids: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.train_ids < 2 {
            return Err(FedError::Config(format!(
                "train_ids must be >= 2, got {}",
                self.train_ids
            )));
        }
        let d = PARTS * self.encoder.channels;
        if d % self.fdm.heads != 0 {
            return Err(FedError::Config(format!(
                "flattened dim {d} not divisible by {} fdm heads",
                self.fdm.heads
            )));
        }
        if self.fdm.k == 0 || self.fdm.k >= self.train_ids {
            return Err(FedError::Config(format!(
                "fdm K={} must satisfy 1 <= K < train_ids={}",
                self.fdm.k, self.train_ids
            )));
        }
        Ok(())
    }
}

/// The three linear classifier heads of Eq-style ID supervision: cls token,
/// flattened post-OEM feature, post-FDM feature. Shared across branches.
pub struct ClassifierHeads {
    pub cls: ParamId,
    pub oem_flat: ParamId,
    pub fdm_out: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Cls,
    OemFlat,
    FdmOut,
}

pub struct FedModel {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub oem: Oem,
    pub fdm: Fdm,
    pub heads: ClassifierHeads,
    pub params: ParamSet,
}

/// Per-branch forward products.
pub struct BranchOutput {
    pub cls: Var,
    /// `[4 x c]` re-weighted parts.
    pub parts_weighted: Var,
    /// `[1 x 4c]` flattened post-OEM feature.
    pub f_flat: Var,
    /// `[4 x 1]` occlusion scores (all ones when OEM is bypassed).
    pub scores: Var,
}

impl FedModel {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<FedModel> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut rng = stream(seed, "init");
        let encoder = Encoder::init(cfg.encoder, &mut params, &mut rng)?;
        let c = cfg.encoder.channels;
        let oem = Oem::init(c, &mut params, &mut rng)?;
        let d = PARTS * c;
        let fdm = Fdm::init(d, &mut params, &mut rng)?;
        let ids = cfg.train_ids;
        // classifier heads start wider than fan-in so the ID logits leave
        // the uniform plateau within a desk-scale step budget
        let head = |rows: usize, rng: &mut crate::rng::Rng| {
            let mut t = Tensor::uniform_fan_in(vec![rows, ids], rows, rng);
            t.data.iter_mut().for_each(|v| *v *= HEAD_INIT_SCALE);
            t
        };
        let heads = ClassifierHeads {
            cls: params.add("head.cls.w", head(c, &mut rng))?,
            oem_flat: params.add("head.oem.w", head(d, &mut rng))?,
            fdm_out: params.add("head.fdm.w", head(d, &mut rng))?,
        };
        Ok(FedModel { cfg, encoder, oem, fdm, heads, params })
    }

    pub fn flat_dim(&self) -> usize {
        PARTS * self.cfg.encoder.channels
    }

    /// Encoder + part pooling + (optionally bypassed) OEM.
    pub fn forward_branch(
        &self,
        g: &mut Graph,
        image: &Image,
        use_oem: bool,
    ) -> Result<BranchOutput> {
        let tokens = self.encoder.encode(g, &self.params, image)?;
        let cls = self.encoder.cls_token(g, tokens)?;
        let parts = self.encoder.part_pool(g, tokens)?;
        let (parts_weighted, scores) = if use_oem {
            let out = self.oem.forward(g, &self.params, parts)?;
            (out.weighted, out.scores)
        } else {
            let ones = g.leaf_col(&[1.0; PARTS])?;
            (parts, ones)
        };
        let f_flat = g.reshape(parts_weighted, 1, self.flat_dim())?;
        Ok(BranchOutput { cls, parts_weighted, f_flat, scores })
    }

    /// Linear ID logits for a feature row.
    pub fn head_logits(&self, g: &mut Graph, kind: HeadKind, feature: Var) -> Result<Var> {
        let id = match kind {
            HeadKind::Cls => self.heads.cls,
            HeadKind::OemFlat => self.heads.oem_flat,
            HeadKind::FdmOut => self.heads.fdm_out,
        };
        let w = g.param(&self.params, id);
        g.matmul(feature, w)
    }

    /// Inference embedding of one image. FDM and the heads are never touched.
    pub fn embed_image(&self, image: &Image, use_oem: bool) -> Result<Vec<f32>> {
        let mut g = Graph::inference();
        let out = self.forward_branch(&mut g, image, use_oem)?;
        Ok(g.value(out.f_flat).to_vec())
    }

    /// All parameters as named tensors, in insertion order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(_, p)| (p.name.clone(), Tensor { grad: None, ..p.value.clone() }))
            .collect()
    }
}
