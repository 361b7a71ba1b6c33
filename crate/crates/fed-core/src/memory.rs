//! Identity-center memory banks with momentum updates, K-nearest search
//! and the contrastive loss.
//!
//! Two banks exist in the pipeline: one over post-OEM features and one over
//! post-FDM features. Only holistic-branch features write to them; the loss
//! treats centers as constants, the momentum rule is the banks' only write
//! path.

use std::collections::BTreeMap;

use crate::error::{FedError, Result};
use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankTag {
    PostOem,
    PostFdm,
}

impl BankTag {
    pub fn checkpoint_name(self) -> &'static str {
        match self {
            BankTag::PostOem => "memory.oem.centers",
            BankTag::PostFdm => "memory.fdm.centers",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    /// `ids x dim`, row k is the center of identity k.
    pub centers: Vec<f32>,
    pub ids: usize,
    pub dim: usize,
    pub momentum: f32,
    pub tag: BankTag,
}

fn mean_of(vectors: &[Vec<f32>], dim: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; dim];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
    }
    acc.iter().map(|&a| (a / vectors.len() as f64) as f32).collect()
}

impl MemoryBank {
    /// Initializes center k as the mean of identity k's features from one
    /// full forward pass. Every identity in `[0, ids)` must contribute.
    pub fn init(
        ids: usize,
        dim: usize,
        features_by_id: &BTreeMap<usize, Vec<Vec<f32>>>,
        momentum: f32,
        tag: BankTag,
    ) -> Result<MemoryBank> {
        let mut centers = vec![0.0f32; ids * dim];
        for id in 0..ids {
            let feats = features_by_id
                .get(&id)
                .filter(|f| !f.is_empty())
                .ok_or_else(|| FedError::Init(format!("identity {id} has no features")))?;
            for f in feats {
                if f.len() != dim {
                    return Err(FedError::Init(format!(
                        "identity {id}: feature length {} != {dim}",
                        f.len()
                    )));
                }
            }
            centers[id * dim..(id + 1) * dim].copy_from_slice(&mean_of(feats, dim));
        }
        Ok(MemoryBank { centers, ids, dim, momentum, tag })
    }

    pub fn center(&self, id: usize) -> &[f32] {
        &self.centers[id * self.dim..(id + 1) * self.dim]
    }

    /// Momentum update: for each identity k present in the batch,
    /// `c_k <- m*c_k + (1-m)*mean(B_k)`. Other identities are untouched.
    pub fn update(&mut self, batch: &[(usize, Vec<f32>)]) -> Result<()> {
        let mut grouped: BTreeMap<usize, Vec<Vec<f32>>> = BTreeMap::new();
        for (id, f) in batch {
            if *id >= self.ids {
                return Err(FedError::Contract(format!(
                    "update_bank: identity {id} not in bank of {} ids",
                    self.ids
                )));
            }
            if f.len() != self.dim {
                return Err(FedError::Contract(format!(
                    "update_bank: feature length {} != {}",
                    f.len(),
                    self.dim
                )));
            }
            grouped.entry(*id).or_default().push(f.clone());
        }
        let m = self.momentum;
        for (id, feats) in grouped {
            let mean = mean_of(&feats, self.dim);
            let row = &mut self.centers[id * self.dim..(id + 1) * self.dim];
            for (c, v) in row.iter_mut().zip(&mean) {
                *c = m * *c + (1.0 - m) * v;
            }
        }
        Ok(())
    }

    /// K nearest centers by cosine distance, excluding the query's own
    /// identity. Ties break toward the lower identity index. Returns ids in
    /// rank order.
    pub fn search(&self, f: &[f32], query_id: usize, k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(FedError::Config("search_memory: K must be >= 1".into()));
        }
        if k >= self.ids {
            return Err(FedError::Config(format!(
                "search_memory: K={k} must be below the bank's {} identities",
                self.ids
            )));
        }
        if f.len() != self.dim {
            return Err(FedError::Contract(format!(
                "search_memory: query length {} != {}",
                f.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.ids)
            .filter(|&id| id != query_id)
            .map(|id| (id, cosine_similarity(f, self.center(id))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(k).map(|(id, _)| id).collect())
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// `-log( exp(<f, c_id>/tau) / sum_j exp(<f, c_j>/tau) )` over all centers,
/// with both sides scaled to unit norm so the temperature acts on cosine
/// similarities. The centers enter the graph as constants: no gradient
/// reaches the bank.
pub fn contrastive_loss(
    g: &mut Graph,
    f: Var,
    bank: &MemoryBank,
    id: usize,
    tau: f32,
) -> Result<Var> {
    if tau <= 0.0 {
        return Err(FedError::Config(format!("contrastive_loss: tau must be > 0, got {tau}")));
    }
    if id >= bank.ids {
        return Err(FedError::Contract(format!(
            "contrastive_loss: identity {id} not in bank of {} ids",
            bank.ids
        )));
    }
    let (r, d) = g.shape(f);
    if r != 1 || d != bank.dim {
        return Err(FedError::Dim { op: "contrastive_loss", lhs: vec![r, d], rhs: vec![1, bank.dim] });
    }
    let mut normalized = vec![0.0f32; bank.ids * bank.dim];
    for k in 0..bank.ids {
        let row = bank.center(k);
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
        for (o, &v) in normalized[k * bank.dim..(k + 1) * bank.dim].iter_mut().zip(row) {
            *o = (v as f64 / norm) as f32;
        }
    }
    let centers = g.leaf(bank.ids, bank.dim, normalized)?;
    let f_hat = g.l2_normalize(f)?;
    let logits = g.matmul_nt(f_hat, centers)?;
    let logits = g.scale(logits, 1.0 / tau);
    g.cross_entropy(logits, id)
}
