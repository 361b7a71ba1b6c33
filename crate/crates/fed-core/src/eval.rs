//! Single-query retrieval evaluation: embedding extraction, cosine ranking,
//! CMC and mAP.
//!
//! The inference embedding is the flattened post-OEM feature; FDM and the
//! classifier heads are never touched.

use crate::error::{FedError, Result};
use crate::memory::cosine_similarity;
use crate::model::FedModel;
use crate::synth::Sample;

/// One embedding per image, with identity and camera tags.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    pub vectors: Vec<Vec<f32>>,
    pub ids: Vec<usize>,
    pub cameras: Vec<usize>,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Deterministic embeddings for a sample list.
pub fn embed(model: &FedModel, samples: &[Sample], use_oem: bool) -> Result<EmbeddingIndex> {
    let mut vectors = Vec::with_capacity(samples.len());
    let mut ids = Vec::with_capacity(samples.len());
    let mut cameras = Vec::with_capacity(samples.len());
    for s in samples {
        vectors.push(model.embed_image(&s.image, use_oem)?);
        ids.push(s.identity);
        cameras.push(s.camera);
    }
    Ok(EmbeddingIndex { vectors, ids, cameras })
}

/// Gallery indices sorted by descending cosine similarity to the query,
/// stable tie-break by gallery index.
pub fn rank(query: &[f32], gallery: &EmbeddingIndex) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = gallery
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (i, cosine_similarity(query, v)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Per-query orders plus CMC/mAP aggregates.
#[derive(Debug, Clone)]
pub struct RankingResult {
    pub orders: Vec<Vec<usize>>,
    /// cmc[k] = fraction of queries whose first correct match is within the
    /// top k+1 results.
    pub cmc: Vec<f64>,
    pub map: f64,
}

impl RankingResult {
    pub fn rank_k(&self, k: usize) -> f64 {
        if self.cmc.is_empty() {
            return 0.0;
        }
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }
}

/// CMC and mAP over all queries. With `cross_camera_only`, gallery entries
/// sharing both identity and camera with the query are dropped from that
/// query's ranking, mirroring the usual benchmark junk rule.
pub fn cmc_map(
    queries: &EmbeddingIndex,
    gallery: &EmbeddingIndex,
    cross_camera_only: bool,
) -> Result<RankingResult> {
    if gallery.is_empty() {
        return Err(FedError::Protocol("empty gallery".into()));
    }
    let mut orders = Vec::with_capacity(queries.len());
    let mut first_hits = Vec::with_capacity(queries.len());
    let mut aps = Vec::with_capacity(queries.len());
    for (qi, q) in queries.vectors.iter().enumerate() {
        let qid = queries.ids[qi];
        let order = rank(q, gallery);
        let kept: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&gi| {
                !(cross_camera_only
                    && gallery.ids[gi] == qid
                    && gallery.cameras[gi] == queries.cameras[qi])
            })
            .collect();
        let mut hits = 0usize;
        let mut precision_sum = 0.0f64;
        let mut first = None;
        for (pos, &gi) in kept.iter().enumerate() {
            if gallery.ids[gi] == qid {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
                if first.is_none() {
                    first = Some(pos);
                }
            }
        }
        let first = first.ok_or_else(|| {
            FedError::Protocol(format!("query identity {qid} has no gallery match"))
        })?;
        first_hits.push(first);
        aps.push(precision_sum / hits as f64);
        orders.push(kept);
    }
    let max_len = orders.iter().map(Vec::len).max().unwrap_or(0);
    let nq = queries.len() as f64;
    let mut cmc = vec![0.0f64; max_len];
    for &f in &first_hits {
        for slot in cmc.iter_mut().skip(f) {
            *slot += 1.0;
        }
    }
    for v in &mut cmc {
        *v /= nq;
    }
    let map = aps.iter().sum::<f64>() / nq;
    Ok(RankingResult { orders, cmc, map })
}
