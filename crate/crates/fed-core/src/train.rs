//! Two-branch training: loss assembly, identity-balanced sampling, SGD with
//! cosine decay, and memory-bank maintenance.
//!
//! A full step runs NPO augmentation, pushes both images through the shared
//! encoder/OEM/FDM, and combines 2 MSE + 6 ID + 4 contrastive terms with a
//! half weight per group. Only holistic-branch features update the banks,
//! detached from gradients, after the optimizer step.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::augment::{augment_pair, common_augment, random_erasing, OcclusionPatch};
use crate::error::{FedError, Result};
use crate::fdm::FdmConfig;
use crate::graph::{Graph, Var};
use crate::memory::{contrastive_loss, BankTag, MemoryBank};
use crate::model::{FedModel, HeadKind};
use crate::oem::mse_loss;
use crate::rng::{stream, Rng};
use crate::synth::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossNorm {
    /// Literal half of each group sum.
    Halves,
    /// Mean over each group's terms instead.
    Means,
}

/// Component toggles matching the ablation table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub random_erasing: bool,
    pub npo: bool,
    pub oem: bool,
    pub fdm: bool,
}

impl Ablation {
    pub fn full() -> Self {
        Ablation { random_erasing: false, npo: true, oem: true, fdm: true }
    }

    pub fn baseline() -> Self {
        Ablation { random_erasing: false, npo: false, oem: false, fdm: false }
    }

    /// The six standard rows: baseline, +RE, +NPO, +NPO+OEM, +NPO+FDM, full.
    pub fn table_rows() -> [Ablation; 6] {
        [
            Ablation::baseline(),
            Ablation { random_erasing: true, npo: false, oem: false, fdm: false },
            Ablation { random_erasing: false, npo: true, oem: false, fdm: false },
            Ablation { random_erasing: false, npo: true, oem: true, fdm: false },
            Ablation { random_erasing: false, npo: true, oem: false, fdm: true },
            Ablation::full(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub ids_per_batch: usize,
    pub samples_per_id: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub temperature: f32,
    pub bank_momentum: f32,
    pub seed: u64,
    pub mse_enabled: bool,
    pub loss_norm: LossNorm,
    pub ablation: Ablation,
    pub triplet_margin: f32,
    /// Global gradient-norm ceiling; the low-temperature contrastive term
    /// spikes hard early in training without it. 0 disables clipping.
    pub clip_norm: f32,
}

impl TrainConfig {
    pub fn desk_default(seed: u64) -> Self {
        TrainConfig {
            ids_per_batch: 4,
            samples_per_id: 4,
            lr: 0.008,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 20,
            temperature: 0.05,
            bank_momentum: 0.2,
            seed,
            mse_enabled: true,
            loss_norm: LossNorm::Halves,
            ablation: Ablation::full(),
            triplet_margin: 0.3,
            clip_norm: 5.0,
        }
    }
}

/// Every loss component of one step, batch-averaged.
///
/// Term order: `mse` = [holistic, occluded]; `id` = [cls_h, cls_o, flat_h,
/// flat_o, fdm_h, fdm_o]; `contrastive` = [flat_h, flat_o, fdm_h, fdm_o].
/// Groups shrink when components are ablated.
#[derive(Debug, Clone, Default)]
pub struct LossBreakdown {
    pub mse: Vec<f32>,
    pub id: Vec<f32>,
    pub contrastive: Vec<f32>,
    pub triplet: Option<f32>,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombines the logged components into the scalar total.
    pub fn recompose(&self, norm: LossNorm) -> f64 {
        let group = |v: &[f32]| -> f64 {
            if v.is_empty() {
                return 0.0;
            }
            let sum: f64 = v.iter().map(|&x| x as f64).sum();
            match norm {
                LossNorm::Halves => 0.5 * sum,
                LossNorm::Means => sum / v.len() as f64,
            }
        };
        let trip = match (self.triplet, norm) {
            (Some(t), LossNorm::Halves) => 0.5 * t as f64,
            (Some(t), LossNorm::Means) => t as f64,
            (None, _) => 0.0,
        };
        group(&self.mse) + group(&self.id) + group(&self.contrastive) + trip
    }

    pub fn component_count(&self) -> usize {
        self.mse.len()
            + self.id.len()
            + self.contrastive.len()
            + usize::from(self.triplet.is_some())
    }

    pub fn all_finite(&self) -> bool {
        self.mse
            .iter()
            .chain(&self.id)
            .chain(&self.contrastive)
            .chain(self.triplet.iter())
            .all(|v| v.is_finite())
            && self.total.is_finite()
    }
}

pub struct Banks {
    pub post_oem: MemoryBank,
    pub post_fdm: MemoryBank,
}

/// Cosine decay from `base` at step 0 to 0 at the final step.
pub fn cosine_lr(base: f32, step: usize, total_steps: usize) -> f32 {
    if total_steps <= 1 {
        return if step == 0 { base } else { 0.0 };
    }
    let t = (step.min(total_steps - 1)) as f64 / (total_steps - 1) as f64;
    (base as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

/// Identity-balanced batches: each epoch shuffles the identities, chunks
/// them into groups of `ids_per_batch`, and draws `samples_per_id` samples
/// per identity.
pub fn epoch_batches(
    samples: &[Sample],
    train_ids: usize,
    ids_per_batch: usize,
    samples_per_id: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_id.entry(s.identity).or_default().push(i);
    }
    for id in 0..train_ids {
        let n = by_id.get(&id).map_or(0, Vec::len);
        if n < samples_per_id {
            return Err(FedError::Contract(format!(
                "sampler: identity {id} has {n} samples, need {samples_per_id}"
            )));
        }
    }
    let mut ids: Vec<usize> = (0..train_ids).collect();
    ids.shuffle(rng);
    let mut batches = Vec::new();
    for group in ids.chunks(ids_per_batch) {
        if group.len() < ids_per_batch {
            break;
        }
        let mut batch = Vec::with_capacity(ids_per_batch * samples_per_id);
        for &id in group {
            let mut pool = by_id[&id].clone();
            pool.shuffle(rng);
            batch.extend(pool.into_iter().take(samples_per_id));
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Cross-entropy ID loss of a linear head's logits against the label.
pub fn id_loss(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    g.cross_entropy(logits, label)
}

/// Batch-hard triplet loss with Euclidean distances. Hardest positives and
/// negatives are selected from the detached feature values.
pub fn triplet_loss(
    g: &mut Graph,
    feats: &[Var],
    labels: &[usize],
    margin: f32,
) -> Result<Var> {
    let n = feats.len();
    let values: Vec<Vec<f32>> = feats.iter().map(|&f| g.value(f).to_vec()).collect();
    let dist = |a: &[f32], b: &[f32]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut terms = Vec::new();
    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for b in 0..n {
            if b == a {
                continue;
            }
            let d = dist(&values[a], &values[b]);
            if labels[b] == labels[a] {
                if hardest_pos.map_or(true, |(_, best)| d > best) {
                    hardest_pos = Some((b, d));
                }
            } else if hardest_neg.map_or(true, |(_, best)| d < best) {
                hardest_neg = Some((b, d));
            }
        }
        let (p, _) = match hardest_pos {
            Some(v) => v,
            None => continue,
        };
        let (q, _) = match hardest_neg {
            Some(v) => v,
            None => continue,
        };
        let d_ap = euclid(g, feats[a], feats[p])?;
        let d_an = euclid(g, feats[a], feats[q])?;
        let gap = g.sub(d_ap, d_an)?;
        let m = g.leaf(1, 1, vec![margin])?;
        let shifted = g.add(gap, m)?;
        terms.push(g.relu(shifted));
    }
    if terms.is_empty() {
        return Err(FedError::Contract(
            "triplet_loss: batch has no valid anchor/positive/negative triple".into(),
        ));
    }
    let total = g.sum_vars(&terms)?;
    Ok(g.scale(total, 1.0 / terms.len() as f32))
}

fn euclid(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let sq = g.mul(diff, diff)?;
    let s = g.sum_all(sq);
    Ok(g.sqrt(s))
}

pub struct Trainer<'m> {
    pub model: &'m mut FedModel,
    pub cfg: TrainConfig,
    banks: Option<Banks>,
    velocity: Vec<Vec<f32>>,
    rng: Rng,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut FedModel, cfg: TrainConfig) -> Trainer<'m> {
        let velocity = model
            .params
            .iter()
            .map(|(_, p)| vec![0.0f32; p.value.numel()])
            .collect();
        let rng = stream(cfg.seed, "train");
        Trainer { model, cfg, banks: None, velocity, rng }
    }

    pub fn banks(&self) -> Option<&Banks> {
        self.banks.as_ref()
    }

    pub fn take_banks(self) -> Option<Banks> {
        self.banks
    }

    /// One full forward pass over the training set builds the ID centers for
    /// both banks. Runs once, at training start.
    pub fn init_banks(&mut self, samples: &[Sample]) -> Result<()> {
        let ids = self.model.cfg.train_ids;
        let dim = self.model.flat_dim();
        let use_oem = self.cfg.ablation.oem;
        let mut flat_by_id: BTreeMap<usize, Vec<Vec<f32>>> = BTreeMap::new();
        let mut branch_cache = Vec::with_capacity(samples.len());
        for s in samples {
            if s.identity >= ids {
                return Err(FedError::Contract(format!(
                    "init_banks: identity {} outside train range {ids}",
                    s.identity
                )));
            }
            let mut g = Graph::inference();
            let out = self.model.forward_branch(&mut g, &s.image, use_oem)?;
            let flat = g.value(out.f_flat).to_vec();
            let scores = g.value(out.scores).to_vec();
            flat_by_id.entry(s.identity).or_default().push(flat.clone());
            branch_cache.push((s.identity, flat, scores));
        }
        let post_oem =
            MemoryBank::init(ids, dim, &flat_by_id, self.cfg.bank_momentum, BankTag::PostOem)?;

        let mut fdm_by_id: BTreeMap<usize, Vec<Vec<f32>>> = BTreeMap::new();
        if self.cfg.ablation.fdm {
            for (identity, flat, scores) in &branch_cache {
                let mut g = Graph::inference();
                let f = g.leaf(1, dim, flat.clone())?;
                let sc = g.leaf_col(scores)?;
                let out = self.model.fdm.forward(
                    &mut g,
                    &self.model.params,
                    f,
                    sc,
                    &post_oem,
                    *identity,
                    self.model.cfg.fdm,
                )?;
                fdm_by_id.entry(*identity).or_default().push(g.value(out).to_vec());
            }
        } else {
            fdm_by_id = flat_by_id;
        }
        let post_fdm =
            MemoryBank::init(ids, dim, &fdm_by_id, self.cfg.bank_momentum, BankTag::PostFdm)?;
        self.banks = Some(Banks { post_oem, post_fdm });
        Ok(())
    }

    /// One optimization step over an identity-balanced batch.
    pub fn train_step(
        &mut self,
        batch: &[&Sample],
        patches: &[OcclusionPatch],
        lr: f32,
    ) -> Result<LossBreakdown> {
        if self.banks.is_none() {
            return Err(FedError::State("train_step: banks are not initialized".into()));
        }
        if batch.is_empty() {
            return Err(FedError::Contract("train_step: empty batch".into()));
        }
        let ab = self.cfg.ablation;
        let breakdown = if ab.npo {
            self.step_two_branch(batch, patches, lr)?
        } else {
            self.step_single_branch(batch, lr)?
        };
        Ok(breakdown)
    }

    fn check_label(&self, s: &Sample) -> Result<usize> {
        let ids = self.model.cfg.train_ids;
        if s.identity >= ids {
            return Err(FedError::Contract(format!(
                "train_step: label {} out of range [0, {ids})",
                s.identity
            )));
        }
        Ok(s.identity)
    }

    fn step_two_branch(
        &mut self,
        batch: &[&Sample],
        patches: &[OcclusionPatch],
        lr: f32,
    ) -> Result<LossBreakdown> {
        let ab = self.cfg.ablation;
        let tau = self.cfg.temperature;
        let fdm_cfg: FdmConfig = self.model.cfg.fdm;
        let b = batch.len() as f32;

        let mut g = Graph::new();
        // per-term per-sample lists
        let mut mse_h = Vec::new();
        let mut mse_o = Vec::new();
        let mut id_terms: [Vec<Var>; 6] = Default::default();
        let mut c_terms: [Vec<Var>; 4] = Default::default();
        // holistic features for the bank update, read out after backward
        let mut holistic_flat: Vec<(usize, Var)> = Vec::new();
        let mut holistic_fdm: Vec<(usize, Var)> = Vec::new();

        let banks = self.banks.as_ref().unwrap();
        for sample in batch {
            let label = self.check_label(sample)?;
            let pair = augment_pair(&sample.image, patches, &mut self.rng)?;
            let holistic = self.model.forward_branch(&mut g, &pair.original, ab.oem)?;
            let occluded = self.model.forward_branch(&mut g, &pair.occluded, ab.oem)?;

            if ab.oem && self.cfg.mse_enabled {
                // the holistic branch's mask is all ones by construction
                mse_h.push(mse_loss(&mut g, holistic.scores, [1.0; 4])?);
                mse_o.push(mse_loss(&mut g, occluded.scores, pair.mask.to_f32())?);
            }

            let cls_h = self.model.head_logits(&mut g, HeadKind::Cls, holistic.cls)?;
            let cls_o = self.model.head_logits(&mut g, HeadKind::Cls, occluded.cls)?;
            let flat_h = self.model.head_logits(&mut g, HeadKind::OemFlat, holistic.f_flat)?;
            let flat_o = self.model.head_logits(&mut g, HeadKind::OemFlat, occluded.f_flat)?;
            id_terms[0].push(id_loss(&mut g, cls_h, label)?);
            id_terms[1].push(id_loss(&mut g, cls_o, label)?);
            id_terms[2].push(id_loss(&mut g, flat_h, label)?);
            id_terms[3].push(id_loss(&mut g, flat_o, label)?);

            c_terms[0].push(contrastive_loss(&mut g, holistic.f_flat, &banks.post_oem, label, tau)?);
            c_terms[1].push(contrastive_loss(&mut g, occluded.f_flat, &banks.post_oem, label, tau)?);

            if ab.fdm {
                let fdm_h = self.model.fdm.forward(
                    &mut g,
                    &self.model.params,
                    holistic.f_flat,
                    holistic.scores,
                    &banks.post_oem,
                    label,
                    fdm_cfg,
                )?;
                let fdm_o = self.model.fdm.forward(
                    &mut g,
                    &self.model.params,
                    occluded.f_flat,
                    occluded.scores,
                    &banks.post_oem,
                    label,
                    fdm_cfg,
                )?;
                let fdm_logits_h = self.model.head_logits(&mut g, HeadKind::FdmOut, fdm_h)?;
                let fdm_logits_o = self.model.head_logits(&mut g, HeadKind::FdmOut, fdm_o)?;
                id_terms[4].push(id_loss(&mut g, fdm_logits_h, label)?);
                id_terms[5].push(id_loss(&mut g, fdm_logits_o, label)?);
                c_terms[2].push(contrastive_loss(&mut g, fdm_h, &banks.post_fdm, label, tau)?);
                c_terms[3].push(contrastive_loss(&mut g, fdm_o, &banks.post_fdm, label, tau)?);
                holistic_fdm.push((label, fdm_h));
            }
            holistic_flat.push((label, holistic.f_flat));
        }

        // batch-mean every term
        let mean = |g: &mut Graph, list: &[Var]| -> Result<Var> {
            let s = g.sum_vars(list)?;
            Ok(g.scale(s, 1.0 / b))
        };
        let mut mse_vars = Vec::new();
        if !mse_h.is_empty() {
            mse_vars.push(mean(&mut g, &mse_h)?);
            mse_vars.push(mean(&mut g, &mse_o)?);
        }
        let mut id_vars = Vec::new();
        for list in id_terms.iter() {
            if !list.is_empty() {
                id_vars.push(mean(&mut g, list)?);
            }
        }
        let mut c_vars = Vec::new();
        for list in c_terms.iter() {
            if !list.is_empty() {
                c_vars.push(mean(&mut g, list)?);
            }
        }

        let total = self.combine(&mut g, &mse_vars, &id_vars, &c_vars, None)?;
        g.backward(total)?;
        self.apply_sgd(&g, lr)?;

        // bank update after the optimizer step, holistic features only
        let flat_feats: Vec<(usize, Vec<f32>)> = holistic_flat
            .iter()
            .map(|&(id, v)| (id, g.value(v).to_vec()))
            .collect();
        let fdm_feats: Vec<(usize, Vec<f32>)> = holistic_fdm
            .iter()
            .map(|&(id, v)| (id, g.value(v).to_vec()))
            .collect();
        let banks = self.banks.as_mut().unwrap();
        banks.post_oem.update(&flat_feats)?;
        if !fdm_feats.is_empty() {
            banks.post_fdm.update(&fdm_feats)?;
        }

        Ok(self.breakdown(&g, &mse_vars, &id_vars, &c_vars, None))
    }

    fn step_single_branch(&mut self, batch: &[&Sample], lr: f32) -> Result<LossBreakdown> {
        let ab = self.cfg.ablation;
        let b = batch.len() as f32;
        let mut g = Graph::new();
        let mut id_terms: [Vec<Var>; 2] = Default::default();
        let mut feats = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for sample in batch {
            let label = self.check_label(sample)?;
            let mut image = common_augment(&sample.image, &mut self.rng);
            if ab.random_erasing {
                image = random_erasing(&image, &mut self.rng, 0.5);
            }
            let out = self.model.forward_branch(&mut g, &image, false)?;
            let cls_logits = self.model.head_logits(&mut g, HeadKind::Cls, out.cls)?;
            let flat_logits = self.model.head_logits(&mut g, HeadKind::OemFlat, out.f_flat)?;
            id_terms[0].push(id_loss(&mut g, cls_logits, label)?);
            id_terms[1].push(id_loss(&mut g, flat_logits, label)?);
            feats.push(out.f_flat);
            labels.push(label);
        }
        let mean = |g: &mut Graph, list: &[Var]| -> Result<Var> {
            let s = g.sum_vars(list)?;
            Ok(g.scale(s, 1.0 / b))
        };
        let id_vars = vec![mean(&mut g, &id_terms[0])?, mean(&mut g, &id_terms[1])?];
        let trip = triplet_loss(&mut g, &feats, &labels, self.cfg.triplet_margin)?;
        let total = self.combine(&mut g, &[], &id_vars, &[], Some(trip))?;
        g.backward(total)?;
        self.apply_sgd(&g, lr)?;
        Ok(self.breakdown(&g, &[], &id_vars, &[], Some(trip)))
    }

    /// Builds the scalar training objective from the grouped terms.
    fn combine(
        &self,
        g: &mut Graph,
        mse: &[Var],
        id: &[Var],
        c: &[Var],
        triplet: Option<Var>,
    ) -> Result<Var> {
        let mut groups = Vec::new();
        let weight = |n: usize| match self.cfg.loss_norm {
            LossNorm::Halves => 0.5,
            LossNorm::Means => 1.0 / n as f32,
        };
        for list in [mse, id, c] {
            if !list.is_empty() {
                let s = g.sum_vars(list)?;
                groups.push(g.scale(s, weight(list.len())));
            }
        }
        if let Some(t) = triplet {
            groups.push(g.scale(t, weight(1)));
        }
        g.sum_vars(&groups)
    }

    fn breakdown(
        &self,
        g: &Graph,
        mse: &[Var],
        id: &[Var],
        c: &[Var],
        triplet: Option<Var>,
    ) -> LossBreakdown {
        let read = |list: &[Var]| -> Vec<f32> { list.iter().map(|&v| g.scalar(v)).collect() };
        let mut out = LossBreakdown {
            mse: read(mse),
            id: read(id),
            contrastive: read(c),
            triplet: triplet.map(|t| g.scalar(t)),
            total: 0.0,
        };
        out.total = out.recompose(self.cfg.loss_norm);
        out
    }

    fn apply_sgd(&mut self, g: &Graph, lr: f32) -> Result<()> {
        self.model.params.zero_grads();
        g.scatter_param_grads(&mut self.model.params)?;
        if self.cfg.clip_norm > 0.0 {
            let mut norm_sq = 0.0f64;
            for (_, p) in self.model.params.iter() {
                if let Some(gbuf) = p.value.grad.as_ref() {
                    norm_sq += gbuf.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
                }
            }
            let norm = norm_sq.sqrt();
            if norm > self.cfg.clip_norm as f64 {
                let scale = (self.cfg.clip_norm as f64 / norm) as f32;
                for (_, p) in self.model.params.iter_mut() {
                    if let Some(gbuf) = p.value.grad.as_mut() {
                        gbuf.iter_mut().for_each(|v| *v *= scale);
                    }
                }
            }
        }
        let momentum = self.cfg.momentum;
        let wd = self.cfg.weight_decay;
        for ((_, p), vel) in self.model.params.iter_mut().zip(&mut self.velocity) {
            if !p.trainable {
                continue;
            }
            let grad = match p.value.grad.as_ref() {
                Some(gbuf) => gbuf.clone(),
                None => continue,
            };
            for i in 0..p.value.data.len() {
                let g_i = grad[i] + wd * p.value.data[i];
                vel[i] = momentum * vel[i] + g_i;
                p.value.data[i] -= lr * vel[i];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f32,
    pub breakdown: LossBreakdown,
}

pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub banks: Banks,
}

/// Full training loop. The model is updated in place; the per-step records
/// and final banks are returned for logging and checkpointing.
pub fn train(
    model: &mut FedModel,
    samples: &[Sample],
    patches: &[OcclusionPatch],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(FedError::Contract("train: empty dataset".into()));
    }
    let train_ids = model.cfg.train_ids;
    let mut sampler_rng = stream(cfg.seed, "sampler");
    // fixed batch count per epoch
    let probe = epoch_batches(
        samples,
        train_ids,
        cfg.ids_per_batch,
        cfg.samples_per_id,
        &mut sampler_rng.clone(),
    )?;
    let steps_per_epoch = probe.len();
    if steps_per_epoch == 0 {
        return Err(FedError::Contract(
            "train: not enough identities for one batch".into(),
        ));
    }
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut trainer = Trainer::new(model, cfg.clone());
    trainer.init_banks(samples)?;

    let mut records = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(
            samples,
            train_ids,
            cfg.ids_per_batch,
            cfg.samples_per_id,
            &mut sampler_rng,
        )?;
        for batch in batches {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
            let lr = cosine_lr(cfg.lr, step, total_steps);
            let breakdown = trainer.train_step(&refs, patches, lr)?;
            records.push(StepRecord { epoch, step, lr, breakdown });
            step += 1;
        }
    }
    let banks = trainer.take_banks().expect("banks were initialized");
    Ok(TrainLog { steps: records, banks })
}
