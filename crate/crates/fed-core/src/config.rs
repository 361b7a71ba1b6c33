//! Plain-text `key = value` run configuration.
//!
//! Unknown keys are rejected with the offending line number. Every value
//! has a desk-scale default, so an empty file is a valid config.

use crate::encoder::EncoderConfig;
use crate::error::{FedError, Result};
use crate::fdm::FdmConfig;
use crate::model::ModelConfig;
use crate::train::{Ablation, LossNorm, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // data
    pub ids: usize,
    pub per_id: usize,
    pub holdout_ids: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub patch_count: usize,
    // model
    pub patch: usize,
    pub depth: usize,
    pub channels: usize,
    pub heads: usize,
    pub fdm_heads: usize,
    pub k: usize,
    // training
    pub ids_per_batch: usize,
    pub samples_per_id: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub temperature: f32,
    pub bank_momentum: f32,
    pub clip_norm: f32,
    pub mse: bool,
    pub loss_norm: LossNorm,
    pub triplet_margin: f32,
    pub seed: u64,
    // evaluation
    pub occlude_queries: bool,
    pub cross_camera_only: bool,
    pub dump_rankings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ids: 30,
            per_id: 6,
            holdout_ids: 10,
            image_h: 64,
            image_w: 32,
            patch_count: 30,
            patch: 8,
            depth: 4,
            channels: 64,
            heads: 4,
            fdm_heads: 8,
            k: 8,
            ids_per_batch: 4,
            samples_per_id: 4,
            lr: 0.003,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 20,
            temperature: 0.05,
            bank_momentum: 0.2,
            clip_norm: 5.0,
            mse: true,
            loss_norm: LossNorm::Halves,
            triplet_margin: 0.3,
            seed: 0,
            occlude_queries: true,
            cross_camera_only: false,
            dump_rankings: false,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Some(true),
        "false" | "off" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    /// Parses `key = value` lines ('#' starts a comment). Unknown keys and
    /// malformed values report the 1-based line number.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                FedError::Config(format!("line {lineno}: expected `key = value`, got {raw:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)
                .map_err(|e| FedError::Config(format!("line {lineno}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.parse::<T>().map_err(|_| format!("invalid value {value:?} for key {key:?}"))
        }
        match key {
            "ids" => self.ids = num(key, value)?,
            "per_id" => self.per_id = num(key, value)?,
            "holdout_ids" => self.holdout_ids = num(key, value)?,
            "image_h" => self.image_h = num(key, value)?,
            "image_w" => self.image_w = num(key, value)?,
            "patch_count" => self.patch_count = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "fdm_heads" => self.fdm_heads = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "ids_per_batch" => self.ids_per_batch = num(key, value)?,
            "samples_per_id" => self.samples_per_id = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "bank_momentum" => self.bank_momentum = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "triplet_margin" => self.triplet_margin = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mse" => {
                self.mse = parse_bool(value)
                    .ok_or_else(|| format!("invalid value {value:?} for key \"mse\""))?
            }
            "occlude_queries" => {
                self.occlude_queries = parse_bool(value)
                    .ok_or_else(|| format!("invalid value {value:?} for key \"occlude_queries\""))?
            }
            "cross_camera_only" => {
                self.cross_camera_only = parse_bool(value).ok_or_else(|| {
                    format!("invalid value {value:?} for key \"cross_camera_only\"")
                })?
            }
            "dump_rankings" => {
                self.dump_rankings = parse_bool(value)
                    .ok_or_else(|| format!("invalid value {value:?} for key \"dump_rankings\""))?
            }
            "loss_norm" => {
                self.loss_norm = match value {
                    "halves" => LossNorm::Halves,
                    "means" => LossNorm::Means,
                    _ => return Err(format!("invalid value {value:?} for key \"loss_norm\"")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn train_ids(&self) -> usize {
        self.ids.saturating_sub(self.holdout_ids)
    }

    pub fn validate(&self) -> Result<()> {
        if self.holdout_ids >= self.ids {
            return Err(FedError::Config(format!(
                "holdout_ids {} must be below ids {}",
                self.holdout_ids, self.ids
            )));
        }
        if self.ids_per_batch < 2 || self.samples_per_id < 2 {
            return Err(FedError::Config(
                "ids_per_batch and samples_per_id must be >= 2".into(),
            ));
        }
        if self.per_id < self.samples_per_id.max(2) {
            return Err(FedError::Config(format!(
                "per_id {} too small for samples_per_id {}",
                self.per_id, self.samples_per_id
            )));
        }
        self.model_config().validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            image_h: self.image_h,
            image_w: self.image_w,
            patch: self.patch,
            depth: self.depth,
            channels: self.channels,
            heads: self.heads,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder_config(),
            fdm: FdmConfig { heads: self.fdm_heads, k: self.k },
            train_ids: self.train_ids(),
        }
    }

    pub fn train_config(&self, ablation: Ablation) -> TrainConfig {
        TrainConfig {
            ids_per_batch: self.ids_per_batch,
            samples_per_id: self.samples_per_id,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            temperature: self.temperature,
            bank_momentum: self.bank_momentum,
            seed: self.seed,
            mse_enabled: self.mse,
            loss_norm: self.loss_norm,
            ablation,
            triplet_margin: self.triplet_margin,
            clip_norm: self.clip_norm,
        }
    }

    /// Canonical rendering used for the run id and the manifest.
    pub fn canonical_text(&self) -> String {
        let norm = match self.loss_norm {
            LossNorm::Halves => "halves",
            LossNorm::Means => "means",
        };
        format!(
            "ids = {}\nper_id = {}\nholdout_ids = {}\nimage_h = {}\nimage_w = {}\n\
             patch_count = {}\npatch = {}\ndepth = {}\nchannels = {}\nheads = {}\n\
             fdm_heads = {}\nk = {}\nids_per_batch = {}\nsamples_per_id = {}\nlr = {}\n\
             momentum = {}\nweight_decay = {}\nepochs = {}\ntemperature = {}\n\
             bank_momentum = {}\nclip_norm = {}\nmse = {}\nloss_norm = {}\n\
             triplet_margin = {}\nseed = {}\nocclude_queries = {}\ncross_camera_only = {}\n\
             dump_rankings = {}\n",
            self.ids,
            self.per_id,
            self.holdout_ids,
            self.image_h,
            self.image_w,
            self.patch_count,
            self.patch,
            self.depth,
            self.channels,
            self.heads,
            self.fdm_heads,
            self.k,
            self.ids_per_batch,
            self.samples_per_id,
            self.lr,
            self.momentum,
            self.weight_decay,
            self.epochs,
            self.temperature,
            self.bank_momentum,
            self.clip_norm,
            self.mse,
            norm,
            self.triplet_margin,
            self.seed,
            self.occlude_queries,
            self.cross_camera_only,
            self.dump_rankings,
        )
    }

    /// FNV-1a hash of the canonical config text plus the seed, hex-encoded.
    pub fn run_id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in self.canonical_text().as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= self.seed;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        format!("{h:016x}")
    }
}
