//! Command implementations behind the CLI: training runs, evaluation,
//! K sweeps, component ablations, and artifact dumps.
//!
//! Every command writes a run manifest to its output directory before any
//! other output. Reruns with the same config and seed are bit-identical.
//! `FED_THREADS` caps worker parallelism for sweep and ablation rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{FedError, Result};
use crate::eval::{cmc_map, embed, RankingResult};
use crate::graph::Graph;
use crate::model::FedModel;
use crate::rng::stream;
use crate::synth::{generate_dataset, generate_patch_set, split_query_gallery, Sample};
use crate::train::{train, Ablation, StepRecord, TrainLog};

/// Worker-thread cap: `FED_THREADS` if set, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("FED_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

fn write_manifest(out: &Path, command: &str, config_label: &str, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let text = format!(
        "command = {command}\nconfig = {config_label}\nseed = {}\nout = {}\nrun_id = {}\n",
        cfg.seed,
        out.display(),
        cfg.run_id(),
    );
    std::fs::write(out.join("manifest.txt"), text)?;
    Ok(())
}

/// Generated inputs shared by most commands.
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub train_set: Vec<Sample>,
    pub patches: Vec<crate::augment::OcclusionPatch>,
}

pub fn build_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let samples = generate_dataset(cfg.ids, cfg.per_id, cfg.image_h, cfg.image_w, cfg.seed)?;
    let train_ids = cfg.train_ids();
    let train_set: Vec<Sample> =
        samples.iter().filter(|s| s.identity < train_ids).cloned().collect();
    let patches = generate_patch_set(cfg.patch_count, cfg.seed)?;
    Ok(Corpus { samples, train_set, patches })
}

fn eval_split(cfg: &RunConfig, corpus: &Corpus) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut rng = stream(cfg.seed, "eval-split");
    split_query_gallery(
        &corpus.samples,
        cfg.holdout_ids,
        cfg.occlude_queries,
        &corpus.patches,
        &mut rng,
    )
}

fn loss_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from("epoch,step,lr,l_total,l_mse,l_id,l_c\n");
    for s in steps {
        let sum = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.epoch,
            s.step,
            s.lr,
            s.breakdown.total,
            sum(&s.breakdown.mse),
            sum(&s.breakdown.id),
            sum(&s.breakdown.contrastive),
        );
    }
    out
}

fn components_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from(
        "epoch,step,mse_h,mse_o,id_cls_h,id_cls_o,id_flat_h,id_flat_o,id_fdm_h,id_fdm_o,\
         c_flat_h,c_flat_o,c_fdm_h,c_fdm_o,triplet\n",
    );
    let cell = |v: Option<&f32>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in steps {
        let b = &s.breakdown;
        let mut row = format!("{},{}", s.epoch, s.step);
        for i in 0..2 {
            row.push(',');
            row.push_str(&cell(b.mse.get(i)));
        }
        for i in 0..6 {
            row.push(',');
            row.push_str(&cell(b.id.get(i)));
        }
        for i in 0..4 {
            row.push(',');
            row.push_str(&cell(b.contrastive.get(i)));
        }
        row.push(',');
        row.push_str(&cell(b.triplet.as_ref()));
        row.push('\n');
        out.push_str(&row);
    }
    out
}

/// Model parameters plus both bank center matrices as named tensors.
fn checkpoint_tensors(model: &FedModel, log: &TrainLog) -> Vec<(String, crate::tensor::Tensor)> {
    let mut tensors = model.named_tensors();
    for bank in [&log.banks.post_oem, &log.banks.post_fdm] {
        tensors.push((
            bank.tag.checkpoint_name().to_string(),
            crate::tensor::Tensor::new(vec![bank.ids, bank.dim], bank.centers.clone())
                .expect("bank centers are well-formed"),
        ));
    }
    tensors
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub steps: Vec<StepRecord>,
}

/// Trains with the given ablation and writes manifest, loss CSVs and the
/// checkpoint under `out`.
pub fn run_train_with(
    cfg: &RunConfig,
    config_label: &str,
    out: &Path,
    ablation: Ablation,
) -> Result<TrainArtifacts> {
    write_manifest(out, "train", config_label, cfg)?;
    let corpus = build_corpus(cfg)?;
    let mut model = FedModel::init(cfg.model_config(), cfg.seed)?;
    let log = train(&mut model, &corpus.train_set, &corpus.patches, &cfg.train_config(ablation))?;
    let loss_path = out.join("loss.csv");
    std::fs::write(&loss_path, loss_csv(&log.steps))?;
    std::fs::write(out.join("components.csv"), components_csv(&log.steps))?;
    let ckpt_path = out.join("checkpoint.fedc");
    checkpoint::save(&ckpt_path, &checkpoint_tensors(&model, &log))?;
    Ok(TrainArtifacts { checkpoint: ckpt_path, loss_csv: loss_path, steps: log.steps })
}

pub fn run_train(cfg: &RunConfig, config_label: &str, out: &Path) -> Result<TrainArtifacts> {
    run_train_with(cfg, config_label, out, Ablation::full())
}

/// Loads a checkpoint into a freshly configured model. Evaluation requires
/// the encoder and OEM tensors; a missing or shape-mismatched tensor is a
/// checkpoint error naming it.
pub fn load_model(cfg: &RunConfig, ckpt: &Path) -> Result<FedModel> {
    let tensors = checkpoint::load(ckpt)?;
    let mut model = FedModel::init(cfg.model_config(), cfg.seed)?;
    let mut loaded: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
    loaded.sort();
    let keep: Vec<(String, crate::tensor::Tensor)> = tensors
        .into_iter()
        .filter(|(n, _)| !n.starts_with("memory."))
        .collect();
    model.params.load_values(keep)?;
    for (_, p) in model.params.iter() {
        let required = p.name.starts_with("encoder.") || p.name.starts_with("oem.");
        if required && loaded.binary_search(&p.name).is_err() {
            return Err(FedError::Checkpoint(format!(
                "checkpoint is missing required tensor {:?}",
                p.name
            )));
        }
    }
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct EvalMetrics {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

impl EvalMetrics {
    fn from_result(res: &RankingResult) -> EvalMetrics {
        EvalMetrics {
            rank1: res.rank_k(1),
            rank5: res.rank_k(5),
            rank10: res.rank_k(10),
            map: res.map,
        }
    }

    pub fn csv(&self) -> String {
        format!(
            "metric,value\nrank1,{}\nrank5,{}\nrank10,{}\nmap,{}\n",
            self.rank1, self.rank5, self.rank10, self.map
        )
    }
}

/// Embeds the held-out split and computes CMC/mAP for an already loaded model.
pub fn evaluate_model(cfg: &RunConfig, model: &FedModel, use_oem: bool) -> Result<(EvalMetrics, RankingResult)> {
    let corpus = build_corpus(cfg)?;
    let (queries, gallery) = eval_split(cfg, &corpus)?;
    let qi = embed(model, &queries, use_oem)?;
    let gi = embed(model, &gallery, use_oem)?;
    let res = cmc_map(&qi, &gi, cfg.cross_camera_only)?;
    Ok((EvalMetrics::from_result(&res), res))
}

pub fn run_eval(cfg: &RunConfig, ckpt: &Path, config_label: &str, out: &Path) -> Result<EvalMetrics> {
    write_manifest(out, "eval", config_label, cfg)?;
    let model = load_model(cfg, ckpt)?;
    let (metrics, res) = evaluate_model(cfg, &model, true)?;
    std::fs::write(out.join("metrics.csv"), metrics.csv())?;
    if cfg.dump_rankings {
        let mut dump = String::from("query,order\n");
        for (qi, order) in res.orders.iter().enumerate() {
            let order_str: Vec<String> = order.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(dump, "{qi},{}", order_str.join(" "));
        }
        std::fs::write(out.join("rankings.csv"), dump)?;
    }
    Ok(metrics)
}

/// Runs closures on up to `worker_threads()` workers, preserving result order.
fn run_parallel<T: Send>(jobs: Vec<Box<dyn FnOnce() -> Result<T> + Send>>) -> Result<Vec<T>> {
    let cap = worker_threads().max(1);
    let mut results: Vec<Option<Result<T>>> = Vec::new();
    for _ in 0..jobs.len() {
        results.push(None);
    }
    let mut queue: Vec<(usize, Box<dyn FnOnce() -> Result<T> + Send>)> =
        jobs.into_iter().enumerate().collect();
    while !queue.is_empty() {
        let wave: Vec<_> = queue.drain(..queue.len().min(cap)).collect();
        let wave_results = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .into_iter()
                .map(|(i, job)| scope.spawn(move || (i, job())))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect::<Vec<_>>()
        });
        for (i, r) in wave_results {
            results[i] = Some(r);
        }
    }
    results.into_iter().map(|r| r.expect("job ran")).collect()
}

/// Trains and evaluates one full-FED run per K, writing `sweep.csv`.
pub fn run_sweep_k(
    cfg: &RunConfig,
    ks: &[usize],
    config_label: &str,
    out: &Path,
) -> Result<Vec<(usize, EvalMetrics)>> {
    write_manifest(out, "sweep-k", config_label, cfg)?;
    for &k in ks {
        if k == 0 || k >= cfg.train_ids() {
            return Err(FedError::Config(format!(
                "sweep-k: K={k} must satisfy 1 <= K < train_ids={}",
                cfg.train_ids()
            )));
        }
    }
    let jobs: Vec<Box<dyn FnOnce() -> Result<(usize, EvalMetrics)> + Send>> = ks
        .iter()
        .map(|&k| {
            let mut sub = cfg.clone();
            sub.k = k;
            let row_out = out.join(format!("k{k}"));
            let label = config_label.to_string();
            let job: Box<dyn FnOnce() -> Result<(usize, EvalMetrics)> + Send> =
                Box::new(move || {
                    let art = run_train(&sub, &label, &row_out)?;
                    let model = load_model(&sub, &art.checkpoint)?;
                    let (metrics, _) = evaluate_model(&sub, &model, true)?;
                    std::fs::write(row_out.join("metrics.csv"), metrics.csv())?;
                    Ok((k, metrics))
                });
            job
        })
        .collect();
    let rows = run_parallel(jobs)?;
    let mut csv = String::from("k,rank1,rank5,rank10,map\n");
    for (k, m) in &rows {
        let _ = writeln!(csv, "{k},{},{},{},{}", m.rank1, m.rank5, m.rank10, m.map);
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    Ok(rows)
}

/// One ablation table row: flags plus retrieval metrics.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub index: usize,
    pub ablation: Ablation,
    pub metrics: EvalMetrics,
}

/// Trains and evaluates the six component configurations on identical
/// data and seed, writing `ablate.csv`.
pub fn run_ablate(cfg: &RunConfig, config_label: &str, out: &Path) -> Result<Vec<AblationRow>> {
    write_manifest(out, "ablate", config_label, cfg)?;
    let rows = Ablation::table_rows();
    let jobs: Vec<Box<dyn FnOnce() -> Result<AblationRow> + Send>> = rows
        .iter()
        .enumerate()
        .map(|(index, &ablation)| {
            let sub = cfg.clone();
            let row_out = out.join(format!("row{index}"));
            let label = config_label.to_string();
            let job: Box<dyn FnOnce() -> Result<AblationRow> + Send> = Box::new(move || {
                let art = run_train_with(&sub, &label, &row_out, ablation)?;
                let model = load_model(&sub, &art.checkpoint)?;
                let (metrics, _) = evaluate_model(&sub, &model, ablation.oem)?;
                std::fs::write(row_out.join("metrics.csv"), metrics.csv())?;
                Ok(AblationRow { index, ablation, metrics })
            });
            job
        })
        .collect();
    let rows = run_parallel(jobs)?;
    let mut csv = String::from("index,re,npo,oem,fdm,rank1,map\n");
    let mark = |b: bool| if b { "1" } else { "0" };
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.index,
            mark(r.ablation.random_erasing),
            mark(r.ablation.npo),
            mark(r.ablation.oem),
            mark(r.ablation.fdm),
            r.metrics.rank1,
            r.metrics.map,
        );
    }
    std::fs::write(out.join("ablate.csv"), csv)?;
    Ok(rows)
}

/// Writes (x, x') image pairs and their mask lines for visual inspection.
pub fn run_augment_preview(
    cfg: &RunConfig,
    count: usize,
    config_label: &str,
    out: &Path,
) -> Result<()> {
    write_manifest(out, "augment-preview", config_label, cfg)?;
    let corpus = build_corpus(cfg)?;
    let mut rng = stream(cfg.seed, "augment-preview");
    for i in 0..count {
        let sample = &corpus.samples[i % corpus.samples.len()];
        let pair = crate::augment::augment_pair(&sample.image, &corpus.patches, &mut rng)?;
        pair.original.write_ppm(&out.join(format!("pair{i:03}_x.ppm")))?;
        pair.occluded.write_ppm(&out.join(format!("pair{i:03}_xp.ppm")))?;
        let m = pair.mask.stripes;
        std::fs::write(
            out.join(format!("pair{i:03}_mask.txt")),
            format!("{} {} {} {}\n", m[0], m[1], m[2], m[3]),
        )?;
    }
    Ok(())
}

/// Per-image occlusion scores next to the ground-truth mask. Returns the
/// printable report; the CLI prints it to stdout.
pub fn run_inspect_scores(
    cfg: &RunConfig,
    ckpt: &Path,
    count: usize,
    config_label: &str,
    out: &Path,
) -> Result<String> {
    write_manifest(out, "inspect-scores", config_label, cfg)?;
    let model = load_model(cfg, ckpt)?;
    let corpus = build_corpus(cfg)?;
    let mut rng = stream(cfg.seed, "inspect-scores");
    let mut report = String::from("image s1 s2 s3 s4 | m1 m2 m3 m4\n");
    for i in 0..count {
        let sample = &corpus.samples[i % corpus.samples.len()];
        let pair = crate::augment::augment_pair(&sample.image, &corpus.patches, &mut rng)?;
        let mut g = Graph::inference();
        let branch = model.forward_branch(&mut g, &pair.occluded, true)?;
        let s = g.value(branch.scores);
        let m = pair.mask.stripes;
        let _ = writeln!(
            report,
            "{i:03} {:.3} {:.3} {:.3} {:.3} | {} {} {} {}",
            s[0], s[1], s[2], s[3], m[0], m[1], m[2], m[3]
        );
    }
    std::fs::write(out.join("scores.txt"), &report)?;
    Ok(report)
}

/// Dumps every dataset sample as a PPM file.
pub fn run_dump_dataset(cfg: &RunConfig, config_label: &str, out: &Path) -> Result<()> {
    write_manifest(out, "dump-dataset", config_label, cfg)?;
    let corpus = build_corpus(cfg)?;
    for (i, s) in corpus.samples.iter().enumerate() {
        s.image.write_ppm(&out.join(format!(
            "id{:03}_s{:02}_cam{}.ppm",
            s.identity,
            i % cfg.per_id,
            s.camera
        )))?;
    }
    Ok(())
}
