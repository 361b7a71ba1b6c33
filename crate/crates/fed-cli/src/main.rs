//! `fed` command line: train and evaluate the occluded-ReID pipeline on
//! synthetic data, plus sweeps, ablations and artifact dumps.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 I/O failure,
//! 4 checkpoint/architecture mismatch, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fed_core::config::RunConfig;
use fed_core::runner;
use fed_core::{FedError, Result};

#[derive(Parser)]
#[command(name = "fed", version, about = "Feature erasing and diffusion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Plain-text `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "fed-out")]
    out: PathBuf,
    /// Enables or disables the mask MSE loss.
    #[arg(long, value_parser = ["on", "off"])]
    mse: Option<String>,
    /// Drops same-identity same-camera gallery entries per query.
    #[arg(long)]
    cross_camera_only: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full model and write checkpoint + loss CSVs.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint: CMC/mAP on the held-out identities.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train/evaluate once per K in the memory-search sweep.
    SweepK {
        #[command(flatten)]
        common: Common,
        /// Comma-separated K values.
        #[arg(long, default_value = "2,4,6,8", value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Run the six component configurations on identical data and seed.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Write augmented image pairs and their mask lines.
    AugmentPreview {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Print per-image occlusion scores next to the ground-truth mask.
    InspectScores {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Dump every dataset sample as a PPM file.
    DumpDataset {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<(RunConfig, String)> {
    let (mut cfg, label) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                FedError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            (RunConfig::parse(&text)?, path.display().to_string())
        }
        None => (RunConfig::default(), "<defaults>".to_string()),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mse) = &common.mse {
        cfg.mse = mse == "on";
    }
    if common.cross_camera_only {
        cfg.cross_camera_only = true;
    }
    cfg.validate()?;
    Ok((cfg, label))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let (cfg, label) = load_config(&common)?;
            let art = runner::run_train(&cfg, &label, &common.out)?;
            println!(
                "trained {} steps; checkpoint at {}",
                art.steps.len(),
                art.checkpoint.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, label) = load_config(&common)?;
            let metrics = runner::run_eval(&cfg, &checkpoint, &label, &common.out)?;
            println!("rank1 {}", metrics.rank1);
            println!("map {}", metrics.map);
        }
        Command::SweepK { common, k } => {
            let (cfg, label) = load_config(&common)?;
            let rows = runner::run_sweep_k(&cfg, &k, &label, &common.out)?;
            for (k, m) in rows {
                println!("k={k} rank1={} map={}", m.rank1, m.map);
            }
        }
        Command::Ablate { common } => {
            let (cfg, label) = load_config(&common)?;
            let rows = runner::run_ablate(&cfg, &label, &common.out)?;
            for r in rows {
                println!(
                    "row{} re={} npo={} oem={} fdm={} rank1={} map={}",
                    r.index,
                    u8::from(r.ablation.random_erasing),
                    u8::from(r.ablation.npo),
                    u8::from(r.ablation.oem),
                    u8::from(r.ablation.fdm),
                    r.metrics.rank1,
                    r.metrics.map
                );
            }
        }
        Command::AugmentPreview { common, count } => {
            let (cfg, label) = load_config(&common)?;
            runner::run_augment_preview(&cfg, count, &label, &common.out)?;
            println!("wrote {count} pairs to {}", common.out.display());
        }
        Command::InspectScores { common, checkpoint, count } => {
            let (cfg, label) = load_config(&common)?;
            let report = runner::run_inspect_scores(&cfg, &checkpoint, count, &label, &common.out)?;
            print!("{report}");
        }
        Command::DumpDataset { common } => {
            let (cfg, label) = load_config(&common)?;
            runner::run_dump_dataset(&cfg, &label, &common.out)?;
            println!("dumped dataset to {}", common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                FedError::Config(_) => 2,
                FedError::Io(_) => 3,
                FedError::Checkpoint(_) => 4,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
