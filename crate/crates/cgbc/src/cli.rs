//! Command-line interface. Flags override values from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cgbc_core::corpus::{ManifestRole, VulnKind};

use crate::commands;
use crate::config::ExperimentConfig;
use crate::{AppError, AppResult};

#[derive(Debug, Parser)]
#[command(
    name = "cgbc",
    about = "Contrastive granular-ball training pipeline for smart-contract vulnerability detection",
    version
)]
pub struct Cli {
    /// Experiment config (TOML); omitted sections fall back to defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; every stochastic choice derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads for sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hash, manifest, and label-check a directory of .sol files.
    Ingest(IngestArgs),
    /// Remove duplicate contracts within and across manifests.
    Dedup(DedupArgs),
    /// Generate semantic-preserving augmented variants.
    Augment(AugmentArgs),
    /// Check digest equivalence and k-gram diversity of augmented pairs.
    Verify(VerifyArgs),
    /// Contrastive pretraining on (original, augmented) pairs.
    Pretrain(PretrainArgs),
    /// Fine-tune a detector for one vulnerability kind.
    Finetune(FinetuneArgs),
    /// Full noise-robustness grid: kind x noise x seed x arm.
    NoiseSweep(NoiseSweepArgs),
    /// Evaluate a checkpoint on a labeled test manifest.
    Evaluate(EvaluateArgs),
    /// Aggregate sweep results into a summary and plot series.
    Report(ReportArgs),
    /// Dump granular balls and a 2-D projection for visualization.
    DumpBalls(DumpBallsArgs),
    /// Lex one file and emit its tokens as JSON lines.
    Tokens(TokensArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of .sol files.
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    /// Labels CSV (`id,kind,label`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Dataset role: pretrain | finetune | test.
    #[arg(long)]
    pub role: String,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    /// Manifest files (repeatable); roles set the protection priority.
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    /// Augmented variants per contract.
    #[arg(long)]
    pub variants: Option<usize>,
    /// Fraction of functions to augment.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Declare snippet variables at contract scope instead of inside the
    /// function.
    #[arg(long)]
    pub contract_level: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Directory of original contracts.
    #[arg(long)]
    pub orig: PathBuf,
    /// Directory of augmented contracts (`<stem>.aug<N>.sol`).
    #[arg(long)]
    pub aug: PathBuf,
    /// k-gram length.
    #[arg(long)]
    pub k: Option<usize>,
    /// Diversity thresholds (repeatable).
    #[arg(long = "tau")]
    pub taus: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub orig: PathBuf,
    #[arg(long)]
    pub aug: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Vulnerability kind: RE | TD | IO.
    #[arg(long)]
    pub kind: String,
    /// Checkpoint to start from (pretrained encoder).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Label-noise rate injected into the training labels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct NoiseSweepArgs {
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub finetune_manifest: PathBuf,
    #[arg(long)]
    pub test_manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Noise level recorded in the metrics row (bookkeeping only).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results CSV from `noise-sweep`.
    #[arg(long)]
    pub results: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpBallsArgs {
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Purity threshold override.
    #[arg(long)]
    pub pur: Option<f64>,
    /// Cluster at most this many records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TokensArgs {
    /// Solidity source file.
    #[arg(long)]
    pub file: PathBuf,
    /// Write JSON lines here instead of stdout.
    #[arg(long = "to")]
    pub to: Option<PathBuf>,
}

fn parse_kind(s: &str) -> AppResult<VulnKind> {
    VulnKind::parse(s)
        .ok_or_else(|| AppError::Config(format!("unknown kind `{s}` (RE | TD | IO)")))
}

fn parse_role(s: &str) -> AppResult<ManifestRole> {
    ManifestRole::parse(s)
        .ok_or_else(|| AppError::Config(format!("unknown role `{s}` (pretrain | finetune | test)")))
}

/// Loads the config file if given, otherwise defaults.
fn effective_config(cli: &Cli) -> AppResult<ExperimentConfig> {
    match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

pub fn dispatch(cli: Cli) -> AppResult<()> {
    let cfg = effective_config(&cli)?;
    match &cli.command {
        Command::Ingest(a) => {
            cmd_banner("ingest");
            commands::cmd_ingest(&a.in_dir, a.labels.as_deref(), parse_role(&a.role)?, &cli.out)
        }
        Command::Dedup(a) => {
            cmd_banner("dedup");
            commands::cmd_dedup(&a.manifests, &cli.out)
        }
        Command::Augment(a) => {
            cmd_banner("augment");
            let stats = commands::cmd_augment(
                &a.in_dir,
                &cli.out,
                a.variants.unwrap_or(cfg.augment.variants),
                a.rho.unwrap_or(cfg.augment.rho),
                cli.seed,
                a.contract_level || cfg.augment.contract_level,
            )?;
            println!(
                "augmented {} contract(s); skipped {}",
                stats.augmented,
                stats.skipped.len()
            );
            Ok(())
        }
        Command::Verify(a) => {
            cmd_banner("verify");
            let taus = if a.taus.is_empty() { cfg.verify.taus.clone() } else { a.taus.clone() };
            let summary = commands::cmd_verify(
                &a.orig,
                &a.aug,
                a.k.unwrap_or(cfg.verify.k),
                &taus,
                &cli.out,
            )?;
            println!(
                "pairs: {}  equivalent: {:.2}%",
                summary.pairs,
                100.0 * summary.equivalent_fraction
            );
            for (tau, frac) in &summary.per_tau {
                println!("tau {tau}: {:.2}% diverse", 100.0 * frac);
            }
            Ok(())
        }
        Command::Pretrain(a) => {
            cmd_banner("pretrain");
            commands::cmd_pretrain(&a.orig, &a.aug, &cli.out, &cfg, cli.seed)
        }
        Command::Finetune(a) => {
            cmd_banner("finetune");
            commands::cmd_finetune(
                &a.in_dir,
                &a.manifest,
                &a.labels,
                parse_kind(&a.kind)?,
                a.init.as_deref(),
                a.noise,
                &cli.out,
                &cfg,
                cli.seed,
            )
        }
        Command::NoiseSweep(a) => {
            cmd_banner("noise-sweep");
            let rows = commands::cmd_noise_sweep(
                &a.in_dir,
                &a.labels,
                &a.finetune_manifest,
                &a.test_manifest,
                &cli.out,
                &cfg,
                cli.jobs,
            )?;
            println!("wrote {} result rows", rows.len());
            Ok(())
        }
        Command::Evaluate(a) => {
            cmd_banner("evaluate");
            let m = commands::cmd_evaluate(
                &a.in_dir,
                &a.manifest,
                &a.labels,
                parse_kind(&a.kind)?,
                &a.checkpoint,
                &cli.out,
                a.noise,
                cli.seed,
            )?;
            println!(
                "precision {:.4}  recall {:.4}  f1 {:.4}",
                m.precision, m.recall, m.f1
            );
            Ok(())
        }
        Command::Report(a) => {
            cmd_banner("report");
            commands::cmd_report(&a.results, &cli.out)
        }
        Command::DumpBalls(a) => {
            cmd_banner("dump-balls");
            commands::cmd_dump_balls(
                &a.in_dir,
                &a.manifest,
                &a.labels,
                parse_kind(&a.kind)?,
                &a.checkpoint,
                &cli.out,
                a.pur.unwrap_or(cfg.cluster.pur),
                a.limit,
            )
        }
        Command::Tokens(a) => commands::cmd_tokens(&a.file, a.to.as_deref()),
    }
}

fn cmd_banner(name: &str) {
    eprintln!("[cgbc] {name}");
}
