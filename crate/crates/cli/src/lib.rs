//! `hvm`: the command-line front end of `hvm-core`.
//!
//! Every invocation loads a [`RunConfig`], applies `--seed`, the `HVM_SEED`
//! environment variable and `--set` overrides, validates it, and writes its
//! artifacts into a fresh run directory named after the config hash and seed.

pub mod commands;
pub mod config;
pub mod rundir;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use hvm_core::par::Exec;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "hvm", version, about = "Spatiotemporal MAE pretraining and few-shot evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults are used for anything not given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides HVM_SEED and the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override one config field, e.g. `--set model.mask_ratio=0.75`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Scan segments (or convert PNG frame directories) into a manifest.
    Ingest,
    /// Write a synthetic labelled clip dataset.
    Synthgen,
    /// Masked-autoencoder pretraining.
    Pretrain,
    /// Few-shot supervised finetuning, from scratch or a checkpoint.
    Finetune,
    /// Top-k accuracy of a finetuned checkpoint on the test split.
    Eval,
    /// Mean-pooled encoder embeddings for every labelled clip.
    Embed,
    /// Two-dimensional t-SNE of an embedding file.
    Tsne,
    /// Log-linear fit of accuracy against data hours.
    FitScaling,
    /// Markdown summary next to the published values.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Synthgen => "synthgen",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Eval => "eval",
            Command::Embed => "embed",
            Command::Tsne => "tsne",
            Command::FitScaling => "fit-scaling",
            Command::Report => "report",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; nothing was run.
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "validation error: {e:#}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

/// The effective configuration for `cli`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Validation)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.set).map_err(CliError::Validation)?;
    if let Ok(s) = std::env::var(config::SEED_ENV) {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|e| CliError::Validation(anyhow::anyhow!("{}={s:?}: {e}", config::SEED_ENV)))?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(CliError::Validation)?;
    Ok(cfg)
}

fn required_fields(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    let needed: &[(&str, &str)] = match command {
        Command::Ingest => &[("ingest.root", &cfg.ingest.root)],
        Command::Pretrain => &[("data.manifest", &cfg.data.manifest)],
        Command::Finetune => &[("data.labels", &cfg.data.labels)],
        Command::Eval | Command::Embed => &[("data.labels", &cfg.data.labels), ("eval.checkpoint", &cfg.eval.checkpoint)],
        Command::Tsne => &[("tsne.embeddings", &cfg.tsne.embeddings)],
        Command::FitScaling => &[("scaling.points", &cfg.scaling.points)],
        Command::Synthgen | Command::Report => &[],
    };
    let missing: Vec<&str> = needed.iter().filter(|(_, v)| v.is_empty()).map(|(k, _)| *k).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(anyhow::anyhow!(
            "`{}` needs {}",
            command.name(),
            missing.join(", ")
        )))
    }
}

/// Runs one command and returns its run directory and a one-line summary.
pub fn execute(cli: &Cli) -> Result<(PathBuf, String), CliError> {
    let cfg = resolve_config(cli)?;
    required_fields(cli.command, &cfg)?;
    let dir = rundir::create(&cli.out_dir, cli.command.name(), &cfg.hash(), cfg.seed).map_err(CliError::Runtime)?;
    std::fs::write(dir.join(rundir::CONFIG_FILE), cfg.canonical())
        .map_err(|e| CliError::Runtime(e.into()))?;
    let exec = if cfg.runtime.parallel { Exec::Parallel } else { Exec::Sequential };
    let ctx = commands::Ctx {
        cfg: &cfg,
        dir: &dir,
        exec,
    };
    let summary = in_pool(cfg.runtime.threads, || match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Synthgen => commands::synth(&ctx),
        Command::Pretrain => commands::pretrain_cmd(&ctx),
        Command::Finetune => commands::finetune_cmd(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Embed => commands::embed(&ctx),
        Command::Tsne => commands::tsne_cmd(&ctx),
        Command::FitScaling => commands::fit_scaling(&ctx),
        Command::Report => commands::report(&ctx),
    })
    .map_err(CliError::Runtime)?;
    rundir::write_checksums(&dir).map_err(CliError::Runtime)?;
    Ok((dir, summary))
}

#[cfg(feature = "parallel")]
fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> anyhow::Result<T> + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn in_pool<T>(_threads: usize, f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
    f()
}

/// Parses `args` (including the program name), runs, prints, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok((dir, summary)) => {
            println!("{summary}");
            println!("run directory: {}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
