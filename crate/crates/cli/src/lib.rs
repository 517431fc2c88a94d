//! Command line front end: synthesize corpora, extract features, train,
//! evaluate across domains and run the six analyses.

pub mod analyze;
pub mod config;
pub mod evaluate;
pub mod featurize;
pub mod io;
pub mod prepare;
pub mod synthesize;
pub mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use deconf::{Error, ErrorKind, Result};
use serde::Serialize;

use crate::analyze::{cmd_analyze, AnalyzeInputs, Question};
use crate::config::{one_line, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "deconf", version, about = "Adversarial confound removal for emotion classifiers")]
pub struct Cli {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `jobs`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic confounded corpus.
    Synthesize,
    /// Turn a manifest's audio into feature files and compute lexical features.
    Featurize {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train the configured experiment and write its run ledger.
    Train,
    /// Score a ledger's checkpoints on another corpus.
    Evaluate {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Run one research question (q1..q6) over run ledgers.
    Analyze {
        question: String,
        #[arg(long = "ledger", required = true)]
        ledgers: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
}

/// Loads the config (or defaults) and applies the global flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

/// Runs one command and returns its human-readable summary.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synthesize => synthesize::cmd_synthesize(&cfg),
        Command::Featurize {
            manifest,
            embeddings,
            lexicon,
        } => {
            let manifest = manifest
                .clone()
                .or_else(|| cfg.data.manifest.clone())
                .ok_or_else(|| Error::Config("featurize needs --manifest".into()))?;
            let embeddings = embeddings.clone().or_else(|| cfg.data.embeddings.clone());
            let lexicon = lexicon.clone().or_else(|| cfg.data.lexicon.clone());
            featurize::cmd_featurize(&manifest, embeddings.as_deref(), lexicon.as_deref(), cfg.out_dir()?)
        }
        Command::Train => train::cmd_train(&cfg),
        Command::Evaluate {
            ledger,
            target,
            name,
            embeddings,
        } => {
            let embeddings = embeddings.clone().or_else(|| cfg.data.embeddings.clone());
            evaluate::cmd_evaluate(
                ledger,
                target,
                name.as_deref(),
                embeddings.as_deref(),
                cfg.data.duration_filter,
                cfg.out_dir()?,
            )
        }
        Command::Analyze {
            question,
            ledgers,
            manifest,
            lexicon,
        } => {
            let q: Question = question.parse()?;
            let inputs = AnalyzeInputs {
                ledgers: ledgers.clone(),
                manifest: manifest.clone().or_else(|| cfg.data.manifest.clone()),
                lexicon: lexicon.clone().or_else(|| cfg.data.lexicon.clone()),
                duration_filter: cfg.data.duration_filter,
            };
            cmd_analyze(q, &inputs, cfg.out_dir()?)
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    status: &'static str,
    kind: &'a str,
    exit_code: i32,
    message: String,
}

/// Single-line JSON describing a failure.
pub fn error_line(e: &Error) -> String {
    let kind = e.kind();
    let line = ErrorLine {
        status: "error",
        kind: match kind {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        },
        exit_code: exit_code(kind),
        message: one_line(e),
    };
    serde_json::to_string(&line).expect("error line serializes")
}
