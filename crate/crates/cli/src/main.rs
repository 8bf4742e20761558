//! `signseq`: generate synthetic keypoint data, train, evaluate, benchmark
//! and gradient-check the sign classifiers.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use signseq::models::Arch;

#[derive(Parser)]
#[command(name = "signseq", version, about = "Keypoint-sequence sign classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Lstm,
    Cnntrans,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Lstm => Arch::Lstm,
            ArchArg::Cnntrans => Arch::CnnTrans,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for signseq::eval::Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => Self::Text,
            FormatArg::Csv => Self::Csv,
            FormatArg::Json => Self::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Scope {
    Layers,
    Models,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic gesture dataset (.ksq files, manifest, class table)
    Gen {
        #[arg(long, default_value_t = 50)]
        classes: usize,
        /// Samples per class
        #[arg(long, default_value_t = 139)]
        samples: usize,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 174)]
        features: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a manifest; writes checkpoints, a CSV log and
    /// the effective configuration
    Train {
        #[arg(long, value_enum)]
        arch: ArchArg,
        /// Dataset manifest (manifest.csv)
        #[arg(long)]
        data: PathBuf,
        /// key=value settings file
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr_start: Option<f64>,
        #[arg(long)]
        lr_min: Option<f64>,
        #[arg(long)]
        val_fraction: Option<f64>,
        #[arg(long)]
        seq_len: Option<usize>,
        /// Start from this checkpoint; its classifier is replaced when the
        /// class count differs
        #[arg(long)]
        init: Option<PathBuf>,
        /// Extra key=value overrides, applied after the config file
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Classification report of a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Batch-1 latency benchmark of checkpoints or freshly built models
    Bench {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_enum)]
        arch: Vec<ArchArg>,
        /// Input length for freshly built models (default 45 for lstm, 384
        /// for cnntrans)
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long, default_value_t = 174)]
        features: usize,
        #[arg(long, default_value_t = 50)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        /// Timed runs per model (at least 30)
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the JSON result (with raw latencies) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer and both models
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        scope: Scope,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Add a deliberately detached op to the table
        #[arg(long, hide = true)]
        inject_broken: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
