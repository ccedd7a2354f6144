//! Command-line front end for the batch-correction pipeline:
//! generate → preprocess → pretrain → finetune → correct → evaluate → report.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use morphotr_core::CoreError;

/// Batch-effect correction for morphological profiles.
#[derive(Parser)]
#[command(name = "morphotr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted batch effects.
    Generate {
        /// Generator config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset CSV.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth sidecar JSON (default: <out>.truth.json).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Impute, MAD-normalize per plate against negative controls, clip.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage-1 masked pre-training from random initialization.
    Pretrain {
        /// Preprocessed dataset CSV.
        #[arg(long)]
        input: PathBuf,
        /// Stage config (TOML, stage = 1); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Contrastive fine-tuning (stage 2 intra-source, stage 3 inter-source).
    Finetune {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Curriculum stage to run (2 or 3).
        #[arg(long)]
        stage: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embed a dataset with a trained checkpoint (features are aligned to
    /// the checkpoint schema automatically).
    Correct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output embeddings CSV.
        #[arg(long)]
        out: PathBuf,
        /// Use this registered source as the context token for every
        /// profile (the out-of-distribution proxy path).
        #[arg(long)]
        source_id: Option<String>,
        /// Encoding batch size.
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Score embeddings (and/or inline classical baselines) with the full
    /// metric suite.
    Evaluate {
        /// Embedding CSV files to score.
        #[arg(long, num_args = 0..)]
        embeddings: Vec<PathBuf>,
        /// Method names for the embedding files (default: file stems).
        #[arg(long, num_args = 0..)]
        names: Vec<String>,
        /// Dataset CSV for inline baseline methods.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Baselines to run on --input: combat | harmony | sphering | identity.
        #[arg(long, num_args = 0..)]
        method: Vec<String>,
        /// Metric report CSV.
        #[arg(long)]
        out: PathBuf,
        /// Batch label key: source | plate.
        #[arg(long, default_value = "source")]
        batch_key: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Merge metric reports into a comparison table and export 2-D PCA
    /// projections for plotting.
    Report {
        /// Metric CSVs produced by `evaluate`.
        #[arg(long, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// Embedding CSVs to project to two principal components.
        #[arg(long, num_args = 0..)]
        embeddings: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage and validation problems exit with code 1.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numeric = err
                .chain()
                .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::NonFinite(_))));
            ExitCode::from(if numeric { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { config, out, truth, seed } => {
            commands::generate(&config, &out, truth.as_deref(), seed)
        }
        Command::Preprocess { input, out } => commands::preprocess(&input, &out),
        Command::Pretrain { input, config, out, trace, seed } => {
            commands::pretrain(&input, config.as_deref(), &out, trace.as_deref(), seed)
        }
        Command::Finetune { input, checkpoint, stage, config, out, trace, seed } => {
            commands::finetune(&input, &checkpoint, stage, config.as_deref(), &out, trace.as_deref(), seed)
        }
        Command::Correct { input, checkpoint, out, source_id, batch } => {
            commands::correct(&input, &checkpoint, &out, source_id.as_deref(), batch)
        }
        Command::Evaluate { embeddings, names, input, method, out, batch_key, seed } => {
            commands::evaluate(&embeddings, &names, input.as_deref(), &method, &out, &batch_key, seed)
        }
        Command::Report { metrics, embeddings, out_dir } => {
            commands::report(&metrics, &embeddings, &out_dir)
        }
    }
}
