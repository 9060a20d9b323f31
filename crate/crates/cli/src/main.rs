mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stepalign::pipeline::Arm;

/// Step alignment and mistake detection on procedural videos.
///
/// Every command that trains or samples takes an explicit --seed. Configs are
/// experiment JSON files; fields left out keep their defaults.
#[derive(Debug, Parser)]
#[command(name = "stepalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus: texts, annotations and features.
    Synth {
        /// Experiment config; its `synth` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group k-fold split of a corpus.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one aligner per fold, written to OUT/fold<k>/align.ckpt.
    TrainAlign {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fold workers; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Train one mistake classifier per fold for an arm, next to the aligners.
    TrainDetect {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        ckpts: PathBuf,
        #[arg(long, default_value = "full")]
        arm: Arm,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Score an arm's checkpoints on each fold's test videos.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        ckpts: PathBuf,
        #[arg(long)]
        arm: Arm,
        /// Supplies the drop percentile; must match training.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Synthesize (or load), split, train and evaluate every arm in one go.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replaces every seed in the config: corpus, split, aligner, classifier.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Agreement of two annotations of the same video: tIoU and Cohen's kappa.
    Agreement {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// CSV tables and timeline SVGs from a report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, seed, out } => cmd::synth(config.as_deref(), seed, &out),
        Command::Split {
            corpus,
            k,
            seed,
            out,
        } => cmd::split(&corpus, k, seed, &out),
        Command::TrainAlign {
            corpus,
            folds,
            config,
            seed,
            out,
            jobs,
        } => cmd::train_align(&corpus, &folds, config.as_deref(), seed, &out, jobs),
        Command::TrainDetect {
            corpus,
            folds,
            ckpts,
            arm,
            config,
            seed,
            jobs,
        } => cmd::train_detect(&corpus, &folds, &ckpts, arm, config.as_deref(), seed, jobs),
        Command::Eval {
            corpus,
            folds,
            ckpts,
            arm,
            config,
            out,
            jobs,
        } => cmd::eval(&corpus, &folds, &ckpts, arm, config.as_deref(), &out, jobs),
        Command::Run {
            config,
            seed,
            out,
            jobs,
        } => cmd::run(config.as_deref(), seed, &out, jobs),
        Command::Agreement { a, b } => cmd::agreement(&a, &b),
        Command::Report { input, out } => cmd::report(&input, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Display already carries the path and fold context.
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
