//! `dishscan`: detect stacked dishes in a photo, classify them and print the bill.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dishscan", version, about = "Stacked dish detection, classification and billing")]
pub struct Cli {
    /// Seed for every random choice (consensus sampling, synthetic scenes, training).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Write intermediate detection images into this directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub debug_overlays: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the dish ellipses in an image.
    Detect {
        image: PathBuf,
        #[arg(long)]
        json: bool,
        /// Skip reconstruction of weakly visible dishes.
        #[arg(long)]
        no_reconstruct: bool,
    },
    /// Detect and name every dish.
    Classify {
        image: PathBuf,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long)]
        json: bool,
    },
    /// Detect, classify and price the tower.
    Bill {
        image: PathBuf,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long)]
        json: bool,
    },
    /// Train the patch classifier.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss and accuracy as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render synthetic scenes with ground truth, or a labeled patch set.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Weaken a fraction of each interior dish's rim, in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        occluded: f64,
        /// Write `count` dish patches and a manifest instead of scenes.
        #[arg(long)]
        patches: bool,
    },
    /// Score detections against ground truth.
    EvalDetect {
        /// Directory of scene images with their JSON truth files.
        #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
        data: Option<PathBuf>,
        /// Render this many scenes instead of reading them.
        #[arg(long)]
        synth: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        occluded: f64,
        #[arg(long)]
        no_reconstruct: bool,
        /// Metrics CSV, one row per image plus a total.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and confusion matrix of a model on labeled patches.
    EvalClassify {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,
        /// Confusion matrix CSV.
        #[arg(long)]
        out: PathBuf,
        /// Confusion matrix heat map PNG.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ClassifierArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use the nearest-palette-color baseline instead of a model.
    #[arg(long)]
    pub chroma: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DataArgs {
    /// Patch manifest written by `synth --patches`.
    #[arg(long, value_name = "MANIFEST")]
    pub data: Option<PathBuf>,
    /// Render this many labeled patches instead of reading them.
    #[arg(long, value_name = "COUNT")]
    pub synth: Option<usize>,
}

/// Process exit codes.
pub mod exit {
    pub const USAGE: u8 = 1;
    pub const NO_TOWER: u8 = 2;
    pub const IO: u8 = 3;
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(exit::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

/// The error chain joined by ": ", skipping causes already spelled out by
/// the message before them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
