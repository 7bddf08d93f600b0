//! `seqtube` command-line tool.
//!
//! Exit codes: 0 success, 1 bad input or configuration, 2 internal
//! invariant violation.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "seqtube", version, about = "Tubelet post-processing, scoring and mosaicking for survey detections")]
struct Cli {
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Generator seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration; flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build tubelets and score them against ground truth.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: Tuning,
        /// Also write tubelets.jsonl.
        #[arg(long)]
        dump_tubelets: bool,
    },
    /// Register frames, render the detection heatmap and compare
    /// false-alarm counts before and after cross-pass deduplication.
    Mosaic {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: Tuning,
        /// CSV of frame_id,src_x,src_y,dst_x,dst_y point pairs.
        #[arg(long, value_name = "PATH")]
        correspondences: Option<PathBuf>,
        /// Fixed 16-bit scale factor instead of max normalization.
        #[arg(long)]
        heatmap_factor: Option<f64>,
        /// Confidence cut for the heatmap and the false-alarm comparison.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        raster_scale: Option<f64>,
    },
    /// Write a synthetic survey as a run directory.
    Generate {
        /// Scenario TOML; the built-in survey preset when absent.
        scenario: Option<PathBuf>,
    },
    /// Per-class table from a confusion matrix CSV.
    EvalOnly {
        /// Header `true,<labels...>` ending in `Not Detected`; one row per label.
        confusion: PathBuf,
        #[arg(long, default_value_t = 0)]
        false_detections: u64,
        #[arg(long, default_value_t = 4270.0)]
        area: f64,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Run directory containing run.toml.
    run_dir: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    frames: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    detections: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    ground_truth: Option<PathBuf>,
    /// Surveyed area in square metres.
    #[arg(long)]
    area: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct Tuning {
    /// Keep every detection as its own tubelet.
    #[arg(long)]
    baseline: bool,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    kappa: Option<u32>,
    #[arg(long)]
    min_length: Option<usize>,
    #[arg(long)]
    q_min: Option<f64>,
    #[arg(long)]
    match_radius: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Iou,
    Distance,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Invariant(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<seqtube::Error> for Failure {
    fn from(e: seqtube::Error) -> Self {
        Failure::Input(e.into())
    }
}

/// Context chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| commands::dispatch(&cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        // reader went away, as with `| head`
        Ok(Err(Failure::Input(e))) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Ok(Err(Failure::Input(e))) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Ok(Err(Failure::Invariant(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
