//! The `layerscope` command line: every pipeline stage as a subcommand
//! driven by one JSON configuration file.
//!
//! ```text
//! layerscope <calibrate|prepare|clean|slice|synth|train|classify|report>
//!     --config PATH [--seed N] [--out DIR] [--threshold F] [--repetitions N]
//! ```
//!
//! Every run writes a [`RunReport`] as `run_<command>.json` in the output
//! root (`report` writes it to its configured output instead). Exit codes:
//! 0 success, 1 validation or configuration error, 2 I/O error, 3 numerical
//! failure.

pub mod commands;
pub mod config;
mod error;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Context, PipelineConfig};
pub use error::CliError;
pub use report::RunReport;

#[derive(Debug, Parser)]
#[command(name = "layerscope", version, about = "Layer image preparation, synthetic data and anomaly classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the config's output root.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the clean threshold on P(bad).
    #[arg(long, value_name = "F")]
    pub threshold: Option<f64>,
    /// Overrides the report's repetition count.
    #[arg(long, value_name = "N")]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate intrinsics and radial distortion from board correspondences.
    Calibrate(Common),
    /// Sort images into good/ and bad/ with a Type 1 model.
    Clean(Common),
    /// Undistort, register and crop a directory of layer images.
    Prepare(Common),
    /// Slice an STL mesh into per-layer SVG contours.
    Slice(Common),
    /// Generate a synthetic layer-image dataset with a manifest.
    Synth(Common),
    /// Train a classifier on a dataset manifest.
    Train(Common),
    /// Write per-image class probabilities.
    Classify(Common),
    /// Aggregate a probability table into metrics and confidence intervals.
    Report(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::Clean(_) => "clean",
            Command::Prepare(_) => "prepare",
            Command::Slice(_) => "slice",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Classify(_) => "classify",
            Command::Report(_) => "report",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Calibrate(c)
            | Command::Clean(c)
            | Command::Prepare(c)
            | Command::Slice(c)
            | Command::Synth(c)
            | Command::Train(c)
            | Command::Classify(c)
            | Command::Report(c) => c,
        }
    }
}

/// Runs one subcommand and writes its report.
pub fn run(command: &Command) -> Result<RunReport, CliError> {
    let ctx = Context::load(command.common())?;
    std::fs::create_dir_all(&ctx.out).map_err(CliError::io(&ctx.out))?;
    let report = match command {
        Command::Calibrate(_) => commands::calibrate(&ctx),
        Command::Clean(_) => commands::clean(&ctx),
        Command::Prepare(_) => commands::prepare(&ctx),
        Command::Slice(_) => commands::slice(&ctx),
        Command::Synth(_) => commands::synth(&ctx),
        Command::Train(_) => commands::train(&ctx),
        Command::Classify(_) => commands::classify(&ctx),
        Command::Report(_) => commands::report(&ctx),
    }?;
    let path = match (command, &ctx.config.report) {
        (Command::Report(_), Some(s)) => ctx.output(&s.output),
        _ => ctx.out.join(format!("run_{}.json", command.name())),
    };
    report::write_json(&path, &report)?;
    Ok(report)
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("layerscope {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
