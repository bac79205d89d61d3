//! `octseg`: phantom generation, fold planning, training, refinement, evaluation
//! and reporting over a run directory.

mod commands;
mod overlay;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit status for invalid input (bad flags, malformed config, impossible fold plan).
const EXIT_VALIDATION: u8 = 1;
/// Exit status for failures while running (I/O, diverging training, corrupt checkpoints).
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "octseg", version, about = "Retina and PED segmentation experiments on OCT volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config (phantom spec for `generate`, training config otherwise).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory: the dataset for `generate`, the run directory otherwise.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub fold: Option<usize>,

    /// Network checkpoint to load (defaults to the run directory's checkpoint for the fold).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,

    #[arg(long, short, global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Writes synthetic volume/label pairs and a dataset manifest.
    Generate {
        #[arg(long)]
        n: usize,
    },
    /// Splits a dataset into patient-grouped cross-validation folds.
    Folds {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Trains the segmentation network on one fold.
    TrainUnet {
        #[arg(long)]
        data: PathBuf,
    },
    /// Trains the shape autoencoder on one fold's reference shapes.
    TrainCdae {
        #[arg(long)]
        data: PathBuf,
    },
    /// Segments the test volumes of one fold.
    Predict {
        #[arg(long)]
        data: PathBuf,
    },
    /// Refines predicted shapes and fuses them with the segmentation.
    Refine,
    /// Scores predictions of one fold against the reference labels.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Aggregates fold reports and renders B-scan overlays.
    Report {
        #[arg(long)]
        data: PathBuf,
    },
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| {
            use std::io::Write;
            writeln!(buf, "level={} target={} {}", record.level().as_str().to_lowercase(), record.target(), record.args())
        })
        .try_init();
}

/// Validation errors exit with 1, everything else with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<octseg::Error>() {
            return match e {
                octseg::Error::Validation(_)
                | octseg::Error::Argument(_)
                | octseg::Error::Spec(_)
                | octseg::Error::Plan(_)
                | octseg::Error::Shape { .. }
                | octseg::Error::Json(_) => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            };
        }
        if cause.is::<serde_json::Error>() || cause.is::<run::UsageError>() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    init_logging(&cli);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
