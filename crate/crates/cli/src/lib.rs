//! `hbev` command-line tool: synthetic datasets, hindsight labels, lifting
//! benchmarks, evaluation and plots.

// `!(a < b)` is how validation rejects NaN alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "hbev",
    version,
    about = "Hindsight BEV traversability labels and evaluation"
)]
pub struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and its sensor dataset.
    GenWorld(commands::gen_world::GenWorldArgs),
    /// Fuse per-timestep estimates into hindsight labels.
    Hindsight(commands::hindsight::HindsightArgs),
    /// Lift camera features into the BEV grid.
    Lift(commands::lift::LiftArgs),
    /// Score predicted maps against ground truth.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Draw distance curves from evaluation CSVs as SVG.
    Plot(commands::plot::PlotArgs),
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::GenWorld(a) => commands::gen_world::run(a, config),
        Command::Hindsight(a) => commands::hindsight::run(a, config),
        Command::Lift(a) => commands::lift::run(a, config),
        Command::Evaluate(a) => commands::evaluate::run(a, config),
        Command::Plot(a) => commands::plot::run(a, config),
    }
}

/// Short machine-readable category of an error.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    use hbev_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => "io",
                Error::Format { .. } | Error::Csv(_) | Error::Json(_) => "format",
                Error::UndefinedMetric => "undefined_metric",
                _ => "invalid_argument",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<toml::de::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<csv::Error>()
        {
            return "format";
        }
    }
    "error"
}

/// The JSON object printed on stderr when a command fails.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    json!({
        "error": {
            "kind": error_kind(err),
            "message": format!("{err:#}"),
        }
    })
}
