//! `helioadapt` — train a binned solar-power classifier on one location's
//! weather data and adapt it to another location without ever shipping the
//! first location's samples.
//!
//! The pipeline runs as separate stages, each reading the previous stage's
//! files: `synth` (or your own CSVs) → `prep` → `select-features` →
//! `train-source` → `adapt` → `eval`, with `experiment` and `report`
//! wrapping the whole grid. Exit codes: 0 success, 2 usage error, 3 data
//! error, 4 contract violation, 1 anything else.

use clap::{Parser, Subcommand};
use helioadapt_cli::{commands, errors};

#[derive(Parser)]
#[command(
    name = "helioadapt",
    version,
    about = "Binned solar-power classification with source-free location adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic weather and power CSVs for a bundled climate profile
    Synth(commands::SynthArgs),
    /// Merge, resample, and split one location's CSVs into a prepared dataset
    Prep(commands::PrepArgs),
    /// Rank features by forest importance and keep the top k
    SelectFeatures(commands::SelectFeaturesArgs),
    /// Train the source classifier and emit a transferable model file
    TrainSource(commands::TrainSourceArgs),
    /// Adapt a trained model to a target location, source-free
    Adapt(commands::AdaptArgs),
    /// Score a model file on one split of a prepared dataset
    Eval(commands::EvalArgs),
    /// Run the full source x target x annotation-share x seed grid
    Experiment(commands::ExperimentArgs),
    /// Render result tables and curve data from grid output
    Report(commands::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::run_synth(args),
        Command::Prep(args) => commands::run_prep(args),
        Command::SelectFeatures(args) => commands::run_select_features(args),
        Command::TrainSource(args) => commands::run_train_source(args),
        Command::Adapt(args) => commands::run_adapt(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::Experiment(args) => commands::run_experiment(args),
        Command::Report(args) => commands::run_report(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(errors::exit_code(&err));
    }
}
