//! Command-line entry point: generate data, train, evaluate, predict, and
//! inspect attention.

mod ablations;
mod attn_cmd;
mod common;
mod eval_cmd;
mod gen;
mod predict_cmd;
mod train_cmd;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "taltpp", version, about = "Marked temporal point process modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a known generator.
    Generate(gen::GenArgs),
    /// Train a model on a generated split.
    Train(train_cmd::TrainArgs),
    /// Score a checkpoint on a JSONL file.
    Eval(eval_cmd::EvalArgs),
    /// Predict each sequence's next event time and type.
    Predict(predict_cmd::PredictArgs),
    /// Export realized attention weights for inspection.
    AttnDump(attn_cmd::AttnArgs),
    /// List the switchable model variants and their flags.
    ListAblations,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(args) => gen::run(args),
        Command::Train(args) => train_cmd::run(args),
        Command::Eval(args) => eval_cmd::run(args),
        Command::Predict(args) => predict_cmd::run(args),
        Command::AttnDump(args) => attn_cmd::run(args),
        Command::ListAblations => ablations::run(),
    }
}
