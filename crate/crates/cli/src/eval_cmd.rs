//! `eval`: score a checkpoint on a held-out JSONL file.
//!
//! Times are rescaled with the scaler stored in the checkpoint, never refit,
//! so numbers are comparable across datasets scored by the same model.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use taltpp_core::checkpoint::Checkpoint;
use taltpp_core::data::load_sequences;
use taltpp_core::train::{evaluate_scaled, EvalReport, PredRoute};

use crate::common::{prepare_against, write_json};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// checkpoint.json from a training run.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL file of event sequences to score.
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction route: heads|mbr.
    #[arg(long, default_value = "heads")]
    pub route: String,
    /// Seed for the likelihood's Monte Carlo draws.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(serde::Serialize)]
struct EvalRecord<'a> {
    checkpoint: String,
    data: String,
    route: &'a str,
    seed: u64,
    sequences: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<&'a String>,
    metrics: EvalReport,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (model, vocab, scaler, range) = ckpt.restore()?;
    let data = load_sequences(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))?;
    let prepared = prepare_against(&data, &ckpt.type_names, &vocab, &scaler)?;
    let route = PredRoute::parse(&args.route)?;
    let metrics = evaluate_scaled(
        &model,
        &prepared,
        &range,
        route,
        args.seed,
        "eval",
        scaler.scale,
    )?;
    let record = EvalRecord {
        checkpoint: args.checkpoint.display().to_string(),
        data: args.data.display().to_string(),
        route: route.name(),
        seed: args.seed,
        sequences: prepared.len(),
        config_hash: ckpt.config_hash.as_ref(),
        metrics,
    };
    match &args.out {
        Some(path) => {
            write_json(path, &record)?;
            println!("wrote {}", path.display());
        }
        None => print_record(&record),
    }
    Ok(())
}

fn print_record(record: &EvalRecord<'_>) {
    // Stdout gets the same JSON a --out file would hold.
    match serde_json::to_string_pretty(record) {
        Ok(json) => crate::common::emit_stdout(&json),
        Err(e) => eprintln!("cannot render metrics: {e}"),
    }
}
