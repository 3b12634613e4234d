//! `predict`: for each sequence, the model's guess at the event after the
//! last observed one — time and type — in the original (unscaled) clock.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use taltpp_core::checkpoint::Checkpoint;
use taltpp_core::data::load_sequences;
use taltpp_core::intensity::QuadratureConfig;
use taltpp_core::nn::Tape;
use taltpp_core::train::PredRoute;

use crate::common::{prepare_against, write_json};

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// checkpoint.json from a training run.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL file of event sequences to continue.
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction route: heads|mbr.
    #[arg(long, default_value = "heads")]
    pub route: String,
    /// Write predictions JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(serde::Serialize)]
struct Prediction {
    seq_id: String,
    events_observed: usize,
    last_time: f64,
    next_time: f64,
    next_type: String,
    /// Set when the quadrature hit its horizon cap before the survival
    /// cutoff (mbr route only) — the time is then a lower-biased estimate.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (model, vocab, scaler, range) = ckpt.restore()?;
    let data = load_sequences(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))?;
    let prepared = prepare_against(&data, &ckpt.type_names, &vocab, &scaler)?;
    let route = PredRoute::parse(&args.route)?;
    let quad = QuadratureConfig::default();

    let mut predictions = Vec::with_capacity(prepared.len());
    for prep in &prepared {
        let tape = Tape::new();
        let out = model.forward_sequence(&tape, prep, &range, None, None)?;
        // Context row N has seen every observed event; it prices the next one.
        let tail = prep.len();
        let t_prev = prep.times.last().copied().unwrap_or(0.0);
        let (t_hat_scaled, type_id, truncated) = match route {
            PredRoute::Heads => {
                let logits = tape.value(model.type_logits(&tape, out.ctx));
                let preds = tape.value(model.gap_preds(&tape, out.ctx));
                let k = argmax(logits.row(tail));
                (t_prev + preds.at(tail, 0), k, false)
            }
            PredRoute::Mbr => {
                let proj = tape.value(out.proj);
                let row = proj.row(tail);
                // Scaled time has unit mean training gap by construction.
                let pred = model.head.predict_next_time(row, t_prev, 1.0, &quad);
                let k = model.head.predict_next_type(row, pred.t_hat - t_prev);
                (pred.t_hat, k, pred.truncated)
            }
        };
        predictions.push(Prediction {
            seq_id: prep.seq_id.clone(),
            events_observed: prep.len(),
            last_time: scaler.invert(t_prev),
            next_time: scaler.invert(t_hat_scaled),
            next_type: ckpt.type_names[type_id].clone(),
            truncated,
        });
    }

    match &args.out {
        Some(path) => {
            write_json(path, &predictions)?;
            println!("wrote {} predictions to {}", predictions.len(), path.display());
        }
        None => crate::common::emit_stdout(&serde_json::to_string_pretty(&predictions)?),
    }
    Ok(())
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
