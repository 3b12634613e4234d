//! `generate`: synthesize a dataset with known ground truth, split it, and
//! write the three JSONL files plus a manifest describing exactly how they
//! were made.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use taltpp_core::data::{save_sequences, split_dataset};
use taltpp_core::synth::{gen_hawkes_exp, gen_poisson, HawkesConfig, PoissonConfig};

use crate::common::{ensure_dir, write_json};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Generator family: "poisson" or "hawkes".
    #[arg(long)]
    pub preset: String,
    /// Event rate (poisson preset).
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Background rate (hawkes preset).
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    /// Per-event intensity jump (hawkes preset).
    #[arg(long, default_value_t = 0.8)]
    pub excitation: f64,
    /// Exponential decay rate (hawkes preset).
    #[arg(long, default_value_t = 1.0)]
    pub decay: f64,
    /// Number of event types (marks are iid uniform over them).
    #[arg(long, default_value_t = 1)]
    pub k_types: usize,
    /// Observation horizon per sequence.
    #[arg(long, default_value_t = 50.0)]
    pub horizon: f64,
    /// Sequences to draw before splitting.
    #[arg(long, default_value_t = 500)]
    pub num_seqs: usize,
    /// Master seed for generation and the split shuffle.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Train/val/test fractions, comma separated.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(serde::Serialize)]
struct Manifest {
    preset: String,
    params: serde_json::Value,
    k_types: usize,
    horizon: f64,
    num_seqs: usize,
    seed: u64,
    split: (f64, f64, f64),
    counts: Counts,
    type_names: Vec<String>,
}

#[derive(serde::Serialize)]
struct Counts {
    train_seqs: usize,
    val_seqs: usize,
    test_seqs: usize,
    train_events: usize,
    val_events: usize,
    test_events: usize,
}

fn parse_split(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("cannot parse split fractions {s:?}"))?;
    if parts.len() != 3 {
        bail!("--split wants three comma-separated fractions, got {s:?}");
    }
    Ok((parts[0], parts[1], parts[2]))
}

pub fn run(args: &GenArgs) -> Result<()> {
    let split = parse_split(&args.split)?;
    let (dataset, params) = match args.preset.as_str() {
        "poisson" => {
            let cfg = PoissonConfig {
                rate: args.rate,
                num_types: args.k_types,
                horizon: args.horizon,
                num_seqs: args.num_seqs,
            };
            (
                gen_poisson(&cfg, args.seed)?,
                serde_json::json!({ "rate": args.rate }),
            )
        }
        "hawkes" => {
            let cfg = HawkesConfig {
                mu: args.mu,
                excitation: args.excitation,
                decay: args.decay,
                num_types: args.k_types,
                horizon: args.horizon,
                num_seqs: args.num_seqs,
            };
            (
                gen_hawkes_exp(&cfg, args.seed)?,
                serde_json::json!({
                    "mu": args.mu,
                    "excitation": args.excitation,
                    "decay": args.decay,
                }),
            )
        }
        other => bail!("unknown preset {other:?} (expected poisson|hawkes)"),
    };

    let splits = split_dataset(&dataset.sequences, split, args.seed)?;
    ensure_dir(&args.out)?;
    save_sequences(args.out.join("train.jsonl"), &splits.train)?;
    save_sequences(args.out.join("val.jsonl"), &splits.val)?;
    save_sequences(args.out.join("test.jsonl"), &splits.test)?;

    let count_events = |seqs: &[taltpp_core::data::EventSequence]| -> usize {
        seqs.iter().map(|s| s.len()).sum()
    };
    let manifest = Manifest {
        preset: args.preset.clone(),
        params,
        k_types: args.k_types,
        horizon: args.horizon,
        num_seqs: args.num_seqs,
        seed: args.seed,
        split,
        counts: Counts {
            train_seqs: splits.train.len(),
            val_seqs: splits.val.len(),
            test_seqs: splits.test.len(),
            train_events: count_events(&splits.train),
            val_events: count_events(&splits.val),
            test_events: count_events(&splits.test),
        },
        type_names: dataset.type_names.clone(),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} train / {} val / {} test sequences to {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        args.out.display()
    );
    Ok(())
}
