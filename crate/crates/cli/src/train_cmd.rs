//! `train`: fit a model on a generated split and write every artifact needed
//! to rerun, resume from, or evaluate the result.
//!
//! Settings merge in three layers: built-in defaults, then a `--config` JSON
//! file, then explicit CLI flags. The merged result lands in
//! `run_config.json`, so any run can be replayed from its own output.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;

use taltpp_core::checkpoint::Checkpoint;
use taltpp_core::model::{Model, ModelConfig};
use taltpp_core::train::{evaluate_scaled, train, EpochStats, EvalReport, PredRoute, TrainConfig};

use crate::common::{
    build_pipeline, config_hash, ensure_dir, load_split_dir, read_config_object, write_json,
};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory with train.jsonl and val.jsonl (test.jsonl optional).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, logs, and metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file of settings; flags given on the command line win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Event fusion: none|additive|concat|xattn.
    #[arg(long)]
    pub fusion: Option<String>,
    /// Time embedding: linear|sin|interval.
    #[arg(long)]
    pub time_embed: Option<String>,
    /// Attention bias over gaps: full|none|nolog|shared.
    #[arg(long)]
    pub bias_mode: Option<String>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long)]
    pub bucket_dim: Option<usize>,
    #[arg(long)]
    pub bucket_eps: Option<f64>,
    #[arg(long)]
    pub event_layers: Option<usize>,
    #[arg(long)]
    pub backbone_layers: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub prompt_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Causal masking in the backbone (true|false).
    #[arg(long)]
    pub causal: Option<bool>,
    #[arg(long)]
    pub sharpness: Option<f64>,
    /// Monte Carlo draws per inter-event interval in the likelihood.
    #[arg(long)]
    pub mc_samples: Option<usize>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight on the next-type cross-entropy term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight on the next-gap squared-error term.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Route for the final metrics: heads|mbr.
    #[arg(long, default_value = "heads")]
    pub route: String,
}

/// Every key a `--config` file may set. `num_types` and `vocab_size` are
/// absent on purpose: they come from the data.
const KNOWN_KEYS: &[&str] = &[
    "dim",
    "heads",
    "fusion",
    "time_embed",
    "bias_mode",
    "buckets",
    "bucket_dim",
    "bucket_eps",
    "event_layers",
    "backbone_layers",
    "ffn_dim",
    "prompt_len",
    "dropout",
    "causal",
    "sharpness",
    "mc_samples",
    "epochs",
    "batch_size",
    "lr",
    "alpha",
    "beta",
    "seed",
    "patience",
];

fn from_value<T: DeserializeOwned>(key: &str, value: &serde_json::Value) -> Result<T> {
    serde_json::from_value(value.clone())
        .with_context(|| format!("config key {key:?} has the wrong type or value"))
}

fn apply_setting(
    model: &mut ModelConfig,
    train: &mut TrainConfig,
    key: &str,
    value: &serde_json::Value,
) -> Result<()> {
    match key {
        "dim" => model.dim = from_value(key, value)?,
        "heads" => model.heads = from_value(key, value)?,
        "fusion" => model.fusion = from_value(key, value)?,
        "time_embed" => model.time_embed = from_value(key, value)?,
        "bias_mode" => model.bias_mode = from_value(key, value)?,
        "buckets" => model.buckets = from_value(key, value)?,
        "bucket_dim" => model.bucket_dim = from_value(key, value)?,
        "bucket_eps" => model.bucket_eps = from_value(key, value)?,
        "event_layers" => model.event_layers = from_value(key, value)?,
        "backbone_layers" => model.backbone_layers = from_value(key, value)?,
        "ffn_dim" => model.ffn_dim = from_value(key, value)?,
        "prompt_len" => model.prompt_len = from_value(key, value)?,
        "dropout" => model.dropout = from_value(key, value)?,
        "causal" => model.causal = from_value(key, value)?,
        "sharpness" => model.sharpness = from_value(key, value)?,
        "mc_samples" => model.mc_samples = from_value(key, value)?,
        "epochs" => train.epochs = from_value(key, value)?,
        "batch_size" => train.batch_size = from_value(key, value)?,
        "lr" => train.lr = from_value(key, value)?,
        "alpha" => train.alpha = from_value(key, value)?,
        "beta" => train.beta = from_value(key, value)?,
        "seed" => train.seed = from_value(key, value)?,
        "patience" => train.patience = from_value(key, value)?,
        other => bail!("unknown config key {other:?}"),
    }
    Ok(())
}

fn parse_mode<T: DeserializeOwned>(label: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .with_context(|| format!("unknown {label} {s:?}"))
}

/// Defaults, overlaid with the config file, overlaid with CLI flags.
fn merged_settings(args: &TrainArgs) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::base();
    let mut train = TrainConfig::default();

    if let Some(path) = &args.config {
        let map = read_config_object(path)?;
        let unknown: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| !KNOWN_KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            bail!(
                "{}: unknown config keys: {}\nknown keys: {}",
                path.display(),
                unknown.join(", "),
                KNOWN_KEYS.join(", ")
            );
        }
        for (key, value) in &map {
            apply_setting(&mut model, &mut train, key, value)?;
        }
    }

    macro_rules! flag {
        ($field:expr, $arg:expr) => {
            if let Some(v) = $arg {
                $field = v;
            }
        };
    }
    flag!(model.dim, args.dim);
    flag!(model.heads, args.heads);
    flag!(model.buckets, args.buckets);
    flag!(model.bucket_dim, args.bucket_dim);
    flag!(model.bucket_eps, args.bucket_eps);
    flag!(model.event_layers, args.event_layers);
    flag!(model.backbone_layers, args.backbone_layers);
    flag!(model.ffn_dim, args.ffn_dim);
    flag!(model.prompt_len, args.prompt_len);
    flag!(model.dropout, args.dropout);
    flag!(model.causal, args.causal);
    flag!(model.sharpness, args.sharpness);
    flag!(model.mc_samples, args.mc_samples);
    flag!(train.epochs, args.epochs);
    flag!(train.batch_size, args.batch_size);
    flag!(train.lr, args.lr);
    flag!(train.alpha, args.alpha);
    flag!(train.beta, args.beta);
    flag!(train.seed, args.seed);
    if let Some(s) = &args.fusion {
        model.fusion = parse_mode("fusion mode", s)?;
    }
    if let Some(s) = &args.time_embed {
        model.time_embed = parse_mode("time embedding", s)?;
    }
    if let Some(s) = &args.bias_mode {
        model.bias_mode = parse_mode("bias mode", s)?;
    }
    if let Some(p) = args.patience {
        train.patience = Some(p);
    }
    // Patience 0 (from either layer) means "never stop early".
    if train.patience == Some(0) {
        train.patience = None;
    }
    Ok((model, train))
}

#[derive(serde::Serialize)]
struct RunRecord<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    route: &'a str,
    data: String,
    config_hash: &'a str,
}

#[derive(serde::Serialize)]
struct Metrics<'a> {
    route: &'a str,
    best_epoch: usize,
    best_val_ll: f64,
    val: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<EvalReport>,
}

/// Plain `{}` float formatting prints the shortest digits that parse back to
/// the same value, so identical runs produce byte-identical files.
fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_ll,val_acc,val_rmse\n");
    for row in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.epoch, row.train_loss, row.val_ll, row.val_acc, row.val_rmse
        );
    }
    out
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let route = PredRoute::parse(&args.route)?;
    let (mut model_cfg, train_cfg) = merged_settings(args)?;

    let splits = load_split_dir(&args.data)?;
    let pipe = build_pipeline(&splits)?;
    model_cfg.num_types = pipe.type_names.len();
    model_cfg.vocab_size = pipe.vocab.len();
    model_cfg.validate()?;

    let hash = config_hash(&(&model_cfg, &train_cfg))?;
    let model = Model::new(model_cfg.clone(), train_cfg.seed)?;
    println!(
        "training: {} train / {} val sequences, {} types, vocab {}",
        pipe.train.len(),
        pipe.val.len(),
        model_cfg.num_types,
        model_cfg.vocab_size
    );

    let outcome = train(&model, &pipe.train, &pipe.val, &pipe.range, &train_cfg)?;
    for row in &outcome.history {
        println!(
            "epoch {:>3}  loss {:>10.4}  val ll/event {:>9.4}  acc {:.3}  rmse {:.4}",
            row.epoch, row.train_loss, row.val_ll, row.val_acc, row.val_rmse
        );
    }
    println!(
        "best epoch {} (val ll/event {:.4})",
        outcome.best_epoch, outcome.best_val_ll
    );

    let val = evaluate_scaled(
        &model,
        &pipe.val,
        &pipe.range,
        route,
        train_cfg.seed,
        "val",
        pipe.scaler.scale,
    )?;
    let test = match &pipe.test {
        Some(set) => Some(evaluate_scaled(
            &model,
            set,
            &pipe.range,
            route,
            train_cfg.seed,
            "test",
            pipe.scaler.scale,
        )?),
        None => None,
    };

    ensure_dir(&args.out)?;
    let ckpt = Checkpoint::capture(
        &model,
        &pipe.scaler,
        &pipe.range,
        &pipe.type_names,
        &pipe.vocab,
        Some(hash.clone()),
    )?;
    ckpt.save(&args.out.join("checkpoint.json"))?;
    write_json(&args.out.join("vocab.json"), &pipe.vocab.to_map())?;
    fs::write(args.out.join("history.csv"), history_csv(&outcome.history))
        .context("writing history.csv")?;
    write_json(
        &args.out.join("metrics.json"),
        &Metrics {
            route: route.name(),
            best_epoch: outcome.best_epoch,
            best_val_ll: outcome.best_val_ll,
            val,
            test,
        },
    )?;
    write_json(
        &args.out.join("run_config.json"),
        &RunRecord {
            model: &model_cfg,
            train: &train_cfg,
            route: route.name(),
            data: args.data.display().to_string(),
            config_hash: &hash,
        },
    )?;

    println!(
        "final ({} route): val ll/event {:.4}, acc {:.3}, rmse {:.4} (scaled) / {:.4} (raw)",
        route.name(),
        val.ll_per_event,
        val.acc,
        val.rmse_scaled,
        val.rmse_unscaled
    );
    if let Some(t) = &test {
        println!(
            "test: ll/event {:.4}, acc {:.3}, rmse {:.4} (scaled) / {:.4} (raw)",
            t.ll_per_event, t.acc, t.rmse_scaled, t.rmse_unscaled
        );
    }
    println!("artifacts in {}", args.out.display());
    Ok(())
}
