//! Shared plumbing for the subcommands: dataset loading, the fitted
//! pipeline (vocab, time scale, distance range, prepared splits), config
//! hashing, and small JSON/file helpers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use taltpp_core::data::{load_sequences, Dataset, TimeScaler};
use taltpp_core::embed::Vocab;
use taltpp_core::model::{prepare_all, PreparedSequence};
use taltpp_core::temporal_attn::DeltaRange;

/// The three split files a data directory is expected to hold.
pub struct SplitFiles {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
}

/// Loads `train.jsonl` + `val.jsonl` (+ `test.jsonl` when present) from a
/// directory, re-aligning val/test type ids to the training vocabulary.
pub fn load_split_dir(dir: &Path) -> Result<SplitFiles> {
    let train_path = dir.join("train.jsonl");
    let val_path = dir.join("val.jsonl");
    let train = load_sequences(&train_path)
        .with_context(|| format!("loading {}", train_path.display()))?;
    let val_raw = load_sequences(&val_path)
        .with_context(|| format!("loading {}", val_path.display()))?;
    let val = val_raw
        .aligned_to(&train.type_names)
        .context("validation data uses event types absent from training data")?;
    let test_path = dir.join("test.jsonl");
    let test = if test_path.exists() {
        Some(
            load_sequences(&test_path)
                .with_context(|| format!("loading {}", test_path.display()))?
                .aligned_to(&train.type_names)
                .context("test data uses event types absent from training data")?,
        )
    } else {
        None
    };
    Ok(SplitFiles { train, val, test })
}

/// Everything fitted on the training split that later stages depend on.
pub struct Pipeline {
    pub vocab: Vocab,
    pub scaler: TimeScaler,
    pub range: DeltaRange,
    pub train: Vec<PreparedSequence>,
    pub val: Vec<PreparedSequence>,
    pub test: Option<Vec<PreparedSequence>>,
    pub type_names: Vec<String>,
}

/// Fits vocabulary, time scale and distance range on the training split,
/// then prepares every split against those frozen artifacts.
pub fn build_pipeline(splits: &SplitFiles) -> Result<Pipeline> {
    let mut vocab = Vocab::new();
    for name in &splits.train.type_names {
        vocab
            .encode_build(name)
            .with_context(|| format!("tokenizing event type {name:?}"))?;
    }
    let scaler = TimeScaler::fit(&splits.train.sequences).context("fitting the time scale")?;
    let train_scaled = scaler.scale_all(&splits.train.sequences);
    let range =
        DeltaRange::fit(&train_scaled).context("fitting the inter-event distance range")?;
    let identity = TimeScaler::identity();
    let num_types = splits.train.type_names.len();
    let train = prepare_all(&train_scaled, &vocab, &identity, num_types)?;
    let val = prepare_all(
        &scaler.scale_all(&splits.val.sequences),
        &vocab,
        &identity,
        num_types,
    )?;
    let test = match &splits.test {
        Some(t) => Some(prepare_all(
            &scaler.scale_all(&t.sequences),
            &vocab,
            &identity,
            num_types,
        )?),
        None => None,
    };
    Ok(Pipeline {
        vocab,
        scaler,
        range,
        train,
        val,
        test,
        type_names: splits.train.type_names.clone(),
    })
}

/// Prepares a standalone dataset against a restored checkpoint's artifacts.
pub fn prepare_against(
    data: &Dataset,
    type_names: &[String],
    vocab: &Vocab,
    scaler: &TimeScaler,
) -> Result<Vec<PreparedSequence>> {
    let aligned = data
        .aligned_to(type_names)
        .context("data uses event types the checkpoint does not know")?;
    let scaled = scaler.scale_all(&aligned.sequences);
    Ok(prepare_all(
        &scaled,
        vocab,
        &TimeScaler::identity(),
        type_names.len(),
    )?)
}

/// SHA-256 of a canonical JSON rendering; struct field order makes the
/// rendering (and so the hash) stable.
pub fn config_hash<T: serde::Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_string(cfg).context("hashing configuration")?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).context("serializing output")?;
    fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

/// Print a large payload to stdout, treating a closed pipe (`| head`) as a
/// normal exit instead of a panic.
pub fn emit_stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let res = out
        .write_all(text.as_bytes())
        .and_then(|()| out.write_all(b"\n"));
    match res {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => {
            eprintln!("stdout: {e}");
            std::process::exit(1);
        }
    }
}

/// Reads a JSON config file into a map, rejecting everything but a
/// top-level object.
pub fn read_config_object(path: &Path) -> Result<BTreeMap<String, serde_json::Value>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    match value {
        serde_json::Value::Object(map) => Ok(map.into_iter().collect()),
        other => bail!(
            "{}: expected a JSON object of settings, found {}",
            path.display(),
            json_kind(&other)
        ),
    }
}

fn json_kind(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "a boolean",
        serde_json::Value::Number(_) => "a number",
        serde_json::Value::String(_) => "a string",
        serde_json::Value::Array(_) => "an array",
        serde_json::Value::Object(_) => "an object",
    }
}
