//! Checkpoint serialization: everything needed to rebuild a trained model
//! and run it on new data — config, parameters, the time scale and distance
//! range fitted on training data, and the closed vocabularies.
//!
//! The on-disk format is a single JSON object with sorted keys (BTreeMaps
//! throughout), so capturing the same model twice produces byte-identical
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::TimeScaler;
use crate::embed::Vocab;
use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::Tensor;
use crate::temporal_attn::DeltaRange;

pub const CHECKPOINT_FORMAT: &str = "taltpp-ckpt-v1";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SavedTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model_config: ModelConfig,
    pub time_scaler: TimeScaler,
    pub delta_range: DeltaRange,
    pub type_names: Vec<String>,
    pub token_vocab: BTreeMap<String, usize>,
    /// Hash of the run configuration that produced this checkpoint, when the
    /// caller tracks one; carried verbatim.
    pub config_hash: Option<String>,
    pub params: BTreeMap<String, SavedTensor>,
}

impl Checkpoint {
    /// Snapshots a model and its data-dependent companions. Refuses
    /// non-finite parameter values: a checkpoint that cannot be evaluated is
    /// worse than no checkpoint.
    pub fn capture(
        model: &Model,
        scaler: &TimeScaler,
        range: &DeltaRange,
        type_names: &[String],
        vocab: &Vocab,
        config_hash: Option<String>,
    ) -> Result<Checkpoint> {
        if type_names.len() != model.config.num_types {
            return Err(CoreError::Checkpoint(format!(
                "{} type names but the model was built for {} types",
                type_names.len(),
                model.config.num_types
            )));
        }
        if vocab.len() != model.config.vocab_size {
            return Err(CoreError::Checkpoint(format!(
                "vocabulary holds {} tokens but the model was built for {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        let mut params = BTreeMap::new();
        for (name, p) in model.store.iter() {
            let pt = p.borrow();
            if !pt.value.all_finite() {
                return Err(CoreError::Checkpoint(format!(
                    "parameter {name} contains non-finite values"
                )));
            }
            params.insert(
                name.to_string(),
                SavedTensor {
                    shape: pt.value.shape().to_vec(),
                    values: pt.value.data().to_vec(),
                },
            );
        }
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model_config: model.config.clone(),
            time_scaler: *scaler,
            delta_range: *range,
            type_names: type_names.to_vec(),
            token_vocab: vocab.to_map(),
            config_hash,
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Checkpoint(format!("serialization failed: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = self.to_json()?;
        fs::write(path, json).map_err(|source| CoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|source| CoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| {
            CoreError::Checkpoint(format!("{}: not a valid checkpoint: {e}", path.display()))
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(CoreError::Checkpoint(format!(
                "{}: format tag {:?} (this build reads {CHECKPOINT_FORMAT:?})",
                path.display(),
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model with the stored parameters, plus the vocabulary
    /// and fitted companions needed to run it.
    pub fn restore(&self) -> Result<(Model, Vocab, TimeScaler, DeltaRange)> {
        if self.type_names.len() != self.model_config.num_types {
            return Err(CoreError::Checkpoint(format!(
                "{} type names but config declares {} types",
                self.type_names.len(),
                self.model_config.num_types
            )));
        }
        let vocab = Vocab::from_map(&self.token_vocab)?;
        if vocab.len() != self.model_config.vocab_size {
            return Err(CoreError::Checkpoint(format!(
                "vocabulary holds {} tokens but config declares {}",
                vocab.len(),
                self.model_config.vocab_size
            )));
        }
        // The init seed is irrelevant: every parameter is overwritten below.
        let model = Model::new(self.model_config.clone(), 0)?;
        let mut snapshot = BTreeMap::new();
        for (name, saved) in &self.params {
            if !saved.values.iter().all(|v| v.is_finite()) {
                return Err(CoreError::Checkpoint(format!(
                    "parameter {name} contains non-finite values"
                )));
            }
            let tensor = Tensor::new(saved.shape.clone(), saved.values.clone())
                .map_err(|e| CoreError::Checkpoint(format!("parameter {name}: {e}")))?;
            snapshot.insert(name.clone(), tensor);
        }
        model
            .store
            .restore(&snapshot)
            .map_err(|e| CoreError::Checkpoint(format!("parameter mismatch: {e}")))?;
        Ok((model, vocab, self.time_scaler, self.delta_range))
    }
}
