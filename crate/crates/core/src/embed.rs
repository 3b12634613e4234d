//! Token vocabulary, token embeddings, and temporal embeddings.
//!
//! Event type texts are tokenized by lowercasing and splitting on any
//! non-alphanumeric character ("question-answer" -> ["question", "answer"]).
//! The vocabulary reserves id 0 for the padding token and grows only while
//! building; afterwards it is closed and unknown tokens are errors.
//!
//! Temporal embeddings map an (absolute, previous) scaled time pair to a
//! D-vector, in one of three ways selectable from config:
//! * `linear`: t * w + b with learned w, b;
//! * `sinusoidal`: fixed interleaved sin/cos features over geometric
//!   frequencies (no parameters);
//! * `interval`: a 2-layer tanh MLP over [t, t - prev_t].

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::nn::param::{init_embedding, init_projection, zeros_vec, Param, ParamStore};
use crate::nn::rng::StreamRng;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

pub const PAD_TOKEN: &str = "<pad>";

/// Closed token vocabulary; id 0 is always the padding token.
#[derive(Clone, Debug)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            token_to_id: BTreeMap::new(),
            id_to_token: Vec::new(),
        };
        v.token_to_id.insert(PAD_TOKEN.to_string(), 0);
        v.id_to_token.push(PAD_TOKEN.to_string());
        v
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // pad is always present
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    /// Lowercase, split on non-alphanumerics, drop empties.
    pub fn tokenize(text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .collect()
    }

    /// Tokenizes and assigns ids, growing the vocabulary on unseen tokens.
    pub fn encode_build(&mut self, text: &str) -> Result<Vec<usize>> {
        let tokens = Self::tokenize(text);
        if tokens.is_empty() {
            return Err(CoreError::Dataset(format!(
                "type text {text:?} tokenizes to nothing"
            )));
        }
        Ok(tokens
            .into_iter()
            .map(|tok| {
                *self.token_to_id.entry(tok.clone()).or_insert_with(|| {
                    self.id_to_token.push(tok);
                    self.id_to_token.len() - 1
                })
            })
            .collect())
    }

    /// Tokenizes against the closed vocabulary; unseen tokens are errors.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let tokens = Self::tokenize(text);
        if tokens.is_empty() {
            return Err(CoreError::Dataset(format!(
                "type text {text:?} tokenizes to nothing"
            )));
        }
        tokens
            .into_iter()
            .map(|tok| {
                self.token_to_id
                    .get(&tok)
                    .copied()
                    .ok_or(CoreError::ClosedVocab { token: tok })
            })
            .collect()
    }

    /// {token: id} map, the persistence format.
    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.token_to_id.clone()
    }

    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self> {
        let mut id_to_token = vec![String::new(); map.len()];
        for (tok, &id) in map {
            if id >= map.len() {
                return Err(CoreError::Checkpoint(format!(
                    "vocab ids are not dense: token {tok:?} has id {id} of {}",
                    map.len()
                )));
            }
            if !id_to_token[id].is_empty() {
                return Err(CoreError::Checkpoint(format!("vocab id {id} assigned twice")));
            }
            id_to_token[id] = tok.clone();
        }
        if id_to_token.first().map(|s| s.as_str()) != Some(PAD_TOKEN) {
            return Err(CoreError::Checkpoint(format!(
                "vocab id 0 must be {PAD_TOKEN:?}"
            )));
        }
        Ok(Vocab {
            token_to_id: map.clone(),
            id_to_token,
        })
    }
}

// ---- token embedding ----

pub struct TokenEmbed {
    pub table: Param,
    pub dim: usize,
}

impl TokenEmbed {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let table = store.register(name, init_embedding(rng, vocab_size, dim))?;
        Ok(TokenEmbed { table, dim })
    }

    /// Rows of the table at `ids` -> (L x D).
    pub fn forward(&self, tape: &Tape, ids: &[usize]) -> Var {
        let t = tape.param(&self.table);
        tape.gather_rows(t, ids)
    }
}

// ---- temporal embedding ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TimeEmbedMode {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "sin")]
    Sinusoidal,
    #[serde(rename = "interval")]
    IntervalMlp,
}

impl TimeEmbedMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TimeEmbedMode::Linear),
            "sin" => Ok(TimeEmbedMode::Sinusoidal),
            "interval" => Ok(TimeEmbedMode::IntervalMlp),
            other => Err(CoreError::config(format!(
                "unknown time embedding {other:?} (expected linear|sin|interval)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TimeEmbedMode::Linear => "linear",
            TimeEmbedMode::Sinusoidal => "sin",
            TimeEmbedMode::IntervalMlp => "interval",
        }
    }
}

pub struct TemporalEmbed {
    pub mode: TimeEmbedMode,
    pub dim: usize,
    // linear
    w: Option<Param>,
    b: Option<Param>,
    // interval MLP
    w1: Option<Param>,
    b1: Option<Param>,
    w2: Option<Param>,
    b2: Option<Param>,
}

impl TemporalEmbed {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        mode: TimeEmbedMode,
        dim: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut te = TemporalEmbed {
            mode,
            dim,
            w: None,
            b: None,
            w1: None,
            b1: None,
            w2: None,
            b2: None,
        };
        match mode {
            TimeEmbedMode::Linear => {
                let w = init_projection(rng, 1, dim);
                te.w = Some(store.register(&format!("{prefix}.w"), Tensor::vector(w.into_data()))?);
                te.b = Some(store.register(&format!("{prefix}.b"), zeros_vec(dim))?);
            }
            TimeEmbedMode::Sinusoidal => {
                if dim % 2 != 0 {
                    return Err(CoreError::config(format!(
                        "sinusoidal time embedding needs an even dim, got {dim}"
                    )));
                }
            }
            TimeEmbedMode::IntervalMlp => {
                te.w1 = Some(store.register(&format!("{prefix}.w1"), init_projection(rng, 2, dim))?);
                te.b1 = Some(store.register(&format!("{prefix}.b1"), zeros_vec(dim))?);
                te.w2 = Some(store.register(&format!("{prefix}.w2"), init_projection(rng, dim, dim))?);
                te.b2 = Some(store.register(&format!("{prefix}.b2"), zeros_vec(dim))?);
            }
        }
        Ok(te)
    }

    /// Embeds one (scaled) event time given the previous event's time. The
    /// first event passes prev_t = t, making its interval feature 0.
    pub fn forward(&self, tape: &Tape, t: f64, prev_t: f64) -> Var {
        match self.mode {
            TimeEmbedMode::Linear => {
                let w = tape.param(self.w.as_ref().expect("linear params"));
                let b = tape.param(self.b.as_ref().expect("linear params"));
                tape.add(tape.scale(w, t), b)
            }
            TimeEmbedMode::Sinusoidal => {
                let mut data = vec![0.0; self.dim];
                for p in 0..self.dim / 2 {
                    let freq = 10_000f64.powf(-(2.0 * p as f64) / self.dim as f64);
                    data[2 * p] = (t * freq).sin();
                    data[2 * p + 1] = (t * freq).cos();
                }
                tape.constant(Tensor::vector(data))
            }
            TimeEmbedMode::IntervalMlp => {
                let input = tape.constant(
                    Tensor::matrix(1, 2, vec![t, t - prev_t]).expect("interval input"),
                );
                let w1 = tape.param(self.w1.as_ref().expect("interval params"));
                let b1 = tape.param(self.b1.as_ref().expect("interval params"));
                let w2 = tape.param(self.w2.as_ref().expect("interval params"));
                let b2 = tape.param(self.b2.as_ref().expect("interval params"));
                let h = tape.tanh(tape.add_row_broadcast(tape.matmul(input, w1), b1));
                let out = tape.add_row_broadcast(tape.matmul(h, w2), b2);
                tape.reshape(out, &[self.dim])
            }
        }
    }
}
