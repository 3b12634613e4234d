//! End-to-end model assembly: token + time embeddings, fusion, event-level
//! temporal attention, the interleaved backbone, the intensity head, and the
//! auxiliary next-type / next-gap prediction heads.
//!
//! One forward pass over a prepared sequence yields the context states
//! `h_0..h_N` (state before event 1, then after each event) and their
//! intensity projections; training and evaluation build their losses on top
//! of those two tensors.

use crate::backbone::{Backbone, EventBlock};
use crate::data::{EventSequence, TimeScaler};
use crate::embed::{TemporalEmbed, TimeEmbedMode, TokenEmbed, Vocab};
use crate::error::{CoreError, Result};
use crate::fusion::{pool_event, Fusion, FusionMode};
use crate::intensity::IntensityHead;
use crate::nn::param::{init_projection, zeros_vec};
use crate::nn::{ParamStore, StreamRng, Tape, Var};
use crate::temporal_attn::{BiasMode, DeltaRange, EventAttn};
use crate::trace::Trace;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub fusion: FusionMode,
    pub time_embed: TimeEmbedMode,
    pub bias_mode: BiasMode,
    pub buckets: usize,
    pub bucket_dim: usize,
    pub bucket_eps: f64,
    pub event_layers: usize,
    pub backbone_layers: usize,
    pub ffn_dim: usize,
    pub prompt_len: usize,
    pub dropout: f64,
    pub causal: bool,
    pub num_types: usize,
    pub vocab_size: usize,
    pub sharpness: f64,
    pub mc_samples: usize,
}

impl ModelConfig {
    /// Baseline hyperparameters; `num_types` and `vocab_size` depend on the
    /// dataset and must be filled in before building.
    pub fn base() -> Self {
        ModelConfig {
            dim: 64,
            heads: 4,
            fusion: FusionMode::CrossAttn,
            time_embed: TimeEmbedMode::Linear,
            bias_mode: BiasMode::Full,
            buckets: 32,
            bucket_dim: 32,
            bucket_eps: 1e-6,
            event_layers: 1,
            backbone_layers: 2,
            ffn_dim: 256,
            prompt_len: 4,
            dropout: 0.1,
            causal: true,
            num_types: 0,
            vocab_size: 0,
            sharpness: 1.0,
            mc_samples: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim must be positive".to_string());
        }
        if self.heads == 0 || (self.dim > 0 && self.dim % self.heads != 0) {
            problems.push(format!("heads {} must divide dim {}", self.heads, self.dim));
        }
        if self.time_embed == TimeEmbedMode::Sinusoidal && self.dim % 2 != 0 {
            problems.push(format!("sinusoidal time embedding needs even dim, got {}", self.dim));
        }
        if self.buckets < 2 {
            problems.push(format!("buckets must be at least 2, got {}", self.buckets));
        }
        if self.bucket_dim == 0 {
            problems.push("bucket_dim must be positive".to_string());
        }
        if !(self.bucket_eps > 0.0) {
            problems.push(format!("bucket_eps must be positive, got {}", self.bucket_eps));
        }
        if self.event_layers == 0 {
            problems.push("event_layers must be at least 1".to_string());
        }
        if self.ffn_dim == 0 {
            problems.push("ffn_dim must be positive".to_string());
        }
        if self.prompt_len == 0 {
            // The state before the first event is read off the last prompt
            // row, so a prompt is not optional in the full model.
            problems.push("prompt_len must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.num_types == 0 {
            problems.push("num_types must be positive (set from the dataset)".to_string());
        }
        if self.vocab_size < 2 {
            problems.push(format!(
                "vocab_size must cover padding plus at least one token, got {}",
                self.vocab_size
            ));
        }
        if !(self.sharpness > 0.0) || !self.sharpness.is_finite() {
            problems.push(format!("sharpness must be positive and finite, got {}", self.sharpness));
        }
        if self.mc_samples == 0 {
            problems.push("mc_samples must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CoreError::config(problems.join("; ")))
        }
    }
}

/// A sequence made model-ready: times rescaled, type texts tokenized against
/// the closed vocabulary, type ids checked against the model's type count.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub seq_id: String,
    /// Scaled event times, strictly increasing.
    pub times: Vec<f64>,
    pub types: Vec<usize>,
    /// Token ids per event, never empty per event.
    pub tokens: Vec<Vec<usize>>,
    /// Scaled horizon.
    pub t_end: f64,
    /// Stable key for per-sequence random streams.
    pub stream_key: u64,
}

impl PreparedSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn prepare_sequence(
    seq: &EventSequence,
    vocab: &Vocab,
    scaler: &TimeScaler,
    num_types: usize,
) -> Result<PreparedSequence> {
    let mut times = Vec::with_capacity(seq.len());
    let mut types = Vec::with_capacity(seq.len());
    let mut tokens = Vec::with_capacity(seq.len());
    for e in &seq.events {
        if e.type_id >= num_types {
            return Err(CoreError::InvalidSequence {
                seq_id: seq.seq_id.clone(),
                message: format!("type id {} out of range for {num_types} types", e.type_id),
            });
        }
        times.push(scaler.apply(e.t));
        types.push(e.type_id);
        tokens.push(vocab.encode(&e.type_text)?);
    }
    Ok(PreparedSequence {
        seq_id: seq.seq_id.clone(),
        times,
        types,
        tokens,
        t_end: scaler.apply(seq.t_end),
        stream_key: seq.stream_key(),
    })
}

pub fn prepare_all(
    seqs: &[EventSequence],
    vocab: &Vocab,
    scaler: &TimeScaler,
    num_types: usize,
) -> Result<Vec<PreparedSequence>> {
    seqs.iter()
        .map(|s| prepare_sequence(s, vocab, scaler, num_types))
        .collect()
}

/// Context states and intensity projections from one sequence forward pass.
pub struct SeqForward {
    /// `(N+1) x D`: h_0 (pre-first-event state) then h_1..h_N.
    pub ctx: Var,
    /// `(N+1) x K` intensity pre-activations, one row per context state.
    pub proj: Var,
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub token_embed: TokenEmbed,
    pub temporal: TemporalEmbed,
    pub fusion: Fusion,
    pub event_attn: EventAttn,
    pub backbone: Backbone,
    pub head: IntensityHead,
    pub w_type: crate::nn::Param,
    pub b_type: crate::nn::Param,
    pub w_gap: crate::nn::Param,
    pub b_gap: crate::nn::Param,
}

impl Model {
    /// Builds all components, registering parameters in a fixed order off a
    /// single "init" stream so one (config, seed) pair fully determines the
    /// starting point.
    pub fn new(config: ModelConfig, master_seed: u64) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = StreamRng::for_component(master_seed, "init");
        let token_embed =
            TokenEmbed::new(&mut store, "tok.table", config.vocab_size, config.dim, &mut rng)?;
        let temporal =
            TemporalEmbed::new(&mut store, "time", config.time_embed, config.dim, &mut rng)?;
        let fusion = Fusion::new(
            &mut store,
            "fusion",
            config.fusion,
            config.dim,
            config.heads,
            config.dropout,
            &mut rng,
        )?;
        let event_attn = EventAttn::new(
            &mut store,
            "event",
            config.event_layers,
            config.dim,
            config.heads,
            config.bias_mode,
            config.buckets,
            config.bucket_dim,
            config.bucket_eps,
            config.causal,
            &mut rng,
        )?;
        let backbone = Backbone::new(
            &mut store,
            "backbone",
            config.dim,
            config.heads,
            config.backbone_layers,
            config.ffn_dim,
            config.prompt_len,
            &mut rng,
        )?;
        let head = IntensityHead::new(
            &mut store,
            "head",
            config.dim,
            config.num_types,
            config.sharpness,
            &mut rng,
        )?;
        let w_type = store.register(
            "pred.w_type",
            init_projection(&mut rng, config.dim, config.num_types),
        )?;
        let b_type = store.register("pred.b_type", zeros_vec(config.num_types))?;
        let w_gap = store.register("pred.w_gap", init_projection(&mut rng, config.dim, 1))?;
        let b_gap = store.register("pred.b_gap", zeros_vec(1))?;
        Ok(Model {
            config,
            store,
            token_embed,
            temporal,
            fusion,
            event_attn,
            backbone,
            head,
            w_type,
            b_type,
            w_gap,
            b_gap,
        })
    }

    /// Full forward pass over one prepared sequence. `dropout_rng` enables
    /// fusion-branch dropout (training only); `trace` collects realized
    /// attention weights when given.
    pub fn forward_sequence(
        &self,
        tape: &Tape,
        prep: &PreparedSequence,
        range: &DeltaRange,
        mut dropout_rng: Option<&mut StreamRng>,
        mut trace: Option<&mut Trace>,
    ) -> Result<SeqForward> {
        let n = prep.len();
        if n == 0 {
            return Err(CoreError::InvalidSequence {
                seq_id: prep.seq_id.clone(),
                message: "cannot run an empty sequence".into(),
            });
        }
        // Per-event fused summaries plus the raw pieces the backbone reuses.
        let mut time_embeds = Vec::with_capacity(n);
        let mut token_embeds = Vec::with_capacity(n);
        let mut summaries = Vec::with_capacity(n);
        for i in 0..n {
            if prep.tokens[i].is_empty() {
                return Err(CoreError::InvalidSequence {
                    seq_id: prep.seq_id.clone(),
                    message: format!("event {i} has no tokens"),
                });
            }
            let x = self.token_embed.forward(tape, &prep.tokens[i]);
            let prev_t = if i == 0 { prep.times[0] } else { prep.times[i - 1] };
            let e_t = self.temporal.forward(tape, prep.times[i], prev_t);
            let fused = self.fusion.forward(
                tape,
                x,
                e_t,
                dropout_rng.as_deref_mut(),
                trace.as_deref_mut(),
                &format!("fusion:event{i}"),
            );
            time_embeds.push(e_t);
            token_embeds.push(x);
            summaries.push(pool_event(tape, fused));
        }
        let s = tape.concat_rows(&summaries);
        let attended = self
            .event_attn
            .forward(tape, s, &prep.times, range, trace.as_deref_mut(), "event-attn");

        let blocks: Vec<EventBlock> = (0..n)
            .map(|i| EventBlock {
                time_embed: time_embeds[i],
                tokens: token_embeds[i],
                summary: tape.reshape(
                    tape.slice_rows(attended, i, i + 1),
                    &[self.config.dim],
                ),
            })
            .collect();
        let (hidden, map) = self.backbone.forward(tape, &blocks);
        let ctx = self.backbone.context_states(tape, hidden, &map)?;
        let proj = self.head.project(tape, ctx);
        Ok(SeqForward { ctx, proj })
    }

    /// Next-type logits for every context state: `(N+1) x K`.
    pub fn type_logits(&self, tape: &Tape, ctx: Var) -> Var {
        let w = tape.param(&self.w_type);
        let b = tape.param(&self.b_type);
        tape.add_row_broadcast(tape.matmul(ctx, w), b)
    }

    /// Predicted next gap (scaled units) for every context state: `(N+1) x 1`.
    pub fn gap_preds(&self, tape: &Tape, ctx: Var) -> Var {
        let w = tape.param(&self.w_gap);
        let b = tape.param(&self.b_gap);
        tape.add_row_broadcast(tape.matmul(ctx, w), b)
    }
}
