//! Hybrid input assembly and the compact causal transformer over it.
//!
//! The context sequence interleaves, per event i: the event's time embedding,
//! its raw token embeddings (not the fused ones; fusion reaches the model
//! only through the pooled summary), and the attended summary s'_i. A
//! learnable prompt of `prompt_len` positions sits in front:
//!
//! ```text
//! [ prompt .. | e_t(1) tok tok s'_1 | e_t(2) tok s'_2 | ... ]
//! ```
//!
//! A [`SegmentMap`] records which rows belong to which event so downstream
//! code can read h_i at the s'_i slot and h_0 at the last prompt position.
//! The transformer itself is a standard pre-LN stack (x += MHA(LN(x));
//! x += FFN(LN(x))) with causal masking; zero layers means the hidden states
//! are the assembled input itself.

use crate::error::{CoreError, Result};
use crate::nn::param::{init_embedding, init_projection, ones_vec, zeros_vec, Param, ParamStore};
use crate::nn::rng::StreamRng;
use crate::nn::tape::{Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Row ranges (half-open) of the assembled sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    /// Prompt rows [0, prompt_len).
    pub prompt: (usize, usize),
    /// Per event: [start, end); end - 1 is the summary slot.
    pub events: Vec<(usize, usize)>,
    pub total_rows: usize,
}

impl SegmentMap {
    /// Row index holding h_i for event i (1-based semantics: index 0 of
    /// `events` is the first event).
    pub fn summary_slot(&self, event_idx: usize) -> usize {
        self.events[event_idx].1 - 1
    }

    /// Row of h_0, the last prompt position. None when there is no prompt.
    pub fn prompt_slot(&self) -> Option<usize> {
        (self.prompt.1 > self.prompt.0).then(|| self.prompt.1 - 1)
    }
}

/// Per-event pieces entering assembly.
pub struct EventBlock {
    /// Time embedding, rank-1 [D].
    pub time_embed: Var,
    /// Raw token embeddings (L x D).
    pub tokens: Var,
    /// Attended summary, rank-1 [D].
    pub summary: Var,
}

/// One pre-LN transformer layer.
pub struct BackboneLayer {
    dim: usize,
    heads: usize,
    wq: Param,
    wk: Param,
    wv: Param,
    wo: Param,
    ln1_gamma: Param,
    ln1_beta: Param,
    ln2_gamma: Param,
    ln2_beta: Param,
    ffn_w1: Param,
    ffn_b1: Param,
    ffn_w2: Param,
    ffn_b2: Param,
}

impl BackboneLayer {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        Ok(BackboneLayer {
            dim,
            heads,
            wq: store.register(&format!("{prefix}.wq"), init_projection(rng, dim, dim))?,
            wk: store.register(&format!("{prefix}.wk"), init_projection(rng, dim, dim))?,
            wv: store.register(&format!("{prefix}.wv"), init_projection(rng, dim, dim))?,
            wo: store.register(&format!("{prefix}.wo"), init_projection(rng, dim, dim))?,
            ln1_gamma: store.register(&format!("{prefix}.ln1_gamma"), ones_vec(dim))?,
            ln1_beta: store.register(&format!("{prefix}.ln1_beta"), zeros_vec(dim))?,
            ln2_gamma: store.register(&format!("{prefix}.ln2_gamma"), ones_vec(dim))?,
            ln2_beta: store.register(&format!("{prefix}.ln2_beta"), zeros_vec(dim))?,
            ffn_w1: store.register(&format!("{prefix}.ffn_w1"), init_projection(rng, dim, ffn_dim))?,
            ffn_b1: store.register(&format!("{prefix}.ffn_b1"), zeros_vec(ffn_dim))?,
            ffn_w2: store.register(&format!("{prefix}.ffn_w2"), init_projection(rng, ffn_dim, dim))?,
            ffn_b2: store.register(&format!("{prefix}.ffn_b2"), zeros_vec(dim))?,
        })
    }

    fn forward(&self, tape: &Tape, x: Var) -> Var {
        let dk = self.dim / self.heads;
        let normed1 = tape.layer_norm_rows(
            x,
            tape.param(&self.ln1_gamma),
            tape.param(&self.ln1_beta),
            LN_EPS,
        );
        let q = tape.matmul(normed1, tape.param(&self.wq));
        let k = tape.matmul(normed1, tape.param(&self.wk));
        let v = tape.matmul(normed1, tape.param(&self.wv));
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dk, (h + 1) * dk);
            let qh = tape.slice_cols(q, c0, c1);
            let kh = tape.slice_cols(k, c0, c1);
            let vh = tape.slice_cols(v, c0, c1);
            let scores =
                tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / (dk as f64).sqrt());
            let alpha = tape.softmax_rows(tape.causal_mask(scores));
            head_outs.push(tape.matmul(alpha, vh));
        }
        let attn = tape.matmul(tape.concat_cols(&head_outs), tape.param(&self.wo));
        let x = tape.add(x, attn);
        let normed2 = tape.layer_norm_rows(
            x,
            tape.param(&self.ln2_gamma),
            tape.param(&self.ln2_beta),
            LN_EPS,
        );
        let h1 = tape.gelu(tape.add_row_broadcast(
            tape.matmul(normed2, tape.param(&self.ffn_w1)),
            tape.param(&self.ffn_b1),
        ));
        let ffn = tape.add_row_broadcast(
            tape.matmul(h1, tape.param(&self.ffn_w2)),
            tape.param(&self.ffn_b2),
        );
        tape.add(x, ffn)
    }
}

pub struct Backbone {
    pub dim: usize,
    pub heads: usize,
    pub prompt_len: usize,
    prompt: Option<Param>,
    layers: Vec<BackboneLayer>,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        num_layers: usize,
        ffn_dim: usize,
        prompt_len: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(CoreError::config(format!(
                "backbone heads {heads} must divide dim {dim}"
            )));
        }
        let prompt = if prompt_len > 0 {
            Some(store.register(
                &format!("{prefix}.prompt"),
                init_embedding(rng, prompt_len, dim),
            )?)
        } else {
            None
        };
        let layers = (0..num_layers)
            .map(|l| BackboneLayer::new(store, &format!("{prefix}.l{l}"), dim, heads, ffn_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Backbone {
            dim,
            heads,
            prompt_len,
            prompt,
            layers,
        })
    }

    /// Builds the interleaved input and its segment map.
    pub fn assemble(&self, tape: &Tape, events: &[EventBlock]) -> (Var, SegmentMap) {
        let mut parts: Vec<Var> = Vec::new();
        let mut row = 0usize;
        if let Some(p) = &self.prompt {
            parts.push(tape.param(p));
            row += self.prompt_len;
        }
        let prompt = (0, row);
        let mut ranges = Vec::with_capacity(events.len());
        for ev in events {
            let start = row;
            let e_row = tape.reshape(ev.time_embed, &[1, self.dim]);
            let s_row = tape.reshape(ev.summary, &[1, self.dim]);
            let tok_rows = tape.value(ev.tokens).rows();
            parts.push(e_row);
            parts.push(ev.tokens);
            parts.push(s_row);
            row += 1 + tok_rows + 1;
            ranges.push((start, row));
        }
        let x = tape.concat_rows(&parts);
        (
            x,
            SegmentMap {
                prompt,
                events: ranges,
                total_rows: row,
            },
        )
    }

    /// Runs the transformer stack; zero layers returns the input unchanged.
    pub fn encode(&self, tape: &Tape, x: Var) -> Var {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, h);
        }
        h
    }

    pub fn forward(&self, tape: &Tape, events: &[EventBlock]) -> (Var, SegmentMap) {
        let (x, map) = self.assemble(tape, events);
        (self.encode(tape, x), map)
    }

    /// Context states for intensity/prediction: h_0 (last prompt row) followed
    /// by h_i at each summary slot -> ((N+1) x D). Requires a prompt.
    pub fn context_states(&self, tape: &Tape, hidden: Var, map: &SegmentMap) -> Result<Var> {
        let h0 = map.prompt_slot().ok_or_else(|| {
            CoreError::config("context states need prompt_len >= 1 (h_0 lives on the prompt)")
        })?;
        let mut rows = Vec::with_capacity(map.events.len() + 1);
        rows.push(h0);
        rows.extend((0..map.events.len()).map(|i| map.summary_slot(i)));
        Ok(tape.gather_rows(hidden, &rows))
    }
}
