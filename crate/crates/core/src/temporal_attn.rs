//! Cross-event self-attention with additive temporal biases.
//!
//! Event summaries attend to each other; attention scores get a per-head
//! additive bias derived from the pairwise time distance |t_i - t_j|:
//!
//! 1. distances are clamped into the range observed on the training split;
//! 2. bucketed on a log scale: b = floor((B-1) * (ln(d+eps) - ln(lo+eps)) /
//!    (ln(hi+eps) - ln(lo+eps))), clamped to [0, B-1];
//! 3. bucket embeddings pass through a 2-layer tanh MLP producing one bias per
//!    head.
//!
//! Bias variants: `full` as above; `none` (the bias add is skipped entirely,
//! not added as zeros, so results are bit-identical to a bias-free
//! implementation); `nolog` (the raw scalar distance feeds the MLP, no
//! buckets); `shared` (bucketed, but one output shared across heads).
//!
//! A layer computes y = multi-head(scores + bias) and returns
//! FFN(LN(s + y)) with no second residual around the FFN.

use crate::error::{CoreError, Result};
use crate::data::EventSequence;
use crate::nn::param::{init_embedding, init_projection, ones_vec, zeros_vec, Param, ParamStore};
use crate::nn::rng::StreamRng;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::trace::{AttnCapture, Trace};

pub const LN_EPS: f64 = 1e-5;
pub const DEFAULT_BUCKET_EPS: f64 = 1e-6;

/// Distance range observed on training data, in scaled time.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeltaRange {
    pub min: f64,
    pub max: f64,
}

impl DeltaRange {
    /// Fits on all pairwise within-sequence distances of the training split.
    /// The minimum positive pairwise distance equals the minimum consecutive
    /// gap and the maximum equals the largest sequence span, so those are
    /// what gets computed.
    pub fn fit(train: &[EventSequence]) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max: f64 = 0.0;
        for seq in train {
            for g in seq.gaps() {
                if g > 0.0 && g < min {
                    min = g;
                }
            }
            if seq.len() >= 2 {
                let span = seq.events[seq.len() - 1].t - seq.events[0].t;
                if span > max {
                    max = span;
                }
            }
        }
        if !min.is_finite() || max == 0.0 {
            return Err(CoreError::Dataset(
                "cannot fit a time-distance range: training split has no positive gaps".into(),
            ));
        }
        if max <= min {
            return Err(CoreError::config(format!(
                "degenerate time-distance range [{min}, {max}]: bucketization needs max > min"
            )));
        }
        Ok(DeltaRange { min, max })
    }
}

/// Pairwise |t_i - t_j| (N x N, zero diagonal, symmetric).
pub fn time_delta_matrix(times: &[f64]) -> Tensor {
    let n = times.len();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            *out.at_mut(i, j) = (times[i] - times[j]).abs();
        }
    }
    out
}

/// Log-scale bucket index of one distance. The distance is clamped into the
/// fitted range first; the index afterwards (belt and braces; the formula is
/// monotone so the index clamp only matters at the boundary).
pub fn log_bucketize(delta: f64, range: &DeltaRange, buckets: usize, eps: f64) -> usize {
    debug_assert!(buckets >= 2);
    let d = delta.clamp(range.min, range.max);
    let lo = (range.min + eps).ln();
    let hi = (range.max + eps).ln();
    let ratio = ((d + eps).ln() - lo) / (hi - lo);
    let raw = ((buckets - 1) as f64 * ratio).floor();
    (raw.max(0.0) as usize).min(buckets - 1)
}

/// Bucket indices for every pair, row-major over (i, j).
pub fn bucketize_pairs(times: &[f64], range: &DeltaRange, buckets: usize, eps: f64) -> Vec<usize> {
    let deltas = time_delta_matrix(times);
    deltas
        .data()
        .iter()
        .map(|&d| log_bucketize(d, range, buckets, eps))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BiasMode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "none")]
    None,
    #[serde(rename = "nolog")]
    NoLogBucket,
    #[serde(rename = "shared")]
    Shared,
}

impl BiasMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BiasMode::Full),
            "none" => Ok(BiasMode::None),
            "nolog" => Ok(BiasMode::NoLogBucket),
            "shared" => Ok(BiasMode::Shared),
            other => Err(CoreError::config(format!(
                "unknown bias mode {other:?} (expected full|none|nolog|shared)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BiasMode::Full => "full",
            BiasMode::None => "none",
            BiasMode::NoLogBucket => "nolog",
            BiasMode::Shared => "shared",
        }
    }
}

/// Per-layer temporal bias head: bucket embedding table (where applicable)
/// plus the 2-layer tanh MLP mapping to per-head (or shared) biases.
pub struct TemporalBias {
    pub mode: BiasMode,
    pub buckets: usize,
    pub bucket_dim: usize,
    pub heads: usize,
    pub eps: f64,
    emb: Option<Param>,
    w1: Option<Param>,
    b1: Option<Param>,
    w2: Option<Param>,
    b2: Option<Param>,
}

/// Flat bias values for all pairs: (N^2 x width), width = heads or 1 (shared).
pub struct BiasOutput {
    pub flat: Var,
    pub width: usize,
}

impl TemporalBias {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        mode: BiasMode,
        buckets: usize,
        bucket_dim: usize,
        heads: usize,
        eps: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if buckets < 2 {
            return Err(CoreError::config(format!("bucket count {buckets} must be >= 2")));
        }
        if eps <= 0.0 {
            return Err(CoreError::config(format!("bucket eps {eps} must be positive")));
        }
        let mut tb = TemporalBias {
            mode,
            buckets,
            bucket_dim,
            heads,
            eps,
            emb: None,
            w1: None,
            b1: None,
            w2: None,
            b2: None,
        };
        if mode == BiasMode::None {
            return Ok(tb);
        }
        let (in_width, out_width) = match mode {
            BiasMode::Full => (bucket_dim, heads),
            BiasMode::NoLogBucket => (1, heads),
            BiasMode::Shared => (bucket_dim, 1),
            BiasMode::None => unreachable!(),
        };
        if mode != BiasMode::NoLogBucket {
            tb.emb = Some(store.register(
                &format!("{prefix}.bucket_emb"),
                init_embedding(rng, buckets, bucket_dim),
            )?);
        }
        tb.w1 = Some(store.register(
            &format!("{prefix}.mlp_w1"),
            init_projection(rng, in_width, bucket_dim),
        )?);
        tb.b1 = Some(store.register(&format!("{prefix}.mlp_b1"), zeros_vec(bucket_dim))?);
        tb.w2 = Some(store.register(
            &format!("{prefix}.mlp_w2"),
            init_projection(rng, bucket_dim, out_width),
        )?);
        tb.b2 = Some(store.register(&format!("{prefix}.mlp_b2"), zeros_vec(out_width))?);
        Ok(tb)
    }

    fn mlp(&self, tape: &Tape, input: Var) -> Var {
        let w1 = tape.param(self.w1.as_ref().expect("bias mlp"));
        let b1 = tape.param(self.b1.as_ref().expect("bias mlp"));
        let w2 = tape.param(self.w2.as_ref().expect("bias mlp"));
        let b2 = tape.param(self.b2.as_ref().expect("bias mlp"));
        let h = tape.tanh(tape.add_row_broadcast(tape.matmul(input, w1), b1));
        tape.add_row_broadcast(tape.matmul(h, w2), b2)
    }

    /// Bias values for every (i, j) pair of the given (scaled) event times,
    /// or None when the mode carries no bias.
    pub fn forward(&self, tape: &Tape, times: &[f64], range: &DeltaRange) -> Option<BiasOutput> {
        let n = times.len();
        match self.mode {
            BiasMode::None => None,
            BiasMode::Full | BiasMode::Shared => {
                // The MLP is per-row, so run it once over the B bucket
                // embeddings and gather pair rows from the result.
                let ids = bucketize_pairs(times, range, self.buckets, self.eps);
                let emb = tape.param(self.emb.as_ref().expect("bucket table"));
                let per_bucket = self.mlp(tape, emb);
                let flat = tape.gather_rows(per_bucket, &ids);
                let width = if self.mode == BiasMode::Shared { 1 } else { self.heads };
                debug_assert_eq!(tape.value(flat).shape(), &[n * n, width]);
                Some(BiasOutput { flat, width })
            }
            BiasMode::NoLogBucket => {
                let deltas = time_delta_matrix(times);
                let input = tape.constant(
                    Tensor::matrix(n * n, 1, deltas.into_data()).expect("delta column"),
                );
                let flat = self.mlp(tape, input);
                Some(BiasOutput {
                    flat,
                    width: self.heads,
                })
            }
        }
    }

    /// The (N x N) bias matrix for one head.
    pub fn head_bias(&self, tape: &Tape, out: &BiasOutput, head: usize, n: usize) -> Var {
        let col = if out.width == 1 { 0 } else { head };
        let column = tape.slice_cols(out.flat, col, col + 1);
        tape.reshape(column, &[n, n])
    }
}

/// One attention layer over event summaries: biased multi-head attention,
/// then FFN(LN(s + y)) with no outer residual.
pub struct EventAttnLayer {
    pub dim: usize,
    pub heads: usize,
    wq: Param,
    wk: Param,
    wv: Param,
    wo: Param,
    ln_gamma: Param,
    ln_beta: Param,
    ffn_w1: Param,
    ffn_b1: Param,
    ffn_w2: Param,
    ffn_b2: Param,
    pub bias: TemporalBias,
}

impl EventAttnLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        bias_mode: BiasMode,
        buckets: usize,
        bucket_dim: usize,
        bucket_eps: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(CoreError::config(format!(
                "attention heads {heads} must divide dim {dim}"
            )));
        }
        let ffn_hidden = 4 * dim;
        Ok(EventAttnLayer {
            dim,
            heads,
            wq: store.register(&format!("{prefix}.wq"), init_projection(rng, dim, dim))?,
            wk: store.register(&format!("{prefix}.wk"), init_projection(rng, dim, dim))?,
            wv: store.register(&format!("{prefix}.wv"), init_projection(rng, dim, dim))?,
            wo: store.register(&format!("{prefix}.wo"), init_projection(rng, dim, dim))?,
            ln_gamma: store.register(&format!("{prefix}.ln_gamma"), ones_vec(dim))?,
            ln_beta: store.register(&format!("{prefix}.ln_beta"), zeros_vec(dim))?,
            ffn_w1: store.register(&format!("{prefix}.ffn_w1"), init_projection(rng, dim, ffn_hidden))?,
            ffn_b1: store.register(&format!("{prefix}.ffn_b1"), zeros_vec(ffn_hidden))?,
            ffn_w2: store.register(&format!("{prefix}.ffn_w2"), init_projection(rng, ffn_hidden, dim))?,
            ffn_b2: store.register(&format!("{prefix}.ffn_b2"), zeros_vec(dim))?,
            bias: TemporalBias::new(
                store,
                &format!("{prefix}.bias"),
                bias_mode,
                buckets,
                bucket_dim,
                heads,
                bucket_eps,
                rng,
            )?,
        })
    }

    /// `s`: (N x D) event summaries; `times`: their scaled event times.
    pub fn forward(
        &self,
        tape: &Tape,
        s: Var,
        times: &[f64],
        range: &DeltaRange,
        causal: bool,
        mut trace: Option<&mut Trace>,
        site: &str,
    ) -> Var {
        let n = times.len();
        debug_assert_eq!(tape.value(s).rows(), n);
        let dk = self.dim / self.heads;
        let q = tape.matmul(s, tape.param(&self.wq));
        let k = tape.matmul(s, tape.param(&self.wk));
        let v = tape.matmul(s, tape.param(&self.wv));
        let bias_out = self.bias.forward(tape, times, range);
        let mut head_outs = Vec::with_capacity(self.heads);
        let mut head_weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dk, (h + 1) * dk);
            let qh = tape.slice_cols(q, c0, c1);
            let kh = tape.slice_cols(k, c0, c1);
            let vh = tape.slice_cols(v, c0, c1);
            let mut scores =
                tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / (dk as f64).sqrt());
            // Bias mode "none" skips the add op itself so outputs stay
            // bit-identical to a bias-free implementation.
            if let Some(bo) = &bias_out {
                let bh = self.bias.head_bias(tape, bo, h, n);
                scores = tape.add(scores, bh);
            }
            if causal {
                scores = tape.causal_mask(scores);
            }
            let alpha = tape.softmax_rows(scores);
            if trace.is_some() {
                head_weights.push((*tape.value(alpha)).clone());
            }
            head_outs.push(tape.matmul(alpha, vh));
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(AttnCapture {
                site: site.to_string(),
                head_weights,
            });
        }
        let y = tape.matmul(tape.concat_cols(&head_outs), tape.param(&self.wo));
        let resid = tape.add(s, y);
        let normed = tape.layer_norm_rows(
            resid,
            tape.param(&self.ln_gamma),
            tape.param(&self.ln_beta),
            LN_EPS,
        );
        let h1 = tape.gelu(tape.add_row_broadcast(
            tape.matmul(normed, tape.param(&self.ffn_w1)),
            tape.param(&self.ffn_b1),
        ));
        tape.add_row_broadcast(tape.matmul(h1, tape.param(&self.ffn_w2)), tape.param(&self.ffn_b2))
    }
}

/// The full stack (one layer by default; each layer owns its bias table).
pub struct EventAttn {
    pub layers: Vec<EventAttnLayer>,
    pub causal: bool,
}

impl EventAttn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        num_layers: usize,
        dim: usize,
        heads: usize,
        bias_mode: BiasMode,
        buckets: usize,
        bucket_dim: usize,
        bucket_eps: f64,
        causal: bool,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(CoreError::config("event attention needs at least one layer"));
        }
        let layers = (0..num_layers)
            .map(|l| {
                EventAttnLayer::new(
                    store,
                    &format!("{prefix}.l{l}"),
                    dim,
                    heads,
                    bias_mode,
                    buckets,
                    bucket_dim,
                    bucket_eps,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EventAttn { layers, causal })
    }

    pub fn forward(
        &self,
        tape: &Tape,
        s: Var,
        times: &[f64],
        range: &DeltaRange,
        mut trace: Option<&mut Trace>,
        site: &str,
    ) -> Var {
        let mut x = s;
        for (li, layer) in self.layers.iter().enumerate() {
            x = layer.forward(
                tape,
                x,
                times,
                range,
                self.causal,
                trace.as_deref_mut(),
                &format!("{site}:layer{li}"),
            );
        }
        x
    }
}
