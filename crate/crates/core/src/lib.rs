//! Marked temporal point process modelling on event streams.
//!
//! The crate builds a single model out of small, separately testable pieces:
//!
//! * [`data`]: JSONL event-stream ingestion, validation, splitting, time scaling,
//!   padded batching.
//! * [`nn`]: dense f64 tensors, a reverse-mode autodiff tape, parameter store,
//!   Adam, and a finite-difference gradient checker. Everything downstream is
//!   expressed through this tape so analytic gradients can always be verified
//!   numerically.
//! * [`embed`]: type-text tokenization, token embedding table, and the three
//!   temporal embedding maps (linear, sinusoidal, interval MLP).
//! * [`fusion`]: event-level fusion of token embeddings with the event-time
//!   embedding (additive / concat / cross-attention / none) and mean pooling
//!   into one vector per event.
//! * [`temporal_attn`]: cross-event self-attention whose scores carry additive
//!   per-head biases derived from log-bucketed pairwise time deltas.
//! * [`backbone`]: assembly of the hybrid input sequence (prompt, time embed,
//!   raw token embeds, fused event summary) and a compact causal pre-LN
//!   transformer over it.
//! * [`intensity`]: conditional intensity head, Monte-Carlo log-likelihood,
//!   and quadrature-based next-event time/type prediction.
//! * [`train`]: multitask loss (likelihood + type CE + time MSE), the Adam
//!   training loop, and evaluation metrics.
//! * [`synth`]: synthetic generators (homogeneous Poisson, exponential-kernel
//!   Hawkes via thinning) with a closed-form Hawkes likelihood used as an
//!   oracle for the Monte-Carlo estimator.
//! * [`model`]: configuration plus the full forward pass tying the above
//!   together; [`checkpoint`] serializes it.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod embed;
pub mod error;
pub mod fusion;
pub mod intensity;
pub mod model;
pub mod nn;
pub mod synth;
pub mod temporal_attn;
pub mod trace;
pub mod train;

pub use error::CoreError;
