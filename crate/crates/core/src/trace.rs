//! Side-channel capture of attention weights during a forward pass.
//!
//! Forward functions take `Option<&mut Trace>`; when present they push the
//! realized attention matrices (values only, detached from the tape). Used by
//! the attention-dump command and by tests that assert exact degeneracies.

use crate::nn::Tensor;

#[derive(Debug, Clone)]
pub struct AttnCapture {
    /// Where this came from, e.g. "fusion:event2" or "event_attn:layer0".
    pub site: String,
    /// One weight matrix per head; rows are queries, columns keys.
    pub head_weights: Vec<Tensor>,
}

pub type Trace = Vec<AttnCapture>;
