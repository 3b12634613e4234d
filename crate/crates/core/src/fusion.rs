//! Event-level fusion of token embeddings with the event-time embedding.
//!
//! Given the token matrix X (L x D) of one event and its time embedding e
//! (D), fusion produces a time-aware token matrix, later mean-pooled into the
//! event's summary vector. Four modes:
//!
//! * `none`     - bypass; the summary pools raw X and e never enters.
//! * `additive` - LN(X + drop(e W_t)) with the projected time vector broadcast
//!   to every row.
//! * `concat`   - LN(X + drop([X || e] W_c)), concatenating e onto each row.
//! * `xattn`    - LN(X + drop(MHA(Q=X, K=V=e))) where the time embedding is
//!   the only key/value token. With a single KV entry every attention weight
//!   is exactly 1.0 by construction; the trace records them so tests can pin
//!   that degeneracy.
//!
//! Dropout (train-time only) hits the fusion branch, never the residual path.
//! Each mode owns its LayerNorm parameters; swapping modes swaps the whole
//! sub-layer.

use crate::error::{CoreError, Result};
use crate::nn::param::{init_projection, ones_vec, zeros_vec, Param, ParamStore};
use crate::nn::rng::StreamRng;
use crate::nn::tape::{Tape, Var};
use crate::trace::{AttnCapture, Trace};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FusionMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "additive")]
    Additive,
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "xattn")]
    CrossAttn,
}

impl FusionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "additive" => Ok(FusionMode::Additive),
            "concat" => Ok(FusionMode::Concat),
            "xattn" => Ok(FusionMode::CrossAttn),
            other => Err(CoreError::config(format!(
                "unknown fusion mode {other:?} (expected none|additive|concat|xattn)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Additive => "additive",
            FusionMode::Concat => "concat",
            FusionMode::CrossAttn => "xattn",
        }
    }
}

pub struct Fusion {
    pub mode: FusionMode,
    pub dim: usize,
    pub heads: usize,
    pub dropout_p: f64,
    w_t: Option<Param>,
    w_c: Option<Param>,
    wq: Option<Param>,
    wk: Option<Param>,
    wv: Option<Param>,
    wo: Option<Param>,
    ln_gamma: Option<Param>,
    ln_beta: Option<Param>,
}

impl Fusion {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        mode: FusionMode,
        dim: usize,
        heads: usize,
        dropout_p: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(CoreError::config(format!("dropout {dropout_p} not in [0,1)")));
        }
        let mut f = Fusion {
            mode,
            dim,
            heads,
            dropout_p,
            w_t: None,
            w_c: None,
            wq: None,
            wk: None,
            wv: None,
            wo: None,
            ln_gamma: None,
            ln_beta: None,
        };
        if mode == FusionMode::None {
            return Ok(f);
        }
        match mode {
            FusionMode::Additive => {
                f.w_t = Some(store.register(&format!("{prefix}.w_t"), init_projection(rng, dim, dim))?);
            }
            FusionMode::Concat => {
                f.w_c =
                    Some(store.register(&format!("{prefix}.w_c"), init_projection(rng, 2 * dim, dim))?);
            }
            FusionMode::CrossAttn => {
                if heads == 0 || dim % heads != 0 {
                    return Err(CoreError::config(format!(
                        "fusion heads {heads} must divide dim {dim}"
                    )));
                }
                f.wq = Some(store.register(&format!("{prefix}.wq"), init_projection(rng, dim, dim))?);
                f.wk = Some(store.register(&format!("{prefix}.wk"), init_projection(rng, dim, dim))?);
                f.wv = Some(store.register(&format!("{prefix}.wv"), init_projection(rng, dim, dim))?);
                f.wo = Some(store.register(&format!("{prefix}.wo"), init_projection(rng, dim, dim))?);
            }
            FusionMode::None => unreachable!(),
        }
        f.ln_gamma = Some(store.register(&format!("{prefix}.ln_gamma"), ones_vec(dim))?);
        f.ln_beta = Some(store.register(&format!("{prefix}.ln_beta"), zeros_vec(dim))?);
        Ok(f)
    }

    /// Fuses one event's token matrix with its time embedding.
    ///
    /// `dropout_rng` present = training; absent = inference (dropout off).
    pub fn forward(
        &self,
        tape: &Tape,
        x: Var,
        e_t: Var,
        dropout_rng: Option<&mut StreamRng>,
        mut trace: Option<&mut Trace>,
        site: &str,
    ) -> Var {
        if self.mode == FusionMode::None {
            return x;
        }
        let rows = tape.value(x).rows();
        let branch = match self.mode {
            FusionMode::Additive => {
                let w_t = tape.param(self.w_t.as_ref().expect("additive params"));
                let e_row = tape.reshape(e_t, &[1, self.dim]);
                let proj = tape.reshape(tape.matmul(e_row, w_t), &[self.dim]);
                tape.repeat_rows(proj, rows)
            }
            FusionMode::Concat => {
                let w_c = tape.param(self.w_c.as_ref().expect("concat params"));
                let e_rows = tape.repeat_rows(e_t, rows);
                let cat = tape.concat_cols(&[x, e_rows]);
                tape.matmul(cat, w_c)
            }
            FusionMode::CrossAttn => {
                let dk = self.dim / self.heads;
                let wq = tape.param(self.wq.as_ref().expect("xattn params"));
                let wk = tape.param(self.wk.as_ref().expect("xattn params"));
                let wv = tape.param(self.wv.as_ref().expect("xattn params"));
                let wo = tape.param(self.wo.as_ref().expect("xattn params"));
                let q = tape.matmul(x, wq);
                let e_row = tape.reshape(e_t, &[1, self.dim]);
                let k = tape.matmul(e_row, wk);
                let v = tape.matmul(e_row, wv);
                let mut head_outs = Vec::with_capacity(self.heads);
                let mut head_weights = Vec::with_capacity(self.heads);
                for h in 0..self.heads {
                    let (c0, c1) = (h * dk, (h + 1) * dk);
                    let qh = tape.slice_cols(q, c0, c1);
                    let kh = tape.slice_cols(k, c0, c1);
                    let vh = tape.slice_cols(v, c0, c1);
                    let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / (dk as f64).sqrt());
                    let alpha = tape.softmax_rows(scores); // (L x 1), each entry exactly 1
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
                let concat = tape.concat_cols(&head_outs);
                tape.matmul(concat, wo)
            }
            FusionMode::None => unreachable!(),
        };
        let branch = match dropout_rng {
            Some(rng) if self.dropout_p > 0.0 => tape.dropout(branch, self.dropout_p, rng),
            _ => branch,
        };
        let residual = tape.add(x, branch);
        let gamma = tape.param(self.ln_gamma.as_ref().expect("ln params"));
        let beta = tape.param(self.ln_beta.as_ref().expect("ln params"));
        tape.layer_norm_rows(residual, gamma, beta, LN_EPS)
    }

    /// Zeroes the weights that feed the fusion branch, collapsing the output
    /// to LN(X). Used by degeneracy tests.
    pub fn zero_branch_weights(&self) {
        for p in [&self.w_t, &self.w_c, &self.wo] {
            if let Some(p) = p {
                p.borrow_mut().value.fill(0.0);
            }
        }
    }
}

/// Event summary: mean over token rows -> [D].
pub fn pool_event(tape: &Tape, fused: Var) -> Var {
    tape.mean_over_rows(fused)
}
