//! Training loop, multitask loss, and evaluation metrics.
//!
//! The loss on a batch of sequences is
//!
//! ```text
//! L = mean_seq NLL  +  alpha * mean_pair CE(next type)  +  beta * mean_pair MSE(next gap)
//! ```
//!
//! where the auxiliary pairs are (state after event i, event i+1) for
//! i >= 1 — the state must have seen at least one event before it is asked
//! to predict the next one, so single-event sequences contribute likelihood
//! only. Sequences are processed one at a time even inside a batch (there is
//! no cross-sequence padding anywhere in the compute graph), which makes
//! batch composition a pure bookkeeping choice: every per-sequence term is
//! bit-identical however the batch lines are drawn.
//!
//! Randomness is all named: shuffles are keyed by epoch, training-time
//! compensator draws by (step, sequence), validation draws by sequence only
//! so successive epochs score validation on common random numbers.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::intensity::{num_intervals, McDraws, QuadratureConfig};
use crate::model::{Model, PreparedSequence};
use crate::nn::{Adam, AdamConfig, StreamRng, Tape, Var};
use crate::temporal_attn::DeltaRange;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight on the next-type cross-entropy.
    pub alpha: f64,
    /// Weight on the next-gap squared error.
    pub beta: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement; the
    /// best-validation parameters are restored either way.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            alpha: 1.0,
            beta: 1.0,
            seed: 42,
            patience: Some(5),
        }
    }
}

/// The loss and its reported parts, all live on the tape.
pub struct LossParts {
    pub total: Var,
    pub nll_mean: Var,
    pub ce_mean: Var,
    pub mse_mean: Var,
    pub num_seqs: usize,
    pub num_pairs: usize,
}

/// Auxiliary-pair indices for a sequence of `n` events: context rows 1..n-1,
/// each predicting the event at its own index.
fn pair_rows(n: usize) -> std::ops::Range<usize> {
    1..n.max(1)
}

/// Builds the multitask loss for a batch. `draws_for` must hand back the
/// compensator draws for a given sequence; `dropout_rng` enables fusion
/// dropout (training).
pub fn multitask_loss(
    tape: &Tape,
    model: &Model,
    batch: &[&PreparedSequence],
    range: &DeltaRange,
    mut draws_for: impl FnMut(&PreparedSequence) -> McDraws,
    mut dropout_rng: Option<&mut StreamRng>,
    alpha: f64,
    beta: f64,
) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(CoreError::config("empty batch"));
    }
    let mut nlls = Vec::with_capacity(batch.len());
    let mut ce_sums = Vec::new();
    let mut mse_sums = Vec::new();
    let mut num_pairs = 0usize;
    for prep in batch {
        let out = model.forward_sequence(
            tape,
            prep,
            range,
            dropout_rng.as_deref_mut(),
            None,
        )?;
        let draws = draws_for(prep);
        let nll = model.head.nll_sequence(
            tape,
            out.proj,
            &prep.times,
            &prep.types,
            prep.t_end,
            &draws,
        )?;
        nlls.push(nll);

        let n = prep.len();
        let rows: Vec<usize> = pair_rows(n).collect();
        if rows.is_empty() {
            continue;
        }
        num_pairs += rows.len();

        let logits = model.type_logits(tape, out.ctx);
        let logp = tape.log_softmax_rows(logits);
        let coords: Vec<(usize, usize)> = rows.iter().map(|&e| (e, prep.types[e])).collect();
        ce_sums.push(tape.neg(tape.sum_all(tape.select_entries(logp, &coords))));

        let preds = model.gap_preds(tape, out.ctx);
        let sel = tape.reshape(tape.gather_rows(preds, &rows), &[rows.len()]);
        let targets: Vec<f64> = rows
            .iter()
            .map(|&e| prep.times[e] - prep.times[e - 1])
            .collect();
        let diff = tape.sub(sel, tape.constant(crate::nn::Tensor::vector(targets)));
        mse_sums.push(tape.sum_all(tape.mul(diff, diff)));
    }

    let nll_mean = tape.scale(tape.add_n(&nlls), 1.0 / batch.len() as f64);
    let (ce_mean, mse_mean) = if num_pairs > 0 {
        (
            tape.scale(tape.add_n(&ce_sums), 1.0 / num_pairs as f64),
            tape.scale(tape.add_n(&mse_sums), 1.0 / num_pairs as f64),
        )
    } else {
        (tape.scalar(0.0), tape.scalar(0.0))
    };
    let total = tape.add(
        tape.add(nll_mean, tape.scale(ce_mean, alpha)),
        tape.scale(mse_mean, beta),
    );
    Ok(LossParts {
        total,
        nll_mean,
        ce_mean,
        mse_mean,
        num_seqs: batch.len(),
        num_pairs,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation log-likelihood per event (higher is better).
    pub val_ll: f64,
    /// Validation next-type accuracy over auxiliary pairs (heads route).
    pub val_acc: f64,
    /// Validation next-gap RMSE in scaled time units (heads route).
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_ll: f64,
}

pub fn train(
    model: &Model,
    train_set: &[PreparedSequence],
    val_set: &[PreparedSequence],
    range: &DeltaRange,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CoreError::config("training needs non-empty train and val sets"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(CoreError::config("epochs and batch_size must be positive"));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let m = model.config.mc_samples;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, BTreeMap<String, crate::nn::Tensor>)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        StreamRng::for_component(cfg.seed, &format!("shuffle-e{epoch}")).shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut steps_in_epoch = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let tape = Tape::new();
            let mut drop_rng =
                StreamRng::for_component(cfg.seed, &format!("dropout:s{step}"));
            let parts = multitask_loss(
                &tape,
                model,
                &batch,
                range,
                |p| {
                    let mut r = StreamRng::for_component(
                        cfg.seed,
                        &format!("mc-train:s{step}:q{}", p.stream_key),
                    );
                    McDraws::generate(&mut r, num_intervals(&p.times, p.t_end), m)
                },
                Some(&mut drop_rng),
                cfg.alpha,
                cfg.beta,
            )?;
            let loss_v = tape.item(parts.total);
            if !loss_v.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: steps_in_epoch,
                    message: format!("loss became {loss_v}"),
                });
            }
            model.store.zero_grads();
            tape.backward(parts.total);
            adam.step(&model.store);
            epoch_loss += loss_v;
            steps_in_epoch += 1;
            step += 1;
        }

        let report = evaluate(
            model,
            val_set,
            range,
            PredRoute::Heads,
            cfg.seed,
            "mc-val",
        )?;
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / steps_in_epoch as f64,
            val_ll: report.ll_per_event,
            val_acc: report.acc,
            val_rmse: report.rmse_scaled,
        };
        history.push(stats);

        let improved = best.as_ref().map_or(true, |(_, b, _)| stats.val_ll > *b);
        if improved {
            best = Some((epoch, stats.val_ll, model.store.snapshot()));
            stale = 0;
        } else {
            stale += 1;
            if let Some(patience) = cfg.patience {
                if stale >= patience {
                    break;
                }
            }
        }
    }

    let (best_epoch, best_val_ll, snapshot) =
        best.expect("at least one epoch ran");
    model.store.restore(&snapshot)?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_ll,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredRoute {
    /// Auxiliary linear heads: argmax logits, regressed gap.
    Heads,
    /// Intensity-based: expected next time by quadrature, then the
    /// intensity argmax at that time.
    Mbr,
}

impl PredRoute {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "heads" => Ok(PredRoute::Heads),
            "mbr" => Ok(PredRoute::Mbr),
            other => Err(CoreError::config(format!(
                "unknown prediction route {other:?} (expected heads|mbr)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PredRoute::Heads => "heads",
            PredRoute::Mbr => "mbr",
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EvalReport {
    /// Total log-likelihood divided by total event count (tail compensators
    /// included in the total).
    pub ll_per_event: f64,
    /// Next-type accuracy over auxiliary pairs; NaN when no sequence has
    /// two events.
    pub acc: f64,
    /// Next-gap RMSE in scaled units; NaN when there are no pairs.
    pub rmse_scaled: f64,
    /// `rmse_scaled` times the fitted scale — the same quantity in raw time
    /// units, exact by construction.
    pub rmse_unscaled: f64,
    pub events_scored: usize,
    pub pairs_scored: usize,
    /// MBR predictions whose quadrature hit the horizon cap.
    pub truncated: usize,
}

/// Scores a set of sequences. Compensator draws are keyed by
/// (`seed`, `purpose`, sequence), so one (seed, purpose) pair pins the
/// estimate regardless of evaluation order or batching.
///
/// `rmse_unscaled` needs the fitted scale; pass it via `scale` when the
/// caller wants raw-unit errors (1.0 leaves the two identical).
pub fn evaluate(
    model: &Model,
    set: &[PreparedSequence],
    range: &DeltaRange,
    route: PredRoute,
    seed: u64,
    purpose: &str,
) -> Result<EvalReport> {
    evaluate_scaled(model, set, range, route, seed, purpose, 1.0)
}

pub fn evaluate_scaled(
    model: &Model,
    set: &[PreparedSequence],
    range: &DeltaRange,
    route: PredRoute,
    seed: u64,
    purpose: &str,
    scale: f64,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(CoreError::config("cannot evaluate an empty set"));
    }
    let m = model.config.mc_samples;
    let quad = QuadratureConfig::default();
    let mut total_ll = 0.0;
    let mut events = 0usize;
    let mut pairs = 0usize;
    let mut correct = 0usize;
    let mut sq_err = 0.0;
    let mut truncated = 0usize;

    for prep in set {
        let tape = Tape::new();
        let out = model.forward_sequence(&tape, prep, range, None, None)?;
        let mut r =
            StreamRng::for_component(seed, &format!("{purpose}:q{}", prep.stream_key));
        let draws = McDraws::generate(&mut r, num_intervals(&prep.times, prep.t_end), m);
        let nll = model.head.nll_sequence(
            &tape,
            out.proj,
            &prep.times,
            &prep.types,
            prep.t_end,
            &draws,
        )?;
        let ll = -tape.item(nll);
        if !ll.is_finite() {
            return Err(CoreError::numeric(
                "evaluate",
                format!("non-finite log-likelihood on {}", prep.seq_id),
            ));
        }
        total_ll += ll;
        events += prep.len();

        let n = prep.len();
        let rows: Vec<usize> = pair_rows(n).collect();
        if rows.is_empty() {
            continue;
        }
        match route {
            PredRoute::Heads => {
                let logits = tape.value(model.type_logits(&tape, out.ctx));
                let preds = tape.value(model.gap_preds(&tape, out.ctx));
                for &e in &rows {
                    if argmax(logits.row(e)) == prep.types[e] {
                        correct += 1;
                    }
                    let gap = prep.times[e] - prep.times[e - 1];
                    let d = preds.at(e, 0) - gap;
                    sq_err += d * d;
                }
            }
            PredRoute::Mbr => {
                let proj = tape.value(out.proj);
                for &e in &rows {
                    let row = proj.row(e);
                    let t_prev = prep.times[e - 1];
                    // Scaled time has unit mean training gap by construction.
                    let pred = model.head.predict_next_time(row, t_prev, 1.0, &quad);
                    if pred.truncated {
                        truncated += 1;
                    }
                    let k_hat = model
                        .head
                        .predict_next_type(row, pred.t_hat - t_prev);
                    if k_hat == prep.types[e] {
                        correct += 1;
                    }
                    let gap = prep.times[e] - prep.times[e - 1];
                    let d = (pred.t_hat - t_prev) - gap;
                    sq_err += d * d;
                }
            }
        }
        pairs += rows.len();
    }

    let (acc, rmse_scaled) = if pairs > 0 {
        (
            correct as f64 / pairs as f64,
            (sq_err / pairs as f64).sqrt(),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(EvalReport {
        ll_per_event: total_ll / events as f64,
        acc,
        rmse_scaled,
        rmse_unscaled: scale * rmse_scaled,
        events_scored: events,
        pairs_scored: pairs,
        truncated,
    })
}

/// First index of the maximum (strict comparisons keep ties at the lowest
/// index).
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
