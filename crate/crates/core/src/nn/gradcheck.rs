//! Finite-difference verification of tape gradients.
//!
//! The same closure drives both routes: once on a fresh tape for the analytic
//! gradient, then twice per coordinate (central differences) for the numeric
//! estimate. The closure must therefore be deterministic; anything stochastic
//! inside (Monte-Carlo draws, dropout masks) has to re-derive its stream from
//! fixed keys so both routes integrate the same function.

use crate::error::{CoreError, Result};

use super::param::Param;
use super::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Central-difference step. Forward values are O(1)-scaled here; 1e-5 balances
/// truncation against cancellation for f64.
pub const FD_STEP: f64 = 1e-5;

/// Checks d loss / d p for every coordinate of every listed parameter.
///
/// `build` must construct the full forward pass on the given tape and return
/// the scalar loss node.
pub fn grad_check<F>(params: &[Param], build: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape) -> Var,
{
    // Analytic pass.
    for p in params {
        let mut pt = p.borrow_mut();
        pt.grad.fill(0.0);
    }
    let tape = Tape::new();
    let loss = build(&tape);
    let loss_value = tape.item(loss);
    if !loss_value.is_finite() {
        return Err(CoreError::numeric(
            "grad_check",
            format!("loss is not finite: {loss_value}"),
        ));
    }
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.borrow().grad.data().to_vec()).collect();

    // Numeric pass, coordinate by coordinate.
    let eval = |build: &F| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.item(build(&tape));
        if !v.is_finite() {
            return Err(CoreError::numeric("grad_check", format!("perturbed loss not finite: {v}")));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        coords_checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let n = p.borrow().value.len();
        for i in 0..n {
            let orig = p.borrow().value.data()[i];
            p.borrow_mut().value.data_mut()[i] = orig + FD_STEP;
            let f_plus = eval(&build)?;
            p.borrow_mut().value.data_mut()[i] = orig - FD_STEP;
            let f_minus = eval(&build)?;
            p.borrow_mut().value.data_mut()[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = p.borrow().name.clone();
                report.worst_coord = i;
            }
        }
    }
    Ok(report)
}
