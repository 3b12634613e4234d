//! Conditional intensity head over per-event context states, with the
//! Monte-Carlo likelihood used for training and the deterministic quadrature
//! used for next-event prediction.
//!
//! For type `k` at time `t` inside the interval following event `i` (with
//! `t_prev` the interval's left endpoint and `h` the context state carried
//! into the interval):
//!
//! ```text
//! lambda_k(t) = softplus_s( alpha_k * (t - t_prev) + w_k . h + b_k )
//! ```
//!
//! The log-likelihood of a sequence on `(0, t_end]` is the usual sum of event
//! log-intensities minus the compensator `int_0^t_end sum_k lambda_k`. The
//! compensator has no closed form here, so each inter-event interval is
//! estimated with `M` uniform samples. Both the differentiable path
//! ([`IntensityHead::nll_sequence`]) and the value-only estimator
//! ([`mc_log_likelihood`]) consume the same [`McDraws`] so that a fixed seed
//! pins down the estimate exactly.

use crate::error::{CoreError, Result};
use crate::nn::param::{init_projection, zeros_vec};
use crate::nn::{Param, ParamStore, StreamRng, Tape, Tensor, Var};

/// Unit-interval samples for the compensator estimate: one vector of `M`
/// uniforms per inter-event interval (plus one for the tail interval when the
/// observation window extends past the last event). Sample `u` maps to time
/// `t_prev + u * (t - t_prev)` inside its interval, so the draws themselves
/// are scale-free and the same draws can price a sequence and its rescaled
/// copy.
#[derive(Debug, Clone)]
pub struct McDraws {
    per_interval: Vec<Vec<f64>>,
    samples: usize,
}

impl McDraws {
    /// Draws `samples` uniforms for each of `intervals` intervals, consuming
    /// the stream interval-by-interval. Because the stream is consumed in
    /// order, draws for interval `i` do not depend on how many intervals
    /// follow it.
    pub fn generate(rng: &mut StreamRng, intervals: usize, samples: usize) -> Self {
        assert!(samples > 0, "need at least one MC sample per interval");
        let per_interval = (0..intervals)
            .map(|_| (0..samples).map(|_| rng.uniform()).collect())
            .collect();
        Self {
            per_interval,
            samples,
        }
    }

    pub fn intervals(&self) -> usize {
        self.per_interval.len()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn interval(&self, i: usize) -> &[f64] {
        &self.per_interval[i]
    }
}

/// Number of compensator intervals for a sequence observed on `(0, t_end]`:
/// one per event, plus a tail interval when `t_end` lies strictly past the
/// last event. Callers generating [`McDraws`] must size them with this.
pub fn num_intervals(times: &[f64], t_end: f64) -> usize {
    let n = times.len();
    if n == 0 {
        return 0;
    }
    n + usize::from(t_end > times[n - 1])
}

/// Left endpoints and widths of the compensator intervals, in order. Interval
/// `i < n` is `(t_{i-1}, t_i]` with `t_{-1} = 0`; the optional tail is
/// `(t_n, t_end]`.
fn interval_bounds(times: &[f64], t_end: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(num_intervals(times, t_end));
    let mut prev = 0.0;
    for &t in times {
        out.push((prev, t - prev));
        prev = t;
    }
    if t_end > prev {
        out.push((prev, t_end - prev));
    }
    out
}

/// Settings for the next-event-time quadrature (see
/// [`IntensityHead::predict_next_time`]).
#[derive(Debug, Clone)]
pub struct QuadratureConfig {
    /// Points in the final fixed grid over `[t_prev, t_up]`.
    pub grid: usize,
    /// March stops once survival `exp(-Lambda)` drops below this.
    pub survival_cutoff: f64,
    /// Hard cap on the march, in units of the mean training gap. Hitting it
    /// sets the `truncated` flag on the prediction.
    pub max_horizon_gaps: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        // The cutoff must be tight enough that the discarded tail cannot move
        // the expectation by more than the advertised 1e-3 tolerance: the
        // truncated mass q contributes roughly q * (t_up + mean gap), which
        // for slow rates (mean gap >> 1) already exceeds 1e-3 at q = 1e-4.
        Self {
            grid: 256,
            survival_cutoff: 1e-5,
            max_horizon_gaps: 1000.0,
        }
    }
}

/// Expected next-event time from the quadrature, with a flag set when the
/// march hit its horizon cap before survival dropped below the cutoff (the
/// estimate is then an expectation over the captured window only).
#[derive(Debug, Clone, Copy)]
pub struct NextTimePrediction {
    pub t_hat: f64,
    pub truncated: bool,
}

/// Per-type conditional intensity parameters: a projection `w [D, K]`, bias
/// `b [K]`, and time slope `alpha [K]`, squashed through a softplus with
/// configurable sharpness.
pub struct IntensityHead {
    num_types: usize,
    sharpness: f64,
    w: Param,
    b: Param,
    alpha: Param,
}

impl IntensityHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        num_types: usize,
        sharpness: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if num_types == 0 {
            return Err(CoreError::config("intensity head needs at least one event type"));
        }
        if dim == 0 {
            return Err(CoreError::config("intensity head needs a positive context dim"));
        }
        if !(sharpness > 0.0) || !sharpness.is_finite() {
            return Err(CoreError::config(format!(
                "softplus sharpness must be a positive finite number, got {sharpness}"
            )));
        }
        let w = store.register(
            &format!("{prefix}.w"),
            init_projection(rng, dim, num_types),
        )?;
        let b = store.register(&format!("{prefix}.b"), zeros_vec(num_types))?;
        // Zero slopes start every interval piecewise-constant in time; the
        // model learns decay/growth from data rather than from init noise.
        let alpha = store.register(&format!("{prefix}.alpha"), zeros_vec(num_types))?;
        Ok(Self {
            num_types,
            sharpness,
            w,
            b,
            alpha,
        })
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    /// Pre-activation scores `ctx . w + b` for every context row: row `i`
    /// holds, per type, the time-independent part of the intensity argument
    /// on the interval that follows state `i`.
    pub fn project(&self, tape: &Tape, ctx: Var) -> Var {
        let w = tape.param(&self.w);
        let b = tape.param(&self.b);
        tape.add_row_broadcast(tape.matmul(ctx, w), b)
    }

    /// Negative log-likelihood of one sequence, differentiable through `proj`
    /// and the head's own parameters. `proj` must hold `n + 1` rows (state
    /// before each of the `n` events, plus the post-last state for the tail);
    /// `draws` must be sized via [`num_intervals`].
    pub fn nll_sequence(
        &self,
        tape: &Tape,
        proj: Var,
        times: &[f64],
        types: &[usize],
        t_end: f64,
        draws: &McDraws,
    ) -> Result<Var> {
        let n = times.len();
        if n == 0 {
            return Err(CoreError::numeric("nll", "empty sequence"));
        }
        if types.len() != n {
            return Err(CoreError::shape(
                "nll",
                format!("{n} event times but {} event types", types.len()),
            ));
        }
        if let Some(&k) = types.iter().find(|&&k| k >= self.num_types) {
            return Err(CoreError::shape(
                "nll",
                format!("event type id {k} out of range for {} types", self.num_types),
            ));
        }
        let proj_shape = tape.shape(proj);
        if proj_shape != [n + 1, self.num_types] {
            return Err(CoreError::shape(
                "nll",
                format!(
                    "projection shape {proj_shape:?} does not match {} events over {} types",
                    n, self.num_types
                ),
            ));
        }
        let bounds = interval_bounds(times, t_end);
        if draws.intervals() != bounds.len() {
            return Err(CoreError::shape(
                "nll",
                format!(
                    "draws cover {} intervals but the sequence has {}",
                    draws.intervals(),
                    bounds.len()
                ),
            ));
        }

        let alpha = tape.param(&self.alpha);
        let m = draws.samples();

        // Event terms: the argument at event i is its own projection entry
        // plus alpha_k times the gap since the previous event.
        let coords: Vec<(usize, usize)> = types.iter().copied().enumerate().collect();
        let sel = tape.select_entries(proj, &coords);
        let gaps: Vec<f64> = bounds[..n].iter().map(|&(_, dt)| dt).collect();
        let alpha_mat = tape.reshape(alpha, &[self.num_types, 1]);
        let alpha_sel = tape.reshape(tape.gather_rows(alpha_mat, types), &[n]);
        let gap_v = tape.constant(Tensor::vector(gaps));
        let args = tape.add(sel, tape.mul(alpha_sel, gap_v));
        // ln(softplus) underflows to -inf only for arguments below ~-700/s,
        // far outside anything a trained head produces; divergence checks
        // upstream surface it if it ever happens.
        let event_sum = tape.sum_all(tape.ln(tape.softplus(args, self.sharpness)));

        // Compensator: per interval, M samples of the total intensity, summed
        // over types and samples, scaled by dt / M.
        let mut parts = Vec::with_capacity(bounds.len());
        for (i, &(_, dt)) in bounds.iter().enumerate() {
            let row = tape.reshape(tape.slice_rows(proj, i, i + 1), &[self.num_types]);
            let base = tape.repeat_rows(row, m);
            let deltas: Vec<f64> = draws.interval(i).iter().map(|&u| u * dt).collect();
            let off = tape.outer(tape.constant(Tensor::vector(deltas)), alpha);
            let lam = tape.softplus(tape.add(base, off), self.sharpness);
            parts.push(tape.scale(tape.sum_all(lam), dt / m as f64));
        }
        let compensator = tape.add_n(&parts);
        Ok(tape.sub(compensator, event_sum))
    }

    /// Value-level intensities for every type at offset `delta` past the
    /// interval's left endpoint, given that interval's projection row.
    pub fn lambdas_at(&self, proj_row: &[f64], delta: f64) -> Vec<f64> {
        assert_eq!(proj_row.len(), self.num_types, "projection row arity");
        let alpha = self.alpha.borrow();
        let s = self.sharpness;
        proj_row
            .iter()
            .zip(alpha.value.data())
            .map(|(&z, &a)| softplus_value(s * (z + a * delta)) / s)
            .collect()
    }

    /// Total intensity (summed over types) at offset `delta`.
    fn total_lambda(&self, proj_row: &[f64], delta: f64) -> f64 {
        self.lambdas_at(proj_row, delta).iter().sum()
    }

    /// Expected next-event time after `t_prev` under this head, by
    /// deterministic quadrature of `t * lambda(t) * exp(-Lambda(t))`.
    ///
    /// Two phases: a coarse march (step `mean_gap / 8`) accumulates the
    /// compensator until survival falls below the cutoff or the horizon cap
    /// is reached, fixing the upper limit `t_up`; then a trapezoidal rule on
    /// a `grid`-point uniform grid over `[t_prev, t_up]` evaluates the
    /// expectation, renormalized by the mass the grid captures so a slightly
    /// clipped tail does not bias the estimate.
    pub fn predict_next_time(
        &self,
        proj_row: &[f64],
        t_prev: f64,
        mean_gap: f64,
        quad: &QuadratureConfig,
    ) -> NextTimePrediction {
        assert!(quad.grid >= 2, "quadrature grid needs at least two points");
        assert!(mean_gap > 0.0, "mean gap must be positive");
        let step = mean_gap / 8.0;
        let horizon = quad.max_horizon_gaps * mean_gap;
        let lambda_limit = -quad.survival_cutoff.ln();

        // Phase 1: march to find t_up.
        let mut cum = 0.0;
        let mut delta = 0.0;
        let mut lam_left = self.total_lambda(proj_row, 0.0);
        let mut truncated = true;
        while delta < horizon {
            let next = (delta + step).min(horizon);
            let lam_right = self.total_lambda(proj_row, next);
            cum += 0.5 * (lam_left + lam_right) * (next - delta);
            delta = next;
            lam_left = lam_right;
            if cum > lambda_limit {
                truncated = false;
                break;
            }
        }
        let t_up = delta;

        // Phase 2: fixed grid over [0, t_up] in interval coordinates.
        let g = quad.grid;
        let h = t_up / (g - 1) as f64;
        let mut mass = 0.0;
        let mut first_moment = 0.0;
        let mut cum = 0.0;
        let mut prev_lam = self.total_lambda(proj_row, 0.0);
        let mut prev_f = prev_lam; // exp(-0) = 1
        let mut prev_tf = t_prev * prev_f;
        for j in 1..g {
            let d = j as f64 * h;
            let lam = self.total_lambda(proj_row, d);
            cum += 0.5 * (prev_lam + lam) * h;
            let f = lam * (-cum).exp();
            let tf = (t_prev + d) * f;
            mass += 0.5 * (prev_f + f) * h;
            first_moment += 0.5 * (prev_tf + tf) * h;
            prev_lam = lam;
            prev_f = f;
            prev_tf = tf;
        }
        let t_hat = if mass > 0.0 {
            first_moment / mass
        } else {
            // Degenerate zero-intensity window: fall back to the midpoint.
            t_prev + 0.5 * t_up
        };
        NextTimePrediction { t_hat, truncated }
    }

    /// Most likely next event type: the argmax of the per-type intensities at
    /// offset `delta` (ties resolve to the lowest type id).
    pub fn predict_next_type(&self, proj_row: &[f64], delta: f64) -> usize {
        let lams = self.lambdas_at(proj_row, delta);
        let mut best = 0;
        for (k, &l) in lams.iter().enumerate() {
            if l > lams[best] {
                best = k;
            }
        }
        best
    }
}

/// Numerically stable softplus value, matching the tape op exactly.
fn softplus_value(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// A Monte-Carlo log-likelihood estimate with its standard error (the SE
/// covers only the compensator sampling noise; event terms are exact).
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub ll: f64,
    /// `NaN` when fewer than two samples per interval were drawn.
    pub se: f64,
}

/// Value-only MC estimate of a sequence's log-likelihood under an arbitrary
/// intensity `lambda(interval, t) -> per-type intensities`, where `interval`
/// is the compensator interval index in the same order as [`interval_bounds`]
/// (one per event, then the tail). Shares [`McDraws`] with the differentiable
/// path so both price the same realization of the estimator.
pub fn mc_log_likelihood(
    times: &[f64],
    types: &[usize],
    t_end: f64,
    lambda: impl Fn(usize, f64) -> Vec<f64>,
    draws: &McDraws,
) -> Result<McEstimate> {
    let n = times.len();
    if n == 0 {
        return Err(CoreError::numeric("mc-ll", "empty sequence"));
    }
    if types.len() != n {
        return Err(CoreError::shape(
            "mc-ll",
            format!("{n} event times but {} event types", types.len()),
        ));
    }
    let bounds = interval_bounds(times, t_end);
    if draws.intervals() != bounds.len() {
        return Err(CoreError::shape(
            "mc-ll",
            format!(
                "draws cover {} intervals but the sequence has {}",
                draws.intervals(),
                bounds.len()
            ),
        ));
    }
    let m = draws.samples();

    let mut ll = 0.0;
    for (i, (&t, &k)) in times.iter().zip(types).enumerate() {
        let lams = lambda(i, t);
        let lam = *lams.get(k).ok_or_else(|| {
            CoreError::shape("mc-ll", format!("type id {k} out of range ({} types)", lams.len()))
        })?;
        if !(lam > 0.0) {
            return Err(CoreError::numeric(
                "mc-ll",
                format!("non-positive intensity {lam} at event {i}"),
            ));
        }
        ll += lam.ln();
    }

    let mut var = 0.0;
    for (i, &(lo, dt)) in bounds.iter().enumerate() {
        let mut total = 0.0;
        let mut samples = Vec::with_capacity(m);
        for &u in draws.interval(i) {
            let x: f64 = lambda(i, lo + u * dt).iter().sum();
            total += x;
            samples.push(x);
        }
        ll -= total * (dt / m as f64);
        if m >= 2 {
            let mean = total / m as f64;
            let s2: f64 =
                samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
            var += dt * dt * s2 / m as f64;
        }
    }
    let se = if m >= 2 { var.sqrt() } else { f64::NAN };
    Ok(McEstimate { ll, se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    const LN2: f64 = std::f64::consts::LN_2;

    fn head_with(
        dim: usize,
        num_types: usize,
        sharpness: f64,
    ) -> (ParamStore, IntensityHead) {
        let mut store = ParamStore::new();
        let mut rng = StreamRng::for_component(7, "intensity-test");
        let head =
            IntensityHead::new(&mut store, "head", dim, num_types, sharpness, &mut rng).unwrap();
        (store, head)
    }

    /// Overwrites the head so every type has constant intensity `lam`
    /// (weights and slopes zeroed, bias solved from the softplus inverse).
    fn freeze_constant(head: &IntensityHead, lam: f64) {
        let s = head.sharpness;
        // softplus_s(b) = lam  =>  b = ln(exp(s*lam) - 1) / s
        let b = ((s * lam).exp() - 1.0).ln() / s;
        head.w.borrow_mut().value.fill(0.0);
        head.alpha.borrow_mut().value.fill(0.0);
        head.b.borrow_mut().value.fill(b);
    }

    #[test]
    fn zeroed_head_gives_log_two_intensity() {
        let (_s, head) = head_with(3, 2, 1.0);
        head.w.borrow_mut().value.fill(0.0);
        let lams = head.lambdas_at(&[0.0, 0.0], 0.7);
        for l in lams {
            assert!((l - LN2).abs() < 1e-15, "softplus(0) should be ln 2, got {l}");
        }
    }

    #[test]
    fn sharpness_scales_the_zero_point() {
        let (_s, head) = head_with(2, 1, 2.5);
        let l = head.lambdas_at(&[0.0], 0.0)[0];
        assert!((l - LN2 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn frozen_bias_recovers_target_rate() {
        let (_s, head) = head_with(2, 3, 1.0);
        freeze_constant(&head, 2.0);
        // A projection row already includes the bias (proj = ctx.w + b), so
        // with weights zeroed the row is just b.
        let b = head.b.borrow().value.data()[0];
        for &d in &[0.0, 0.3, 10.0] {
            for l in head.lambdas_at(&[b, b, b], d) {
                assert!((l - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn num_intervals_counts_the_tail_only_when_open() {
        assert_eq!(num_intervals(&[1.0, 2.0], 2.0), 2);
        assert_eq!(num_intervals(&[1.0, 2.0], 2.5), 3);
        assert_eq!(num_intervals(&[], 5.0), 0);
    }

    #[test]
    fn draws_are_reproducible_and_in_unit_range() {
        let mut a = StreamRng::for_component(11, "mc");
        let mut b = StreamRng::for_component(11, "mc");
        let da = McDraws::generate(&mut a, 4, 6);
        let db = McDraws::generate(&mut b, 4, 6);
        for i in 0..4 {
            assert_eq!(da.interval(i), db.interval(i));
            for &u in da.interval(i) {
                assert!((0.0..1.0).contains(&u));
            }
        }
        // Consuming in interval order: a shorter draw set is a prefix-by-
        // interval of a longer one from the same stream state.
        let mut c = StreamRng::for_component(11, "mc");
        let dc = McDraws::generate(&mut c, 2, 6);
        assert_eq!(dc.interval(0), da.interval(0));
        assert_eq!(dc.interval(1), da.interval(1));
    }

    /// With a constant intensity the MC integrand has zero variance, so the
    /// estimate must equal the closed form N ln L - K L t_end to rounding.
    #[test]
    fn constant_intensity_nll_matches_closed_form() {
        for &(k_types, lam) in &[(1usize, 2.0f64), (3, 0.7)] {
            let (_s, head) = head_with(2, k_types, 1.0);
            freeze_constant(&head, lam);
            let times = [0.4, 1.1, 1.9, 3.0];
            let types = vec![0usize, k_types - 1, 0, k_types / 2];
            let t_end = 3.75;
            let mut rng = StreamRng::for_component(3, "mc-test");
            let draws = McDraws::generate(&mut rng, num_intervals(&times, t_end), 20);

            let tape = Tape::new();
            let ctx = tape.constant(Tensor::zeros(&[times.len() + 1, 2]));
            let proj = head.project(&tape, ctx);
            let nll = head
                .nll_sequence(&tape, proj, &times, &types, t_end, &draws)
                .unwrap();
            let expect = -(times.len() as f64 * lam.ln() - k_types as f64 * lam * t_end);
            assert!(
                (tape.item(nll) - expect).abs() < 1e-10,
                "got {}, want {expect}",
                tape.item(nll)
            );
        }
    }

    #[test]
    fn tail_interval_adds_exactly_its_compensator_share() {
        let (_s, head) = head_with(2, 1, 1.0);
        freeze_constant(&head, 2.0);
        let times = [0.5, 1.5];
        let types = [0usize, 0];
        let rng = StreamRng::for_component(5, "mc-test");

        let eval = |t_end: f64| {
            let mut r = rng.clone();
            let draws = McDraws::generate(&mut r, num_intervals(&times, t_end), 8);
            let tape = Tape::new();
            let ctx = tape.constant(Tensor::zeros(&[3, 2]));
            let proj = head.project(&tape, ctx);
            let nll = head
                .nll_sequence(&tape, proj, &times, &types, t_end, &draws)
                .unwrap();
            tape.item(nll)
        };
        let closed = eval(1.5);
        let open = eval(2.5);
        assert!((open - closed - 2.0 * 1.0).abs() < 1e-12);
    }

    #[test]
    fn closure_estimator_is_exact_for_poisson() {
        let times = [0.2, 0.9, 2.4];
        let types = [0usize, 0, 0];
        let t_end = 3.0;
        let lam = 1.7;
        let mut rng = StreamRng::for_component(9, "mc-test");
        let draws = McDraws::generate(&mut rng, num_intervals(&times, t_end), 20);
        let est = mc_log_likelihood(&times, &types, t_end, |_, _| vec![lam], &draws).unwrap();
        let expect = 3.0 * lam.ln() - lam * t_end;
        assert!((est.ll - expect).abs() < 1e-12);
        assert!(est.se.abs() < 1e-12, "constant integrand has zero variance");
    }

    #[test]
    fn diff_and_closure_paths_agree_on_shared_draws() {
        let (_s, head) = head_with(4, 3, 1.3);
        // Give alpha some structure so intensities actually vary in time.
        head.alpha
            .borrow_mut()
            .value
            .data_mut()
            .copy_from_slice(&[-0.4, 0.2, 0.05]);
        let times = [0.3, 1.0, 1.4, 2.2];
        let types = [2usize, 0, 1, 2];
        let t_end = 2.8;
        let mut rng = StreamRng::for_component(21, "mc-test");
        let draws = McDraws::generate(&mut rng, num_intervals(&times, t_end), 16);

        let mut ctx_rng = StreamRng::for_component(22, "ctx");
        let ctx_t = Tensor::new(
            vec![5, 4],
            (0..20).map(|_| ctx_rng.normal(0.0, 0.5)).collect(),
        )
        .unwrap();

        let tape = Tape::new();
        let ctx = tape.constant(ctx_t.clone());
        let proj = head.project(&tape, ctx);
        let proj_vals = tape.value(proj);
        let nll = head
            .nll_sequence(&tape, proj, &times, &types, t_end, &draws)
            .unwrap();
        let diff_ll = -tape.item(nll);

        let rows: Vec<Vec<f64>> = (0..5).map(|i| tape.value(proj).row(i).to_vec()).collect();
        let _ = proj_vals;
        let est = mc_log_likelihood(
            &times,
            &types,
            t_end,
            |i, t| {
                let lo = if i == 0 { 0.0 } else { times[i - 1] };
                head.lambdas_at(&rows[i], t - lo)
            },
            &draws,
        )
        .unwrap();
        assert!(
            (diff_ll - est.ll).abs() < 1e-9,
            "tape {diff_ll} vs closure {}",
            est.ll
        );
    }

    #[test]
    fn standard_error_matches_a_direct_recomputation() {
        let times = [0.5, 1.25];
        let types = [0usize, 0];
        let t_end = 2.0;
        let mut rng = StreamRng::for_component(31, "mc-test");
        let m = 12;
        let draws = McDraws::generate(&mut rng, num_intervals(&times, t_end), m);
        // Time-varying rate so the sample variance is non-trivial.
        let rate = |t: f64| 0.5 + 0.3 * t;
        let est =
            mc_log_likelihood(&times, &types, t_end, |_, t| vec![rate(t)], &draws).unwrap();

        let bounds = [(0.0, 0.5), (0.5, 0.75), (1.25, 0.75)];
        let mut var = 0.0;
        for (i, &(lo, dt)) in bounds.iter().enumerate() {
            let xs: Vec<f64> = draws.interval(i).iter().map(|&u| rate(lo + u * dt)).collect();
            let mean = xs.iter().sum::<f64>() / m as f64;
            let s2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            var += dt * dt * s2 / m as f64;
        }
        assert!((est.se - var.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = StreamRng::for_component(41, "gc");
        let head = IntensityHead::new(&mut store, "head", 4, 2, 1.0, &mut rng).unwrap();
        // Perturb the head away from its zero-bias init so gradients are not
        // at a symmetric point.
        {
            let mut b = head.b.borrow_mut();
            b.value.data_mut().copy_from_slice(&[0.3, -0.2]);
            let mut a = head.alpha.borrow_mut();
            a.value.data_mut().copy_from_slice(&[0.15, -0.1]);
        }
        let times = [0.4, 1.0, 1.7];
        let types = [0usize, 1, 0];
        let t_end = 2.0;
        let mut mc_rng = StreamRng::for_component(42, "gc-mc");
        let draws = McDraws::generate(&mut mc_rng, num_intervals(&times, t_end), 4);
        let mut ctx_rng = StreamRng::for_component(43, "gc-ctx");
        let ctx_t = Tensor::new(
            vec![4, 4],
            (0..16).map(|_| ctx_rng.normal(0.0, 0.6)).collect(),
        )
        .unwrap();

        let params: Vec<Param> = store.iter().map(|(_, p)| p.clone()).collect();
        let report = grad_check(&params, |tape| {
            let ctx = tape.constant(ctx_t.clone());
            let proj = head.project(tape, ctx);
            head.nll_sequence(tape, proj, &times, &types, t_end, &draws)
                .unwrap()
        })
        .unwrap();
        assert!(
            report.max_rel_err <= 1e-4,
            "max rel err {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_coord
        );
    }

    #[test]
    fn exponential_mean_recovered_at_rate_two() {
        let (_s, head) = head_with(2, 1, 1.0);
        freeze_constant(&head, 2.0);
        let quad = QuadratureConfig::default();
        let pred = head.predict_next_time(&[head.b.borrow().value.data()[0]], 0.0, 0.5, &quad);
        assert!(!pred.truncated);
        assert!(
            (pred.t_hat - 0.5).abs() < 1e-3,
            "rate-2 exponential mean should be 0.5, got {}",
            pred.t_hat
        );
    }

    #[test]
    fn slow_rate_log_two_stays_within_tolerance() {
        // The stress case for the survival cutoff: mean gap 1/ln 2 = 1.4427.
        let (_s, head) = head_with(2, 1, 1.0);
        freeze_constant(&head, LN2);
        let quad = QuadratureConfig::default();
        let pred = head.predict_next_time(&[head.b.borrow().value.data()[0]], 0.0, 1.4, &quad);
        assert!(!pred.truncated);
        assert!(
            (pred.t_hat - 1.0 / LN2).abs() < 1e-3,
            "rate-ln2 exponential mean should be 1.4427, got {}",
            pred.t_hat
        );
    }

    #[test]
    fn prediction_shifts_with_the_interval_origin() {
        let (_s, head) = head_with(2, 1, 1.0);
        freeze_constant(&head, 4.0);
        let quad = QuadratureConfig::default();
        let row = [head.b.borrow().value.data()[0]];
        let at_zero = head.predict_next_time(&row, 0.0,  0.25, &quad);
        let shifted = head.predict_next_time(&row, 7.25, 0.25, &quad);
        assert!((at_zero.t_hat - 0.25).abs() < 1e-3);
        let drift = shifted.t_hat - 7.25 - at_zero.t_hat;
        assert!(drift.abs() < 1e-9, "origin shift drift {drift:e}");
    }

    #[test]
    fn growing_rate_matches_a_dense_reference_grid() {
        let (_s, head) = head_with(2, 1, 1.0);
        head.w.borrow_mut().value.fill(0.0);
        head.b.borrow_mut().value.fill(3.0);
        head.alpha.borrow_mut().value.fill(0.5);
        let coarse = QuadratureConfig::default();
        let dense = QuadratureConfig {
            grid: 25_600,
            ..QuadratureConfig::default()
        };
        let a = head.predict_next_time(&[3.0], 0.0, 0.3, &coarse);
        let b = head.predict_next_time(&[3.0], 0.0, 0.3, &dense);
        assert!(!a.truncated && !b.truncated);
        let rel = (a.t_hat - b.t_hat).abs() / b.t_hat.abs();
        assert!(rel < 1e-3, "coarse {} vs dense {}", a.t_hat, b.t_hat);
    }

    #[test]
    fn vanishing_intensity_trips_the_horizon_cap() {
        let (_s, head) = head_with(2, 1, 1.0);
        head.w.borrow_mut().value.fill(0.0);
        head.alpha.borrow_mut().value.fill(0.0);
        head.b.borrow_mut().value.fill(-25.0);
        let quad = QuadratureConfig {
            max_horizon_gaps: 50.0,
            ..QuadratureConfig::default()
        };
        let pred = head.predict_next_time(&[-25.0], 1.0, 1.0, &quad);
        assert!(pred.truncated);
        assert!(pred.t_hat.is_finite());
    }

    #[test]
    fn next_type_is_the_intensity_argmax() {
        let (_s, head) = head_with(2, 4, 1.0);
        head.alpha
            .borrow_mut()
            .value
            .data_mut()
            .copy_from_slice(&[0.0, 0.0, 1.0, 0.0]);
        // At delta 0 type 1 wins on projection; by delta 5 type 2's slope
        // dominates.
        let row = [0.0, 1.0, 0.2, -3.0];
        assert_eq!(head.predict_next_type(&row, 0.0), 1);
        assert_eq!(head.predict_next_type(&row, 5.0), 2);
    }

    #[test]
    fn next_type_matches_scalar_scan_and_breaks_ties_low() {
        let (_s, head) = head_with(2, 5, 1.0);
        let mut rng = StreamRng::for_component(55, "argmax");
        for _ in 0..20 {
            let row: Vec<f64> = (0..5).map(|_| rng.normal(0.0, 2.0)).collect();
            let lams = head.lambdas_at(&row, 0.4);
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (k, &l) in lams.iter().enumerate() {
                if l > best_v {
                    best_v = l;
                    best = k;
                }
            }
            assert_eq!(head.predict_next_type(&row, 0.4), best);
        }
        // Exact tie: identical projection entries give identical intensities.
        let tie = [1.5, 1.5, 1.5, 0.0, 0.0];
        assert_eq!(head.predict_next_type(&tie, 0.0), 0);
    }

    #[test]
    fn draw_count_mismatch_is_an_error() {
        let (_s, head) = head_with(2, 1, 1.0);
        let mut rng = StreamRng::for_component(61, "mc");
        let draws = McDraws::generate(&mut rng, 1, 4);
        let tape = Tape::new();
        let ctx = tape.constant(Tensor::zeros(&[3, 2]));
        let proj = head.project(&tape, ctx);
        let err = head
            .nll_sequence(&tape, proj, &[0.5, 1.0], &[0, 0], 1.5, &draws)
            .unwrap_err();
        assert!(err.to_string().contains("intervals"));
    }
}
