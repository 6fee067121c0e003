//! Adaptive Runge–Kutta flow integration with guard localization.
//!
//! The stepper is a Dormand–Prince 5(4) pair with FSAL, step acceptance on a
//! mixed absolute/relative RMS error norm, and cubic Hermite interpolation
//! inside accepted steps. Guards are scalar functions of `(t, state)`; a
//! guard *fires* when its value becomes nonnegative. The earliest firing in a
//! step is localized by bisection on the interpolant to within
//! [`Tolerances::event_time`], and the state at the localized instant is then
//! recomputed by re-integrating the partial step so that event states carry
//! integration-grade accuracy rather than interpolation-grade accuracy.

use nalgebra::DVector;
use thiserror::Error;

/// Numerical tolerances for flow integration and event localization.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Relative step-error tolerance.
    pub rel: f64,
    /// Absolute step-error tolerance.
    pub abs: f64,
    /// Width of the time bracket accepted for a localized guard crossing.
    pub event_time: f64,
    /// Acceptance band on a guard's magnitude at a reported event; recorded
    /// events are expected to satisfy `|g| <= guard_band`.
    pub guard_band: f64,
    /// Trigger-state threshold: a node's dynamic state `eta` counts as
    /// depleted once `eta <= eta_threshold`. A tiny positive band keeps
    /// exactly-degenerate trajectories (`eta` identically zero) from hanging
    /// on rounding noise.
    pub eta_threshold: f64,
    /// Upper bound on the step size.
    pub max_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel: 1e-8,
            abs: 1e-10,
            event_time: 1e-9,
            guard_band: 1e-6,
            eta_threshold: 1e-12,
            max_step: f64::INFINITY,
        }
    }
}

impl Tolerances {
    /// Validates that every field is positive (and finite where required).
    pub fn validate(&self) -> Result<(), FlowError> {
        let fields = [
            ("rel", self.rel),
            ("abs", self.abs),
            ("event_time", self.event_time),
            ("guard_band", self.guard_band),
            ("eta_threshold", self.eta_threshold),
            ("max_step", self.max_step),
        ];
        for (name, v) in fields {
            // NaN must be rejected too, which `v <= 0.0` alone would miss.
            if v.is_nan() || v <= 0.0 {
                return Err(FlowError::InvalidTolerance {
                    field: name,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Returns a copy with step-error tolerances scaled by `factor`
    /// (used by refinement checks).
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            rel: self.rel * factor,
            abs: self.abs * factor,
            ..self.clone()
        }
    }
}

/// Integration failures. All carry the time at which integration broke down.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("tolerance field `{field}` must be positive, got {value}")]
    InvalidTolerance { field: &'static str, value: f64 },
    #[error("step size underflow at t = {t}: error control cannot proceed")]
    StepUnderflow { t: f64 },
    #[error("flow rates produced a non-finite component at t = {t}")]
    NonFiniteRates { t: f64 },
    #[error("empty time span: t0 = {t0} must be strictly less than t1 = {t1}")]
    EmptySpan { t0: f64, t1: f64 },
}

/// How a flow segment ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowOutcome {
    /// Reached the end of the requested span with no guard firing.
    Completed,
    /// Guard `guard` fired; the result state sits at the localized instant.
    GuardHit { guard: usize },
}

/// Result of integrating one flow segment.
#[derive(Debug, Clone)]
pub struct FlowResult {
    /// Final time (end of span, or the localized guard crossing).
    pub t: f64,
    /// State at `t`.
    pub y: DVector<f64>,
    pub outcome: FlowOutcome,
    /// Step-size suggestion to seed the next segment.
    pub h_next: f64,
}

/// Dormand–Prince 5(4) coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Error coefficients: 5th-order weights minus the embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One accepted or rejected Dormand–Prince step attempt.
struct StepAttempt {
    y1: DVector<f64>,
    f1: DVector<f64>,
    err_norm: f64,
}

fn dopri_step(
    rates: &dyn Fn(f64, &DVector<f64>) -> DVector<f64>,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    h: f64,
    tol: &Tolerances,
) -> Result<StepAttempt, FlowError> {
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f0.clone());
    for s in 1..6 {
        let mut ys = y.clone();
        for (j, kj) in k.iter().enumerate() {
            ys.axpy(h * A[s - 1][j], kj, 1.0);
        }
        let f = rates(t + C[s] * h, &ys);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFiniteRates { t: t + C[s] * h });
        }
        k.push(f);
    }
    // 5th-order solution (row A[5] holds the quadrature weights).
    let mut y1 = y.clone();
    for (j, kj) in k.iter().enumerate() {
        y1.axpy(h * A[5][j], kj, 1.0);
    }
    let f1 = rates(t + h, &y1);
    if f1.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFiniteRates { t: t + h });
    }
    k.push(f1);

    let mut err_sq = 0.0;
    let n = y.len();
    for i in 0..n {
        let mut e = 0.0;
        for (j, kj) in k.iter().enumerate() {
            e += E[j] * kj[i];
        }
        e *= h;
        let scale = tol.abs + tol.rel * y[i].abs().max(y1[i].abs());
        let r = e / scale;
        err_sq += r * r;
    }
    let err_norm = (err_sq / n as f64).sqrt();
    Ok(StepAttempt {
        y1,
        f1: k.pop().expect("seven stages were pushed"),
        err_norm,
    })
}

/// Cubic Hermite interpolant over an accepted step.
fn hermite(
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    t1: f64,
    y1: &DVector<f64>,
    f1: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let h = t1 - t0;
    let theta = (t - t0) / h;
    let mut out = y0 * (1.0 - theta) + y1 * theta;
    // theta*(theta-1)*((1-2theta)*(y1-y0) + (theta-1)*h*f0 + theta*h*f1)
    let c = theta * (theta - 1.0);
    let mut corr = (y1 - y0) * (1.0 - 2.0 * theta);
    corr.axpy(h * (theta - 1.0), f0, 1.0);
    corr.axpy(h * theta, f1, 1.0);
    out.axpy(c, &corr, 1.0);
    out
}

fn initial_step(
    y: &DVector<f64>,
    f: &DVector<f64>,
    span: f64,
    tol: &Tolerances,
) -> f64 {
    let sc = |i: usize| tol.abs + tol.rel * y[i].abs();
    let n = y.len();
    let d0 = (0..n).map(|i| (y[i] / sc(i)).powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
    let d1 = (0..n).map(|i| (f[i] / sc(i)).powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
    let h = if d1 > 1e-12 { 0.01 * d0 / d1 } else { span * 1e-3 };
    h.clamp(span * 1e-9, span).min(tol.max_step)
}

/// Scalar stop condition watched during a flow: negative while flowing,
/// reaching zero from below stops the segment at the crossing.
pub type GuardFn = dyn Fn(f64, &DVector<f64>) -> f64;

/// Integrates `rates` over `t_span` from `y0`, stopping early if a guard
/// fires.
///
/// Guards are continuous scalar functions; a firing is the earliest instant
/// at which a guard that entered the span negative becomes nonnegative. A
/// guard already nonnegative at entry fires immediately at `t0` (the caller
/// decides how to treat it; the greedy jump driver treats it as a due jump).
///
/// `on_step` is called with `(t, y)` after every accepted step, excluding the
/// initial point and any step truncated by a guard firing (the caller
/// receives the event state in the result instead). `h_hint` seeds the step
/// size, letting a caller chain many short segments without re-estimating.
pub fn integrate_flow(
    rates: &dyn Fn(f64, &DVector<f64>) -> DVector<f64>,
    guards: &[&GuardFn],
    t_span: (f64, f64),
    y0: &DVector<f64>,
    tol: &Tolerances,
    h_hint: Option<f64>,
    on_step: &mut dyn FnMut(f64, &DVector<f64>),
) -> Result<FlowResult, FlowError> {
    tol.validate()?;
    let (t0, t1) = t_span;
    if t0.is_nan() || t1.is_nan() || t1 <= t0 {
        return Err(FlowError::EmptySpan { t0, t1 });
    }

    for (idx, g) in guards.iter().enumerate() {
        if g(t0, y0) >= 0.0 {
            return Ok(FlowResult {
                t: t0,
                y: y0.clone(),
                outcome: FlowOutcome::GuardHit { guard: idx },
                h_next: h_hint.unwrap_or(t1 - t0),
            });
        }
    }

    let mut t = t0;
    let mut y = y0.clone();
    let mut f0 = rates(t, &y);
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFiniteRates { t });
    }
    let mut g_prev: Vec<f64> = guards.iter().map(|g| g(t, &y)).collect();
    // Error-controlled step suggestion; the step actually taken is clipped to
    // the remaining span without feeding the clip back into the controller,
    // so chained short segments keep a healthy step size.
    let mut h_ctrl = h_hint
        .unwrap_or_else(|| initial_step(&y, &f0, t1 - t0, tol))
        .min(tol.max_step);
    let mut rejected = false;

    loop {
        // Once the remaining span is below time resolution, snap to the end
        // point; the skipped sliver is smaller than one representable step.
        let h_floor = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if t1 - t <= h_floor {
            return Ok(FlowResult {
                t: t1,
                y,
                outcome: FlowOutcome::Completed,
                h_next: h_ctrl,
            });
        }
        let h = h_ctrl.min(t1 - t);
        if h < h_floor {
            return Err(FlowError::StepUnderflow { t });
        }

        let attempt = dopri_step(rates, t, &y, &f0, h, tol)?;
        if attempt.err_norm > 1.0 {
            let shrink = (0.9 * attempt.err_norm.powf(-0.2)).clamp(0.2, 0.9);
            h_ctrl = h * shrink;
            rejected = true;
            continue;
        }

        let t_new = t + h;
        let g_new: Vec<f64> = guards.iter().map(|g| g(t_new, &attempt.y1)).collect();
        let mut hit: Option<(usize, f64)> = None;
        for (idx, (&ga, &gb)) in g_prev.iter().zip(g_new.iter()).enumerate() {
            if ga < 0.0 && gb >= 0.0 {
                // Bisect on the Hermite interpolant for the earliest instant
                // with a nonnegative guard value.
                let (mut lo, mut hi) = (t, t_new);
                while hi - lo > tol.event_time {
                    let mid = 0.5 * (lo + hi);
                    let ym = hermite(t, &y, &f0, t_new, &attempt.y1, &attempt.f1, mid);
                    if guards[idx](mid, &ym) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if hit.is_none_or(|(_, tb)| hi < tb) {
                    hit = Some((idx, hi));
                }
            }
        }

        if let Some((guard, t_star)) = hit {
            // Recompute the event state by integrating the partial step, so
            // the returned state has integrator accuracy.
            let y_star = if t_star - t > 16.0 * f64::EPSILON * t_star.abs().max(1.0) {
                let partial = integrate_flow(
                    rates,
                    &[],
                    (t, t_star),
                    &y,
                    tol,
                    Some(h),
                    &mut |_, _| {},
                )?;
                partial.y
            } else {
                y.clone()
            };
            return Ok(FlowResult {
                t: t_star,
                y: y_star,
                outcome: FlowOutcome::GuardHit { guard },
                h_next: h_ctrl,
            });
        }

        t = t_new;
        y = attempt.y1;
        f0 = attempt.f1;
        g_prev = g_new;
        on_step(t, &y);

        let grow = if rejected {
            1.0
        } else {
            (0.9 * attempt.err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        rejected = false;
        let suggestion = (h * grow).min(tol.max_step);
        h_ctrl = if h < h_ctrl {
            h_ctrl.max(suggestion)
        } else {
            suggestion
        };
    }
}
