//! The dynamic triggering law: timer gate `ω`, derived coefficients, the
//! trigger-variable flow rate `Ψ_i`, reset values at transmissions, and the
//! per-mode jump conditions.

use nalgebra::DVector;

use crate::triggering::{NodeTriggerParams, ResetPolicy, TriggerMode};

/// Timer gate: `0` while `τ < τ_miet`, `1` once the timer has cleared the
/// minimum inter-event time.
///
/// At exactly `τ = τ_miet` any value in `[0, 1]` would be admissible for the
/// underlying analysis; `1` is chosen because it makes the trigger rate most
/// conservative at the boundary.
pub fn omega(tau: f64, tau_miet: f64) -> f64 {
    if tau < tau_miet {
        0.0
    } else {
        1.0
    }
}

/// Derived gain `γ̄ = 2γλL + γ²(1 + λ²)` multiplying the innovation term of
/// the trigger rate.
pub fn gamma_bar(gamma: f64, lambda: f64, lip: f64) -> f64 {
    2.0 * gamma * lambda * lip + gamma * gamma * (1.0 + lambda * lambda)
}

/// Derived sandwich factor `β = 2β̄²/β̲²`.
pub fn beta_coeff(beta_lo: f64, beta_hi: f64) -> f64 {
    2.0 * (beta_hi / beta_lo).powi(2)
}

/// Replacement scalar shaping term (class-K∞) for the trigger rate.
pub type ScalarShapeFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Replacement innovation measure acting on the measured network error.
pub type InnovationFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Optional replacements for the concrete shaping functions of the trigger
/// rate. `None` fields fall back to the built-in forms: quadratic output
/// weight `ϱ(q) = qᵀQq`, linear damping `σ(η) = σ·η`, Euclidean innovation
/// measure `W(ε̃) = |ε̃|`.
#[derive(Default)]
pub struct TriggerFunctions {
    /// Output-error term as a function of `|q_i|` (class-K∞).
    pub varrho: Option<ScalarShapeFn>,
    /// Damping term as a function of `η_i` (class-K∞).
    pub sigma: Option<ScalarShapeFn>,
    /// Innovation measure `W_i`; must satisfy `β̲|ε̃| ≤ W(ε̃) ≤ β̄|ε̃|` for the
    /// node's sandwich constants.
    pub w_measure: Option<InnovationFn>,
}

impl std::fmt::Debug for TriggerFunctions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriggerFunctions")
            .field("varrho", &self.varrho.as_ref().map(|_| "fn"))
            .field("sigma", &self.sigma.as_ref().map(|_| "fn"))
            .field("w_measure", &self.w_measure.as_ref().map(|_| "fn"))
            .finish()
    }
}

/// Flow rate of the trigger variable:
///
/// ```text
///     Ψ_i = ϱ_i(q_i) − ω(τ_i)·γ̄_i·β_i·W_i²(ε̃_i) − σ_i(η_i) + s_i
/// ```
///
/// with the built-in concrete forms (quadratic `ϱ`, linear `σ`, Euclidean
/// `W`). `q_i` is the node's output-estimation error and `ε̃_i` its held
/// innovation. Before `τ_miet` the gate removes the negative innovation
/// term, so with `η_i = 0` the rate is `≥ s_i ≥ 0` and `η_i` cannot go
/// negative while the timer is still short.
pub fn psi_rate(
    params: &NodeTriggerParams,
    q: &DVector<f64>,
    eps_tilde: &DVector<f64>,
    tau: f64,
    eta: f64,
) -> f64 {
    psi_rate_with(params, &TriggerFunctions::default(), q, eps_tilde, tau, eta)
}

/// [`psi_rate`] with the shaping functions replaced by the callables in
/// `funcs` where provided.
pub fn psi_rate_with(
    params: &NodeTriggerParams,
    funcs: &TriggerFunctions,
    q: &DVector<f64>,
    eps_tilde: &DVector<f64>,
    tau: f64,
    eta: f64,
) -> f64 {
    let output_term = match &funcs.varrho {
        Some(f) => f(q.norm()),
        None => (q.transpose() * &params.varrho * q)[(0, 0)],
    };
    let damping = match &funcs.sigma {
        Some(f) => f(eta),
        None => params.sigma * eta,
    };
    let w = match &funcs.w_measure {
        Some(f) => f(eps_tilde),
        None => params.w_measure(eps_tilde),
    };
    output_term - omega(tau, params.tau_miet) * params.gamma_bar() * params.beta_coeff() * w * w
        - damping
        + params.s_reg
}

/// Reset value for the trigger variable at a transmission.
///
/// The zero policy returns `0`. The noise-aware policy returns
/// `γλ(β̲·max(|ε̃_i| − 2w̄, 0))²`, crediting the node for innovation that
/// provably exceeds two noise amplitudes; this never exceeds
/// `γλ·W_i²(ε_i)` when both the current and the sampled noise respect the
/// bound `w̄`, which is what keeps the certificate decreasing at jumps.
pub fn eta_reset(params: &NodeTriggerParams, eps_tilde: &DVector<f64>) -> f64 {
    match params.reset {
        ResetPolicy::Zero => 0.0,
        ResetPolicy::NoiseAware => {
            let excess = (eps_tilde.norm() - 2.0 * params.w_bar).max(0.0);
            params.gamma * params.lambda * (params.beta_lo * excess).powi(2)
        }
    }
}

/// Whether the node's jump set contains the point `(τ_i, η_i)`:
/// event-triggered → `η_i ≤ 0 ∧ τ_i ≥ τ_miet`; time-triggered →
/// `τ_i ≥ τ_miet`; periodic(T) → `τ_i ≥ T`.
pub fn jump_condition(params: &NodeTriggerParams, tau: f64, eta: f64) -> bool {
    match params.mode {
        TriggerMode::EventTriggered => eta <= 0.0 && tau >= params.tau_miet,
        TriggerMode::TimeTriggered => tau >= params.tau_miet,
        TriggerMode::Periodic(period) => tau >= period,
    }
}
