//! Per-node transmission logic: minimum inter-event time computation
//! (closed form plus an independent ODE oracle), the timer gate `ω`, the
//! dynamic trigger rate `Ψ_i` that drives each trigger variable `η_i`,
//! reset policies for `η_i` at transmissions, and the mode-specific jump
//! conditions (event-triggered, time-triggered, periodic).

mod law;
pub mod miet;

pub use law::{
    beta_coeff, eta_reset, gamma_bar, jump_condition, omega, psi_rate, psi_rate_with,
    InnovationFn, ScalarShapeFn, TriggerFunctions,
};
pub use miet::{compute_miet, phi_ode_oracle, PhiTrajectory};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Configuration errors for trigger parameters and MIET computations.
#[derive(Debug, Error)]
pub enum TriggerConfigError {
    #[error("growth constant must be finite and >= 0, got {0}")]
    InvalidGrowthConstant(f64),
    #[error("gain gamma must be finite and > 0, got {0}")]
    InvalidGamma(f64),
    #[error("tuning ratio lambda must lie strictly inside (0, 1), got {0}")]
    InvalidLambda(f64),
    #[error(
        "minimum inter-event time degenerate for L={l}, gamma={gamma}, lambda={lambda}: {tau}"
    )]
    DegenerateMiet {
        l: f64,
        gamma: f64,
        lambda: f64,
        tau: f64,
    },
    #[error("localization tolerance must be > 0, got {0}")]
    InvalidTolerance(f64),
    #[error("comparison-ODE oracle integration failed: {0}")]
    OracleIntegration(String),
    #[error("comparison ODE never reached lambda for L={l}, gamma={gamma}, lambda={lambda}")]
    OracleNoCrossing { l: f64, gamma: f64, lambda: f64 },
    #[error("trajectory grid needs at least 2 points, got {0}")]
    InvalidGridSize(usize),
    #[error("tau_miet override {given} exceeds the certified value {max}")]
    TauMietOverride { given: f64, max: f64 },
    #[error("tau_miet must be finite and > 0, got {0}")]
    InvalidTauMiet(f64),
    #[error("sigma coefficient must be finite and >= 0, got {0}")]
    InvalidSigma(f64),
    #[error("space-regularization slack must be finite and >= 0, got {0}")]
    InvalidSpaceRegularization(f64),
    #[error("sandwich constants must be finite, > 0, and beta_lo <= beta_hi, got ({0}, {1})")]
    InvalidSandwich(f64, f64),
    #[error("noise bound must be finite and >= 0, got {0}")]
    InvalidNoiseBound(f64),
    #[error("certificate weight mu must be finite and > 0, got {0}")]
    InvalidMu(f64),
    #[error("output weight must be square, symmetric, and positive definite")]
    InvalidOutputWeight,
    #[error("periodic mode needs a period in (0, tau_miet={tau_miet}], got {period}")]
    InvalidPeriod { period: f64, tau_miet: f64 },
}

/// When a node transmits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerMode {
    /// Transmit when the trigger variable has been exhausted (`η_i ≤ 0`) and
    /// the local timer has cleared the minimum inter-event time.
    EventTriggered,
    /// Transmit as soon as the timer reaches the minimum inter-event time;
    /// the trigger variable is ignored.
    TimeTriggered,
    /// Transmit every `period` seconds; the period may not exceed the
    /// certified minimum inter-event time.
    Periodic(f64),
}

/// How the trigger variable is reinitialized at a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetPolicy {
    /// `η_i ← 0`: the conservative reset.
    Zero,
    /// `η_i ← γλ(β̲·max(|ε̃_i| − 2w̄, 0))²`: credits the node for the part of
    /// the innovation that provably exceeds measurement noise, lengthening
    /// inter-event times without violating the decrease certificate.
    NoiseAware,
}

/// Per-node trigger constants.
///
/// `lip` is the growth constant of the node's output map along the error
/// dynamics, `gamma` the L2 gain, and `lambda ∈ (0,1)` the tuning ratio;
/// together they determine `tau_miet` (see [`compute_miet`]). `sigma` and
/// `s_reg` shape the trigger-variable flow, `beta_lo`/`beta_hi` sandwich the
/// innovation measure `W_i` between scaled norms, `w_bar` bounds the
/// measurement noise, and `varrho` weights the output-error quadratic form.
/// `mu` is the disturbance-attenuation weight used by the co-design
/// certificate and is carried here so one record describes the node.
#[derive(Debug, Clone)]
pub struct NodeTriggerParams {
    /// Growth constant `L_i ≥ 0`.
    pub lip: f64,
    /// L2 gain `γ_i > 0`.
    pub gamma: f64,
    /// Tuning ratio `λ_i ∈ (0, 1)`.
    pub lambda: f64,
    /// Guaranteed minimum inter-event time; auto-derived unless overridden
    /// downward.
    pub tau_miet: f64,
    /// Coefficient of the linear stabilizing term `−σ_i·η_i` in the trigger
    /// rate.
    pub sigma: f64,
    /// Space-regularization slack `s_i ≥ 0` added to the trigger rate.
    pub s_reg: f64,
    /// Lower sandwich constant `β̲_i` with `β̲|ε̃| ≤ W_i(ε̃)`.
    pub beta_lo: f64,
    /// Upper sandwich constant `β̄_i` with `W_i(ε̃) ≤ β̄|ε̃|`.
    pub beta_hi: f64,
    /// Per-node measurement-noise bound `w̄_i ≥ 0`.
    pub w_bar: f64,
    /// Disturbance-attenuation weight `μ_i > 0` (used by the LMI design).
    pub mu: f64,
    /// Positive-definite weight `Q_i` of the output-error quadratic form.
    pub varrho: DMatrix<f64>,
    pub mode: TriggerMode,
    pub reset: ResetPolicy,
}

impl NodeTriggerParams {
    /// Builds parameters with `tau_miet` derived from `(lip, gamma, lambda)`
    /// and neutral defaults elsewhere: `sigma = 0`, `s_reg = 0`, unit
    /// sandwich constants, `w_bar = 0`, `mu = 1`, event-triggered mode, zero
    /// reset. Adjust the public fields afterwards and re-[`validate`].
    ///
    /// [`validate`]: NodeTriggerParams::validate
    pub fn new(
        lip: f64,
        gamma: f64,
        lambda: f64,
        varrho: DMatrix<f64>,
    ) -> Result<Self, TriggerConfigError> {
        let tau_miet = compute_miet(lip, gamma, lambda)?;
        let params = Self {
            lip,
            gamma,
            lambda,
            tau_miet,
            sigma: 0.0,
            s_reg: 0.0,
            beta_lo: 1.0,
            beta_hi: 1.0,
            w_bar: 0.0,
            mu: 1.0,
            varrho,
            mode: TriggerMode::EventTriggered,
            reset: ResetPolicy::Zero,
        };
        params.validate()?;
        Ok(params)
    }

    /// Output dimension `m_i` of this node.
    pub fn output_dim(&self) -> usize {
        self.varrho.nrows()
    }

    /// Derived coefficient `γ̄_i = 2γλL + γ²(1+λ²)`.
    pub fn gamma_bar(&self) -> f64 {
        gamma_bar(self.gamma, self.lambda, self.lip)
    }

    /// Derived coefficient `β_i = 2β̄²/β̲²`.
    pub fn beta_coeff(&self) -> f64 {
        beta_coeff(self.beta_lo, self.beta_hi)
    }

    /// Innovation measure `W_i(ε̃) = |ε̃|` (Euclidean); the default choice,
    /// for which the sandwich constants are exactly 1.
    pub fn w_measure(&self, eps_tilde: &DVector<f64>) -> f64 {
        eps_tilde.norm()
    }

    /// Checks every range constraint, that `varrho` is symmetric positive
    /// definite, that `tau_miet` does not exceed the value certified by
    /// `(lip, gamma, lambda)`, and that a periodic period lies in
    /// `(0, tau_miet]`.
    pub fn validate(&self) -> Result<(), TriggerConfigError> {
        let certified = compute_miet(self.lip, self.gamma, self.lambda)?;
        if !self.tau_miet.is_finite() || self.tau_miet <= 0.0 {
            return Err(TriggerConfigError::InvalidTauMiet(self.tau_miet));
        }
        // Tiny slack so a round-tripped (serialized) value still validates.
        if self.tau_miet > certified * (1.0 + 1e-12) {
            return Err(TriggerConfigError::TauMietOverride {
                given: self.tau_miet,
                max: certified,
            });
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(TriggerConfigError::InvalidSigma(self.sigma));
        }
        if !self.s_reg.is_finite() || self.s_reg < 0.0 {
            return Err(TriggerConfigError::InvalidSpaceRegularization(self.s_reg));
        }
        if !self.beta_lo.is_finite()
            || !self.beta_hi.is_finite()
            || self.beta_lo <= 0.0
            || self.beta_hi < self.beta_lo
        {
            return Err(TriggerConfigError::InvalidSandwich(
                self.beta_lo,
                self.beta_hi,
            ));
        }
        if !self.w_bar.is_finite() || self.w_bar < 0.0 {
            return Err(TriggerConfigError::InvalidNoiseBound(self.w_bar));
        }
        if !self.mu.is_finite() || self.mu <= 0.0 {
            return Err(TriggerConfigError::InvalidMu(self.mu));
        }
        validate_weight(&self.varrho)?;
        if let TriggerMode::Periodic(period) = self.mode {
            if !period.is_finite() || period <= 0.0 || period > self.tau_miet * (1.0 + 1e-12) {
                return Err(TriggerConfigError::InvalidPeriod {
                    period,
                    tau_miet: self.tau_miet,
                });
            }
        }
        Ok(())
    }
}

fn validate_weight(q: &DMatrix<f64>) -> Result<(), TriggerConfigError> {
    if q.nrows() == 0 || q.nrows() != q.ncols() {
        return Err(TriggerConfigError::InvalidOutputWeight);
    }
    let scale = q.norm().max(1.0);
    if (q - q.transpose()).norm() > 1e-9 * scale {
        return Err(TriggerConfigError::InvalidOutputWeight);
    }
    if !q.iter().all(|v| v.is_finite()) || q.clone().cholesky().is_none() {
        return Err(TriggerConfigError::InvalidOutputWeight);
    }
    Ok(())
}
