//! Certificate-function audit along a simulated arc.
//!
//! The networked design is certified by the composite function
//!
//! ```text
//!     U(ξ) = eᵀPe + Σ_i [ γ_i φ_i(τ_i) W_i²(ε_i) + η_i ]
//! ```
//!
//! where `e = x̂ − x` is the estimation error, `ε_i` the node's holding
//! error relative to the latched noise sample, `φ_i` the timer-to-gain
//! function (following the comparison ODE from `1/λ_i` down to `λ_i` at the
//! certified minimum inter-event time, constant afterwards), and `η_i` the
//! trigger variable. At a transmission of node `i` the only terms that can
//! change are that node's innovation term — whose holding error resets to
//! zero — and `η_i`, so the jump change of `U` must equal
//!
//! ```text
//!     ΔU = η_i⁺ − η_i − γ_i φ_i(τ_i) W_i²(ε_i)
//! ```
//!
//! evaluated at the pre-jump state. The audit recomputes `U` on every
//! recorded sample, checks this identity at every recorded transmission,
//! and counts jumps where `U` increased beyond tolerance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::hybrid::{ClosedLoop, HybridArc, HybridState};
use crate::triggering::PhiTrajectory;

use super::HarnessError;

/// Grid resolution for the per-node timer-to-gain trajectories; interpolation
/// error at this resolution is far below the audit tolerances in use.
const PHI_GRID_POINTS: usize = 8193;

/// `U` change at one transmission, measured two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpCheck {
    /// Flow time of the jump.
    pub t: f64,
    /// Transmitting node.
    pub node: usize,
    /// Jump counter value after the jump.
    pub jump_index: u64,
    /// `U(post) − U(pre)` evaluated directly on the recorded states.
    pub decrement: f64,
    /// `η⁺ − η − γ φ(τ) W²(ε)` from the pre-jump state — what the theory
    /// says the change must be.
    pub formula: f64,
}

/// Audit of the certificate function along one arc.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovLog {
    /// `(t, U)` along the recorded samples (jumps contribute a pre- and a
    /// post-jump entry at the same flow time).
    pub u_samples: Vec<(f64, f64)>,
    /// One entry per recorded transmission.
    pub jump_checks: Vec<JumpCheck>,
    /// Number of jumps at which `U` increased by more than `tolerance`.
    pub violations: usize,
    /// Increase tolerance the violations were counted against.
    pub tolerance: f64,
}

/// Evaluates the certificate function on every recorded sample and checks
/// the jump identity at every transmission. `p` is the quadratic weight of
/// the estimation-error term (symmetric, sized to the plant state).
pub fn lyapunov_monitor(
    arc: &HybridArc,
    model: &ClosedLoop,
    p: &DMatrix<f64>,
    tolerance: f64,
) -> Result<LyapunovLog, HarnessError> {
    let n = model.plant.state_dim;
    if p.shape() != (n, n) {
        return Err(HarnessError::Monitor(format!(
            "certificate weight must be {n}×{n}, got {}×{}",
            p.nrows(),
            p.ncols()
        )));
    }
    if (p - p.transpose()).norm() > 1e-9 * (1.0 + p.norm()) {
        return Err(HarnessError::Monitor(
            "certificate weight must be symmetric".into(),
        ));
    }
    if !tolerance.is_finite() || tolerance < 0.0 {
        return Err(HarnessError::Monitor(format!(
            "tolerance must be finite and nonnegative, got {tolerance}"
        )));
    }

    let phis: Vec<PhiTrajectory> = model
        .nodes
        .iter()
        .map(|node| PhiTrajectory::generate(node.lip, node.gamma, node.lambda, PHI_GRID_POINTS))
        .collect::<Result<_, _>>()?;

    let clean_eps = |state: &HybridState, i: usize| -> DVector<f64> {
        let at = arc.layout.m_offset(i);
        let mi = arc.layout.m_per_node[i];
        let what_i = state.what.rows(at, mi).into_owned();
        state.yhat_node(&arc.layout, i) - model.plant.output(i, &state.x) - what_i
    };
    let w_of = |i: usize, eps: &DVector<f64>| -> f64 {
        match &model.funcs[i].w_measure {
            Some(f) => f(eps),
            None => model.nodes[i].w_measure(eps),
        }
    };
    let u_of = |state: &HybridState| -> f64 {
        let e = model.observer.estimate(&state.z_copy(&arc.layout, 0)) - &state.x;
        let mut total = (p * &e).dot(&e);
        for (i, node) in model.nodes.iter().enumerate() {
            let w = w_of(i, &clean_eps(state, i));
            total += node.gamma * phis[i].value_at(state.tau[i]) * w * w + state.eta[i];
        }
        total
    };

    let u_samples: Vec<(f64, f64)> = arc
        .samples
        .iter()
        .map(|(tp, state)| (tp.t, u_of(state)))
        .collect();

    let mut jump_checks = Vec::with_capacity(arc.events.len());
    for event in &arc.events {
        let (pre, post) = arc.jump_states(event.jump_index).ok_or_else(|| {
            HarnessError::Monitor(format!(
                "arc is missing the pre/post sample pair for jump {}",
                event.jump_index
            ))
        })?;
        let i = event.node;
        let w_pre = w_of(i, &clean_eps(pre, i));
        let formula = post.eta[i]
            - pre.eta[i]
            - model.nodes[i].gamma * phis[i].value_at(pre.tau[i]) * w_pre * w_pre;
        jump_checks.push(JumpCheck {
            t: event.t,
            node: i,
            jump_index: event.jump_index,
            decrement: u_of(post) - u_of(pre),
            formula,
        });
    }

    let violations = jump_checks
        .iter()
        .filter(|c| c.decrement > tolerance)
        .count();

    Ok(LyapunovLog {
        u_samples,
        jump_checks,
        violations,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ScenarioConfig;
    use crate::harness::scenario::run_scenario;
    use crate::lti::case_study_model;

    fn noisy_run() -> crate::harness::scenario::RunArtifacts {
        let json = r#"{
            "model": "case_study",
            "initial": {
                "x0": [1.0, 0.0, -1.0, 0.5, 0.2, -0.3],
                "z0": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
            },
            "horizon": 0.6,
            "noise": { "amplitudes": [0.001, 0.001], "dwell": 0.0001, "seed": 11 },
            "record_interval": 0.005
        }"#;
        run_scenario(&ScenarioConfig::from_json(json).unwrap()).unwrap()
    }

    #[test]
    fn interpolated_gain_matches_the_closed_form_for_zero_lipschitz() {
        // With no growth constant the comparison ODE integrates in closed
        // form: φ(τ) = tan(atan(1/λ) − γτ).
        let (_, _, nodes, _) = case_study_model();
        let node = &nodes[0];
        let traj =
            PhiTrajectory::generate(node.lip, node.gamma, node.lambda, PHI_GRID_POINTS).unwrap();
        for k in 0..=97 {
            let tau = node.tau_miet * k as f64 / 97.0;
            let exact = ((1.0 / node.lambda).atan() - node.gamma * tau).tan();
            assert!(
                (traj.value_at(tau) - exact).abs() < 1e-6,
                "tau={tau}: {} vs {exact}",
                traj.value_at(tau)
            );
        }
        assert_eq!(traj.value_at(node.tau_miet), node.lambda);
        assert_eq!(traj.value_at(10.0 * node.tau_miet), node.lambda);
        assert_eq!(traj.value_at(0.0), 1.0 / node.lambda);
    }

    #[test]
    fn jump_identity_holds_at_every_transmission() {
        let run = noisy_run();
        let p = DMatrix::identity(6, 6);
        let log = lyapunov_monitor(&run.arc, &run.model, &p, 1e-8).unwrap();
        assert!(!log.jump_checks.is_empty(), "run produced no transmissions");
        assert_eq!(log.u_samples.len(), run.arc.samples.len());
        assert!(log.u_samples.iter().all(|(_, u)| u.is_finite() && *u >= 0.0));
        for check in &log.jump_checks {
            assert!(
                (check.decrement - check.formula).abs() <= 1e-10,
                "jump {} at t={}: direct {} vs formula {}",
                check.jump_index,
                check.t,
                check.decrement,
                check.formula
            );
            // The identity aside, the certificate must not grow at jumps.
            assert!(check.decrement <= 1e-10, "U grew at jump: {check:?}");
        }
        assert_eq!(log.violations, 0);
        assert_eq!(log.tolerance, 1e-8);
    }

    #[test]
    fn malformed_audit_inputs_are_rejected() {
        let run = noisy_run();
        let wrong_shape = DMatrix::identity(5, 5);
        let err = lyapunov_monitor(&run.arc, &run.model, &wrong_shape, 1e-8).unwrap_err();
        assert!(err.to_string().contains("6×6"), "{err}");

        let mut asym = DMatrix::identity(6, 6);
        asym[(0, 1)] = 0.5;
        let err = lyapunov_monitor(&run.arc, &run.model, &asym, 1e-8).unwrap_err();
        assert!(err.to_string().contains("symmetric"), "{err}");

        let p = DMatrix::identity(6, 6);
        let err = lyapunov_monitor(&run.arc, &run.model, &p, -1.0).unwrap_err();
        assert!(err.to_string().contains("tolerance"), "{err}");
    }
}
