//! End-to-end acceptance suite. Each test exercises one shipping criterion
//! and prints exactly one `ACCEPTANCE n: PASS/FAIL` line. The lines are
//! written straight to the process stdout (not through the captured test
//! macros) so they appear in plain `cargo test` output.
//!
//! Expensive artifacts — the solved certificate and the 20-second benchmark
//! runs — are computed once and shared across criteria.

use std::io::Write;
use std::panic::AssertUnwindSafe;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use etse::estimation::{derived_errors, error_flow_g, LtiCaseStudy};
use etse::harness::{
    iss_sweep, lyapunov_monitor, run_scenario, windowed_mean_iet, RunArtifacts, ScenarioConfig,
};
use etse::hybrid::{integrate_flow, HybridState, Tolerances};
use etse::lti::{case_study_model, solve_p, verify_lmi_scaled, SolveOptions};
use etse::triggering::{compute_miet, phi_ode_oracle};

/// Runs one criterion check and prints its verdict line, bypassing the
/// harness output capture; a failed check re-raises its panic so the test
/// still fails loudly with the original message.
fn verdict(n: usize, check: impl FnOnce()) {
    let result = std::panic::catch_unwind(AssertUnwindSafe(check));
    {
        let mut out = std::io::stdout().lock();
        let word = if result.is_ok() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "ACCEPTANCE {n}: {word}");
        let _ = out.flush();
    }
    if let Err(payload) = result {
        std::panic::resume_unwind(payload);
    }
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

/// Benchmark initial conditions used across the long runs.
const X0: &str = "[1.0, 0.0, -1.0, 0.5, 0.2, -0.3]";

fn benchmark_scenario(horizon: f64, z0: &str, noise: bool, s_reg: f64) -> ScenarioConfig {
    let noise_block = if noise {
        r#""noise": { "amplitudes": [0.001, 0.001], "dwell": 0.0001, "seed": 2024 },"#
    } else {
        ""
    };
    let nodes_block = if s_reg != 0.0 {
        format!(
            r#""nodes": [
                {{"gamma": 6.1623, "lambda": 0.7, "varrho": [[2.0]],
                  "sigma": 0.05, "mu": 0.5, "s_reg": {s_reg}}},
                {{"gamma": 6.1623, "lambda": 0.7, "varrho": [[2.0]],
                  "sigma": 0.05, "mu": 0.5, "s_reg": {s_reg}}}
            ],"#
        )
    } else {
        String::new()
    };
    let json = format!(
        r#"{{
            "model": "case_study",
            {nodes_block}
            "initial": {{ "x0": {X0}, "z0": {z0} }},
            "horizon": {horizon},
            {noise_block}
            "record_interval": 0.001
        }}"#
    );
    ScenarioConfig::from_json(&json).expect("fixture scenario must parse")
}

/// 20 s event-triggered benchmark run under bounded piecewise-constant
/// measurement noise (the Zeno-freedom workload).
fn noisy_run() -> &'static (RunArtifacts, Duration) {
    static CELL: OnceLock<(RunArtifacts, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = benchmark_scenario(20.0, "[0, 0, 0, 0, 0, 0]", true, 0.0);
        let started = Instant::now();
        let run = run_scenario(&config).expect("noisy benchmark run must complete");
        (run, started.elapsed())
    })
}

/// Same run with the space-regularization slack enabled (matched seed).
fn slack_run() -> &'static RunArtifacts {
    static CELL: OnceLock<RunArtifacts> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = benchmark_scenario(20.0, "[0, 0, 0, 0, 0, 0]", true, 2e-4);
        run_scenario(&config).expect("slack benchmark run must complete")
    })
}

/// 20 s noise-free, disturbance-free run with a unit initial estimation
/// error (the convergence workload; also serves the coordinate checks).
fn clean_run() -> &'static (RunArtifacts, Duration) {
    static CELL: OnceLock<(RunArtifacts, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = benchmark_scenario(20.0, "[2.0, 0.0, -1.0, 0.5, 0.2, -0.3]", false, 0.0);
        let started = Instant::now();
        let run = run_scenario(&config).expect("noise-free benchmark run must complete");
        (run, started.elapsed())
    })
}

/// Certificate matrix solved for the benchmark design.
fn solved_certificate() -> &'static (DMatrix<f64>, Duration, usize) {
    static CELL: OnceLock<(DMatrix<f64>, Duration, usize)> = OnceLock::new();
    CELL.get_or_init(|| {
        let problem = case_study_model().3;
        let started = Instant::now();
        let outcome = solve_p(&problem, &SolveOptions::default()).expect("solver must not error");
        let elapsed = started.elapsed();
        let p = outcome
            .certificate()
            .expect("benchmark design must admit a certificate")
            .clone();
        (p, elapsed, outcome.iterations())
    })
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_minimum_inter_event_time_closed_form() {
    verdict(1, || {
        let started = Instant::now();
        let tau = compute_miet(0.0, 6.1623, 0.7).expect("benchmark constants are valid");
        let elapsed = started.elapsed();
        assert!(
            (tau - 0.0566).abs() <= 1e-3,
            "tau = {tau}, expected 0.0566 within 1e-3"
        );
        // Pin the full-precision value as a regression anchor.
        assert!(
            (tau - 0.056690585985180765).abs() <= 1e-15,
            "tau drifted: {tau}"
        );
        assert!(elapsed < Duration::from_millis(1), "took {elapsed:?}");
    });
}

#[test]
fn criterion_02_closed_form_agrees_with_ode_oracle() {
    verdict(2, || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0x6f72_6163);
        let mut cases: Vec<(f64, f64, f64)> = (0..97)
            .map(|_| {
                (
                    rng.random_range(0.0..=5.0),
                    rng.random_range(0.1..=10.0),
                    rng.random_range(0.05..=0.95),
                )
            })
            .collect();
        // Exact branch points: growth constant equal to the gain.
        cases.push((2.0, 2.0, 0.3));
        cases.push((0.5, 0.5, 0.9));
        cases.push((7.0, 7.0, 0.05));
        assert_eq!(cases.len(), 100);
        for &(l, gamma, lambda) in &cases {
            let closed = compute_miet(l, gamma, lambda).expect("valid parameters");
            let oracle = phi_ode_oracle(l, gamma, lambda, 1e-12).expect("oracle must converge");
            assert!(
                (closed - oracle).abs() <= 1e-8,
                "L={l}, gamma={gamma}, lambda={lambda}: closed {closed} vs oracle {oracle}"
            );
        }
        let elapsed = started.elapsed();
        assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    });
}

#[test]
fn criterion_03_certificate_inequality_is_feasible() {
    verdict(3, || {
        let (p, elapsed, _iterations) = solved_certificate();
        let problem = case_study_model().3;
        let report = verify_lmi_scaled(&problem, p).expect("verification must not error");
        assert!(
            report.p_min_eigenvalue >= 1e-6 * (1.0 - 1e-9),
            "certificate not positive definite enough: min eig {}",
            report.p_min_eigenvalue
        );
        assert!(
            report.feasible,
            "assembled matrix max eigenvalue {} exceeds the scale-aware threshold",
            report.max_eigenvalue
        );
        assert!(*elapsed < Duration::from_secs(30), "took {elapsed:?}");
    });
}

#[test]
fn criterion_04_no_zeno_under_bounded_noise() {
    verdict(4, || {
        let (run, elapsed) = noisy_run();
        let floor = 0.056691 - 1e-6;
        assert!(
            run.report.total_events > 0,
            "noisy run produced no transmissions"
        );
        for node in 0..2 {
            let times = &run.report.per_node_event_times[node];
            assert!(
                times.len() > 100,
                "node {node}: implausibly few events ({})",
                times.len()
            );
            for pair in times.windows(2) {
                let gap = pair[1] - pair[0];
                assert!(
                    gap >= floor,
                    "node {node}: inter-event time {gap} below {floor}"
                );
            }
        }
        assert!(*elapsed < Duration::from_secs(60), "took {elapsed:?}");
    });
}

#[test]
fn criterion_05_zero_noise_error_converges() {
    verdict(5, || {
        let (run, elapsed) = clean_run();
        let (t0, e0) = run.report.error_trace.first().copied().expect("trace");
        assert_eq!(t0, 0.0);
        assert!((e0 - 1.0).abs() <= 1e-12, "|e(0)| = {e0}, expected 1");
        let (t_end, e_end) = run.report.error_trace.last().copied().expect("trace");
        assert!((t_end - 20.0).abs() <= 1e-9, "run ended at {t_end}");
        assert!(
            e_end <= 1e-3,
            "|e(20)| = {e_end:e}, expected <= 1e-3 with zero inputs"
        );
        assert!(*elapsed < Duration::from_secs(60), "took {elapsed:?}");
    });
}

#[test]
fn criterion_06_slack_lengthens_steady_state_inter_event_times() {
    verdict(6, || {
        let (base, _) = noisy_run();
        let slack = slack_run();
        let mut strictly_greater = 0;
        for node in 0..2 {
            let mean_base = windowed_mean_iet(&base.report.per_node_event_times[node], 10.0, 20.0);
            let mean_slack =
                windowed_mean_iet(&slack.report.per_node_event_times[node], 10.0, 20.0);
            assert!(
                mean_slack >= mean_base,
                "node {node}: windowed mean inter-event time fell from {mean_base} to \
                 {mean_slack} when the slack was enabled"
            );
            if mean_slack > mean_base {
                strictly_greater += 1;
            }
        }
        assert!(
            strictly_greater >= 1,
            "slack changed no node's steady-state inter-event time"
        );
    });
}

#[test]
fn criterion_07_certificate_never_grows_at_transmissions() {
    verdict(7, || {
        let (p, _, _) = solved_certificate();
        let mut checked = 0usize;
        for run in [&noisy_run().0, &clean_run().0] {
            let log = lyapunov_monitor(&run.arc, &run.model, p, 1e-10)
                .expect("certificate audit must complete");
            assert_eq!(
                log.violations, 0,
                "certificate increased at {} transmissions",
                log.violations
            );
            for check in &log.jump_checks {
                assert!(
                    check.formula <= 1e-10,
                    "jump {} (node {}, t={}): decrement formula {} > 1e-10",
                    check.jump_index,
                    check.node,
                    check.t,
                    check.formula
                );
                assert!(
                    (check.decrement - check.formula).abs() <= 1e-10,
                    "jump {}: direct change {} disagrees with formula {}",
                    check.jump_index,
                    check.decrement,
                    check.formula
                );
            }
            checked += log.jump_checks.len();
        }
        assert!(checked > 200, "only {checked} transmissions audited");
    });
}

#[test]
fn criterion_08_error_bound_grows_monotonically_with_noise() {
    verdict(8, || {
        // Start from a perfect estimate so the ultimate bound isolates the
        // noise contribution.
        let base = benchmark_scenario(20.0, X0, true, 0.0);
        let amplitudes = [0.0, 1e-4, 1e-3, 1e-2];
        let points = iss_sweep(&base, &amplitudes).expect("sweep must complete");
        assert_eq!(points.len(), 4);
        assert!(
            points[0].ultimate_bound <= 1e-6,
            "zero-noise ultimate bound {} exceeds 1e-6",
            points[0].ultimate_bound
        );
        for pair in points.windows(2) {
            assert!(
                pair[1].ultimate_bound >= 0.9 * pair[0].ultimate_bound,
                "bound fell by more than the 10% slack: {} -> {} (amplitudes {} -> {})",
                pair[0].ultimate_bound,
                pair[1].ultimate_bound,
                pair[0].amplitude,
                pair[1].amplitude
            );
        }
        assert!(
            points[3].ultimate_bound > points[0].ultimate_bound,
            "bound did not grow across the sweep"
        );
    });
}

#[test]
fn criterion_09_derived_network_error_flows_as_analyzed() {
    verdict(9, || {
        let (run, _) = clean_run();
        let model = &run.model;
        let layout = &run.arc.layout;
        // Stencil step: fourth-order truncation is h^4-scaled, and the held
        // output carries modes fast enough that 1e-3 leaves no margin.
        let h = 2.5e-4;
        let tau_miet = model.nodes[0].tau_miet;

        // Event times (all nodes) for the no-jump eligibility test.
        let mut event_times: Vec<f64> = run.arc.events.iter().map(|e| e.t).collect();
        event_times.sort_by(f64::total_cmp);
        let stencil_clear = |t0: f64| {
            let lo = t0 - h;
            let hi = t0 + 4.0 * h + h;
            let idx = event_times.partition_point(|&t| t < lo);
            event_times.get(idx).is_none_or(|&t| t > hi)
        };

        let m = layout.m_total();
        let w_zero = DVector::zeros(m);
        let v_zero = DVector::zeros(model.plant.disturbance_dim);
        let flow = model.flow_rates(w_zero.clone(), v_zero.clone());
        let tol = Tolerances {
            rel: 1e-12,
            abs: 1e-14,
            ..Tolerances::default()
        };
        let eps_of = |state: &HybridState| -> DVector<f64> {
            derived_errors(
                &model.plant,
                &model.observer,
                &state.x,
                &state.z_copy(layout, 0),
                &state.yhat_copy(layout, 0),
                &state.what,
                &w_zero,
            )
            .eps
        };

        let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(1000);
        for (tp, state) in &run.arc.samples {
            if pairs.len() == 1000 {
                break;
            }
            let t0 = tp.t;
            if t0 <= 0.1 || t0 >= 3.0 || !stencil_clear(t0) {
                continue;
            }
            // Skip anchors whose stencil crosses a timer-gate switching
            // instant: the trigger-state rate is discontinuous there, which
            // degrades step control for no analytic payoff.
            let gate_near = (0..model.num_nodes()).any(|i| {
                let to_gate = tau_miet - state.tau[i];
                to_gate > -h && to_gate < 5.0 * h
            });
            if gate_near {
                continue;
            }

            // Re-integrate the stencil to tight tolerance from the recorded
            // anchor state; the center state of this refined flow is the
            // evaluation point.
            let mut stencil_eps = Vec::with_capacity(5);
            let mut center: Option<HybridState> = None;
            stencil_eps.push(eps_of(state));
            let mut y = state.to_flat(layout);
            for k in 1..=4usize {
                let res = integrate_flow(
                    &flow,
                    &[],
                    (t0 + (k - 1) as f64 * h, t0 + k as f64 * h),
                    &y,
                    &tol,
                    None,
                    &mut |_, _| {},
                )
                .expect("stencil integration must succeed");
                y = res.y;
                let st = HybridState::from_flat(&y, layout);
                stencil_eps.push(eps_of(&st));
                if k == 2 {
                    center = Some(st);
                }
            }
            let center = center.expect("center recorded at k = 2");

            // Fourth-order central difference at the stencil midpoint.
            let fd = (&stencil_eps[0] - 8.0 * &stencil_eps[1] + 8.0 * &stencil_eps[3]
                - &stencil_eps[4])
                / (12.0 * h);
            let e_center = model.observer.estimate(&center.z_copy(layout, 0)) - &center.x;
            let g = error_flow_g(
                &model.plant,
                &model.observer,
                &center.z_copy(layout, 0),
                &e_center,
                &stencil_eps[2],
                &center.what,
                &v_zero,
            );
            pairs.push((fd, g));
        }
        assert_eq!(
            pairs.len(),
            1000,
            "arc provided only {} eligible anchor points",
            pairs.len()
        );

        // Relative error with a floor keyed to the largest observed rate, so
        // near-zero components do not manufacture fake blow-ups.
        let g_peak = pairs
            .iter()
            .flat_map(|(_, g)| g.iter().map(|v| v.abs()))
            .fold(0.0_f64, f64::max);
        assert!(g_peak > 0.0, "all analyzed rates vanished");
        let floor = 1e-3 * g_peak;
        for (k, (fd, g)) in pairs.iter().enumerate() {
            for c in 0..g.len() {
                let denom = g[c].abs().max(floor);
                let rel = (fd[c] - g[c]).abs() / denom;
                assert!(
                    rel <= 1e-6,
                    "anchor {k}, component {c}: finite difference {} vs analyzed rate {} \
                     (relative error {rel:e})",
                    fd[c],
                    g[c]
                );
            }
        }
    });
}

#[test]
fn criterion_10_benchmark_model_structure() {
    verdict(10, || {
        let cs = LtiCaseStudy::coupled_oscillators();
        let eigs = cs.a.complex_eigenvalues();
        for eig in eigs.iter() {
            assert!(
                eig.re.abs() <= 1e-10,
                "eigenvalue {eig} is not purely imaginary"
            );
        }

        let rank_of = |rows: &[DMatrix<f64>]| -> usize {
            let total: usize = rows.iter().map(|r| r.nrows()).sum();
            let mut stacked = DMatrix::zeros(total, 6);
            let mut at = 0;
            for block in rows {
                stacked.rows_mut(at, block.nrows()).copy_from(block);
                at += block.nrows();
            }
            let svd = stacked.svd(false, false);
            let smax = svd.singular_values.max();
            svd.singular_values
                .iter()
                .filter(|s| **s > 1e-10 * smax)
                .count()
        };
        let powers = |c: &DMatrix<f64>| -> Vec<DMatrix<f64>> {
            let mut rows = Vec::with_capacity(6);
            let mut block = c.clone();
            for _ in 0..6 {
                rows.push(block.clone());
                block *= &cs.a;
            }
            rows
        };

        assert_eq!(rank_of(&powers(&cs.c_stacked())), 6, "joint rank not full");
        assert!(
            rank_of(&powers(&cs.c1)) < 6,
            "first node alone reconstructs the state"
        );
        assert!(
            rank_of(&powers(&cs.c2)) < 6,
            "second node alone reconstructs the state"
        );
    });
}
