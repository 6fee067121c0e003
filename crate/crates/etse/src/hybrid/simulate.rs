//! Greedy closed-loop simulation driver.
//!
//! The driver alternates flow segments with transmission jumps. A node is due
//! the moment its (tolerance-relaxed) jump condition holds: the local timer
//! has reached the node's deadline and, for the dynamic trigger, the trigger
//! variable is depleted. Due jumps are applied greedily — at one instant in
//! ascending node order, each advancing the jump counter — so solutions are
//! deterministic. Flow segments are split at every instant the right-hand
//! side would otherwise change discontinuously (noise dwell boundaries,
//! disturbance breakpoints, timer arrivals at deadlines), so the integrator
//! only ever sees smooth dynamics, and depletion of an armed node's trigger
//! variable is localized by the integrator's guard machinery.

use std::collections::VecDeque;

use nalgebra::DVector;
use thiserror::Error;

use crate::hybrid::integrator::{integrate_flow, FlowError, FlowOutcome, GuardFn, Tolerances};
use crate::hybrid::{ClosedLoop, EventRecord, HybridArc, HybridState, HybridTimePoint};
use crate::triggering::TriggerMode;

/// Sampling controls for [`simulate_with`].
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Target spacing of recorded samples along flow time; `None` records
    /// only states adjacent to jumps plus the endpoints. The integrator's
    /// step size is capped at this spacing so the trace tracks it closely.
    pub record_interval: Option<f64>,
    /// Record every accepted integrator step instead of interval marks.
    pub record_steps: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record_interval: Some(1e-3),
            record_steps: false,
        }
    }
}

/// Failures of a simulation run.
#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(
        "suspected Zeno behavior: {jumps} jumps within a window of {window:.3e} s ending at t = {t}"
    )]
    ZenoSuspected { t: f64, window: f64, jumps: usize },
    #[error("horizon must be finite and nonnegative, got {0}")]
    InvalidHorizon(f64),
    #[error("record interval must be finite and positive, got {0}")]
    InvalidRecordInterval(f64),
    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),
    #[error("segment budget exhausted at t = {t}: the run is not making progress")]
    SegmentBudgetExceeded { t: f64 },
}

/// Simulates `model` from `initial` over `[0, horizon]` with default
/// sampling (one sample per millisecond of flow time).
pub fn simulate(
    model: &ClosedLoop,
    initial: &HybridState,
    horizon: f64,
    tol: &Tolerances,
) -> Result<HybridArc, SimulationError> {
    simulate_with(model, initial, horizon, tol, &SimOptions::default())
}

/// Simulates `model` from `initial` over `[0, horizon]`.
///
/// The returned arc holds lexicographically ordered `(t, j)` samples — a
/// pre- and post-jump pair at every event, interval samples in between, and
/// the final state — plus one [`EventRecord`] per transmission. Identical
/// inputs produce bit-identical arcs.
pub fn simulate_with(
    model: &ClosedLoop,
    initial: &HybridState,
    horizon: f64,
    tol: &Tolerances,
    opts: &SimOptions,
) -> Result<HybridArc, SimulationError> {
    tol.validate()?;
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(SimulationError::InvalidHorizon(horizon));
    }
    if let Some(dt) = opts.record_interval {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(SimulationError::InvalidRecordInterval(dt));
        }
    }
    validate_initial(model, initial)?;

    let layout = model.layout.clone();
    let n = model.num_nodes();
    let deadlines: Vec<f64> = model
        .nodes
        .iter()
        .map(|p| match p.mode {
            TriggerMode::Periodic(period) => period,
            _ => p.tau_miet,
        })
        .collect();
    let min_deadline = deadlines.iter().cloned().fold(f64::INFINITY, f64::min);
    // Any `n + 1` consecutive jumps contain two from one node, and same-node
    // jumps are separated by at least that node's deadline; a shorter window
    // can only come from a defect, so abort rather than grind to a halt. The
    // slack absorbs event-localization error at any deadline scale.
    let zeno_window =
        (min_deadline * (1.0 - 1e-6) - 10.0 * tol.event_time).max(0.5 * min_deadline);

    let mut tol_eff = tol.clone();
    if let Some(dt) = opts.record_interval {
        tol_eff.max_step = tol_eff.max_step.min(dt);
    }

    // Tolerance for "the timer has reached its deadline". The same value is
    // used when planning segment breaks at arrival times, so a node within
    // `arm_tol` of its deadline is already due (or armed) and never the
    // target of another vanishing segment.
    let arm_tol = |t: f64| 1e-12f64.max(64.0 * f64::EPSILON * t.abs());

    let mut t = 0.0_f64;
    let mut j = 0_u64;
    let mut state = initial.clone();
    let mut samples = vec![(HybridTimePoint { t, j }, state.clone())];
    let mut events: Vec<EventRecord> = Vec::new();
    let mut last_tx = vec![0.0_f64; n];
    let mut h_hint: Option<f64> = None;
    let mut force_fire: Option<usize> = None;
    let mut jump_window: VecDeque<f64> = VecDeque::with_capacity(n + 2);

    let dt_mark = opts.record_interval.unwrap_or(f64::INFINITY);
    let mut next_mark = dt_mark;

    let mut budget: u64 = 1_000_000
        + if model.noise.is_active() {
            ((horizon / model.noise.dwell).min(1e15).ceil() as u64).saturating_mul(4)
        } else {
            0
        }
        + (((horizon / min_deadline).min(1e12).ceil() as u64) + 2) * (n as u64 + 1) * 8
        + model.disturbance.breakpoints().len() as u64 * 2;

    loop {
        // Apply every transmission due at the current instant, in ascending
        // node order; a node whose depletion guard just fired goes first
        // (its trigger variable sits at the threshold up to localization
        // error, so the threshold test must not be re-applied).
        loop {
            let node = force_fire.take().or_else(|| {
                (0..n).find(|&i| {
                    state.tau[i] >= deadlines[i] - arm_tol(t)
                        && match model.nodes[i].mode {
                            TriggerMode::EventTriggered => state.eta[i] <= tol.eta_threshold,
                            _ => true,
                        }
                })
            });
            let Some(node) = node else { break };
            push_sample(&mut samples, t, j, &state);
            let mi = layout.m_per_node[node];
            let w_node = if model.noise.is_active() {
                model.noise.node_sample(node, model.noise.interval_of(t), mi)
            } else {
                DVector::zeros(mi)
            };
            let eta_before = state.eta[node];
            state = model.apply_jump(&state, node, &w_node);
            j += 1;
            events.push(EventRecord {
                node,
                t,
                jump_index: j,
                inter_event_time: t - last_tx[node],
                eta_before,
                eta_after: state.eta[node],
            });
            last_tx[node] = t;
            push_sample(&mut samples, t, j, &state);

            jump_window.push_back(t);
            if jump_window.len() > n + 1 {
                jump_window.pop_front();
            }
            if jump_window.len() == n + 1 {
                let window = t - jump_window.front().copied().unwrap_or(t);
                if window < zeno_window {
                    return Err(SimulationError::ZenoSuspected {
                        t,
                        window,
                        jumps: n + 1,
                    });
                }
            }
        }

        if t >= horizon - 1e-12 {
            break;
        }

        // Plan the next smooth segment: stop wherever the right-hand side
        // would change (noise redraw, disturbance switch, a timer reaching
        // its deadline) or at the horizon, whichever comes first.
        let mut t_next = horizon;
        if model.noise.is_active() {
            let k = model.noise.interval_of(t);
            t_next = t_next.min((k + 1) as f64 * model.noise.dwell);
        }
        for (&deadline, &tau_i) in deadlines.iter().zip(state.tau.iter()) {
            let gap = deadline - tau_i;
            if gap > arm_tol(t) {
                t_next = t_next.min(t + gap);
            }
        }
        if let Some(&bp) = model.disturbance.breakpoints().iter().find(|&&bp| bp > t) {
            t_next = t_next.min(bp);
        }
        debug_assert!(t_next > t);

        // Depletion guards for armed dynamic-trigger nodes. The exit
        // invariant of the jump loop guarantees every guard starts strictly
        // negative, so a hit is always a genuine crossing.
        let armed: Vec<usize> = (0..n)
            .filter(|&i| {
                matches!(model.nodes[i].mode, TriggerMode::EventTriggered)
                    && state.tau[i] >= deadlines[i] - arm_tol(t)
            })
            .collect();
        let guard_fns: Vec<Box<GuardFn>> = armed
            .iter()
            .map(|&i| {
                let idx = layout.eta_index(i);
                let thr = tol.eta_threshold;
                Box::new(move |_t: f64, y: &DVector<f64>| thr - y[idx]) as Box<GuardFn>
            })
            .collect();
        let guard_refs: Vec<&GuardFn> = guard_fns.iter().map(|g| g.as_ref()).collect();

        let w_seg = if model.noise.is_active() {
            model.noise.stacked_at(&layout.m_per_node, t)
        } else {
            DVector::zeros(layout.m_total())
        };
        let v_seg = model.disturbance.value_at(t, model.plant.disturbance_dim);
        let rates = model.flow_rates(w_seg, v_seg);

        let mut pending: Vec<(f64, DVector<f64>)> = Vec::new();
        let flat0 = state.to_flat(&layout);
        let res = {
            let mut on_step = |ts: f64, ys: &DVector<f64>| {
                if opts.record_steps || ts >= next_mark {
                    while ts >= next_mark {
                        next_mark += dt_mark;
                    }
                    pending.push((ts, ys.clone()));
                }
            };
            integrate_flow(
                &rates,
                &guard_refs,
                (t, t_next),
                &flat0,
                &tol_eff,
                h_hint,
                &mut on_step,
            )?
        };
        for (ts, ys) in pending {
            push_sample(&mut samples, ts, j, &HybridState::from_flat(&ys, &layout));
        }
        t = res.t;
        state = HybridState::from_flat(&res.y, &layout);
        // Trigger variables are nonnegative along exact solutions; snap away
        // the integrator's sub-tolerance dips so thresholds stay meaningful.
        for i in 0..n {
            state.eta[i] = state.eta[i].max(0.0);
        }
        h_hint = Some(res.h_next);
        if let FlowOutcome::GuardHit { guard } = res.outcome {
            force_fire = Some(armed[guard]);
        }

        budget -= 1;
        if budget == 0 {
            return Err(SimulationError::SegmentBudgetExceeded { t });
        }
    }

    push_sample(&mut samples, t, j, &state);
    Ok(HybridArc {
        layout,
        samples,
        events,
    })
}

/// Appends a sample, replacing the previous one when it sits at the exact
/// same hybrid time (duplicates arise when a segment endpoint is recorded
/// and then immediately becomes a pre-jump state).
fn push_sample(
    samples: &mut Vec<(HybridTimePoint, HybridState)>,
    t: f64,
    j: u64,
    state: &HybridState,
) {
    if let Some((tp, last)) = samples.last_mut() {
        if tp.j == j && tp.t == t {
            *last = state.clone();
            return;
        }
    }
    samples.push((HybridTimePoint { t, j }, state.clone()));
}

fn validate_initial(model: &ClosedLoop, s: &HybridState) -> Result<(), SimulationError> {
    let lay = &model.layout;
    let dims = [
        ("x", s.x.len(), lay.n),
        ("z", s.z.len(), lay.copies * lay.q),
        ("yhat", s.yhat.len(), lay.copies * lay.m_total()),
        ("what", s.what.len(), lay.m_total()),
        ("tau", s.tau.len(), lay.num_nodes()),
        ("eta", s.eta.len(), lay.num_nodes()),
    ];
    for (name, got, want) in dims {
        if got != want {
            return Err(SimulationError::InvalidInitialState(format!(
                "{name} has dimension {got}, the model layout expects {want}"
            )));
        }
    }
    for (name, block) in [
        ("x", &s.x),
        ("z", &s.z),
        ("yhat", &s.yhat),
        ("what", &s.what),
        ("tau", &s.tau),
        ("eta", &s.eta),
    ] {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(SimulationError::InvalidInitialState(format!(
                "{name} contains a non-finite value"
            )));
        }
    }
    if s.tau.iter().any(|&v| v < 0.0) || s.eta.iter().any(|&v| v < 0.0) {
        return Err(SimulationError::InvalidInitialState(
            "timers and trigger states must be nonnegative".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{LtiCaseStudy, ObserverModel, PlantModel};
    use crate::hybrid::{DisturbanceSignal, NoiseModel};
    use crate::triggering::{NodeTriggerParams, ResetPolicy};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    const TAU_MIET: f64 = 0.0566905859851808;

    fn build_loop(mode: TriggerMode, sigma: f64, noise: NoiseModel) -> ClosedLoop {
        let cs = LtiCaseStudy::coupled_oscillators();
        let plant = PlantModel::lti(cs.a.clone(), vec![cs.c1.clone(), cs.c2.clone()]).unwrap();
        let obs =
            ObserverModel::luenberger(cs.a.clone(), cs.c_stacked(), cs.lgain.clone()).unwrap();
        let mut node = NodeTriggerParams::new(
            0.0,
            cs.constants.gamma,
            cs.constants.lambda,
            dmatrix![cs.constants.q_weight],
        )
        .unwrap();
        node.sigma = sigma;
        node.mode = mode;
        if noise.is_active() {
            node.w_bar = noise.amplitudes.iter().cloned().fold(0.0, f64::max);
            node.reset = ResetPolicy::NoiseAware;
        }
        ClosedLoop::new(
            plant,
            obs,
            vec![node.clone(), node],
            noise,
            DisturbanceSignal::Zero,
        )
        .unwrap()
    }

    fn x0() -> DVector<f64> {
        dvector![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    }

    #[test]
    fn time_triggered_nodes_fire_at_deadline_multiples() {
        let model = build_loop(TriggerMode::TimeTriggered, 0.0, NoiseModel::zero(2));
        let initial = model.initial_state(&x0(), &DVector::zeros(6));
        let arc = simulate(&model, &initial, 0.3, &Tolerances::default()).unwrap();
        // floor(0.3 / tau_miet) = 5 deadlines inside the horizon, two nodes
        // firing back to back at each, node 0 first.
        assert_eq!(arc.events.len(), 10);
        for (k, pair) in arc.events.chunks(2).enumerate() {
            assert_eq!(pair[0].node, 0);
            assert_eq!(pair[1].node, 1);
            assert_eq!(pair[0].t, pair[1].t, "simultaneous deadline, same instant");
            assert_eq!(pair[1].jump_index, pair[0].jump_index + 1);
            assert_abs_diff_eq!(pair[0].t, (k + 1) as f64 * TAU_MIET, epsilon = 1e-9);
            assert_abs_diff_eq!(pair[0].inter_event_time, TAU_MIET, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(arc.final_time().t, 0.3, epsilon = 1e-12);
        assert_eq!(arc.final_time().j, 10);
    }

    #[test]
    fn degenerate_error_free_dynamic_trigger_fires_at_miet() {
        // With z(0) = x(0) the estimate is exact, every trigger signal stays
        // at rounding level, and the dynamic trigger degenerates to firing
        // the instant the timer arms.
        let model = build_loop(TriggerMode::EventTriggered, 0.05, NoiseModel::zero(2));
        let x = dvector![0.4, -0.3, 0.8, 0.1, -0.2, 0.6];
        let initial = model.initial_state(&x, &x);
        let arc = simulate(&model, &initial, 0.2, &Tolerances::default()).unwrap();
        assert_eq!(arc.node_event_times(0).len(), 3);
        assert_eq!(arc.node_event_times(1).len(), 3);
        for e in &arc.events {
            assert_abs_diff_eq!(e.inter_event_time, TAU_MIET, epsilon = 1e-9);
            assert!(e.eta_before.abs() <= 1e-10);
            assert!(e.eta_after.abs() <= 1e-10);
        }
    }

    #[test]
    fn dynamic_trigger_extends_past_miet_with_real_error() {
        let model = build_loop(TriggerMode::EventTriggered, 0.05, NoiseModel::zero(2));
        let initial = model.initial_state(&x0(), &DVector::zeros(6));
        let arc = simulate(&model, &initial, 0.5, &Tolerances::default()).unwrap();
        assert!(!arc.events.is_empty());
        let mut max_iet = 0.0_f64;
        for e in &arc.events {
            assert!(
                e.inter_event_time >= TAU_MIET - 1e-9,
                "transmission below the guaranteed spacing: {}",
                e.inter_event_time
            );
            max_iet = max_iet.max(e.inter_event_time);
        }
        assert!(
            max_iet > TAU_MIET + 1e-5,
            "a real estimation error should hold at least one transmission \
             strictly past the minimum spacing (max gap {max_iet})"
        );
    }

    #[test]
    fn noisy_runs_are_bit_identical() {
        let make = || {
            let model = build_loop(
                TriggerMode::EventTriggered,
                0.05,
                NoiseModel::uniform(2, 1e-3, 1e-3, 7),
            );
            let initial = model.initial_state(&x0(), &DVector::zeros(6));
            simulate(&model, &initial, 0.25, &Tolerances::default()).unwrap()
        };
        let a = make();
        let b = make();
        assert_eq!(a.events, b.events);
        assert_eq!(a.samples.len(), b.samples.len());
        let fa = a.final_state().to_flat(&a.layout);
        let fb = b.final_state().to_flat(&b.layout);
        assert_eq!(fa, fb, "identical runs must agree bitwise");
    }

    #[test]
    fn redundant_observer_copies_stay_bitwise_synchronized() {
        let model = build_loop(
            TriggerMode::EventTriggered,
            0.05,
            NoiseModel::uniform(2, 1e-3, 1e-3, 3),
        )
        .with_redundant_observers();
        let initial = model.initial_state(&x0(), &DVector::zeros(6));
        let arc = simulate(&model, &initial, 0.15, &Tolerances::default()).unwrap();
        for (_, s) in &arc.samples {
            for c in 1..arc.layout.copies {
                assert_eq!(s.z_copy(&arc.layout, c), s.z_copy(&arc.layout, 0));
                assert_eq!(s.yhat_copy(&arc.layout, c), s.yhat_copy(&arc.layout, 0));
            }
        }
    }

    #[test]
    fn samples_are_lexicographic_with_jump_pairs() {
        let model = build_loop(
            TriggerMode::EventTriggered,
            0.05,
            NoiseModel::uniform(2, 1e-3, 1e-3, 11),
        );
        let initial = model.initial_state(&x0(), &DVector::zeros(6));
        let arc = simulate(&model, &initial, 0.3, &Tolerances::default()).unwrap();
        for pair in arc.samples.windows(2) {
            let (a, b) = (pair[0].0, pair[1].0);
            assert!(
                a.t < b.t || (a.t == b.t && a.j < b.j),
                "samples must be lexicographically increasing: ({}, {}) then ({}, {})",
                a.t,
                a.j,
                b.t,
                b.j
            );
        }
        for e in &arc.events {
            let (pre, post) = arc
                .jump_states(e.jump_index)
                .expect("every event has an adjacent pre/post sample pair");
            assert!(pre.tau[e.node] >= TAU_MIET - 1e-9);
            assert_eq!(post.tau[e.node], 0.0);
            assert_eq!(post.eta[e.node], e.eta_after);
        }
        for (_, s) in &arc.samples {
            assert!(s.eta.min() >= 0.0, "trigger variables stay nonnegative");
        }
    }

    #[test]
    fn flow_only_run_reaches_horizon_exactly() {
        let model = build_loop(TriggerMode::EventTriggered, 0.05, NoiseModel::zero(2));
        let initial = model.initial_state(&x0(), &DVector::zeros(6));
        let opts = SimOptions {
            record_interval: None,
            record_steps: false,
        };
        let arc =
            simulate_with(&model, &initial, 0.03, &Tolerances::default(), &opts).unwrap();
        assert!(arc.events.is_empty(), "horizon is below the first deadline");
        assert_eq!(arc.samples.len(), 2, "initial and final samples only");
        assert_eq!(arc.final_time().t, 0.03);
        // The timers integrate time exactly.
        assert_abs_diff_eq!(arc.final_state().tau[0], 0.03, epsilon = 1e-12);
    }

    #[test]
    fn runaway_jump_rates_abort_with_zeno_diagnostic() {
        // A pathologically small period makes every node permanently due;
        // the driver must refuse to spin rather than hang.
        let model = build_loop(TriggerMode::Periodic(5e-13), 0.0, NoiseModel::zero(2));
        let initial = model.initial_state(&x0(), &DVector::zeros(6));
        let err = simulate(&model, &initial, 1.0, &Tolerances::default()).unwrap_err();
        assert!(matches!(err, SimulationError::ZenoSuspected { .. }));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let model = build_loop(TriggerMode::EventTriggered, 0.05, NoiseModel::zero(2));
        let initial = model.initial_state(&x0(), &DVector::zeros(6));
        let tol = Tolerances::default();
        assert!(matches!(
            simulate(&model, &initial, f64::NAN, &tol),
            Err(SimulationError::InvalidHorizon(_))
        ));
        assert!(matches!(
            simulate(&model, &initial, -1.0, &tol),
            Err(SimulationError::InvalidHorizon(_))
        ));
        let opts = SimOptions {
            record_interval: Some(0.0),
            record_steps: false,
        };
        assert!(matches!(
            simulate_with(&model, &initial, 1.0, &tol, &opts),
            Err(SimulationError::InvalidRecordInterval(_))
        ));
        let mut bad = initial.clone();
        bad.x = dvector![1.0];
        assert!(matches!(
            simulate(&model, &bad, 1.0, &tol),
            Err(SimulationError::InvalidInitialState(_))
        ));
        let mut bad = initial.clone();
        bad.tau[0] = -0.5;
        assert!(matches!(
            simulate(&model, &bad, 1.0, &tol),
            Err(SimulationError::InvalidInitialState(_))
        ));
        let mut bad_tol = tol.clone();
        bad_tol.rel = -1.0;
        assert!(matches!(
            simulate(&model, &initial, 1.0, &bad_tol),
            Err(SimulationError::Flow(FlowError::InvalidTolerance { .. }))
        ));
    }

    #[test]
    fn already_due_initial_timers_jump_at_time_zero() {
        let model = build_loop(TriggerMode::TimeTriggered, 0.0, NoiseModel::zero(2));
        let mut initial = model.initial_state(&x0(), &DVector::zeros(6));
        initial.tau = dvector![TAU_MIET, TAU_MIET];
        let arc = simulate(&model, &initial, 0.01, &Tolerances::default()).unwrap();
        assert_eq!(arc.events.len(), 2);
        assert_eq!(arc.events[0].t, 0.0);
        assert_eq!(arc.events[0].node, 0);
        assert_eq!(arc.events[1].node, 1);
        assert_eq!(arc.final_time().j, 2);
    }
}
