//! Scenario execution: build a configured closed loop, simulate it, enforce
//! the minimum inter-event-time guarantee on the recorded schedule, compute
//! summary statistics, and optionally write `events.csv`, `trace.csv`, and
//! `summary.json` to the configured output directory.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::hybrid::{simulate_with, HybridArc, ClosedLoop, EventRecord};
use crate::triggering::TriggerMode;

use super::config::{ConfigError, ScenarioConfig};
use super::lyapunov::LyapunovLog;
use super::HarnessError;

/// Slack below the certified floor tolerated when checking recorded
/// inter-event times, absorbing the integrator's event-time tolerance.
pub const MIN_IET_SLACK: f64 = 1e-6;

/// Inter-event-time statistics for one node. `count` is the number of
/// transmissions; the extrema and mean are over gaps between *consecutive*
/// transmissions, so they are absent until a node has fired twice (the gap
/// from the start of the run to the first event is not an inter-event time).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IetStats {
    pub count: usize,
    pub min: Option<f64>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

impl IetStats {
    /// Statistics of the gaps between consecutive entries of a sorted list
    /// of event times.
    pub fn from_event_times(times: &[f64]) -> Self {
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.is_empty() {
            return Self {
                count: times.len(),
                min: None,
                mean: None,
                max: None,
            };
        }
        let sum: f64 = gaps.iter().sum();
        Self {
            count: times.len(),
            min: gaps.iter().copied().reduce(f64::min),
            mean: Some(sum / gaps.len() as f64),
            max: gaps.iter().copied().reduce(f64::max),
        }
    }
}

/// Mean inter-event time observed over the window `(start, end]`, computed
/// censoring-aware: every gap between consecutive events whose *closing*
/// event lies in the window contributes fully, and the open gap from the
/// last event at or before `end` (or from `start`, if later) to `end`
/// contributes as a censored observation. A window containing no events
/// therefore reports `end − start` rather than an undefined or zero value,
/// which keeps comparisons meaningful when triggering has (nearly) stopped.
pub fn windowed_mean_iet(event_times: &[f64], start: f64, end: f64) -> f64 {
    assert!(end > start, "window must have positive length");
    let mut gap_sum = 0.0;
    let mut gaps = 0usize;
    let mut last_at_or_before_end: Option<f64> = None;
    for (k, &t) in event_times.iter().enumerate() {
        if t <= end {
            last_at_or_before_end = Some(t);
            if t > start && k > 0 {
                gap_sum += t - event_times[k - 1];
                gaps += 1;
            }
        }
    }
    let anchor = last_at_or_before_end.unwrap_or(start).max(start);
    (gap_sum + (end - anchor)) / (gaps as f64 + 1.0)
}

/// Summary of one simulation run.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    /// Canonical hash of the scenario that produced this run.
    pub config_hash: String,
    /// Noise seed, when noise was configured.
    pub seed: Option<u64>,
    /// Final flow time reached.
    pub final_time: f64,
    /// Total jump count.
    pub jumps: u64,
    /// Total transmissions across all nodes.
    pub total_events: usize,
    /// Event times per node, ascending.
    pub per_node_event_times: Vec<Vec<f64>>,
    /// Inter-event statistics per node.
    pub iet_stats: Vec<IetStats>,
    /// Certified minimum inter-event time per node.
    pub tau_miet: Vec<f64>,
    /// Enforced schedule floor per node (the period for periodic nodes,
    /// the certified minimum otherwise).
    pub min_iet_floor: Vec<f64>,
    /// `(t, |x̂ − x|)` along the recorded samples, estimate from observer
    /// copy 0.
    pub error_trace: Vec<(f64, f64)>,
    /// Supremum of `|x̂ − x|` over the final quarter of the horizon.
    pub ultimate_bound: f64,
    /// Certificate-function audit, when one was attached after the run.
    pub lyapunov: Option<LyapunovLog>,
}

/// A finished run: the summary plus the raw arc and the model that produced
/// it, so downstream audits can re-evaluate trigger and certificate
/// quantities along the trajectory.
#[derive(Debug)]
pub struct RunArtifacts {
    pub report: SimulationReport,
    pub arc: HybridArc,
    pub model: ClosedLoop,
}

/// Checks every recorded inter-event time of node `i` against
/// `floors[i] − MIN_IET_SLACK`. The gap from the start of the run to a
/// node's first event is included: timers start at zero, so even the first
/// transmission cannot legitimately arrive earlier than the floor.
fn check_min_iet(events: &[EventRecord], floors: &[f64]) -> Result<(), HarnessError> {
    for e in events {
        let floor = floors[e.node];
        if e.inter_event_time < floor - MIN_IET_SLACK {
            return Err(HarnessError::MinIetViolation {
                node: e.node,
                iet: e.inter_event_time,
                floor,
            });
        }
    }
    Ok(())
}

/// Builds, simulates, and summarizes one scenario. Fails if any recorded
/// inter-event time undercuts the node's floor — that would falsify the
/// Zeno-freeness guarantee the design is meant to certify — and writes the
/// run artifacts to `config.out_dir` when one is set.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunArtifacts, HarnessError> {
    let built = config.build()?;
    let arc = simulate_with(
        &built.model,
        &built.initial,
        built.horizon,
        &built.tolerances,
        &built.options,
    )?;
    let model = built.model;

    let floors: Vec<f64> = model
        .nodes
        .iter()
        .map(|p| match p.mode {
            TriggerMode::Periodic(period) => period,
            _ => p.tau_miet,
        })
        .collect();
    check_min_iet(&arc.events, &floors)?;

    let estimate = |z: &nalgebra::DVector<f64>| model.observer.estimate(z);
    let error_trace: Vec<(f64, f64)> = arc
        .samples
        .iter()
        .map(|(tp, s)| {
            let err = (estimate(&s.z_copy(&arc.layout, 0)) - &s.x).norm();
            (tp.t, err)
        })
        .collect();
    let ultimate_bound = arc.sup_error_norm_from(0.75 * built.horizon, &estimate);

    let per_node_event_times: Vec<Vec<f64>> = (0..model.num_nodes())
        .map(|i| arc.node_event_times(i))
        .collect();
    let iet_stats = per_node_event_times
        .iter()
        .map(|times| IetStats::from_event_times(times))
        .collect();

    let final_tp = arc.final_time();
    let report = SimulationReport {
        config_hash: config.canonical_hash(),
        seed: config.noise.as_ref().map(|n| n.seed),
        final_time: final_tp.t,
        jumps: final_tp.j,
        total_events: arc.events.len(),
        per_node_event_times,
        iet_stats,
        tau_miet: model.nodes.iter().map(|p| p.tau_miet).collect(),
        min_iet_floor: floors,
        error_trace,
        ultimate_bound,
        lyapunov: None,
    };

    if let Some(dir) = &config.out_dir {
        write_outputs(dir, &report, &arc)?;
    }

    Ok(RunArtifacts { report, arc, model })
}

fn write_outputs(
    dir: &Path,
    report: &SimulationReport,
    arc: &HybridArc,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;

    let mut events = csv::Writer::from_path(dir.join("events.csv"))?;
    events.write_record(["node", "time", "jump_index", "inter_event_time"])?;
    for e in &arc.events {
        events.write_record(&[
            e.node.to_string(),
            e.t.to_string(),
            e.jump_index.to_string(),
            e.inter_event_time.to_string(),
        ])?;
    }
    events.flush()?;

    let n = arc.layout.n;
    let q = arc.layout.q;
    let mut trace = csv::Writer::from_path(dir.join("trace.csv"))?;
    let mut header = vec!["t".to_string(), "j".to_string(), "err_norm".to_string()];
    header.extend((0..n).map(|k| format!("x{k}")));
    header.extend((0..q).map(|k| format!("z{k}")));
    trace.write_record(&header)?;
    for ((tp, state), (_, err)) in arc.samples.iter().zip(&report.error_trace) {
        let mut row = vec![tp.t.to_string(), tp.j.to_string(), err.to_string()];
        row.extend(state.x.iter().map(|v| v.to_string()));
        row.extend(state.z_copy(&arc.layout, 0).iter().map(|v| v.to_string()));
        trace.write_record(&row)?;
    }
    trace.flush()?;

    let summary = serde_json::json!({
        "config_hash": report.config_hash,
        "seed": report.seed,
        "final_time": report.final_time,
        "jumps": report.jumps,
        "total_events": report.total_events,
        "tau_miet": report.tau_miet,
        "min_iet_floor": report.min_iet_floor,
        "iet_stats": report.iet_stats,
        "ultimate_bound": report.ultimate_bound,
        "lyapunov_violations": report.lyapunov.as_ref().map(|l| l.violations),
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

/// One point of a noise-amplitude sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub amplitude: f64,
    /// Supremum of the estimation error over the final quarter of the run.
    pub ultimate_bound: f64,
    pub events: usize,
}

/// Runs the base scenario once per amplitude (in parallel), scaling every
/// node's noise amplitude to the given value while keeping the dwell time,
/// seed, and initial condition fixed, and reports the ultimate error bound
/// at each level. The base scenario must carry a noise block (it supplies
/// the dwell and seed); per-amplitude outputs land in `amp_<k>/` under the
/// base output directory when one is set.
pub fn iss_sweep(
    base: &ScenarioConfig,
    amplitudes: &[f64],
) -> Result<Vec<SweepPoint>, HarnessError> {
    let Some(noise) = &base.noise else {
        return Err(ConfigError::Invalid {
            field: "noise".into(),
            message: "amplitude sweep needs a noise block for the dwell time and seed".into(),
        }
        .into());
    };
    if amplitudes.is_empty() {
        return Err(ConfigError::Invalid {
            field: "amplitudes".into(),
            message: "must list at least one amplitude".into(),
        }
        .into());
    }
    if let Some(&bad) = amplitudes.iter().find(|a| !a.is_finite() || **a < 0.0) {
        return Err(ConfigError::Invalid {
            field: "amplitudes".into(),
            message: format!("must be finite and nonnegative, got {bad}"),
        }
        .into());
    }
    let num_nodes = noise.amplitudes.len();

    amplitudes
        .par_iter()
        .enumerate()
        .map(|(k, &amp)| {
            let mut cfg = base.clone();
            cfg.noise.as_mut().expect("checked above").amplitudes = vec![amp; num_nodes];
            cfg.out_dir = base.out_dir.as_ref().map(|d| d.join(format!("amp_{k}")));
            let run = run_scenario(&cfg)?;
            Ok(SweepPoint {
                amplitude: amp,
                ultimate_bound: run.report.ultimate_bound,
                events: run.report.total_events,
            })
        })
        .collect()
}
