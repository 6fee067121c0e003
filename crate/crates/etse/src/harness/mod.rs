//! Scenario harness: JSON-configured runs, schedule and error statistics,
//! artifact files, noise-amplitude sweeps, and the certificate audit.
//!
//! The harness sits on top of the hybrid simulator and turns a declarative
//! scenario description into reproducible artifacts: a [`SimulationReport`]
//! in memory and, when an output directory is configured, `events.csv`,
//! `trace.csv`, and `summary.json` on disk. Every run is guarded: a
//! recorded inter-event time below the node's certified floor is an error,
//! not a statistic, because it would falsify the design's Zeno-freeness
//! guarantee.

pub mod config;
pub mod lyapunov;
pub mod scenario;

use thiserror::Error;

use crate::hybrid::SimulationError;
use crate::triggering::TriggerConfigError;

pub use config::{
    BuiltScenario, ConfigError, DisturbanceConfig, InitialStateConfig, ModelConfig, NodeConfig,
    NoiseConfig, ResetConfig, ScenarioConfig, TolerancesConfig, TriggerModeConfig,
};
pub use lyapunov::{lyapunov_monitor, JumpCheck, LyapunovLog};
pub use scenario::{
    iss_sweep, run_scenario, windowed_mean_iet, IetStats, RunArtifacts, SimulationReport,
    SweepPoint, MIN_IET_SLACK,
};

/// Anything that can go wrong while running a configured scenario.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Trigger(#[from] TriggerConfigError),
    /// The recorded schedule undercut the certified minimum inter-event
    /// time — the one guarantee a run must never contradict.
    #[error(
        "node {node} fired {iet:.9} s after its previous transmission, \
         below the certified floor of {floor:.9} s"
    )]
    MinIetViolation { node: usize, iet: f64, floor: f64 },
    #[error("certificate audit: {0}")]
    Monitor(String),
    #[error("writing run artifacts failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing run artifacts failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("serializing run artifacts failed: {0}")]
    Json(#[from] serde_json::Error),
}
