//! Command-line front end: run configured scenarios, compute guaranteed
//! minimum inter-event times, solve the observer-certificate matrix
//! inequality, and sweep noise amplitudes.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on simulation or
//! solver faults, 4 when a run contradicts a certified guarantee (the Zeno
//! guard or the minimum inter-event-time floor).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;

use etse::harness::{iss_sweep, run_scenario, HarnessError, ScenarioConfig};
use etse::hybrid::SimulationError;
use etse::lti::{case_study_model, solve_p, LmiProblem, SolveOptions};
use etse::triggering::compute_miet;

#[derive(Parser)]
#[command(
    name = "etse",
    version,
    about = "Distributed event-triggered state estimation: simulate, certify, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write events.csv, trace.csv, summary.json.
    Simulate {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the scenario's own `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the guaranteed minimum inter-event time for one node design.
    Miet {
        /// Growth constant of the holding error (0 for globally bounded
        /// output flow, as in linear designs with matched holding).
        #[arg(long = "L", allow_hyphen_values = true)]
        l: f64,
        /// Network-error gain of the node.
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        /// Trade-off ratio in (0, 1).
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
    },
    /// Solve the linear observer certificate inequality for P.
    DesignLti {
        /// Design-problem JSON; the built-in benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the certificate JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a scenario at several noise amplitudes and report the
    /// ultimate error bound at each level.
    Sweep {
        /// Scenario JSON file (must contain a noise block).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated amplitude list, e.g. 0,1e-4,1e-3.
        #[arg(long, value_delimiter = ',', required = true)]
        amplitudes: Vec<f64>,
    },
}

/// CLI failure, tagged with the exit code contract.
enum CliError {
    /// Exit 2: the input was wrong.
    Config(String),
    /// Exit 3: the computation failed.
    Fault(String),
    /// Exit 4: a run contradicted a certified guarantee.
    Assertion(String),
}

impl From<HarnessError> for CliError {
    fn from(err: HarnessError) -> Self {
        match &err {
            HarnessError::Config(_) => CliError::Config(err.to_string()),
            HarnessError::MinIetViolation { .. } => CliError::Assertion(err.to_string()),
            HarnessError::Simulation(SimulationError::ZenoSuspected { .. }) => {
                CliError::Assertion(err.to_string())
            }
            _ => CliError::Fault(err.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => fail(&msg, 2),
        Err(CliError::Fault(msg)) => fail(&msg, 3),
        Err(CliError::Assertion(msg)) => fail(&msg, 4),
    }
}

fn fail(msg: &str, code: u8) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, out } => cmd_simulate(&config, out),
        Command::Miet { l, gamma, lambda } => cmd_miet(l, gamma, lambda),
        Command::DesignLti { config, out } => cmd_design(config.as_deref(), out),
        Command::Sweep { config, amplitudes } => cmd_sweep(&config, &amplitudes),
    }
}

fn cmd_simulate(path: &std::path::Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut config = ScenarioConfig::from_path(path).map_err(HarnessError::from)?;
    if out.is_some() {
        config.out_dir = out;
    }
    let run = run_scenario(&config)?;
    let report = &run.report;

    println!(
        "scenario {}  horizon {} s  jumps {}",
        &report.config_hash[..12],
        report.final_time,
        report.jumps
    );
    for (i, stats) in report.iet_stats.iter().enumerate() {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        println!(
            "node {i}: {} events, inter-event min/mean/max = {}/{}/{} s (floor {:.6} s)",
            stats.count,
            fmt(stats.min),
            fmt(stats.mean),
            fmt(stats.max),
            report.min_iet_floor[i],
        );
    }
    let final_err = report.error_trace.last().map_or(f64::NAN, |(_, e)| *e);
    println!(
        "final |e| = {final_err:.6e}, ultimate bound (last 25%) = {:.6e}",
        report.ultimate_bound
    );
    if let Some(dir) = &config.out_dir {
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

fn cmd_miet(l: f64, gamma: f64, lambda: f64) -> Result<(), CliError> {
    let tau = compute_miet(l, gamma, lambda).map_err(|e| CliError::Config(e.to_string()))?;
    println!("{tau}");
    Ok(())
}

/// Design-problem file: either the string `"case_study"` or an inline
/// problem with optional solver settings.
#[derive(Deserialize)]
#[serde(untagged)]
enum DesignConfig {
    Named(String),
    Inline(Box<InlineDesign>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineDesign {
    a: Vec<Vec<f64>>,
    /// Stacked output matrix (all node rows, top to bottom).
    c: Vec<Vec<f64>>,
    lgain: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    mu: Vec<f64>,
    gamma: Vec<f64>,
    output_dims: Vec<usize>,
    rho_v: f64,
    theta: f64,
    #[serde(default)]
    max_iters: Option<usize>,
    #[serde(default)]
    restarts: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

fn dense(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "{what}: must be a nonempty rectangular matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn cmd_design(path: Option<&std::path::Path>, out: Option<PathBuf>) -> Result<(), CliError> {
    let (problem, options) = match path {
        None => (case_study_model().3, SolveOptions::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
            let config: DesignConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
            match config {
                DesignConfig::Named(name) if name == "case_study" => {
                    (case_study_model().3, SolveOptions::default())
                }
                DesignConfig::Named(name) => {
                    return Err(CliError::Config(format!(
                        "unknown design problem `{name}`; expected \"case_study\" or an inline problem"
                    )));
                }
                DesignConfig::Inline(inline) => {
                    let problem = LmiProblem::new(
                        dense(&inline.a, "a")?,
                        dense(&inline.c, "c")?,
                        dense(&inline.lgain, "lgain")?,
                        dense(&inline.q, "q")?,
                        inline.mu.clone(),
                        inline.gamma.clone(),
                        inline.output_dims.clone(),
                        inline.rho_v,
                        inline.theta,
                    )
                    .map_err(|e| CliError::Config(e.to_string()))?;
                    let defaults = SolveOptions::default();
                    let options = SolveOptions {
                        max_iters: inline.max_iters.unwrap_or(defaults.max_iters),
                        restarts: inline.restarts.unwrap_or(defaults.restarts),
                        seed: inline.seed.unwrap_or(defaults.seed),
                        ..defaults
                    };
                    (problem, options)
                }
            }
        }
    };

    let outcome = solve_p(&problem, &options).map_err(|e| CliError::Fault(e.to_string()))?;
    let report = outcome.report();
    let p = match &outcome {
        etse::lti::SolveOutcome::Feasible { p, .. } => p,
        etse::lti::SolveOutcome::BudgetExhausted { best_p, .. } => best_p,
    };
    let p_rows: Vec<Vec<f64>> = (0..p.nrows())
        .map(|i| (0..p.ncols()).map(|j| p[(i, j)]).collect())
        .collect();
    let result = serde_json::json!({
        "feasible": outcome.is_feasible(),
        "iterations": outcome.iterations(),
        "max_eigenvalue": report.max_eigenvalue,
        "p_min_eigenvalue": report.p_min_eigenvalue,
        "residual_norm": report.residual_norm,
        "p": p_rows,
    });
    let text = serde_json::to_string_pretty(&result).expect("JSON projection cannot fail");
    match &out {
        Some(path) => std::fs::write(path, text.as_bytes())
            .map_err(|e| CliError::Fault(format!("writing {}: {e}", path.display())))?,
        None => println!("{text}"),
    }

    if outcome.is_feasible() {
        Ok(())
    } else {
        Err(CliError::Fault(format!(
            "no feasible certificate within budget (best max eigenvalue {:.6e})",
            report.max_eigenvalue
        )))
    }
}

fn cmd_sweep(path: &std::path::Path, amplitudes: &[f64]) -> Result<(), CliError> {
    let config = ScenarioConfig::from_path(path).map_err(HarnessError::from)?;
    let points = iss_sweep(&config, amplitudes)?;
    println!("{:>12}  {:>14}  {:>8}", "amplitude", "ultimate_bound", "events");
    for point in &points {
        println!(
            "{:>12.6e}  {:>14.6e}  {:>8}",
            point.amplitude, point.ultimate_bound, point.events
        );
    }
    Ok(())
}
