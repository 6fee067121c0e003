//! Linear design toolkit: assembly and verification of the observer design
//! condition, a self-contained certificate solver, and the packaged
//! coupled-oscillator benchmark.

mod case_study;
mod lmi;
mod solver;

pub use case_study::case_study_model;
pub use lmi::{
    assemble_lmi, scaled_tolerance, verify_lmi, verify_lmi_scaled, LmiError, LmiProblem,
    LmiReport, FEASIBILITY_TOL_REL,
};
pub use solver::{lyapunov_equation, solve_p, SolveOptions, SolveOutcome};
