//! Plant, observer, holding-function, and error-coordinate models.
//!
//! A [`PlantModel`] is a forward-complete system `ẋ = f_p(x, v)` observed
//! through per-node output maps `y_i = h_{p,i}(x)` corrupted by measurement
//! noise `w_i`. A remote [`ObserverModel`] `ż = f_o(z, ŷ̃)` reconstructs the
//! state estimate `χ = h_o(z)` from held output estimates `ŷ̃` that the
//! network refreshes only at transmission events. Between events each `ŷ̃_i`
//! follows the holding function ([`holding_rate`]), a copy of the model
//! output flow evaluated on the estimate, so that a perfect estimate needs
//! no communication. [`derived_errors`] maps physical states to the error
//! coordinates the stability analysis is phrased in.
//!
//! Both a generic nonlinear interface (closures, with finite-difference
//! Jacobian fallback) and the built-in linear specialization used by the
//! case study ([`LtiCaseStudy`]) are provided.

mod case_study;
mod errors;
mod observer;
mod plant;

pub use case_study::{CaseStudyConstants, LtiCaseStudy};
pub use errors::{derived_errors, error_flow_g, holding_rate, observer_rate, ErrorCoordinates};
pub use observer::ObserverModel;
pub use plant::PlantModel;

use thiserror::Error;

/// Closure type for vector fields with an input: `(state, input) → rate`.
pub type VectorField2 =
    Box<dyn Fn(&nalgebra::DVector<f64>, &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> + Send + Sync>;
/// Closure type for maps of one vector argument.
pub type VectorMap =
    Box<dyn Fn(&nalgebra::DVector<f64>) -> nalgebra::DVector<f64> + Send + Sync>;
/// Closure type for Jacobians of one vector argument.
pub type JacobianMap =
    Box<dyn Fn(&nalgebra::DVector<f64>) -> nalgebra::DMatrix<f64> + Send + Sync>;

/// Errors raised by model assembly and evaluation.
#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("model needs at least one sensor node")]
    NoNodes,
}
