//! The packaged linear benchmark: plant, observer, per-node trigger
//! parameters, and the design-condition data, ready for simulation or
//! certificate solving.

use nalgebra::dmatrix;

use super::lmi::LmiProblem;
use crate::estimation::{LtiCaseStudy, ObserverModel, PlantModel};
use crate::triggering::NodeTriggerParams;

/// Builds the complete benchmark design from the built-in coupled-oscillator
/// model: the plant with its two single-output sensor nodes, the Luenberger
/// observer with the published injection gain, one trigger parameter set per
/// node (innovation measure `W = |·|`, unit sandwich constants, zero growth
/// constant, derived minimum inter-event time), and the certificate problem.
pub fn case_study_model() -> (
    PlantModel,
    ObserverModel,
    [NodeTriggerParams; 2],
    LmiProblem,
) {
    let cs = LtiCaseStudy::coupled_oscillators();
    let k = cs.constants;

    let plant = PlantModel::lti(cs.a.clone(), vec![cs.c1.clone(), cs.c2.clone()])
        .expect("benchmark plant data is well-formed");
    let observer = ObserverModel::luenberger(cs.a.clone(), cs.c_stacked(), cs.lgain.clone())
        .expect("benchmark observer data is well-formed");

    let node = || {
        let mut params = NodeTriggerParams::new(0.0, k.gamma, k.lambda, dmatrix![k.q_weight])
            .expect("benchmark trigger constants are admissible");
        params.sigma = k.sigma;
        params.mu = k.mu;
        params
            .validate()
            .expect("benchmark trigger constants are admissible");
        params
    };
    let nodes = [node(), node()];

    let q = dmatrix![k.q_weight, 0.0; 0.0, k.q_weight];
    let c_stacked = cs.c_stacked();
    let problem = LmiProblem::new(
        cs.a,
        c_stacked,
        cs.lgain,
        q,
        vec![k.mu; 2],
        vec![k.gamma; 2],
        vec![1, 1],
        k.rho_v,
        k.theta,
    )
    .expect("benchmark condition data is well-formed");

    (plant, observer, nodes, problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triggering::{ResetPolicy, TriggerMode};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn packaged_design_is_dimensionally_consistent() {
        let (plant, observer, nodes, problem) = case_study_model();
        assert_eq!(plant.state_dim, 6);
        assert_eq!(plant.num_nodes(), 2);
        assert_eq!(plant.output_dims, vec![1, 1]);
        assert_eq!(problem.state_dim(), 6);
        assert_eq!(problem.output_dim(), 2);
        assert_eq!(problem.num_nodes(), 2);
        assert_eq!(nodes[0].output_dim(), 1);

        // The Luenberger observer state is itself the estimate.
        let z = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        assert_eq!(observer.estimate(&z), z);
    }

    #[test]
    fn node_parameters_carry_the_published_constants() {
        let (_, _, nodes, _) = case_study_model();
        for params in &nodes {
            assert_eq!(params.lip, 0.0);
            assert_eq!(params.gamma, 6.1623);
            assert_eq!(params.lambda, 0.7);
            assert_eq!(params.sigma, 0.05);
            assert_eq!(params.mu, 0.5);
            assert_eq!(params.beta_lo, 1.0);
            assert_eq!(params.beta_hi, 1.0);
            assert_eq!(params.w_bar, 0.0);
            assert_eq!(params.s_reg, 0.0);
            assert!(matches!(params.mode, TriggerMode::EventTriggered));
            assert!(matches!(params.reset, ResetPolicy::Zero));
            // Frozen against the closed-form minimum inter-event time; the
            // published rounded value is 0.0566.
            assert_abs_diff_eq!(params.tau_miet, 0.0566905859851808, epsilon = 1e-15);
            assert_abs_diff_eq!(params.tau_miet, 0.0566, epsilon = 1e-4);
        }
    }

    #[test]
    fn state_is_reconstructible_only_from_both_nodes_together() {
        let (_, _, _, problem) = case_study_model();
        let c1 = problem.c.rows(0, 1).into_owned();
        let c2 = problem.c.rows(1, 1).into_owned();
        assert_eq!(LtiCaseStudy::observability_rank(&problem.a, &problem.c), 6);
        assert!(LtiCaseStudy::observability_rank(&problem.a, &c1) < 6);
        assert!(LtiCaseStudy::observability_rank(&problem.a, &c2) < 6);
    }
}
