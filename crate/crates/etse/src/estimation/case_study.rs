//! The built-in linear benchmark: three interconnected marginally stable
//! oscillators observed through two single-output sensor nodes.

use nalgebra::{dmatrix, DMatrix};

/// Scalar constants of the benchmark design.
#[derive(Debug, Clone, Copy)]
pub struct CaseStudyConstants {
    /// Disturbance-attenuation weight `μ_i` (same for both nodes).
    pub mu: f64,
    /// Certificate decay rate `ρ_V`.
    pub rho_v: f64,
    /// Output-error weight `Q_i` (scalar, same for both nodes).
    pub q_weight: f64,
    /// L2 gain `γ_i` (same for both nodes).
    pub gamma: f64,
    /// Large relaxation constant `θ` of the feasibility certificate.
    pub theta: f64,
    /// Trigger tuning ratio `λ_i`.
    pub lambda: f64,
    /// Trigger damping coefficient `σ_i`.
    pub sigma: f64,
}

/// The benchmark model: plant matrix, the two output rows, the observer
/// injection gain, and the design constants.
#[derive(Debug, Clone)]
pub struct LtiCaseStudy {
    /// Plant matrix (6×6), three coupled oscillators.
    pub a: DMatrix<f64>,
    /// First node's output row (1×6): measures state 1.
    pub c1: DMatrix<f64>,
    /// Second node's output row (1×6): measures state 3.
    pub c2: DMatrix<f64>,
    /// Observer injection gain (6×2).
    pub lgain: DMatrix<f64>,
    pub constants: CaseStudyConstants,
}

impl LtiCaseStudy {
    /// The benchmark: neither sensor alone can reconstruct the state, but
    /// the pair is observable; the plant is marginally stable (purely
    /// imaginary eigenvalues), so estimation genuinely needs the injection.
    pub fn coupled_oscillators() -> Self {
        let a = dmatrix![
            0.0, 2.0, 0.0, 0.0, 0.0, 1.0;
            -2.0, 0.0, 1.0, 0.0, 0.0, 0.0;
            0.0, -1.0, 0.0, 2.0, 0.0, 0.0;
            0.0, 0.0, -2.0, 0.0, 1.0, 0.0;
            0.0, 0.0, 0.0, -1.0, 0.0, 2.0;
            -1.0, 0.0, 0.0, 0.0, -2.0, 0.0
        ];
        let c1 = dmatrix![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let c2 = dmatrix![0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let lgain = dmatrix![
            -51.0, 41.0;
            -92.0, 86.0;
            41.0, -51.0;
            76.0, -88.0;
            205.0, -205.0;
            -78.0, 72.0
        ];
        Self {
            a,
            c1,
            c2,
            lgain,
            constants: CaseStudyConstants {
                mu: 0.5,
                rho_v: 2.0,
                q_weight: 2.0,
                gamma: 6.1623,
                theta: 2.39e4,
                lambda: 0.7,
                sigma: 0.05,
            },
        }
    }

    /// Both output rows stacked into one 2×6 matrix.
    pub fn c_stacked(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(2, 6);
        c.row_mut(0).copy_from(&self.c1.row(0));
        c.row_mut(1).copy_from(&self.c2.row(0));
        c
    }

    /// Closed-loop error matrix `A + LC`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.lgain * self.c_stacked()
    }

    /// Rank of the observability matrix of `(A, C)` for an arbitrary
    /// stacked output matrix `C`.
    pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> usize {
        let n = a.nrows();
        let m = c.nrows();
        let mut obs = DMatrix::zeros(m * n, n);
        let mut block = c.clone();
        for k in 0..n {
            obs.rows_mut(k * m, m).copy_from(&block);
            block = &block * a;
        }
        // Scale-aware rank tolerance.
        obs.rank(1e-9 * obs.norm().max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn plant_is_marginally_stable_with_the_expected_frequencies() {
        let cs = LtiCaseStudy::coupled_oscillators();
        let eigs = cs.a.complex_eigenvalues();
        // Frozen independently: eigenvalues ±3i and a double pair ±√3 i,
        // all with zero real part.
        let mut freqs: Vec<f64> = eigs.iter().map(|l| l.im.abs()).collect();
        freqs.sort_by(f64::total_cmp);
        let sqrt3 = 3.0f64.sqrt();
        for (got, want) in freqs.iter().zip([sqrt3, sqrt3, sqrt3, sqrt3, 3.0, 3.0]) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-9);
        }
        for l in eigs.iter() {
            assert!(l.re.abs() < 1e-12, "marginal stability violated: {l}");
        }
    }

    #[test]
    fn injection_makes_the_error_dynamics_contract() {
        let cs = LtiCaseStudy::coupled_oscillators();
        let eigs = cs.closed_loop().complex_eigenvalues();
        let max_re = eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        // Frozen independently: slowest closed-loop mode at −1.3790774413.
        assert!(max_re < 0.0, "closed loop must be Hurwitz");
        assert_abs_diff_eq!(max_re, -1.3790774412816356, epsilon = 1e-8);
    }

    #[test]
    fn observability_needs_both_nodes() {
        let cs = LtiCaseStudy::coupled_oscillators();
        assert_eq!(LtiCaseStudy::observability_rank(&cs.a, &cs.c_stacked()), 6);
        assert_eq!(LtiCaseStudy::observability_rank(&cs.a, &cs.c1), 4);
        assert_eq!(LtiCaseStudy::observability_rank(&cs.a, &cs.c2), 4);
    }

    #[test]
    fn constants_match_the_published_design() {
        let k = LtiCaseStudy::coupled_oscillators().constants;
        assert_eq!(k.mu, 0.5);
        assert_eq!(k.rho_v, 2.0);
        assert_eq!(k.q_weight, 2.0);
        assert_eq!(k.gamma, 6.1623);
        assert_eq!(k.theta, 2.39e4);
        assert_eq!(k.lambda, 0.7);
        assert_eq!(k.sigma, 0.05);
    }
}
