//! Assembly and verification of the linear design condition.
//!
//! The remote-observer design for a linear plant is certified by one
//! semidefinite constraint in a single symmetric decision matrix `P` (the
//! quadratic certificate `V(e) = eᵀPe`). The constraint is a 4×4 block
//! matrix coupling the certificate decay, the injection gain `L`, the held
//! measurement-noise channel, and the innovation weight `Q`:
//!
//! ```text
//! ⎡ Λ      −PL    −PL    −CᵀQ  ⎤
//! ⎢ −LᵀP    Γ      0      0    ⎥  ⪯ 0,
//! ⎢ −LᵀP    0     −θI     0    ⎥
//! ⎣ −QC     0      0     Q−θI  ⎦
//! ```
//!
//! with `Λ = (A+LC)ᵀP + P(A+LC) + ρ_V·P + AᵀCᵀCA + CᵀQC` and
//! `Γ = blkdiag((μ_i − γ_i²)·I_{m_i})` over the sensor nodes. Assembly is
//! affine in `P`; verification reports extreme eigenvalues so that a
//! certificate from *any* solver (ours or an external one) can be checked.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

/// Relative feasibility tolerance: a certificate is accepted when the top
/// eigenvalue of the assembled matrix is at most [`scaled_tolerance`] of its
/// Frobenius norm. Scale awareness matters because the relaxation constant
/// `θ` can make the matrix norm huge while the decision blocks stay small.
pub const FEASIBILITY_TOL_REL: f64 = 1e-6;

/// Scale-aware feasibility threshold `10⁻⁶ · (1 + ‖M‖_F)`.
pub fn scaled_tolerance(m_fro_norm: f64) -> f64 {
    FEASIBILITY_TOL_REL * (1.0 + m_fro_norm)
}

/// Failures of condition assembly, verification, or solving.
#[derive(Debug, Error)]
pub enum LmiError {
    /// A matrix field has the wrong shape.
    #[error("`{what}` has shape {got_rows}×{got_cols}, expected {want_rows}×{want_cols}")]
    Shape {
        what: &'static str,
        want_rows: usize,
        want_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    /// Per-node vectors disagree in length or are empty.
    #[error(
        "per-node data must share one length ≥ 1 (mu: {mu}, gamma: {gamma}, output_dims: {dims})"
    )]
    NodeVectors { mu: usize, gamma: usize, dims: usize },
    /// The per-node output dimensions do not sum to the stacked output size.
    #[error("output_dims sum to {sum} but the stacked output has {m} rows")]
    OutputDimsSum { sum: usize, m: usize },
    /// The innovation weight is not symmetric positive definite.
    #[error("innovation weight Q must be symmetric positive definite")]
    WeightNotPositive,
    /// A scalar parameter is out of range.
    #[error("`{name}` must be finite and positive, got {value}")]
    BadScalar { name: &'static str, value: f64 },
    /// The decision matrix is not symmetric.
    #[error("decision matrix P must be symmetric (‖P−Pᵀ‖ = {asymmetry:.3e})")]
    AsymmetricP { asymmetry: f64 },
    /// The symmetric eigensolver did not converge.
    #[error("symmetric eigensolver failed to converge")]
    EigenFailure,
    /// The Lyapunov system has no unique solution (the matrix has a pair of
    /// eigenvalues summing to zero).
    #[error("Lyapunov equation is singular for this matrix")]
    SingularLyapunov,
}

/// Data of the linear design condition.
///
/// Shapes: `a` is n×n, `c` stacks the per-node output rows into m×n,
/// `lgain` is n×m, `q` is the m×m block-diagonal innovation weight.
/// `mu`, `gamma`, and `output_dims` hold one entry per sensor node, with
/// `output_dims` summing to m.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    /// Plant matrix `A`.
    pub a: DMatrix<f64>,
    /// Stacked output matrix `C`.
    pub c: DMatrix<f64>,
    /// Observer injection gain `L`.
    pub lgain: DMatrix<f64>,
    /// Innovation weight `Q ≻ 0` (block diagonal over nodes).
    pub q: DMatrix<f64>,
    /// Per-node disturbance weights `μ_i > 0`.
    pub mu: Vec<f64>,
    /// Per-node L2 gains `γ_i > 0`.
    pub gamma: Vec<f64>,
    /// Per-node output dimensions `m_i`.
    pub output_dims: Vec<usize>,
    /// Certificate decay rate `ρ_V > 0`.
    pub rho_v: f64,
    /// Relaxation constant `θ > 0`.
    pub theta: f64,
}

impl LmiProblem {
    /// Builds and validates a problem.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        lgain: DMatrix<f64>,
        q: DMatrix<f64>,
        mu: Vec<f64>,
        gamma: Vec<f64>,
        output_dims: Vec<usize>,
        rho_v: f64,
        theta: f64,
    ) -> Result<Self, LmiError> {
        let problem = Self {
            a,
            c,
            lgain,
            q,
            mu,
            gamma,
            output_dims,
            rho_v,
            theta,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Stacked output dimension m.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Number of sensor nodes.
    pub fn num_nodes(&self) -> usize {
        self.output_dims.len()
    }

    /// Checks shapes, positivity of `Q`, and scalar ranges.
    pub fn validate(&self) -> Result<(), LmiError> {
        let n = self.a.nrows();
        let m = self.c.nrows();
        let shape = |what, want: (usize, usize), got: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(LmiError::Shape {
                    what,
                    want_rows: want.0,
                    want_cols: want.1,
                    got_rows: got.0,
                    got_cols: got.1,
                })
            }
        };
        shape("A", (n, n), self.a.shape())?;
        shape("C", (m, n), self.c.shape())?;
        shape("L", (n, m), self.lgain.shape())?;
        shape("Q", (m, m), self.q.shape())?;
        if self.mu.is_empty()
            || self.mu.len() != self.gamma.len()
            || self.mu.len() != self.output_dims.len()
        {
            return Err(LmiError::NodeVectors {
                mu: self.mu.len(),
                gamma: self.gamma.len(),
                dims: self.output_dims.len(),
            });
        }
        let sum: usize = self.output_dims.iter().sum();
        if sum != m {
            return Err(LmiError::OutputDimsSum { sum, m });
        }
        let q_asym = (&self.q - self.q.transpose()).norm();
        if q_asym > 1e-12 * (1.0 + self.q.norm()) || self.q.clone().cholesky().is_none() {
            return Err(LmiError::WeightNotPositive);
        }
        let positive = |name, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(LmiError::BadScalar { name, value })
            }
        };
        positive("rho_v", self.rho_v)?;
        positive("theta", self.theta)?;
        for (&mu, &gamma) in self.mu.iter().zip(&self.gamma) {
            positive("mu", mu)?;
            positive("gamma", gamma)?;
        }
        Ok(())
    }

    /// Closed-loop error matrix `A + LC`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.lgain * &self.c
    }

    /// The constant (P-independent) part of the Λ block,
    /// `AᵀCᵀCA + CᵀQC`, symmetrized.
    pub fn constant_term(&self) -> DMatrix<f64> {
        let ca = &self.c * &self.a;
        let q = symmetrize(&self.q);
        let s = ca.transpose() * &ca + self.c.transpose() * q * &self.c;
        symmetrize(&s)
    }

    /// The diagonal node block `Γ = blkdiag((μ_i − γ_i²)·I_{m_i})`.
    pub fn gamma_block(&self) -> DMatrix<f64> {
        let m = self.output_dim();
        let mut block = DMatrix::zeros(m, m);
        let mut row = 0;
        for ((&mu, &gamma), &dim) in self.mu.iter().zip(&self.gamma).zip(&self.output_dims) {
            for k in 0..dim {
                block[(row + k, row + k)] = mu - gamma * gamma;
            }
            row += dim;
        }
        block
    }
}

/// Verification artifact: extreme eigenvalues and the feasibility verdict.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LmiReport {
    /// Top eigenvalue of the assembled condition matrix.
    pub max_eigenvalue: f64,
    /// Bottom eigenvalue of the candidate certificate `P`.
    pub p_min_eigenvalue: f64,
    /// `max_eigenvalue ≤ tol` and `p_min_eigenvalue > 0`.
    pub feasible: bool,
    /// Frobenius norm of the assembled matrix (the scale reference for
    /// [`scaled_tolerance`]).
    pub residual_norm: f64,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric_p(problem: &LmiProblem, p: &DMatrix<f64>) -> Result<(), LmiError> {
    let n = problem.state_dim();
    if p.shape() != (n, n) {
        return Err(LmiError::Shape {
            what: "P",
            want_rows: n,
            want_cols: n,
            got_rows: p.nrows(),
            got_cols: p.ncols(),
        });
    }
    let asymmetry = (p - p.transpose()).norm();
    if asymmetry > 1e-9 * (1.0 + p.norm()) {
        return Err(LmiError::AsymmetricP { asymmetry });
    }
    Ok(())
}

/// Assembles the symmetric condition matrix for a candidate certificate.
///
/// The output is (n+3m)×(n+3m) and exactly symmetric: the Λ block and the
/// innovation weight are explicitly symmetrized and every off-diagonal block
/// is mirrored by transposition. Assembly is affine in `P`.
pub fn assemble_lmi(problem: &LmiProblem, p: &DMatrix<f64>) -> Result<DMatrix<f64>, LmiError> {
    problem.validate()?;
    check_symmetric_p(problem, p)?;
    let n = problem.state_dim();
    let m = problem.output_dim();

    let acl = problem.closed_loop();
    let lambda = symmetrize(&(acl.transpose() * p + p * &acl + p * problem.rho_v));
    let lambda = lambda + problem.constant_term();
    let minus_pl = -(p * &problem.lgain);
    let q = symmetrize(&problem.q);
    let minus_cq = -(problem.c.transpose() * &q);

    let size = n + 3 * m;
    let mut out = DMatrix::zeros(size, size);
    out.view_mut((0, 0), (n, n)).copy_from(&lambda);
    for (col, block) in [
        (n, &minus_pl),
        (n + m, &minus_pl),
        (n + 2 * m, &minus_cq),
    ] {
        out.view_mut((0, col), (n, m)).copy_from(block);
        out.view_mut((col, 0), (m, n)).copy_from(&block.transpose());
    }
    out.view_mut((n, n), (m, m)).copy_from(&problem.gamma_block());
    let theta_eye = DMatrix::identity(m, m) * problem.theta;
    out.view_mut((n + m, n + m), (m, m)).copy_from(&(-&theta_eye));
    out.view_mut((n + 2 * m, n + 2 * m), (m, m))
        .copy_from(&(q - theta_eye));
    Ok(out)
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>, LmiError> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or(LmiError::EigenFailure)?;
    Ok(eig.eigenvalues.iter().copied().collect())
}

/// Assembles the condition for `p` and reports its top eigenvalue, the
/// bottom eigenvalue of `p`, and the feasibility verdict at threshold `tol`
/// (absolute; use [`scaled_tolerance`] of the report's `residual_norm` for
/// the scale-aware default, or call [`verify_lmi_scaled`]).
pub fn verify_lmi(
    problem: &LmiProblem,
    p: &DMatrix<f64>,
    tol: f64,
) -> Result<LmiReport, LmiError> {
    let assembled = assemble_lmi(problem, p)?;
    let residual_norm = assembled.norm();
    let eigs = symmetric_eigenvalues(&assembled)?;
    let max_eigenvalue = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_eigs = symmetric_eigenvalues(p)?;
    let p_min_eigenvalue = p_eigs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LmiReport {
        max_eigenvalue,
        p_min_eigenvalue,
        feasible: max_eigenvalue <= tol && p_min_eigenvalue > 0.0,
        residual_norm,
    })
}

/// [`verify_lmi`] with the scale-aware threshold
/// `10⁻⁶ · (1 + ‖M‖_F)` evaluated on the assembled matrix itself.
pub fn verify_lmi_scaled(problem: &LmiProblem, p: &DMatrix<f64>) -> Result<LmiReport, LmiError> {
    let assembled = assemble_lmi(problem, p)?;
    let residual_norm = assembled.norm();
    let tol = scaled_tolerance(residual_norm);
    let eigs = symmetric_eigenvalues(&assembled)?;
    let max_eigenvalue = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_eigs = symmetric_eigenvalues(p)?;
    let p_min_eigenvalue = p_eigs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LmiReport {
        max_eigenvalue,
        p_min_eigenvalue,
        feasible: max_eigenvalue <= tol && p_min_eigenvalue > 0.0,
        residual_norm,
    })
}
