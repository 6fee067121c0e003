//! Certificate solver: projected subgradient descent on the top eigenvalue
//! of the assembled design condition over the cone `{P = Pᵀ ⪰ εI}`.
//!
//! The problem is small (one symmetric matrix variable), so a self-contained
//! first-order method beats an external semidefinite-programming dependency.
//! Strategy: a Lyapunov-equation warm start that makes the Λ block exactly
//! `−I`, a scalar sweep along that ray, then Polyak-stepped subgradient
//! iterations on a diagonally rescaled copy of the condition (the relaxation
//! constant `θ` makes raw entries span many orders of magnitude, which stalls
//! unscaled descent). Feasibility is always judged on the *raw* matrix with
//! the scale-aware threshold, so the rescaling cannot change the verdict.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lmi::{
    assemble_lmi, scaled_tolerance, verify_lmi, LmiError, LmiProblem, LmiReport,
};

/// Budget and tolerance knobs for [`solve_p`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Subgradient iterations per start.
    pub max_iters: usize,
    /// Random restarts after the warm start (0 = warm start only).
    pub restarts: usize,
    /// Eigenvalue floor ε of the search cone `{P ⪰ εI}`.
    pub min_eig: f64,
    /// Seed for the restart perturbations.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            restarts: 4,
            min_eig: 1e-6,
            seed: 0x5eed,
        }
    }
}

/// Result of a [`solve_p`] run.
#[derive(Debug, Clone)]
pub enum SolveOutcome {
    /// A certificate meeting the scale-aware feasibility threshold.
    Feasible {
        p: DMatrix<f64>,
        report: LmiReport,
        iterations: usize,
    },
    /// No certificate within budget; the best candidate distinguishes
    /// "likely infeasible" (top eigenvalue stuck far above zero) from a
    /// merely exhausted budget (top eigenvalue near the threshold).
    BudgetExhausted {
        best_p: DMatrix<f64>,
        best_report: LmiReport,
        iterations: usize,
    },
}

impl SolveOutcome {
    /// Whether a feasible certificate was found.
    pub fn is_feasible(&self) -> bool {
        matches!(self, SolveOutcome::Feasible { .. })
    }

    /// The feasible certificate, if any.
    pub fn certificate(&self) -> Option<&DMatrix<f64>> {
        match self {
            SolveOutcome::Feasible { p, .. } => Some(p),
            SolveOutcome::BudgetExhausted { .. } => None,
        }
    }

    /// The verification report of the returned (best) candidate.
    pub fn report(&self) -> &LmiReport {
        match self {
            SolveOutcome::Feasible { report, .. } => report,
            SolveOutcome::BudgetExhausted { best_report, .. } => best_report,
        }
    }

    /// Total subgradient iterations spent.
    pub fn iterations(&self) -> usize {
        match self {
            SolveOutcome::Feasible { iterations, .. }
            | SolveOutcome::BudgetExhausted { iterations, .. } => *iterations,
        }
    }
}

/// Solves `aᵀX + Xa = rhs` for `X` through the Kronecker-vectorized linear
/// system. Intended for small state dimensions; fails when `a` has a pair of
/// eigenvalues summing to zero (the equation is then singular).
pub fn lyapunov_equation(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, LmiError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LmiError::Shape {
            what: "a",
            want_rows: n,
            want_cols: n,
            got_rows: a.nrows(),
            got_cols: a.ncols(),
        });
    }
    if rhs.shape() != (n, n) {
        return Err(LmiError::Shape {
            what: "rhs",
            want_rows: n,
            want_cols: n,
            got_rows: rhs.nrows(),
            got_cols: rhs.ncols(),
        });
    }
    let eye = DMatrix::identity(n, n);
    let at = a.transpose();
    // vec(aᵀX) = (I⊗aᵀ)vec(X), vec(Xa) = (aᵀ⊗I)vec(X), column-major vec.
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let vec_rhs = DVector::from_column_slice(rhs.as_slice());
    let solution = system
        .lu()
        .solve(&vec_rhs)
        .ok_or(LmiError::SingularLyapunov)?;
    Ok(DMatrix::from_column_slice(n, n, solution.as_slice()))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, LmiError> {
    SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000).ok_or(LmiError::EigenFailure)
}

/// Projects a symmetric matrix onto `{P ⪰ floor·I}` by eigenvalue clamping.
fn project_to_cone(p: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>, LmiError> {
    let mut eig = sym_eigen(&symmetrize(p))?;
    for v in eig.eigenvalues.iter_mut() {
        *v = v.max(floor);
    }
    let projected = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues)
        * eig.eigenvectors.transpose();
    Ok(symmetrize(&projected))
}

/// Diagonal rescaling that brings the constant blocks of the condition to
/// unit order: identity over the state block, `1/√|block diagonal|` over the
/// node, noise, and innovation blocks (floored at 1 so degenerate data
/// cannot amplify anything).
fn diagonal_scaling(problem: &LmiProblem) -> DVector<f64> {
    let n = problem.state_dim();
    let m = problem.output_dim();
    let mut d = DVector::from_element(n + 3 * m, 1.0);
    let gamma_block = problem.gamma_block();
    for k in 0..m {
        d[n + k] = 1.0 / gamma_block[(k, k)].abs().max(1.0).sqrt();
        d[n + m + k] = 1.0 / problem.theta.max(1.0).sqrt();
        d[n + 2 * m + k] = 1.0 / (problem.q[(k, k)] - problem.theta).abs().max(1.0).sqrt();
    }
    d
}

fn scale_matrix(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[(i, j)] *= d[i] * d[j];
        }
    }
    out
}

struct DescentOutcome {
    feasible: Option<DMatrix<f64>>,
    best_raw_value: f64,
    best_raw_p: DMatrix<f64>,
    iterations: usize,
}

/// One subgradient descent from `p0`; stops early on raw feasibility.
fn descend(
    problem: &LmiProblem,
    p0: DMatrix<f64>,
    d: &DVector<f64>,
    max_iters: usize,
    min_eig: f64,
) -> Result<DescentOutcome, LmiError> {
    let n = problem.state_dim();
    let m = problem.output_dim();
    let acl = problem.closed_loop();

    let mut p = project_to_cone(&p0, min_eig)?;
    // Seed the Polyak target from the start point so the moving target
    // `best − δ` is finite from the first step.
    let seed_scaled = scale_matrix(&assemble_lmi(problem, &p)?, d);
    let seed_top = seed_scaled
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut best_scaled = seed_top;
    let mut best_p = p.clone();
    let mut best_raw_value = f64::INFINITY;
    let mut best_raw_p = p.clone();
    let mut delta = (0.1 * seed_top.abs()).max(1e-3);
    let mut stalled_for = 0usize;
    let mut iterations = 0usize;

    for _ in 0..max_iters {
        iterations += 1;
        let raw = assemble_lmi(problem, &p)?;
        let raw_top = raw
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if raw_top < best_raw_value {
            best_raw_value = raw_top;
            best_raw_p = p.clone();
        }
        if raw_top <= scaled_tolerance(raw.norm()) {
            return Ok(DescentOutcome {
                feasible: Some(p),
                best_raw_value,
                best_raw_p,
                iterations,
            });
        }

        let scaled = scale_matrix(&raw, d);
        let eig = sym_eigen(&scaled)?;
        let (top_idx, top_value) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        if top_value < best_scaled - 1e-12 * (1.0 + best_scaled.abs()) {
            best_scaled = top_value;
            best_p = p.clone();
            stalled_for = 0;
        } else {
            stalled_for += 1;
            if stalled_for >= 100 {
                // Tighten the target and resume from the incumbent.
                delta = (delta * 0.5).max(1e-9);
                stalled_for = 0;
                p = best_p.clone();
                continue;
            }
        }

        // Subgradient of the top eigenvalue of D·M(P)·D with respect to P:
        // with v the top unit eigenvector and u = D∘v, only the Λ block and
        // the two −PL blocks depend on P, giving
        //   G = a u₁ᵀ + u₁ aᵀ + ρ_V u₁u₁ᵀ − u₁ bᵀ − b u₁ᵀ,
        // where a = (A+LC)u₁ and b = L(u₂+u₃).
        let v = eig.eigenvectors.column(top_idx);
        let u = DVector::from_fn(n + 3 * m, |i, _| d[i] * v[i]);
        let u1 = u.rows(0, n).into_owned();
        let u23 = u.rows(n, m) + u.rows(n + m, m);
        let a_vec = &acl * &u1;
        let b_vec = &problem.lgain * u23;
        let grad = &a_vec * u1.transpose() + &u1 * a_vec.transpose()
            + (&u1 * u1.transpose()) * problem.rho_v
            - &u1 * b_vec.transpose()
            - &b_vec * u1.transpose();
        let grad_norm_sq = grad.norm_squared();
        if grad_norm_sq < 1e-30 {
            break;
        }
        let target = best_scaled - delta;
        let step = (top_value - target).max(0.0) / grad_norm_sq;
        p = project_to_cone(&(&p - grad * step), min_eig)?;
    }

    Ok(DescentOutcome {
        feasible: None,
        best_raw_value,
        best_raw_p,
        iterations,
    })
}

/// Searches for a certificate `P ≻ 0` making the assembled condition
/// negative semidefinite up to the scale-aware threshold.
///
/// Starts from the Lyapunov-equation warm start (which solves the state
/// block exactly when `A+LC+ρ_V/2·I` is Hurwitz), sweeps its scalar
/// multiples, then descends; random symmetric perturbations of the best
/// start fill the remaining restart budget. Deterministic for fixed options.
pub fn solve_p(problem: &LmiProblem, options: &SolveOptions) -> Result<SolveOutcome, LmiError> {
    problem.validate()?;
    if options.max_iters == 0 {
        return Err(LmiError::BadScalar {
            name: "max_iters",
            value: 0.0,
        });
    }
    if !options.min_eig.is_finite() || options.min_eig <= 0.0 {
        return Err(LmiError::BadScalar {
            name: "min_eig",
            value: options.min_eig,
        });
    }
    let n = problem.state_dim();
    let d = diagonal_scaling(problem);

    // Warm start: make the Λ block exactly −I when the shifted closed loop
    // is Hurwitz; otherwise fall back to the identity ray.
    let abar = problem.closed_loop() + DMatrix::identity(n, n) * (problem.rho_v / 2.0);
    let rhs = -(problem.constant_term() + DMatrix::identity(n, n));
    let base = match lyapunov_equation(&abar, &rhs) {
        Ok(solution) => {
            let candidate = symmetrize(&solution);
            let min = candidate
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min > 0.0 {
                candidate
            } else {
                DMatrix::identity(n, n)
            }
        }
        Err(_) => DMatrix::identity(n, n),
    };

    // Scalar sweep along the warm-start ray (the objective is convex in the
    // scale, so a coarse log sweep brackets the best multiple well).
    let mut best_alpha = 1.0;
    let mut best_sweep = f64::INFINITY;
    for k in 0..61 {
        let alpha = 10f64.powf(-3.0 + k as f64 * 0.1);
        let candidate = project_to_cone(&(&base * alpha), options.min_eig)?;
        let scaled = scale_matrix(&assemble_lmi(problem, &candidate)?, &d);
        let top = scaled
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if top < best_sweep {
            best_sweep = top;
            best_alpha = alpha;
        }
    }
    let start = &base * best_alpha;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut iterations = 0usize;
    let mut best_raw_value = f64::INFINITY;
    let mut best_raw_p = start.clone();

    for restart in 0..=options.restarts {
        let p0 = if restart == 0 {
            start.clone()
        } else {
            // Symmetric unit-norm perturbation, growing with the restart
            // index relative to the start's own scale.
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
            let mut jitter = symmetrize(&raw);
            let norm = jitter.norm();
            if norm > 0.0 {
                jitter /= norm;
            }
            let magnitude = 0.3 * restart as f64 * (1.0 + start.norm());
            &start + jitter * magnitude
        };
        let outcome = descend(problem, p0, &d, options.max_iters, options.min_eig)?;
        iterations += outcome.iterations;
        if outcome.best_raw_value < best_raw_value {
            best_raw_value = outcome.best_raw_value;
            best_raw_p = outcome.best_raw_p.clone();
        }
        if let Some(p) = outcome.feasible {
            let assembled = assemble_lmi(problem, &p)?;
            let report = verify_lmi(problem, &p, scaled_tolerance(assembled.norm()))?;
            return Ok(SolveOutcome::Feasible {
                p,
                report,
                iterations,
            });
        }
    }

    let assembled = assemble_lmi(problem, &best_raw_p)?;
    let best_report = verify_lmi(problem, &best_raw_p, scaled_tolerance(assembled.norm()))?;
    Ok(SolveOutcome::BudgetExhausted {
        best_p: best_raw_p,
        best_report,
        iterations,
    })
}
