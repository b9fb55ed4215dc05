//! Saddle-point diagnostics.
//!
//! The saddle function is `F(x, w) = ½‖Kx − y‖² + ⟨Ax, w⟩ − H*(w)`, where
//! `H*` is the indicator of the per-block dual-norm ball of radius `λ`. For a
//! saddle point `(x̂, ŵ)` the gap `G(x, w) = F(x, ŵ) − F(x̂, w)` is
//! non-negative and bounded below by `½‖K(x̂ − x)‖²`.
//!
//! # Variables of the scaled iteration
//!
//! The solver runs the step-size form with `τ, σ`. Renaming
//! `K' = √τ K`, `A' = √σ A`, `y' = √τ y` and `w' = τ w / √σ` turns it into the
//! unit-step iteration, whose saddle function is `F' = τ F` (and `G' = τ G`).
//! The error norm that decreases monotonically there,
//! `‖x − x̂‖² + ‖B'(w' − ŵ')‖²` with `B'ᵀB' = I − A'A'ᵀ`, reads in solver
//! variables
//!
//! ```text
//! Mₙ = ‖xⁿ − x̂‖² + (τ²/σ) ‖B(wⁿ − ŵ)‖²,   BᵀB = I − σAAᵀ,
//! ```
//!
//! and the ergodic bound for the Cesàro means `x̃ᴺ, w̃ᴺ` of iterates `1..=N`
//! (valid when `τ‖K‖² ≤ 1`) becomes
//!
//! ```text
//! 0 ≤ τ·G(x̃ᴺ, w̃ᴺ) ≤ (‖x̂ − x⁰‖² + (τ²/σ)‖ŵ − w⁰‖²) / 2N.
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::solver::{default_steps, lv_solve, Problem, SolverConfig, SolverTrace, DEFAULT_STEP_MARGIN};
use crate::vector;

/// Relative slack on `λ` when deciding whether `w` is dual-feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const CERTIFY_TOL: f64 = 1e-10;
pub const REFERENCE_MAX_ITER: usize = 1_000_000;
pub const REFERENCE_FP_TOL: f64 = 1e-12;
/// Multiplicative and absolute slack for the ergodic rate bound.
pub const RATE_REL_SLACK: f64 = 1e-8;
pub const RATE_ABS_SLACK: f64 = 1e-12;
/// Lowest gap accepted as non-negative.
pub const GAP_FLOOR: f64 = -1e-10;
/// Allowed increase of the error norm per step, relative to `M₀`.
pub const MONOTONE_REL_SLACK: f64 = 1e-10;
/// Absolute floor on the monotonicity slack, for traces started at the
/// reference where `M₀ = 0`.
pub const MONOTONE_ABS_SLACK: f64 = 1e-30;

/// `F(x, w)`; an infeasible `w` (where `F = −∞`) is reported as
/// [`Error::InfeasibleDual`].
pub fn saddle_value(problem: &Problem, x: &[f64], w: &[f64]) -> Result<f64> {
    check_len("primal vector", problem.dim(), x.len())?;
    check_len("dual vector", problem.dual_dim(), w.len())?;
    problem
        .penalty()
        .check_dual_feasible(problem.a().layout(), w, FEASIBILITY_TOL)?;
    let kx = problem.k().apply(x)?;
    let ax = problem.a().apply(x)?;
    Ok(0.5 * vector::dist(&kx, problem.y()).powi(2) + vector::dot(&ax, w))
}

/// Both optimality residuals at `(x, w)`, on the same scale as the solver's
/// fixed-point residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// `‖τKᵀ(y − Kx) − τAᵀw‖`
    pub primal_residual: f64,
    /// `‖w − prox_{H*}(w + (σ/τ)Ax)‖`
    pub dual_residual: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn kkt_check(problem: &Problem, x: &[f64], w: &[f64], tau: f64, sigma: f64, tol: f64) -> Result<KktReport> {
    let (primal, dual) = problem.residual_parts(x, w, tau, sigma)?;
    Ok(KktReport {
        primal_residual: primal,
        dual_residual: dual,
        tol,
        passed: primal <= tol && dual <= tol,
    })
}

/// Approximate saddle point together with the certificate that qualified it.
#[derive(Debug, Clone, Serialize)]
pub struct Reference {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub tau: f64,
    pub sigma: f64,
    pub objective: f64,
    pub iterations: usize,
    pub report: KktReport,
}

impl Reference {
    /// Wrap `(x, w)` as a reference; fails unless the KKT check passes at `tol`.
    pub fn certify(problem: &Problem, x: Vec<f64>, w: Vec<f64>, tau: f64, sigma: f64, tol: f64) -> Result<Self> {
        let report = kkt_check(problem, &x, &w, tau, sigma, tol)?;
        if !report.passed {
            return Err(Error::Uncertified {
                primal: report.primal_residual,
                dual: report.dual_residual,
                tol,
            });
        }
        let objective = problem.objective(&x)?;
        Ok(Self {
            x,
            w,
            tau,
            sigma,
            objective,
            iterations: 0,
            report,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptions {
    pub max_iter: usize,
    pub fp_tol: f64,
    pub certify_tol: f64,
    /// Step sizes; defaults from the operator norm bounds when absent.
    pub steps: Option<(f64, f64)>,
    pub x0: Option<Vec<f64>>,
    pub w0: Option<Vec<f64>>,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            max_iter: REFERENCE_MAX_ITER,
            fp_tol: REFERENCE_FP_TOL,
            certify_tol: CERTIFY_TOL,
            steps: None,
            x0: None,
            w0: None,
        }
    }
}

/// Long solver run followed by certification.
pub fn reference_solution(problem: &Problem, opts: &ReferenceOptions) -> Result<Reference> {
    let (tau, sigma) = match opts.steps {
        Some(s) => s,
        None => default_steps(problem, DEFAULT_STEP_MARGIN)?,
    };
    let cfg = SolverConfig::new(problem, tau, sigma)?
        .max_iter(opts.max_iter)
        .fp_tol(opts.fp_tol)
        .start(opts.x0.clone(), opts.w0.clone());
    let res = lv_solve(problem, &cfg)?;
    let mut reference = Reference::certify(problem, res.x, res.w, tau, sigma, opts.certify_tol)?;
    reference.iterations = res.iterations;
    Ok(reference)
}

fn require_certified(reference: &Reference) -> Result<()> {
    if reference.report.passed {
        Ok(())
    } else {
        Err(Error::Uncertified {
            primal: reference.report.primal_residual,
            dual: reference.report.dual_residual,
            tol: reference.report.tol,
        })
    }
}

/// `G(x, w) = F(x, ŵ) − F(x̂, w)` against a certified reference.
pub fn gap(problem: &Problem, x: &[f64], w: &[f64], reference: &Reference) -> Result<f64> {
    require_certified(reference)?;
    let g = saddle_value(problem, x, &reference.w)? - saddle_value(problem, &reference.x, w)?;
    if cfg!(debug_assertions) {
        // The two forms differ by ⟨x − x̂, Kᵀ(Kx̂ − y) + Aᵀŵ⟩, which vanishes
        // at an exact saddle point and is bounded by the certificate otherwise.
        let closed = gap_closed_form(problem, x, w, reference)?;
        let stationarity = reference.report.primal_residual / reference.tau;
        let allowed = 1e-10 * (1.0 + g.abs().max(closed.abs()))
            + vector::dist(x, &reference.x) * stationarity * (1.0 + 1e-8);
        debug_assert!(
            (g - closed).abs() <= allowed,
            "gap forms disagree: {g} vs {closed} (allowed {allowed})"
        );
    }
    Ok(g)
}

/// `½‖K(x̂ − x)‖² + ⟨ŵ − w, Ax̂⟩` (the conjugate terms vanish for feasible
/// duals).
pub fn gap_closed_form(problem: &Problem, x: &[f64], w: &[f64], reference: &Reference) -> Result<f64> {
    require_certified(reference)?;
    check_len("primal vector", problem.dim(), x.len())?;
    problem
        .penalty()
        .check_dual_feasible(problem.a().layout(), w, FEASIBILITY_TOL)?;
    let kd = problem.k().apply(&vector::sub(&reference.x, x))?;
    let ax_ref = problem.a().apply(&reference.x)?;
    Ok(0.5 * vector::norm_sq(&kd) + vector::dot(&vector::sub(&reference.w, w), &ax_ref))
}

fn snapshots(trace: &SolverTrace) -> Result<&[crate::solver::Snapshot]> {
    match trace.snapshots.as_deref() {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Error::MissingSnapshots),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// Number of averaging lengths `N` evaluated.
    pub checked: usize,
    /// Smallest `bound(N) − τG(x̃ᴺ, w̃ᴺ)` over all `N`, with the bound including
    /// its slack; negative means a violation.
    pub worst_margin: f64,
    /// `N` attaining `worst_margin`.
    pub worst_n: usize,
    pub min_gap: f64,
    pub max_ratio: f64,
    pub passed: bool,
}

/// Checks the ergodic `1/N` bound on the Cesàro means for every `N` in a
/// trace with snapshots. Requires `τ·‖K‖²` (via its bound) at most one.
pub fn rate_bound_check(
    problem: &Problem,
    trace: &SolverTrace,
    reference: &Reference,
    tau: f64,
    sigma: f64,
) -> Result<RateReport> {
    require_certified(reference)?;
    let snaps = snapshots(trace)?;
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(Error::StepSize(format!("invalid steps tau={tau}, sigma={sigma}")));
    }
    let k_scaled = tau * problem.k_norm_sq_bound();
    if k_scaled > 1.0 + 1e-12 {
        return Err(Error::StepSize(format!(
            "rate bound needs tau*|K|^2 <= 1, got {k_scaled}"
        )));
    }
    let weight = tau * tau / sigma;
    let x0 = &snaps[0].x;
    let w0 = &snaps[0].w;
    let numerator = vector::dist(&reference.x, x0).powi(2) + weight * vector::dist(&reference.w, w0).powi(2);

    let mut x_sum = vec![0.0; problem.dim()];
    let mut w_sum = vec![0.0; problem.dual_dim()];
    let mut report = RateReport {
        checked: 0,
        worst_margin: f64::INFINITY,
        worst_n: 0,
        min_gap: f64::INFINITY,
        max_ratio: 0.0,
        passed: true,
    };
    for (n, snap) in snaps.iter().enumerate().skip(1) {
        for (s, v) in x_sum.iter_mut().zip(&snap.x) {
            *s += v;
        }
        for (s, v) in w_sum.iter_mut().zip(&snap.w) {
            *s += v;
        }
        let inv = 1.0 / n as f64;
        let x_avg = vector::scale(&x_sum, inv);
        let w_avg = vector::scale(&w_sum, inv);
        let g = tau * gap(problem, &x_avg, &w_avg, reference)?;
        let bound = numerator / (2.0 * n as f64);
        let margin = bound * (1.0 + RATE_REL_SLACK) + RATE_ABS_SLACK - g;
        report.checked += 1;
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_n = n;
        }
        report.min_gap = report.min_gap.min(g);
        if bound > 0.0 {
            report.max_ratio = report.max_ratio.max(g / bound);
        }
        if margin < 0.0 || g < GAP_FLOOR {
            report.passed = false;
        }
    }
    if report.checked == 0 {
        return Err(Error::MissingSnapshots);
    }
    Ok(report)
}

/// Principal square root `B` of `I − σAAᵀ`.
pub fn dual_metric_root(problem: &Problem, sigma: f64) -> Result<DMatrix<f64>> {
    let a = problem.a();
    let (m, n) = (a.out_dim(), a.in_dim());
    let am = DMatrix::from_row_slice(m, n, &a.to_dense());
    let mut q = -(&am * am.transpose()) * sigma;
    for i in 0..m {
        q[(i, i)] += 1.0;
    }
    let q = (&q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(q, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigen-decomposition did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let min = eig.eigenvalues.min();
    let scale = 1e-12 * (1.0 + sigma * a.norm_sq_bound());
    if min < -scale {
        return Err(Error::StepSize(format!(
            "I - sigma*A*A^T is indefinite (smallest eigenvalue {min:e}); need sigma*|A|^2 < 1"
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub steps: usize,
    pub m0: f64,
    pub m_final: f64,
    /// Largest `Mₙ₊₁ − Mₙ` over the trace.
    pub max_increase: f64,
    /// Step `n` at which `max_increase` occurs (from `n` to `n + 1`).
    pub worst_step: usize,
    pub slack: f64,
    pub passed: bool,
}

/// Error norm `Mₙ` for each snapshot.
pub fn error_norms(problem: &Problem, trace: &SolverTrace, reference: &Reference, tau: f64, sigma: f64) -> Result<Vec<f64>> {
    let snaps = snapshots(trace)?;
    let b = dual_metric_root(problem, sigma)?;
    let weight = tau * tau / sigma;
    snaps
        .iter()
        .map(|s| {
            check_len("snapshot dual", problem.dual_dim(), s.w.len())?;
            let dx = vector::dist(&s.x, &reference.x).powi(2);
            let dw = DVector::from_vec(vector::sub(&s.w, &reference.w));
            Ok(dx + weight * (&b * dw).norm_squared())
        })
        .collect()
}

/// Checks `Mₙ₊₁ ≤ Mₙ + 1e-10·M₀` along a trace with snapshots. The objective
/// is deliberately not required to decrease.
pub fn monotonicity_check(
    problem: &Problem,
    trace: &SolverTrace,
    reference: &Reference,
    tau: f64,
    sigma: f64,
) -> Result<MonotonicityReport> {
    require_certified(reference)?;
    let m = error_norms(problem, trace, reference, tau, sigma)?;
    let slack = MONOTONE_REL_SLACK * m[0] + MONOTONE_ABS_SLACK;
    let (worst_step, max_increase) = m
        .windows(2)
        .enumerate()
        .map(|(n, p)| (n, p[1] - p[0]))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let all_finite = m.iter().all(|v| v.is_finite());
    Ok(MonotonicityReport {
        steps: m.len() - 1,
        m0: m[0],
        m_final: m[m.len() - 1],
        max_increase,
        worst_step,
        slack,
        passed: all_finite && (m.len() < 2 || max_increase <= slack),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{GridShape, LinearOp};
    use crate::prox::Penalty;
    use crate::solver::TraceMode;

    fn tv_pair(y: [f64; 2], lambda: f64) -> Problem {
        Problem::new(
            LinearOp::identity(2).unwrap(),
            LinearOp::gradient(GridShape::OneD(2)).unwrap(),
            y.to_vec(),
            Penalty::euclidean(lambda).unwrap(),
        )
        .unwrap()
    }

    /// y = (0, 10), λ = 1: x̂ = (1, 9), Kᵀ(y − Kx̂) = (−1, 1) = Aᵀŵ gives ŵ = 1.
    fn exact_reference(p: &Problem) -> Reference {
        Reference::certify(p, vec![1.0, 9.0], vec![1.0], 0.99, 0.2, 1e-14).unwrap()
    }

    #[test]
    fn saddle_value_examples() {
        let p = tv_pair([0.0, 10.0], 1.0);
        assert_eq!(saddle_value(&p, &[2.0, 3.0], &[0.0]).unwrap(), 0.5 * (4.0 + 49.0));
        // maximizing w = λ·Ax/|Ax| recovers the objective
        let x = [2.0, 3.0];
        assert_eq!(saddle_value(&p, &x, &[1.0]).unwrap(), p.objective(&x).unwrap());
        assert!(matches!(saddle_value(&p, &x, &[3.0]), Err(Error::InfeasibleDual { .. })));
    }

    #[test]
    fn kkt_examples() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let r = kkt_check(&p, &[1.0, 9.0], &[1.0], 0.5, 0.2, 1e-12).unwrap();
        assert!(r.passed && r.primal_residual == 0.0 && r.dual_residual == 0.0);
        // least squares x = y with w = 0: the dual equation fails
        let r = kkt_check(&p, &[0.0, 10.0], &[0.0], 0.5, 0.2, 1e-8).unwrap();
        assert!(!r.passed && r.primal_residual == 0.0 && r.dual_residual > 0.1);
        let z = tv_pair([0.0, 0.0], 1.0);
        let r = kkt_check(&z, &[0.0, 0.0], &[0.0], 0.5, 0.2, 0.0).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn gap_examples_and_bounds() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let r = exact_reference(&p);
        assert!(gap(&p, &r.x, &r.w, &r).unwrap().abs() <= 1e-10);
        let mut seed = 12345u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let x = [20.0 * rnd() - 5.0, 20.0 * rnd() - 5.0];
            let w = [2.0 * rnd() - 1.0];
            let g = gap(&p, &x, &w, &r).unwrap();
            let c = gap_closed_form(&p, &x, &w, &r).unwrap();
            assert!((g - c).abs() <= 1e-10 * g.abs().max(1.0), "{g} vs {c}");
            let kd = vector::dist(&x, &r.x).powi(2) * 0.5;
            assert!(g >= kd - 1e-10);
            assert!(g >= -1e-10);
        }
    }

    #[test]
    fn uncertified_reference_is_rejected() {
        let p = tv_pair([0.0, 10.0], 1.0);
        assert!(matches!(
            Reference::certify(&p, vec![0.0, 10.0], vec![0.0], 0.5, 0.2, 1e-8),
            Err(Error::Uncertified { .. })
        ));
        let mut r = exact_reference(&p);
        r.report.passed = false;
        assert!(matches!(gap(&p, &r.x, &r.w, &r), Err(Error::Uncertified { .. })));
    }

    #[test]
    fn reference_solution_matches_closed_form() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let r = reference_solution(&p, &ReferenceOptions::default()).unwrap();
        assert!(vector::max_abs_diff(&r.x, &[1.0, 9.0]) <= 1e-9);
        assert!(r.report.primal_residual <= 1e-10 && r.report.dual_residual <= 1e-10);

        let q = tv_pair([2.0, -3.0], 1e-12);
        let r = reference_solution(&q, &ReferenceOptions::default()).unwrap();
        assert!(vector::max_abs_diff(&r.x, &[2.0, -3.0]) <= 1e-9);
    }

    #[test]
    fn checks_need_snapshots() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let r = exact_reference(&p);
        let cfg = SolverConfig::new(&p, 0.5, 0.2).unwrap().max_iter(5).trace(TraceMode::Rows);
        let trace = lv_solve(&p, &cfg).unwrap().trace.unwrap();
        assert_eq!(rate_bound_check(&p, &trace, &r, 0.5, 0.2), Err(Error::MissingSnapshots));
        assert_eq!(monotonicity_check(&p, &trace, &r, 0.5, 0.2), Err(Error::MissingSnapshots));
    }

    #[test]
    fn started_at_reference() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let r = exact_reference(&p);
        let cfg = SolverConfig::new(&p, 0.5, 0.2)
            .unwrap()
            .max_iter(3)
            .fp_tol(-0.0)
            .trace(TraceMode::Snapshots)
            .start(Some(r.x.clone()), Some(r.w.clone()));
        let res = lv_solve(&p, &cfg).unwrap();
        let trace = res.trace.unwrap();
        // residual is exactly zero at the start, so the solve stops immediately
        assert_eq!(res.iterations, 0);
        assert_eq!(trace.snapshots.as_ref().unwrap().len(), 1);
        let m = monotonicity_check(&p, &trace, &r, 0.5, 0.2).unwrap();
        assert!(m.passed && m.m0 <= 1e-18);
        assert_eq!(rate_bound_check(&p, &trace, &r, 0.5, 0.2), Err(Error::MissingSnapshots));
    }

    #[test]
    fn rate_and_monotonicity_on_tv_pair() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let r = exact_reference(&p);
        let (tau, sigma) = (1.0 / p.k_norm_sq_bound(), 0.2);
        let cfg = SolverConfig::new(&p, tau, sigma)
            .unwrap()
            .max_iter(200)
            .fp_tol(0.0)
            .trace(TraceMode::Snapshots);
        let trace = lv_solve(&p, &cfg).unwrap().trace.unwrap();
        let rate = rate_bound_check(&p, &trace, &r, tau, sigma).unwrap();
        assert!(rate.passed, "{rate:?}");
        assert_eq!(rate.checked, trace.rows.len());
        assert!(rate.checked >= 5);
        let mono = monotonicity_check(&p, &trace, &r, tau, sigma).unwrap();
        assert!(mono.passed, "{mono:?}");
        assert!(mono.m_final < mono.m0);
    }

    #[test]
    fn rate_check_rejects_large_tau() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let r = exact_reference(&p);
        let cfg = SolverConfig::new(&p, 1.5, 0.2).unwrap().max_iter(3).trace(TraceMode::Snapshots);
        let trace = lv_solve(&p, &cfg).unwrap().trace.unwrap();
        assert!(matches!(rate_bound_check(&p, &trace, &r, 1.5, 0.2), Err(Error::StepSize(_))));
    }

    #[test]
    fn metric_root_squares_back() {
        let a = LinearOp::gradient(GridShape::TwoD { rows: 3, cols: 4 }).unwrap();
        let p = Problem::new(LinearOp::identity(12).unwrap(), a, vec![0.0; 12], Penalty::euclidean(1.0).unwrap()).unwrap();
        let sigma = 0.9 / p.a_norm_sq_bound();
        let b = dual_metric_root(&p, sigma).unwrap();
        // ‖Bv‖² = ‖v‖² − σ‖Aᵀv‖² for any v
        let v: Vec<f64> = (0..p.dual_dim()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let lhs = (&b * DVector::from_vec(v.clone())).norm_squared();
        let rhs = vector::norm_sq(&v) - sigma * vector::norm_sq(&p.a().adjoint_apply(&v).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12 * vector::norm_sq(&v));
        assert!((&b - b.transpose()).amax() <= 1e-14);
        assert!(matches!(dual_metric_root(&p, 2.0 / p.a_norm_sq_bound()), Err(Error::StepSize(_))));
    }
}
