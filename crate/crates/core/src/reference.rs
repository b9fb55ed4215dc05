//! Special-case algorithms the primal-dual iteration reduces to.
//!
//! * `A` a signed permutation (in particular the identity) with scalar
//!   blocks: iterative soft-thresholding `xⁿ⁺¹ = S_{τλ}(xⁿ + τKᵀ(y − Kxⁿ))`.
//!   With `σ = 1` the primal-dual dual update collapses to
//!   `wⁿ⁺¹ = P_λ(A gⁿ⁺¹/τ)`, hence `xⁿ⁺¹ = Aᵀ S_{τλ}(A gⁿ⁺¹)`, and a signed
//!   permutation commutes with `S_{τλ}`; the two x-sequences agree for any `τ`.
//! * `K` orthogonal: dual gradient projection
//!   `wⁿ⁺¹ = P_λ(wⁿ + σA(g − Aᵀwⁿ))`, `xⁿ = g − Aᵀwⁿ` with `g = Kᵀy`. With
//!   `τ = 1` the primal-dual gradient step returns `Kᵀy` and the dual
//!   sequences agree.

use crate::error::{check_len, Error, Result};
use crate::linops::{BlockLayout, LinearOp};
use crate::prox::{NormKind, Penalty};
use crate::solver::{Problem, Snapshot, SolverResult, SolverTrace, TraceMode, TraceRow, DIVERGENCE_FACTOR};
use crate::vector;

/// Iterative soft-thresholding for `½‖Kx − y‖² + λ‖x‖₁`. `λ = 0` gives the
/// Landweber iteration. Trace rows report the step length `‖xⁿ − xⁿ⁻¹‖` as
/// the residual; the returned `w` is empty.
pub fn ista_solve(
    k: &LinearOp,
    y: &[f64],
    lambda: f64,
    tau: f64,
    max_iter: usize,
    x0: Option<&[f64]>,
    trace: TraceMode,
) -> Result<SolverResult> {
    check_len("data vector", k.out_dim(), y.len())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    if !(tau > 0.0) || tau * k.norm_sq_bound() >= 2.0 {
        return Err(Error::StepSize(format!(
            "tau={tau} violates tau*|K|^2 < 2 (|K|^2 <= {})",
            k.norm_sq_bound()
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let m = k.in_dim();
    let mut x = match x0 {
        Some(v) => {
            check_len("initial primal vector", m, v.len())?;
            v.to_vec()
        }
        None => vec![0.0; m],
    };
    let limit = DIVERGENCE_FACTOR * (1.0 + vector::norm(&x) + vector::norm(y));
    let layout = BlockLayout::scalar(m);
    let shrink = if lambda > 0.0 {
        Some(Penalty::euclidean(tau * lambda)?)
    } else {
        None
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let r = vector::sub(&k.apply(x)?, y);
        Ok(0.5 * vector::norm_sq(&r) + lambda * x.iter().map(|v| v.abs()).sum::<f64>())
    };

    let record = trace != TraceMode::Off;
    let mut rows = Vec::new();
    let mut snapshots = (trace == TraceMode::Snapshots).then(|| {
        vec![Snapshot {
            x: x.clone(),
            w: Vec::new(),
        }]
    });
    let mut x_sum = vec![0.0; m];
    let mut step = 0.0;
    let mut kx = vec![0.0; k.out_dim()];
    let mut grad = vec![0.0; m];
    for n in 1..=max_iter {
        k.apply_into(&x, &mut kx)?;
        for (r, yi) in kx.iter_mut().zip(y) {
            *r = yi - *r;
        }
        k.adjoint_apply_into(&kx, &mut grad)?;
        let g: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + tau * gi).collect();
        let next = match &shrink {
            Some(p) => p.soft_threshold(&layout, &g)?,
            None => g,
        };
        if !vector::all_finite(&next) {
            return Err(Error::NonFinite { iteration: n, field: "x" });
        }
        let norm = vector::norm(&next);
        if norm > limit {
            return Err(Error::Diverged { iteration: n, norm, limit });
        }
        step = vector::dist(&x, &next);
        x = next;
        for (s, v) in x_sum.iter_mut().zip(&x) {
            *s += v;
        }
        if record {
            rows.push(TraceRow {
                n,
                objective: objective(&x)?,
                fp_residual: step,
                dx_norm: step,
                dw_norm: 0.0,
            });
        }
        if let Some(s) = snapshots.as_mut() {
            s.push(Snapshot {
                x: x.clone(),
                w: Vec::new(),
            });
        }
    }
    let n = max_iter as f64;
    Ok(SolverResult {
        x_avg: x_sum.iter().map(|s| s / n).collect(),
        x,
        w: Vec::new(),
        w_avg: Vec::new(),
        iterations: max_iter,
        final_fp_residual: step,
        trace: record.then_some(SolverTrace { rows, snapshots }),
    })
}

/// Dual gradient projection for `½‖x − g‖² + λ Σᵢ |(Ax)ᵢ|` (Euclidean
/// blocks of `A`). Trace rows report `‖wⁿ − wⁿ⁻¹‖` as the residual.
pub fn gradient_projection_solve(
    a: &LinearOp,
    g: &[f64],
    lambda: f64,
    sigma: f64,
    max_iter: usize,
    w0: Option<&[f64]>,
    trace: TraceMode,
) -> Result<SolverResult> {
    check_len("data vector", a.in_dim(), g.len())?;
    let penalty = Penalty::euclidean(lambda)?;
    if !(sigma > 0.0) || sigma * a.norm_sq_bound() >= 1.0 {
        return Err(Error::StepSize(format!(
            "sigma={sigma} violates sigma*|A|^2 < 1 (|A|^2 <= {})",
            a.norm_sq_bound()
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let p = a.out_dim();
    let mut w = match w0 {
        Some(v) => {
            check_len("initial dual vector", p, v.len())?;
            v.to_vec()
        }
        None => vec![0.0; p],
    };
    let limit = DIVERGENCE_FACTOR * (1.0 + vector::norm(g));
    let layout = a.layout();
    let primal = |w: &[f64]| -> Result<Vec<f64>> {
        let atw = a.adjoint_apply(w)?;
        Ok(vector::sub(g, &atw))
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let ax = a.apply(x)?;
        Ok(0.5 * vector::norm_sq(&vector::sub(x, g)) + penalty.value(layout, &ax)?)
    };

    let record = trace != TraceMode::Off;
    let mut rows = Vec::new();
    let mut x = primal(&w)?;
    let mut snapshots = (trace == TraceMode::Snapshots).then(|| {
        vec![Snapshot {
            x: x.clone(),
            w: w.clone(),
        }]
    });
    let mut x_sum = vec![0.0; g.len()];
    let mut w_sum = vec![0.0; p];
    let mut step = 0.0;
    let mut u = vec![0.0; p];
    let mut w_next = vec![0.0; p];
    for n in 1..=max_iter {
        a.apply_into(&x, &mut u)?;
        for (ui, wi) in u.iter_mut().zip(&w) {
            *ui = wi + sigma * *ui;
        }
        penalty.prox_conjugate_into(layout, &u, 1.0, &mut w_next)?;
        if !vector::all_finite(&w_next) {
            return Err(Error::NonFinite { iteration: n, field: "w" });
        }
        step = vector::dist(&w, &w_next);
        std::mem::swap(&mut w, &mut w_next);
        let x_prev = std::mem::replace(&mut x, primal(&w)?);
        let norm = vector::norm(&x);
        if norm > limit {
            return Err(Error::Diverged { iteration: n, norm, limit });
        }
        for (s, v) in x_sum.iter_mut().zip(&x) {
            *s += v;
        }
        for (s, v) in w_sum.iter_mut().zip(&w) {
            *s += v;
        }
        if record {
            rows.push(TraceRow {
                n,
                objective: objective(&x)?,
                fp_residual: step,
                dx_norm: vector::dist(&x_prev, &x),
                dw_norm: step,
            });
        }
        if let Some(s) = snapshots.as_mut() {
            s.push(Snapshot {
                x: x.clone(),
                w: w.clone(),
            });
        }
    }
    let n = max_iter as f64;
    Ok(SolverResult {
        x,
        w,
        x_avg: x_sum.iter().map(|s| s / n).collect(),
        w_avg: w_sum.iter().map(|s| s / n).collect(),
        iterations: max_iter,
        final_fp_residual: step,
        trace: record.then_some(SolverTrace { rows, snapshots }),
    })
}

/// Whether the matrix of `op` is a signed permutation.
pub fn is_signed_permutation(op: &LinearOp) -> bool {
    if op.is_identity() {
        return true;
    }
    let (m, n) = (op.out_dim(), op.in_dim());
    if m != n {
        return false;
    }
    let d = op.to_dense();
    let mut col_seen = vec![false; n];
    for row in d.chunks_exact(n) {
        let nz: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        match nz.as_slice() {
            [(j, v)] if v.abs() == 1.0 && !col_seen[*j] => col_seen[*j] = true,
            _ => return false,
        }
    }
    true
}

/// Whether `opᵀop = I` to within `tol` entrywise.
pub fn is_orthogonal(op: &LinearOp, tol: f64) -> bool {
    if op.is_identity() {
        return true;
    }
    let (m, n) = (op.out_dim(), op.in_dim());
    let d = op.to_dense();
    (0..n).all(|i| {
        (0..n).all(|j| {
            let v: f64 = (0..m).map(|r| d[r * n + i] * d[r * n + j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            (v - target).abs() <= tol
        })
    })
}

/// ISTA on a problem whose `A` is a signed permutation with scalar blocks.
pub fn ista_for_problem(
    problem: &Problem,
    tau: f64,
    max_iter: usize,
    trace: TraceMode,
) -> Result<SolverResult> {
    let a = problem.a();
    if a.layout().block_dim() != Some(1) || !is_signed_permutation(a) {
        return Err(Error::UnsupportedProblem(
            "soft-thresholding needs A to be a signed permutation with scalar blocks".into(),
        ));
    }
    ista_solve(problem.k(), problem.y(), problem.penalty().lambda(), tau, max_iter, None, trace)
}

/// Gradient projection on a problem whose `K` is orthogonal, with data
/// `g = Kᵀy`.
pub fn gradient_projection_for_problem(
    problem: &Problem,
    sigma: f64,
    max_iter: usize,
    trace: TraceMode,
) -> Result<SolverResult> {
    if !is_orthogonal(problem.k(), 1e-12) || problem.k().in_dim() != problem.k().out_dim() {
        return Err(Error::UnsupportedProblem(
            "gradient projection needs an orthogonal data operator K".into(),
        ));
    }
    if problem.penalty().kind() != NormKind::Euclidean {
        return Err(Error::UnsupportedProblem(
            "gradient projection is implemented for the Euclidean block norm".into(),
        ));
    }
    let g = problem.k().adjoint_apply(problem.y())?;
    gradient_projection_solve(problem.a(), &g, problem.penalty().lambda(), sigma, max_iter, None, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::GridShape;

    #[test]
    fn ista_single_step() {
        let k = LinearOp::dense(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let res = ista_solve(&k, &[4.0, -1.0], 1.0, 1.0, 1, None, TraceMode::Off).unwrap();
        assert_eq!(res.x, vec![1.0, 0.0]);
    }

    #[test]
    fn ista_landweber_identity() {
        let k = LinearOp::identity(3).unwrap();
        let y = [1.5, -2.0, 0.25];
        let res = ista_solve(&k, &y, 0.0, 1.0, 1, None, TraceMode::Off).unwrap();
        assert_eq!(res.x, y.to_vec());
    }

    #[test]
    fn ista_iterates_have_exact_zeros() {
        let k = LinearOp::dense(3, 4, vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.4, -0.3, 0.2, 0.6, 0.1, 0.0, -0.5]).unwrap();
        let y = [1.0, -0.5, 0.2];
        let (lambda, tau) = (0.3, 1.0);
        let res = ista_solve(&k, &y, lambda, tau, 30, None, TraceMode::Snapshots).unwrap();
        let snaps = res.trace.unwrap().snapshots.unwrap();
        for pair in snaps.windows(2) {
            let prev = &pair[0].x;
            let kx = k.apply(prev).unwrap();
            let r = vector::sub(&y, &kx);
            let grad = k.adjoint_apply(&r).unwrap();
            for i in 0..4 {
                let arg = prev[i] + tau * grad[i];
                if arg.abs() <= tau * lambda {
                    assert_eq!(pair[1].x[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn ista_rejects_large_step() {
        let k = LinearOp::identity(2).unwrap();
        assert!(ista_solve(&k, &[1.0, 1.0], 0.1, 2.0, 5, None, TraceMode::Off).is_err());
    }

    #[test]
    fn gradient_projection_fixed_point_for_constant_data() {
        let a = LinearOp::gradient(GridShape::OneD(4)).unwrap();
        let g = [2.0; 4];
        let res = gradient_projection_solve(&a, &g, 1.0, 0.2, 20, None, TraceMode::Off).unwrap();
        assert_eq!(res.w, vec![0.0; 3]);
        assert_eq!(res.x, g.to_vec());
    }

    #[test]
    fn gradient_projection_two_point_tv() {
        let a = LinearOp::gradient(GridShape::OneD(2)).unwrap();
        let res = gradient_projection_solve(&a, &[0.0, 10.0], 1.0, 0.4, 200, None, TraceMode::Snapshots).unwrap();
        assert!((res.w[0] - 1.0).abs() < 1e-12);
        assert!(vector::max_abs_diff(&res.x, &[1.0, 9.0]) < 1e-12);
        for s in res.trace.unwrap().snapshots.unwrap() {
            assert!(s.w[0].abs() <= 1.0);
        }
    }

    #[test]
    fn special_case_detection() {
        let p = LinearOp::sparse(3, 3, &[(0, 2, -1.0), (1, 0, 1.0), (2, 1, -1.0)]).unwrap();
        assert!(is_signed_permutation(&p));
        assert!(is_orthogonal(&p, 1e-12));
        let g = LinearOp::gradient(GridShape::OneD(3)).unwrap();
        assert!(!is_signed_permutation(&g));
        assert!(!is_orthogonal(&g, 1e-12));

        let problem = Problem::new(
            LinearOp::identity(3).unwrap(),
            g,
            vec![0.0, 1.0, 2.0],
            Penalty::euclidean(1.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            ista_for_problem(&problem, 1.0, 10, TraceMode::Off),
            Err(Error::UnsupportedProblem(_))
        ));
        assert!(gradient_projection_for_problem(&problem, 0.2, 10, TraceMode::Off).is_ok());
    }
}
