//! The explicit primal-dual iteration for
//!
//! ```text
//! min_x  ½‖Kx − y‖² + H(Ax)
//! ```
//!
//! in its step-size form
//!
//! ```text
//! x̄ⁿ⁺¹ = xⁿ + τKᵀ(y − Kxⁿ) − τAᵀwⁿ
//! wⁿ⁺¹ = prox_{(σ/τ)H*}(wⁿ + (σ/τ)Ax̄ⁿ⁺¹)
//! xⁿ⁺¹ = xⁿ + τKᵀ(y − Kxⁿ) − τAᵀwⁿ⁺¹
//! ```
//!
//! which converges for `τ‖K‖² < 2` and `σ‖A‖² < 1`. Each step applies `K`,
//! `Kᵀ`, `A` and `Aᵀ` once; `Aᵀwⁿ` is carried over from the previous step.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::linops::LinearOp;
use crate::prox::Penalty;
use crate::vector;

/// `τ = 2·margin/‖K‖²`, `σ = margin/‖A‖²`; 0.495 gives `τ = 0.99/‖K‖²`.
pub const DEFAULT_STEP_MARGIN: f64 = 0.495;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_FP_TOL: f64 = 1e-8;
/// Iterates with `‖xⁿ‖ > DIVERGENCE_FACTOR·(1 + ‖x⁰‖ + ‖y‖)` abort the solve.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct Problem {
    k: LinearOp,
    a: LinearOp,
    y: Vec<f64>,
    penalty: Penalty,
    k_norm_sq: OnceLock<f64>,
    a_norm_sq: OnceLock<f64>,
}

impl Problem {
    pub fn new(k: LinearOp, a: LinearOp, y: Vec<f64>, penalty: Penalty) -> Result<Self> {
        check_len("penalty operator input (must equal data operator input)", k.in_dim(), a.in_dim())?;
        check_len("data vector", k.out_dim(), y.len())?;
        if !vector::all_finite(&y) {
            return Err(Error::InvalidArgument("data vector has non-finite entries".into()));
        }
        Ok(Self {
            k,
            a,
            y,
            penalty,
            k_norm_sq: OnceLock::new(),
            a_norm_sq: OnceLock::new(),
        })
    }

    pub fn k(&self) -> &LinearOp {
        &self.k
    }

    pub fn a(&self) -> &LinearOp {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn dim(&self) -> usize {
        self.k.in_dim()
    }

    pub fn dual_dim(&self) -> usize {
        self.a.out_dim()
    }

    /// Same operators and data with a different penalty weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut p = self.clone();
        p.penalty = self.penalty.with_lambda(lambda)?;
        Ok(p)
    }

    /// Cached upper bound on `‖K‖²`.
    pub fn k_norm_sq_bound(&self) -> f64 {
        *self.k_norm_sq.get_or_init(|| self.k.norm_sq_bound())
    }

    /// Cached upper bound on `‖A‖²`.
    pub fn a_norm_sq_bound(&self) -> f64 {
        *self.a_norm_sq.get_or_init(|| self.a.norm_sq_bound())
    }

    /// `½‖Kx − y‖² + H(Ax)`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        let kx = self.k.apply(x)?;
        let ax = self.a.apply(x)?;
        let misfit: f64 = kx.iter().zip(&self.y).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(0.5 * misfit + self.penalty.value(self.a.layout(), &ax)?)
    }

    /// `‖τKᵀ(y − Kx) − τAᵀw‖ + ‖w − prox_{H*}(w + (σ/τ)Ax)‖`; zero exactly at
    /// solutions of the optimality system.
    pub fn fixed_point_residual(&self, x: &[f64], w: &[f64], tau: f64, sigma: f64) -> Result<f64> {
        let (primal, dual) = self.residual_parts(x, w, tau, sigma)?;
        Ok(primal + dual)
    }

    /// The two terms of [`Self::fixed_point_residual`].
    pub fn residual_parts(&self, x: &[f64], w: &[f64], tau: f64, sigma: f64) -> Result<(f64, f64)> {
        check_steps_positive(tau, sigma)?;
        check_len("primal vector", self.dim(), x.len())?;
        check_len("dual vector", self.dual_dim(), w.len())?;
        let kx = self.k.apply(x)?;
        let r = vector::sub(&self.y, &kx);
        let kr = self.k.adjoint_apply(&r)?;
        let atw = self.a.adjoint_apply(w)?;
        let ax = self.a.apply(x)?;
        Ok(residual_terms(&self.penalty, &self.a, tau, sigma, w, &kr, &atw, &ax))
    }
}

#[allow(clippy::too_many_arguments)]
fn residual_terms(
    penalty: &Penalty,
    a: &LinearOp,
    tau: f64,
    sigma: f64,
    w: &[f64],
    kr: &[f64],
    atw: &[f64],
    ax: &[f64],
) -> (f64, f64) {
    let primal = kr
        .iter()
        .zip(atw)
        .map(|(g, h)| (tau * g - tau * h).powi(2))
        .sum::<f64>()
        .sqrt();
    let ratio = sigma / tau;
    let shifted: Vec<f64> = w.iter().zip(ax).map(|(wi, ai)| wi + ratio * ai).collect();
    let proj = penalty
        .prox_conjugate(a.layout(), &shifted, ratio)
        .expect("layout matches operator");
    (primal, vector::dist(w, &proj))
}

fn check_steps_positive(tau: f64, sigma: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite() && sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::StepSize(format!(
            "step sizes must be positive and finite, got tau={tau}, sigma={sigma}"
        )));
    }
    Ok(())
}

/// Step sizes from operator-norm bounds: `τ = 2·margin/‖K‖²`,
/// `σ = margin/‖A‖²`. A zero operator borrows the other operator's bound.
pub fn steps_from_bounds(k_norm_sq: f64, a_norm_sq: f64, margin: f64) -> Result<(f64, f64)> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidArgument(format!("step margin must lie in (0, 1), got {margin}")));
    }
    let (k, a) = match (k_norm_sq > 0.0, a_norm_sq > 0.0) {
        (true, true) => (k_norm_sq, a_norm_sq),
        (false, true) => (a_norm_sq, a_norm_sq),
        (true, false) => (k_norm_sq, k_norm_sq),
        (false, false) => {
            return Err(Error::InvalidArgument(
                "both operators are zero; the problem is degenerate".into(),
            ))
        }
    };
    Ok((2.0 * margin / k, margin / a))
}

pub fn default_steps(problem: &Problem, margin: f64) -> Result<(f64, f64)> {
    steps_from_bounds(problem.k_norm_sq_bound(), problem.a_norm_sq_bound(), margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    #[default]
    Off,
    /// Per-iteration scalar rows.
    Rows,
    /// Rows plus a copy of every iterate `(xⁿ, wⁿ)`, `n = 0..=N`.
    Snapshots,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tau: f64,
    pub sigma: f64,
    pub max_iter: usize,
    pub fp_tol: f64,
    pub trace: TraceMode,
    pub x0: Option<Vec<f64>>,
    pub w0: Option<Vec<f64>>,
}

impl SolverConfig {
    /// Checks `τ‖K‖² < 2` and `σ‖A‖² < 1` against the problem's norm bounds.
    pub fn new(problem: &Problem, tau: f64, sigma: f64) -> Result<Self> {
        check_steps_positive(tau, sigma)?;
        let kb = problem.k_norm_sq_bound();
        let ab = problem.a_norm_sq_bound();
        if tau * kb >= 2.0 {
            return Err(Error::StepSize(format!(
                "tau={tau} with |K|^2<={kb} violates tau*|K|^2 < 2"
            )));
        }
        if sigma * ab >= 1.0 {
            return Err(Error::StepSize(format!(
                "sigma={sigma} with |A|^2<={ab} violates sigma*|A|^2 < 1"
            )));
        }
        Ok(Self::unchecked_steps(tau, sigma))
    }

    pub fn with_default_steps(problem: &Problem) -> Result<Self> {
        let (tau, sigma) = default_steps(problem, DEFAULT_STEP_MARGIN)?;
        Self::new(problem, tau, sigma)
    }

    /// Skips the norm conditions. Used for the boundary case `σ‖A‖² = 1`
    /// with orthogonal `A`, and for deliberately broken runs in tests.
    pub fn unchecked(tau: f64, sigma: f64) -> Result<Self> {
        check_steps_positive(tau, sigma)?;
        Ok(Self::unchecked_steps(tau, sigma))
    }

    fn unchecked_steps(tau: f64, sigma: f64) -> Self {
        Self {
            tau,
            sigma,
            max_iter: DEFAULT_MAX_ITER,
            fp_tol: DEFAULT_FP_TOL,
            trace: TraceMode::Off,
            x0: None,
            w0: None,
        }
    }

    pub fn max_iter(mut self, n: usize) -> Self {
        self.max_iter = n;
        self
    }

    pub fn fp_tol(mut self, tol: f64) -> Self {
        self.fp_tol = tol;
        self
    }

    pub fn trace(mut self, mode: TraceMode) -> Self {
        self.trace = mode;
        self
    }

    pub fn start(mut self, x0: Option<Vec<f64>>, w0: Option<Vec<f64>>) -> Self {
        self.x0 = x0;
        self.w0 = w0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub objective: f64,
    pub fp_residual: f64,
    pub dx_norm: f64,
    pub dw_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    /// One row per performed iteration, `n = 1..=N`.
    pub rows: Vec<TraceRow>,
    /// Iterates `0..=N` when snapshots were requested.
    pub snapshots: Option<Vec<Snapshot>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    /// Mean of iterates `1..=N` (the start point when `N = 0`).
    pub x_avg: Vec<f64>,
    pub w_avg: Vec<f64>,
    pub iterations: usize,
    pub final_fp_residual: f64,
    pub trace: Option<SolverTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub xbar: Vec<f64>,
}

/// Working state for the iteration; all buffers are reused across steps.
struct Iterate<'p> {
    problem: &'p Problem,
    tau: f64,
    sigma: f64,
    x: Vec<f64>,
    w: Vec<f64>,
    /// `Aᵀw` for the current `w`.
    atw: Vec<f64>,
    /// `y − Kx`.
    r: Vec<f64>,
    /// `Kᵀ(y − Kx)`.
    kr: Vec<f64>,
    ax: Vec<f64>,
    g: Vec<f64>,
    xbar: Vec<f64>,
    u: Vec<f64>,
    x_next: Vec<f64>,
    w_next: Vec<f64>,
    atw_next: Vec<f64>,
}

impl<'p> Iterate<'p> {
    fn new(problem: &'p Problem, tau: f64, sigma: f64, x: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        check_len("initial primal vector", problem.dim(), x.len())?;
        check_len("initial dual vector", problem.dual_dim(), w.len())?;
        let m = problem.dim();
        let p = problem.dual_dim();
        let atw = problem.a.adjoint_apply(&w)?;
        Ok(Self {
            problem,
            tau,
            sigma,
            x,
            w,
            atw,
            r: vec![0.0; problem.k.out_dim()],
            kr: vec![0.0; m],
            ax: vec![0.0; p],
            g: vec![0.0; m],
            xbar: vec![0.0; m],
            u: vec![0.0; p],
            x_next: vec![0.0; m],
            w_next: vec![0.0; p],
            atw_next: vec![0.0; m],
        })
    }

    /// `r = y − Kx`, `kr = Kᵀr`.
    fn gradient(&mut self) -> Result<()> {
        let pb = self.problem;
        pb.k.apply_into(&self.x, &mut self.r)?;
        for (ri, yi) in self.r.iter_mut().zip(&pb.y) {
            *ri = yi - *ri;
        }
        pb.k.adjoint_apply_into(&self.r, &mut self.kr)
    }

    /// Objective and fixed-point residual at the current iterate. Must
    /// follow [`Self::gradient`].
    fn evaluate(&mut self) -> Result<(f64, f64)> {
        let pb = self.problem;
        pb.a.apply_into(&self.x, &mut self.ax)?;
        let objective = 0.5 * vector::norm_sq(&self.r) + pb.penalty.value(pb.a.layout(), &self.ax)?;
        let (primal, dual) = residual_terms(
            &pb.penalty,
            &pb.a,
            self.tau,
            self.sigma,
            &self.w,
            &self.kr,
            &self.atw,
            &self.ax,
        );
        Ok((objective, primal + dual))
    }

    /// One primal-dual step from `(x, w)`; requires `kr` for the current `x`.
    /// Leaves the new iterate in `x_next`, `w_next`.
    fn advance(&mut self, iteration: usize) -> Result<()> {
        let pb = self.problem;
        let tau = self.tau;
        let ratio = self.sigma / self.tau;
        for ((g, x), kr) in self.g.iter_mut().zip(&self.x).zip(&self.kr) {
            *g = x + tau * kr;
        }
        for ((xb, g), atw) in self.xbar.iter_mut().zip(&self.g).zip(&self.atw) {
            *xb = g - tau * atw;
        }
        pb.a.apply_into(&self.xbar, &mut self.u)?;
        for (u, w) in self.u.iter_mut().zip(&self.w) {
            *u = w + ratio * *u;
        }
        pb.penalty
            .prox_conjugate_into(pb.a.layout(), &self.u, ratio, &mut self.w_next)?;
        pb.a.adjoint_apply_into(&self.w_next, &mut self.atw_next)?;
        for ((xn, g), atw) in self.x_next.iter_mut().zip(&self.g).zip(&self.atw_next) {
            *xn = g - tau * atw;
        }

        if !vector::all_finite(&self.w_next) {
            return Err(Error::NonFinite { iteration, field: "w" });
        }
        if !vector::all_finite(&self.x_next) {
            return Err(Error::NonFinite { iteration, field: "x" });
        }

        if cfg!(debug_assertions) {
            // x̄ⁿ⁺¹ = xⁿ⁺¹ − τAᵀ(wⁿ − wⁿ⁺¹)
            let scale = 1.0 + vector::norm(&self.xbar);
            let err = self
                .xbar
                .iter()
                .zip(&self.x_next)
                .zip(self.atw.iter().zip(&self.atw_next))
                .map(|((xb, xn), (a0, a1))| (xb - (xn - tau * (a0 - a1))).abs())
                .fold(0.0, f64::max);
            debug_assert!(err <= 1e-12 * scale, "predictor identity violated by {err}");
        }
        Ok(())
    }

    fn commit(&mut self) {
        std::mem::swap(&mut self.x, &mut self.x_next);
        std::mem::swap(&mut self.w, &mut self.w_next);
        std::mem::swap(&mut self.atw, &mut self.atw_next);
    }
}

/// One step of the iteration from `(x, w)`.
pub fn lv_step(problem: &Problem, x: &[f64], w: &[f64], tau: f64, sigma: f64) -> Result<StepOutput> {
    check_steps_positive(tau, sigma)?;
    let mut it = Iterate::new(problem, tau, sigma, x.to_vec(), w.to_vec())?;
    it.gradient()?;
    it.advance(1)?;
    Ok(StepOutput {
        x: it.x_next,
        w: it.w_next,
        xbar: it.xbar,
    })
}

/// Iterate from `(x⁰, w⁰)` (zeros by default) until the fixed-point residual
/// drops to `fp_tol` or `max_iter` steps are done.
pub fn lv_solve(problem: &Problem, config: &SolverConfig) -> Result<SolverResult> {
    check_steps_positive(config.tau, config.sigma)?;
    if config.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if !(config.fp_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("fp_tol must be non-negative, got {}", config.fp_tol)));
    }
    let x0 = config.x0.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
    let w0 = config.w0.clone().unwrap_or_else(|| vec![0.0; problem.dual_dim()]);
    let limit = DIVERGENCE_FACTOR * (1.0 + vector::norm(&x0) + vector::norm(&problem.y));

    let mut it = Iterate::new(problem, config.tau, config.sigma, x0, w0)?;
    let mut x_sum = vec![0.0; problem.dim()];
    let mut w_sum = vec![0.0; problem.dual_dim()];
    let mut rows = Vec::new();
    let mut snapshots = (config.trace == TraceMode::Snapshots).then(|| {
        vec![Snapshot {
            x: it.x.clone(),
            w: it.w.clone(),
        }]
    });
    let record_rows = config.trace != TraceMode::Off;

    let mut n = 0;
    let mut last_step = (0.0, 0.0);
    let final_residual = loop {
        it.gradient()?;
        let (objective, residual) = it.evaluate()?;
        if n > 0 && record_rows {
            rows.push(TraceRow {
                n,
                objective,
                fp_residual: residual,
                dx_norm: last_step.0,
                dw_norm: last_step.1,
            });
        }
        if residual <= config.fp_tol || n == config.max_iter {
            break residual;
        }
        n += 1;
        it.advance(n)?;
        let xn = vector::norm(&it.x_next);
        if xn > limit {
            return Err(Error::Diverged {
                iteration: n,
                norm: xn,
                limit,
            });
        }
        last_step = (vector::dist(&it.x, &it.x_next), vector::dist(&it.w, &it.w_next));
        it.commit();
        for (s, v) in x_sum.iter_mut().zip(&it.x) {
            *s += v;
        }
        for (s, v) in w_sum.iter_mut().zip(&it.w) {
            *s += v;
        }
        if let Some(snaps) = snapshots.as_mut() {
            snaps.push(Snapshot {
                x: it.x.clone(),
                w: it.w.clone(),
            });
        }
    };

    let (x_avg, w_avg) = if n == 0 {
        (it.x.clone(), it.w.clone())
    } else {
        let inv = n as f64;
        (
            x_sum.iter().map(|s| s / inv).collect(),
            w_sum.iter().map(|s| s / inv).collect(),
        )
    };
    Ok(SolverResult {
        x: it.x,
        w: it.w,
        x_avg,
        w_avg,
        iterations: n,
        final_fp_residual: final_residual,
        trace: record_rows.then_some(SolverTrace { rows, snapshots }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::GridShape;
    use crate::prox::NormKind;

    fn tv_pair(y: [f64; 2], lambda: f64) -> Problem {
        Problem::new(
            LinearOp::identity(2).unwrap(),
            LinearOp::gradient(GridShape::OneD(2)).unwrap(),
            y.to_vec(),
            Penalty::euclidean(lambda).unwrap(),
        )
        .unwrap()
    }

    /// Exhaustive minimization of `½‖x − y‖² + λ|x₂ − x₁|` on a grid.
    fn two_point_grid_oracle(y: [f64; 2], lambda: f64) -> [f64; 2] {
        let h = 0.01;
        let mut best = ([0.0; 2], f64::INFINITY);
        for i in -200..=1200 {
            for j in -200..=1200 {
                let x = [i as f64 * h, j as f64 * h];
                let f = 0.5 * ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2))
                    + lambda * (x[1] - x[0]).abs();
                if f < best.1 {
                    best = (x, f);
                }
            }
        }
        best.0
    }

    #[test]
    fn step_sizes_from_bounds() {
        let (t, s) = steps_from_bounds(1.0, 1.0, 0.495).unwrap();
        assert!((t - 0.99).abs() < 1e-15 && (s - 0.495).abs() < 1e-15);
        let (t, _) = steps_from_bounds(4.0, 1.0, 0.495).unwrap();
        assert!((t - 0.2475).abs() < 1e-15);
        let (t, s) = steps_from_bounds(1.0, 1.0, 0.25).unwrap();
        assert_eq!((t, s), (0.5, 0.25));
        assert!(t * 1.0 < 2.0 && s * 1.0 < 1.0);
        assert!(steps_from_bounds(0.0, 0.0, 0.495).is_err());
        assert!(steps_from_bounds(1.0, 1.0, 1.0).is_err());
        let (t, s) = steps_from_bounds(0.0, 2.0, 0.5).unwrap();
        assert_eq!((t, s), (0.5, 0.25));
    }

    #[test]
    fn config_rejects_bad_steps() {
        let p = tv_pair([0.0, 10.0], 1.0);
        assert!(SolverConfig::new(&p, 2.0, 0.1).is_err());
        assert!(SolverConfig::new(&p, 0.5, 0.6).is_err());
        assert!(SolverConfig::new(&p, -0.5, 0.1).is_err());
        assert!(SolverConfig::new(&p, 0.5, 0.1).is_ok());
    }

    #[test]
    fn first_step_arithmetic() {
        let p = Problem::new(
            LinearOp::identity(1).unwrap(),
            LinearOp::dense(1, 1, vec![0.0]).unwrap(),
            vec![4.0],
            Penalty::euclidean(1.0).unwrap(),
        )
        .unwrap();
        let out = lv_step(&p, &[0.0], &[0.0], 0.99, 0.5).unwrap();
        assert!((out.x[0] - 3.96).abs() < 1e-15);
        assert_eq!(out.w, vec![0.0]);
    }

    #[test]
    fn solution_is_a_fixed_point() {
        // 2-point TV: x = (1, 9), Aᵀw = y − x = (−1, 1) ⇒ w = 1
        let p = tv_pair([0.0, 10.0], 1.0);
        let out = lv_step(&p, &[1.0, 9.0], &[1.0], 0.9, 0.4).unwrap();
        assert!(vector::max_abs_diff(&out.x, &[1.0, 9.0]) <= 1e-12);
        assert!(vector::max_abs_diff(&out.w, &[1.0]) <= 1e-12);
        assert!(p.fixed_point_residual(&[1.0, 9.0], &[1.0], 0.9, 0.4).unwrap() <= 1e-12);
    }

    #[test]
    fn dual_iterates_stay_feasible() {
        let p = Problem::new(
            LinearOp::identity(6).unwrap(),
            LinearOp::gradient(GridShape::TwoD { rows: 2, cols: 3 }).unwrap(),
            vec![5.0, -3.0, 8.0, 0.0, 1.0, -7.0],
            Penalty::euclidean(0.8).unwrap(),
        )
        .unwrap();
        let cfg = SolverConfig::with_default_steps(&p)
            .unwrap()
            .max_iter(50)
            .fp_tol(0.0)
            .trace(TraceMode::Snapshots);
        let res = lv_solve(&p, &cfg).unwrap();
        for s in res.trace.unwrap().snapshots.unwrap() {
            let (_, n) = p.penalty().max_dual_norm(p.a().layout(), &s.w).unwrap();
            assert!(n <= 0.8 + 1e-14);
        }
    }

    #[test]
    fn predictor_identity_holds_with_fresh_adjoint() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let (tau, sigma) = (0.9, 0.2);
        let (x, w) = (vec![0.3, 2.0], vec![0.1]);
        let out = lv_step(&p, &x, &w, tau, sigma).unwrap();
        let d = vector::sub(&w, &out.w);
        let atd = p.a().adjoint_apply(&d).unwrap();
        for i in 0..2 {
            let rhs = out.x[i] - tau * atd[i];
            assert!((out.xbar[i] - rhs).abs() <= 1e-12 * (1.0 + out.xbar[i].abs()));
        }
    }

    #[test]
    fn near_zero_penalty_recovers_data() {
        let p = Problem::new(
            LinearOp::identity(3).unwrap(),
            LinearOp::gradient(GridShape::OneD(3)).unwrap(),
            vec![1.0, 2.0, 3.0],
            Penalty::euclidean(1e-12).unwrap(),
        )
        .unwrap();
        let cfg = SolverConfig::with_default_steps(&p).unwrap().max_iter(10_000);
        let res = lv_solve(&p, &cfg).unwrap();
        assert!(vector::max_abs_diff(&res.x, &[1.0, 2.0, 3.0]) <= 1e-6);
    }

    #[test]
    fn two_point_tv_matches_grid_oracle() {
        let oracle = two_point_grid_oracle([0.0, 10.0], 1.0);
        assert!(vector::max_abs_diff(&oracle, &[1.0, 9.0]) < 1e-9);
        let oracle = two_point_grid_oracle([0.0, 10.0], 100.0);
        assert!(vector::max_abs_diff(&oracle, &[5.0, 5.0]) < 1e-9);

        for (lambda, expect) in [(1.0, [1.0, 9.0]), (100.0, [5.0, 5.0])] {
            let p = tv_pair([0.0, 10.0], lambda);
            let cfg = SolverConfig::with_default_steps(&p).unwrap().max_iter(100_000);
            let res = lv_solve(&p, &cfg).unwrap();
            assert!(vector::max_abs_diff(&res.x, &expect) <= 1e-6, "{lambda}: {:?}", res.x);
        }
    }

    #[test]
    fn objective_examples() {
        let p = Problem::new(
            LinearOp::identity(2).unwrap(),
            LinearOp::identity(2).unwrap().with_block_dim(2).unwrap(),
            vec![0.0, 0.0],
            Penalty::euclidean(1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(p.objective(&[3.0, 4.0]).unwrap(), 17.5);
        let q = tv_pair([2.0, 2.0], 1.0);
        assert_eq!(q.objective(&[2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn residual_positive_away_from_solution() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let tau = 0.9;
        let r = p.fixed_point_residual(&[0.0, 0.0], &[0.0], tau, 0.4).unwrap();
        let kty = 10.0;
        assert!(r >= tau * kty - 1e-12);
    }

    #[test]
    fn trace_rows_match_iterations_and_averages_are_means() {
        let p = tv_pair([0.3, 7.1], 0.7);
        let cfg = SolverConfig::with_default_steps(&p)
            .unwrap()
            .max_iter(25)
            .fp_tol(0.0)
            .trace(TraceMode::Snapshots);
        let res = lv_solve(&p, &cfg).unwrap();
        let tr = res.trace.unwrap();
        assert_eq!(res.iterations, 25);
        assert_eq!(tr.rows.len(), 25);
        let snaps = tr.snapshots.unwrap();
        assert_eq!(snaps.len(), 26);
        let mean0: f64 = snaps[1..].iter().map(|s| s.x[0]).sum::<f64>() / 25.0;
        assert!((mean0 - res.x_avg[0]).abs() <= 1e-14);
        assert_eq!(snaps[25].x, res.x);
        let last = tr.rows.last().unwrap();
        assert_eq!(last.n, 25);
        assert!((last.dx_norm - vector::dist(&snaps[24].x, &snaps[25].x)).abs() < 1e-15);
    }

    #[test]
    fn stops_on_residual() {
        let p = tv_pair([3.0, 3.0], 1.0);
        let cfg = SolverConfig::with_default_steps(&p)
            .unwrap()
            .start(Some(vec![3.0, 3.0]), None);
        let res = lv_solve(&p, &cfg).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.x, vec![3.0, 3.0]);
        assert_eq!(res.x_avg, vec![3.0, 3.0]);
        let p = tv_pair([0.0, 10.0], 1.0);
        let res = lv_solve(&p, &SolverConfig::with_default_steps(&p).unwrap().max_iter(100_000)).unwrap();
        assert!(res.final_fp_residual <= DEFAULT_FP_TOL);
        assert!(res.iterations < 100_000);
    }

    #[test]
    fn invalid_runs_are_rejected() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let cfg = SolverConfig::with_default_steps(&p).unwrap().max_iter(0);
        assert!(lv_solve(&p, &cfg).is_err());
        let cfg = SolverConfig::with_default_steps(&p)
            .unwrap()
            .start(Some(vec![0.0; 3]), None);
        assert!(matches!(lv_solve(&p, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn oversized_step_is_detected_as_divergence() {
        let p = tv_pair([0.0, 10.0], 1.0);
        let cfg = SolverConfig::unchecked(2.5, 0.1).unwrap().max_iter(100_000).fp_tol(0.0);
        assert!(matches!(lv_solve(&p, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn problem_dimension_checks() {
        let k = LinearOp::identity(3).unwrap();
        let a = LinearOp::gradient(GridShape::OneD(4)).unwrap();
        assert!(Problem::new(k.clone(), a, vec![0.0; 3], Penalty::euclidean(1.0).unwrap()).is_err());
        let a = LinearOp::gradient(GridShape::OneD(3)).unwrap();
        assert!(Problem::new(k, a, vec![0.0; 2], Penalty::new(1.0, NormKind::L1).unwrap()).is_err());
    }
}
