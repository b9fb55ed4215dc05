//! Convergence properties checked against certified references.

use nsp_core::diagnostics::{
    gap, gap_closed_form, kkt_check, monotonicity_check, rate_bound_check, reference_solution, saddle_value,
    ReferenceOptions,
};
use nsp_core::linops::{GridShape, LinearOp};
use nsp_core::problems::{make_group_sparsity, make_tv_denoise, random_dense, random_vector};
use nsp_core::solver::{lv_solve, Problem, SolverConfig, TraceMode};
use nsp_core::{vector, NormKind, Penalty};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tv(rows: usize, cols: usize, seed: u64, lambda: f64, kind: NormKind) -> Problem {
    let k = random_dense(rows, cols, seed).unwrap();
    let y = random_vector(rows, seed + 100);
    Problem::new(k, LinearOp::gradient(GridShape::OneD(cols)).unwrap(), y, Penalty::new(lambda, kind).unwrap()).unwrap()
}

/// Random dual vector inside the per-block dual ball.
fn feasible_dual(p: &Problem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..p.dual_dim()).map(|_| rng.random_range(-2.0..2.0) * p.penalty().lambda()).collect();
    p.penalty().prox_conjugate(p.a().layout(), &raw, 1.0).unwrap()
}

#[test]
fn gap_forms_agree_and_bounds_hold() {
    for (seed, kind) in [(1, NormKind::Euclidean), (2, NormKind::L1), (3, NormKind::Linf)] {
        let p = random_tv(6, 9, seed, 0.2, kind);
        let r = reference_solution(&p, &ReferenceOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = feasible_dual(&p, &mut rng);
            let g = gap(&p, &x, &w, &r).unwrap();
            let c = gap_closed_form(&p, &x, &w, &r).unwrap();
            assert!((g - c).abs() <= 1e-10 * g.abs().max(1.0), "{g} vs {c}");
            assert!(g >= -1e-10);
            let kd = p.k().apply(&vector::sub(&r.x, &x)).unwrap();
            assert!(g >= 0.5 * vector::norm_sq(&kd) - 1e-10);
        }
    }
}

#[test]
fn sup_over_duals_recovers_objective() {
    let p = random_tv(5, 7, 9, 0.6, NormKind::Euclidean);
    let x = random_vector(7, 10);
    let ax = p.a().apply(&x).unwrap();
    let w: Vec<f64> = ax.iter().map(|v| 0.6 * v.signum()).collect();
    let f = saddle_value(&p, &x, &w).unwrap();
    assert!((f - p.objective(&x).unwrap()).abs() <= 1e-12 * f.abs());
}

/// Points accepted by the KKT check are near-optimal in the saddle sense:
/// their gap against the reference is tiny, while random probes are not.
#[test]
fn kkt_pass_implies_small_gap() {
    let p = random_tv(4, 5, 21, 0.3, NormKind::Euclidean);
    let r = reference_solution(&p, &ReferenceOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = 1e-8;
    let (mut passed, mut failed) = (0, 0);
    for i in 0..1000 {
        let scale = 10f64.powi(-(i % 12));
        let x: Vec<f64> = r.x.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
        let w0: Vec<f64> = r.w.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
        let w = p.penalty().prox_conjugate(p.a().layout(), &w0, 1.0).unwrap();
        let report = kkt_check(&p, &x, &w, r.tau, r.sigma, tol).unwrap();
        let g = gap(&p, &x, &w, &r).unwrap();
        if report.passed {
            passed += 1;
            assert!(g <= 1e-6, "kkt passed with gap {g}");
        } else {
            failed += 1;
        }
    }
    assert!(passed > 0 && failed > 0);
}

#[test]
fn residual_is_lipschitz() {
    let p = random_tv(6, 8, 31, 0.4, NormKind::Euclidean);
    let (tau, sigma) = (0.5 / p.k_norm_sq_bound(), 0.5 / p.a_norm_sq_bound());
    // each term is a composition of nonexpansive maps with the operators
    let lip = tau * p.k_norm_sq_bound() + tau * p.a_norm_sq_bound().sqrt() + 2.0 + (sigma / tau) * p.a_norm_sq_bound().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dx: Vec<f64> = (0..8).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let dw: Vec<f64> = (0..7).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let x2: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let w2: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + b).collect();
        let r1 = p.fixed_point_residual(&x, &w, tau, sigma).unwrap();
        let r2 = p.fixed_point_residual(&x2, &w2, tau, sigma).unwrap();
        let delta = (vector::norm_sq(&dx) + vector::norm_sq(&dw)).sqrt();
        assert!((r1 - r2).abs() <= lip * delta * 2f64.sqrt() + 1e-14);
    }
}

#[test]
fn rate_bound_on_random_problem() {
    let p = random_tv(10, 15, 41, 0.5, NormKind::Euclidean);
    let r = reference_solution(&p, &ReferenceOptions::default()).unwrap();
    let tau = 1.0 / p.k_norm_sq_bound();
    let sigma = 0.99 / p.a_norm_sq_bound();
    let cfg = SolverConfig::new(&p, tau, sigma).unwrap().max_iter(1000).fp_tol(0.0).trace(TraceMode::Snapshots);
    let trace = lv_solve(&p, &cfg).unwrap().trace.unwrap();
    let rep = rate_bound_check(&p, &trace, &r, tau, sigma).unwrap();
    assert!(rep.passed, "{rep:?}");
    assert_eq!(rep.checked, 1000);
    assert!(rep.min_gap >= -1e-10);
}

#[test]
fn monotone_error_norm_for_all_penalty_kinds() {
    for (seed, kind) in [(51, NormKind::Euclidean), (52, NormKind::L1), (53, NormKind::Linf)] {
        let g = random_vector(12, seed);
        let p = make_tv_denoise(&g, 0.3, GridShape::TwoD { rows: 3, cols: 4 })
            .unwrap()
            .with_lambda(0.3)
            .unwrap();
        let p = Problem::new(p.k().clone(), p.a().clone(), p.y().to_vec(), Penalty::new(0.3, kind).unwrap()).unwrap();
        let r = reference_solution(&p, &ReferenceOptions::default()).unwrap();
        let cfg = SolverConfig::with_default_steps(&p).unwrap().max_iter(500).fp_tol(0.0).trace(TraceMode::Snapshots);
        let trace = lv_solve(&p, &cfg).unwrap().trace.unwrap();
        let rep = monotonicity_check(&p, &trace, &r, cfg.tau, cfg.sigma).unwrap();
        assert!(rep.passed, "{kind:?}: {rep:?}");
    }
}

#[test]
fn group_sparsity_zeroes_inactive_groups() {
    let k = random_dense(20, 9, 61).unwrap();
    let x_true = [0.0, 0.0, 0.0, 2.0, -1.5, 1.0, 0.0, 0.0, 0.0];
    let y = k.apply(&x_true).unwrap();
    let groups = vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 5], vec![6, 7], vec![7, 8]];
    let p = make_group_sparsity(k, y, &groups, 1.0).unwrap();
    let r = reference_solution(&p, &ReferenceOptions::default()).unwrap();
    let ax = p.a().apply(&r.x).unwrap();
    let layout = p.a().layout();
    for (i, block) in layout.blocks().enumerate() {
        let n = vector::norm(&ax[block.clone()]);
        if [0, 3, 4].contains(&i) {
            assert!(n <= 1e-9, "group {i} not zeroed: {n}");
        } else {
            assert!(n > 1e-3, "group {i} unexpectedly inactive");
        }
    }
}
