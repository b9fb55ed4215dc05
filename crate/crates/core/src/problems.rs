//! Problem constructors: TV denoising, synthetic ray tomography with a total
//! variation penalty, overlapping group sparsity, and calibration of `λ` to a
//! target data misfit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::linops::{GridShape, LinearOp};
use crate::prox::Penalty;
use crate::solver::{lv_solve, Problem, SolverConfig, SolverResult};
use crate::vector;

/// `½‖x − g‖² + λ TV(x)`: identity data operator, forward-difference gradient.
pub fn make_tv_denoise(g: &[f64], lambda: f64, shape: GridShape) -> Result<Problem> {
    check_len("image", shape.len(), g.len())?;
    Problem::new(
        LinearOp::identity(g.len())?,
        LinearOp::gradient(shape)?,
        g.to_vec(),
        Penalty::euclidean(lambda)?,
    )
}

/// `½‖Kx − y‖² + λ Σₖ ‖x_{groupₖ}‖₂`; groups may overlap.
pub fn make_group_sparsity(k: LinearOp, y: Vec<f64>, groups: &[Vec<usize>], lambda: f64) -> Result<Problem> {
    let a = LinearOp::group_selector(groups, k.in_dim())?;
    Problem::new(k, a, y, Penalty::euclidean(lambda)?)
}

/// Straight chord between two points on the image boundary, in pixel units
/// (`x` along columns, `y` along rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

impl Ray {
    pub fn length(&self) -> f64 {
        ((self.end.0 - self.start.0).powi(2) + (self.end.1 - self.start.1).powi(2)).sqrt()
    }
}

/// Exact intersection lengths of a chord with the cells of a `rows × cols`
/// grid of unit pixels, as `(pixel index, length)` pairs. Pixel `(r, c)` has
/// index `r·cols + c`.
pub fn trace_ray(ray: &Ray, rows: usize, cols: usize) -> Vec<(usize, f64)> {
    let (x0, y0) = ray.start;
    let (dx, dy) = (ray.end.0 - x0, ray.end.1 - y0);
    let len = ray.length();
    let mut ts = vec![0.0, 1.0];
    if dx != 0.0 {
        ts.extend((0..=cols).map(|i| (i as f64 - x0) / dx).filter(|t| *t > 0.0 && *t < 1.0));
    }
    if dy != 0.0 {
        ts.extend((0..=rows).map(|j| (j as f64 - y0) / dy).filter(|t| *t > 0.0 && *t < 1.0));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for pair in ts.windows(2) {
        let (ta, tb) = (pair[0], pair[1]);
        let seg = (tb - ta) * len;
        if seg <= 0.0 {
            continue;
        }
        let tm = 0.5 * (ta + tb);
        let c = ((x0 + tm * dx).floor() as isize).clamp(0, cols as isize - 1) as usize;
        let r = ((y0 + tm * dy).floor() as isize).clamp(0, rows as isize - 1) as usize;
        let idx = r * cols + c;
        match out.last_mut() {
            Some(last) if last.0 == idx => last.1 += seg,
            _ => out.push((idx, seg)),
        }
    }
    out
}

const RAY_RETRY_CAP: usize = 1000;
const MIN_RAY_LENGTH: f64 = 1e-6;

fn boundary_point(rng: &mut ChaCha8Rng, side: usize, rows: usize, cols: usize) -> (f64, f64) {
    let (w, h) = (cols as f64, rows as f64);
    let s: f64 = rng.random();
    match side {
        0 => (s * w, 0.0),
        1 => (w, s * h),
        2 => (s * w, h),
        _ => (0.0, s * h),
    }
}

fn random_ray(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Ray> {
    for _ in 0..RAY_RETRY_CAP {
        let mut sides = [0usize, 1, 2, 3];
        sides.shuffle(rng);
        let ray = Ray {
            start: boundary_point(rng, sides[0], rows, cols),
            end: boundary_point(rng, sides[1], rows, cols),
        };
        if ray.length() > MIN_RAY_LENGTH {
            return Ok(ray);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not draw a non-degenerate ray in {RAY_RETRY_CAP} attempts"
    )))
}

/// Synthetic tomography instance: data `y = K x_in + ε` with
/// `‖ε‖ = noise_frac·‖K x_in‖` exactly.
#[derive(Debug, Clone)]
pub struct Tomography {
    pub rows: usize,
    pub cols: usize,
    pub k: LinearOp,
    pub rays: Vec<Ray>,
    pub x_in: Vec<f64>,
    /// `K x_in`
    pub clean: Vec<f64>,
    pub y: Vec<f64>,
    pub noise_norm: f64,
}

impl Tomography {
    pub fn problem(&self, lambda: f64) -> Result<Problem> {
        Problem::new(
            self.k.clone(),
            LinearOp::gradient(GridShape::TwoD {
                rows: self.rows,
                cols: self.cols,
            })?,
            self.y.clone(),
            Penalty::euclidean(lambda)?,
        )
    }
}

/// Rays are chords between uniformly drawn points on two distinct sides of
/// the image; generation is bitwise reproducible per seed.
pub fn make_tv_tomography(
    rows: usize,
    cols: usize,
    x_in: &[f64],
    n_rays: usize,
    noise_frac: f64,
    seed: u64,
) -> Result<Tomography> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!("image must be at least 2x2, got {rows}x{cols}")));
    }
    check_len("input image", rows * cols, x_in.len())?;
    if n_rays == 0 {
        return Err(Error::InvalidArgument("need at least one ray".into()));
    }
    if !(0.0..1.0).contains(&noise_frac) {
        return Err(Error::InvalidArgument(format!("noise fraction must lie in [0, 1), got {noise_frac}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rays = Vec::with_capacity(n_rays);
    let mut triplets = Vec::new();
    for i in 0..n_rays {
        let ray = random_ray(&mut rng, rows, cols)?;
        triplets.extend(trace_ray(&ray, rows, cols).into_iter().map(|(j, l)| (i, j, l)));
        rays.push(ray);
    }
    let k = LinearOp::sparse(n_rays, rows * cols, &triplets)?;
    let clean = k.apply(x_in)?;
    let target = noise_frac * vector::norm(&clean);
    let raw: Vec<f64> = (0..n_rays).map(|_| rng.sample(StandardNormal)).collect();
    let raw_norm = vector::norm(&raw);
    let noise: Vec<f64> = if target > 0.0 && raw_norm > 0.0 {
        vector::scale(&raw, target / raw_norm)
    } else {
        vec![0.0; n_rays]
    };
    let y: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    Ok(Tomography {
        rows,
        cols,
        k,
        rays,
        x_in: x_in.to_vec(),
        clean,
        y,
        noise_norm: vector::norm(&noise),
    })
}

/// Piecewise-constant test image: background 1, a bright rectangle (3) in the
/// upper left and a dark disk (0) in the lower right.
pub fn piecewise_constant_image(rows: usize, cols: usize) -> Vec<f64> {
    let mut img = vec![1.0; rows * cols];
    let (h, w) = (rows as f64, cols as f64);
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let v = &mut img[r * cols + c];
            if x > 0.15 * w && x < 0.55 * w && y > 0.1 * h && y < 0.45 * h {
                *v = 3.0;
            }
            let (cx, cy, rad) = (0.68 * w, 0.68 * h, 0.22 * w.min(h));
            if (x - cx).powi(2) + (y - cy).powi(2) < rad * rad {
                *v = 0.0;
            }
        }
    }
    img
}

/// Dense `rows × cols` matrix with standard normal entries.
pub fn random_dense(rows: usize, cols: usize, seed: u64) -> Result<LinearOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    LinearOp::dense(rows, cols, entries)
}

/// Random signed permutation matrix as a sparse operator.
pub fn signed_permutation(n: usize, seed: u64) -> Result<LinearOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let triplets: Vec<(usize, usize, f64)> = perm
        .into_iter()
        .enumerate()
        .map(|(i, j)| (i, j, if rng.random::<bool>() { 1.0 } else { -1.0 }))
        .collect();
    LinearOp::sparse(n, n, &triplets)
}

pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Accept `|r(λ) − target| ≤ tol_rel·target`.
    pub tol_rel: f64,
    /// Iterations per probe solve (cold start from zero).
    pub budget: usize,
    pub max_probes: usize,
    /// Largest factor by which `λ` is grown or shrunk while bracketing.
    pub max_decades: u32,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-2,
            budget: 1000,
            max_probes: 60,
            max_decades: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub lambda: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub lambda: f64,
    /// `‖Kx − y‖` of the returned solution.
    pub residual: f64,
    pub solution: SolverResult,
    pub probes: Vec<Probe>,
    /// Whether the residual matched within `tol_rel`.
    pub converged: bool,
}

/// Data misfit `‖Kx − y‖`.
pub fn data_residual(problem: &Problem, x: &[f64]) -> Result<f64> {
    let kx = problem.k().apply(x)?;
    Ok(vector::dist(&kx, problem.y()))
}

/// Bisection on `log λ` until the budgeted solution's misfit matches
/// `target`. The template's `λ` is the starting guess.
pub fn calibrate_lambda(template: &Problem, target: f64, opts: &CalibrationOptions) -> Result<Calibration> {
    if !(target > 0.0) {
        return Err(Error::InvalidArgument(format!("target residual must be positive, got {target}")));
    }
    if !(opts.tol_rel > 0.0) || opts.budget == 0 || opts.max_probes == 0 {
        return Err(Error::InvalidArgument("invalid calibration options".into()));
    }
    let mut probes = Vec::new();
    let solve = |lambda: f64, probes: &mut Vec<Probe>| -> Result<(f64, SolverResult)> {
        let p = template.with_lambda(lambda)?;
        let cfg = SolverConfig::with_default_steps(&p)?.max_iter(opts.budget).fp_tol(0.0);
        let res = lv_solve(&p, &cfg)?;
        let r = data_residual(&p, &res.x)?;
        probes.push(Probe { lambda, residual: r });
        Ok((r, res))
    };
    let accept = |r: f64| (r - target).abs() <= opts.tol_rel * target;
    let slack = opts.tol_rel * target;

    let lambda0 = template.penalty().lambda();
    let (r0, s0) = solve(lambda0, &mut probes)?;
    if accept(r0) {
        return Ok(Calibration {
            lambda: lambda0,
            residual: r0,
            solution: s0,
            probes,
            converged: true,
        });
    }

    // bracket: r(lo) < target < r(hi)
    let (mut lo, mut hi) = ((lambda0, r0, s0.clone()), (lambda0, r0, s0));
    let grow = r0 < target;
    let mut found = false;
    for _ in 0..opts.max_decades {
        let (prev_l, prev_r) = if grow { (hi.0, hi.1) } else { (lo.0, lo.1) };
        let l = if grow { prev_l * 10.0 } else { prev_l / 10.0 };
        let (r, s) = solve(l, &mut probes)?;
        let monotone = if grow { r >= prev_r - slack } else { r <= prev_r + slack };
        if !monotone {
            return Err(Error::NonMonotone(format!(
                "lambda {prev_l:e} -> {l:e} moved residual {prev_r:e} -> {r:e}"
            )));
        }
        if accept(r) {
            return Ok(Calibration {
                lambda: l,
                residual: r,
                solution: s,
                probes,
                converged: true,
            });
        }
        if grow {
            lo = std::mem::replace(&mut hi, (l, r, s));
            if r > target {
                found = true;
                break;
            }
        } else {
            hi = std::mem::replace(&mut lo, (l, r, s));
            if r < target {
                found = true;
                break;
            }
        }
    }
    if !found {
        let rs = probes.iter().map(|p| p.residual);
        let low = rs.clone().fold(f64::INFINITY, f64::min);
        let high = rs.fold(0.0, f64::max);
        return Err(Error::Bracket { target, low, high });
    }

    let mut best = if (lo.1 - target).abs() < (hi.1 - target).abs() { lo.clone() } else { hi.clone() };
    while probes.len() < opts.max_probes {
        let mid = (lo.0 * hi.0).sqrt();
        let (r, s) = solve(mid, &mut probes)?;
        if r < lo.1 - slack || r > hi.1 + slack {
            return Err(Error::NonMonotone(format!(
                "residual {r:e} at lambda {mid:e} outside [{:e}, {:e}] of its bracket [{:e}, {:e}]",
                lo.1, hi.1, lo.0, hi.0
            )));
        }
        if (r - target).abs() < (best.1 - target).abs() {
            best = (mid, r, s.clone());
        }
        if accept(r) {
            break;
        }
        if r < target {
            lo = (mid, r, s);
        } else {
            hi = (mid, r, s);
        }
    }
    Ok(Calibration {
        lambda: best.0,
        residual: best.1,
        converged: accept(best.1),
        solution: best.2,
        probes,
    })
}
