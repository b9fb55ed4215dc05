//! Benchmark harness: per-iteration objective, residual and distance to a
//! certified reference for the primal-dual solver and, where the problem
//! family allows, the baseline it reduces to.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nsp_core::diagnostics::{reference_solution, Reference, ReferenceOptions};
use nsp_core::problems::{
    calibrate_lambda, make_tv_denoise, make_tv_tomography, piecewise_constant_image, random_dense, random_vector,
    signed_permutation, CalibrationOptions,
};
use nsp_core::reference::{gradient_projection_for_problem, ista_for_problem};
use nsp_core::solver::{lv_solve, Snapshot, SolverConfig, SolverResult, TraceMode};
use nsp_core::{vector, GridShape, LinearOp, Penalty, Problem};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::formats::{self, fmt_real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Ray tomography with a total-variation penalty, lambda fitted to the noise.
    TvTomography,
    /// Sparse regression with a signed-permutation analysis operator (baseline: ISTA).
    Lasso,
    /// Image denoising, K the identity (baseline: dual gradient projection).
    Denoise,
}

impl Family {
    fn name(self) -> &'static str {
        match self {
            Family::TvTomography => "tv-tomography",
            Family::Lasso => "lasso",
            Family::Denoise => "denoise",
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Family::TvTomography, Family::Lasso, Family::Denoise])]
    pub family: Vec<Family>,
    #[arg(long, value_delimiter = ',', default_values_t = [7u64])]
    pub seed: Vec<u64>,
    /// Image rows (tomography, denoise) or measurements (lasso).
    #[arg(long, default_value_t = 16)]
    pub rows: usize,
    /// Image columns (tomography, denoise) or unknowns (lasso).
    #[arg(long, default_value_t = 16)]
    pub cols: usize,
    #[arg(long, default_value_t = 60)]
    pub rays: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_frac: f64,
    #[arg(long, default_value_t = 1000, value_parser = crate::positive_count)]
    pub iters: usize,
    /// Emit every k-th iteration (the last one is always emitted).
    #[arg(long, default_value_t = 1, value_parser = crate::positive_count)]
    pub every: usize,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const BENCH_HEADER: [&str; 8] = [
    "family",
    "seed",
    "algorithm",
    "iteration",
    "objective",
    "fp_residual",
    "distance_to_reference",
    "deviation",
];

/// Worker count from `NSP_THREADS` (default 1).
pub fn thread_count() -> CliResult<usize> {
    match std::env::var("NSP_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Input(format!("NSP_THREADS must be a positive integer, got {s:?}"))),
    }
}

struct Run {
    algorithm: &'static str,
    result: SolverResult,
}

struct Instance {
    problem: Problem,
    runs: Vec<Run>,
    /// Which iterate the deviation column compares.
    compare_dual: Option<bool>,
}

fn snapshots(r: &SolverResult) -> &[Snapshot] {
    r.trace.as_ref().and_then(|t| t.snapshots.as_deref()).unwrap_or(&[])
}

fn build(family: Family, seed: u64, args: &BenchArgs) -> CliResult<Instance> {
    let n = args.iters;
    let traced = |p: &Problem, cfg: SolverConfig| lv_solve(p, &cfg.max_iter(n).fp_tol(0.0).trace(TraceMode::Snapshots));
    match family {
        Family::TvTomography => {
            let img = piecewise_constant_image(args.rows, args.cols);
            let tomo = make_tv_tomography(args.rows, args.cols, &img, args.rays, args.noise_frac, seed)?;
            let template = tomo.problem(1.0)?;
            let opts = CalibrationOptions {
                budget: n,
                ..Default::default()
            };
            let lambda = calibrate_lambda(&template, tomo.noise_norm.max(f64::MIN_POSITIVE), &opts)?.lambda;
            let problem = tomo.problem(lambda)?;
            let lv = traced(&problem, SolverConfig::with_default_steps(&problem)?)?;
            Ok(Instance {
                problem,
                runs: vec![Run { algorithm: "lv", result: lv }],
                compare_dual: None,
            })
        }
        Family::Lasso => {
            let k0 = random_dense(args.rows, args.cols, seed)?;
            let k = LinearOp::scaled(k0.clone(), (1.5 / k0.norm_sq_bound()).sqrt())?;
            let y = random_vector(args.rows, seed.wrapping_add(1));
            let kty = k.adjoint_apply(&y)?;
            let lambda = 0.1 * kty.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let a = signed_permutation(args.cols, seed.wrapping_add(2))?;
            let problem = Problem::new(k, a, y, Penalty::euclidean(lambda)?)?;
            let lv = traced(&problem, SolverConfig::unchecked(1.0, 1.0)?)?;
            let ista = ista_for_problem(&problem, 1.0, n, TraceMode::Snapshots)?;
            Ok(Instance {
                problem,
                runs: vec![Run { algorithm: "lv", result: lv }, Run { algorithm: "ista", result: ista }],
                compare_dual: Some(false),
            })
        }
        Family::Denoise => {
            let img = piecewise_constant_image(args.rows, args.cols);
            let noise = random_vector(img.len(), seed);
            let scale = args.noise_frac * vector::norm(&img) / vector::norm(&noise).max(f64::MIN_POSITIVE);
            let g: Vec<f64> = img.iter().zip(&noise).map(|(a, b)| a + scale * b).collect();
            let problem = make_tv_denoise(&g, 0.25, GridShape::TwoD { rows: args.rows, cols: args.cols })?;
            let sigma = 0.99 / problem.a_norm_sq_bound();
            let lv = traced(&problem, SolverConfig::new(&problem, 1.0, sigma)?)?;
            let gp = gradient_projection_for_problem(&problem, sigma, n, TraceMode::Snapshots)?;
            Ok(Instance {
                problem,
                runs: vec![Run { algorithm: "lv", result: lv }, Run { algorithm: "gp", result: gp }],
                compare_dual: Some(true),
            })
        }
    }
}

fn bench_one(family: Family, seed: u64, args: &BenchArgs) -> CliResult<Vec<Vec<String>>> {
    let inst = build(family, seed, args)?;
    let reference: Reference = reference_solution(&inst.problem, &ReferenceOptions::default())?;
    let deviations: Option<Vec<f64>> = inst.compare_dual.map(|dual| {
        snapshots(&inst.runs[0].result)
            .iter()
            .zip(snapshots(&inst.runs[1].result))
            .map(|(a, b)| if dual { vector::max_abs_diff(&a.w, &b.w) } else { vector::max_abs_diff(&a.x, &b.x) })
            .collect()
    });
    let mut records = Vec::new();
    for run in &inst.runs {
        let rows = &run.result.trace.as_ref().expect("traced run").rows;
        let snaps = snapshots(&run.result);
        for row in rows {
            if row.n % args.every != 0 && row.n != rows.len() {
                continue;
            }
            let x = &snaps[row.n].x;
            records.push(vec![
                family.name().to_string(),
                seed.to_string(),
                run.algorithm.to_string(),
                row.n.to_string(),
                fmt_real(row.objective),
                fmt_real(row.fp_residual),
                fmt_real(vector::dist(x, &reference.x)),
                deviations.as_ref().map(|d| fmt_real(d[row.n])).unwrap_or_default(),
            ]);
        }
    }
    Ok(records)
}

pub fn render(args: &BenchArgs) -> CliResult<String> {
    if !(0.0..1.0).contains(&args.noise_frac) {
        return Err(CliError::Input(format!("--noise-frac must lie in [0, 1), got {}", args.noise_frac)));
    }
    let jobs: Vec<(Family, u64)> = args
        .family
        .iter()
        .flat_map(|f| args.seed.iter().map(move |s| (*f, *s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))?;
    let results: Vec<CliResult<Vec<Vec<String>>>> =
        pool.install(|| jobs.par_iter().map(|(f, s)| bench_one(*f, *s, args)).collect());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BENCH_HEADER).expect("writing to memory");
    for r in results {
        for rec in r? {
            w.write_record(&rec).expect("writing to memory");
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii output"))
}

pub fn run(args: &BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    let text = render(args)?;
    match &args.out {
        Some(p) => formats::write_outputs(&[(p, text.as_bytes())]),
        None => crate::emit(out, &text),
    }
}
