use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use nsp_core::solver::{lv_solve, SolverConfig, TraceMode, DEFAULT_FP_TOL, DEFAULT_MAX_ITER};

use crate::error::{CliError, CliResult};
use crate::formats::{self, fmt_real};
use crate::problem_file;

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Problem document (JSON).
    #[arg(long)]
    pub problem: PathBuf,
    /// Solution vector output.
    #[arg(long)]
    pub out: PathBuf,
    /// Dual vector output.
    #[arg(long)]
    pub dual: Option<PathBuf>,
    /// Per-iteration trace (CSV).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER, value_parser = crate::positive_count)]
    pub max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_FP_TOL)]
    pub fp_tol: f64,
    /// Primal step; derived from the operator norms when omitted.
    #[arg(long, requires = "sigma")]
    pub tau: Option<f64>,
    /// Dual step; derived from the operator norms when omitted.
    #[arg(long, requires = "tau")]
    pub sigma: Option<f64>,
    /// Accept --tau/--sigma even when they violate the convergence condition.
    #[arg(long, requires = "tau")]
    pub unchecked_steps: bool,
    /// Write the running averages of the iterates instead of the last iterate.
    #[arg(long)]
    pub average: bool,
}

pub fn run(args: &SolveArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(args.fp_tol >= 0.0) {
        return Err(CliError::Input(format!("--fp-tol must be non-negative, got {}", args.fp_tol)));
    }
    let problem = problem_file::load_problem(&args.problem)?;
    let cfg = match (args.tau, args.sigma) {
        (Some(t), Some(s)) if args.unchecked_steps => SolverConfig::unchecked(t, s)?,
        (Some(t), Some(s)) => SolverConfig::new(&problem, t, s)?,
        _ => SolverConfig::with_default_steps(&problem)?,
    };
    let cfg = cfg
        .max_iter(args.max_iter)
        .fp_tol(args.fp_tol)
        .trace(if args.trace.is_some() { TraceMode::Rows } else { TraceMode::Off });
    let res = lv_solve(&problem, &cfg)?;
    let (x, w) = if args.average { (&res.x_avg, &res.w_avg) } else { (&res.x, &res.w) };

    let x_text = formats::render_vector(x);
    let w_text = args.dual.as_ref().map(|_| formats::render_vector(w));
    let trace_text = args
        .trace
        .as_ref()
        .map(|_| formats::render_trace(&res.trace.as_ref().expect("trace requested").rows));
    let mut outputs: Vec<(&std::path::Path, &[u8])> = vec![(&args.out, x_text.as_bytes())];
    if let (Some(p), Some(t)) = (&args.dual, &w_text) {
        outputs.push((p, t.as_bytes()));
    }
    if let (Some(p), Some(t)) = (&args.trace, &trace_text) {
        outputs.push((p, t.as_bytes()));
    }
    formats::write_outputs(&outputs)?;

    let objective = problem.objective(x)?;
    crate::emit(
        out,
        &format!(
            "iterations {}\nobjective {}\nfp_residual {}\n",
            res.iterations,
            fmt_real(objective),
            fmt_real(res.final_fp_residual)
        ),
    )
}
