use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use nsp_core::problems::{calibrate_lambda, data_residual, make_tv_denoise, CalibrationOptions};
use nsp_core::solver::{lv_solve, SolverConfig, TraceMode, DEFAULT_FP_TOL, DEFAULT_MAX_ITER};
use nsp_core::{vector, GridShape};

use crate::error::{CliError, CliResult};
use crate::formats::{self, fmt_real};

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Input image (PGM, P2 or P5).
    #[arg(long)]
    pub image: PathBuf,
    /// Regularization weight in pixel units; the starting guess with --calibrate.
    #[arg(long, required_unless_present = "calibrate")]
    pub lambda: Option<f64>,
    /// Output image; written with the input's format and bit depth.
    #[arg(long)]
    pub out: PathBuf,
    /// Choose lambda so that the residual matches the noise level.
    #[arg(long, requires = "noise_frac")]
    pub calibrate: bool,
    /// Noise level as a fraction of the clean image norm.
    #[arg(long)]
    pub noise_frac: Option<f64>,
    /// Iterations per solve (per probe when calibrating).
    #[arg(long, default_value_t = DEFAULT_MAX_ITER, value_parser = crate::positive_count)]
    pub max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_FP_TOL)]
    pub fp_tol: f64,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

/// Residual norm expected when `g = x + ε` with `‖ε‖ = f‖x‖` and the noise
/// roughly orthogonal to the image: `‖ε‖ = f‖g‖/√(1 + f²)`.
pub fn noise_target(g: &[f64], noise_frac: f64) -> f64 {
    noise_frac * vector::norm(g) / (1.0 + noise_frac * noise_frac).sqrt()
}

pub fn run(args: &DenoiseArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(args.fp_tol >= 0.0) {
        return Err(CliError::Input(format!("--fp-tol must be non-negative, got {}", args.fp_tol)));
    }
    if let Some(l) = args.lambda {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(CliError::Input(format!("--lambda must be a non-negative number, got {l}")));
        }
    }
    let img = formats::read_pgm(&args.image)?;
    let g = img.pixels.clone();
    let shape = GridShape::TwoD {
        rows: img.height,
        cols: img.width,
    };

    let lambda_arg = args.lambda.unwrap_or(0.0);
    let (x, lambda, summary, rows) = if !args.calibrate && lambda_arg == 0.0 {
        // the minimizer of ½‖x − g‖² alone
        (g.clone(), 0.0, String::from("iterations 0\n"), Vec::new())
    } else if args.calibrate {
        let f = args.noise_frac.expect("required by clap");
        if !(f > 0.0) || !f.is_finite() {
            return Err(CliError::Input(format!("--noise-frac must be positive, got {f}")));
        }
        let target = noise_target(&g, f);
        let start = if lambda_arg > 0.0 { lambda_arg } else { target / (g.len() as f64).sqrt() };
        let template = make_tv_denoise(&g, start, shape)?;
        let opts = CalibrationOptions {
            budget: args.max_iter,
            ..Default::default()
        };
        let cal = calibrate_lambda(&template, target, &opts)?;
        let summary = format!(
            "probes {}\ntarget_residual {}\nresidual {}\ncalibrated {}\n",
            cal.probes.len(),
            fmt_real(target),
            fmt_real(cal.residual),
            cal.converged
        );
        let p = template.with_lambda(cal.lambda)?;
        let rows = if args.trace.is_some() {
            let cfg = SolverConfig::with_default_steps(&p)?
                .max_iter(args.max_iter)
                .fp_tol(0.0)
                .trace(TraceMode::Rows);
            lv_solve(&p, &cfg)?.trace.map(|t| t.rows).unwrap_or_default()
        } else {
            Vec::new()
        };
        (cal.solution.x, cal.lambda, summary, rows)
    } else {
        let p = make_tv_denoise(&g, lambda_arg, shape)?;
        let cfg = SolverConfig::with_default_steps(&p)?
            .max_iter(args.max_iter)
            .fp_tol(args.fp_tol)
            .start(Some(g.clone()), None)
            .trace(if args.trace.is_some() { TraceMode::Rows } else { TraceMode::Off });
        let res = lv_solve(&p, &cfg)?;
        let summary = format!(
            "iterations {}\nfp_residual {}\n",
            res.iterations,
            fmt_real(res.final_fp_residual)
        );
        (res.x, lambda_arg, summary, res.trace.map(|t| t.rows).unwrap_or_default())
    };

    let image_bytes = formats::render_pgm(&img.with_values(&x));
    let trace_text = args.trace.as_ref().map(|_| formats::render_trace(&rows));
    let mut outputs: Vec<(&std::path::Path, &[u8])> = vec![(&args.out, &image_bytes)];
    if let (Some(p), Some(t)) = (&args.trace, &trace_text) {
        outputs.push((p, t.as_bytes()));
    }
    formats::write_outputs(&outputs)?;

    let objective = if lambda > 0.0 {
        make_tv_denoise(&g, lambda, shape)?.objective(&x)?
    } else {
        0.0
    };
    let misfit = if lambda > 0.0 {
        data_residual(&make_tv_denoise(&g, lambda, shape)?, &x)?
    } else {
        0.0
    };
    crate::emit(
        out,
        &format!(
            "lambda {}\n{summary}objective {}\ndata_residual {}\n",
            fmt_real(lambda),
            fmt_real(objective),
            fmt_real(misfit)
        ),
    )
}
