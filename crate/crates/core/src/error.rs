use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step size violates convergence condition: {0}")]
    StepSize(String),

    #[error("non-finite value in {field} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        field: &'static str,
    },

    #[error("iteration diverged at step {iteration}: |x| = {norm:e} exceeds {limit:e}")]
    Diverged {
        iteration: usize,
        norm: f64,
        limit: f64,
    },

    #[error("problem is outside the special case handled here: {0}")]
    UnsupportedProblem(String),

    #[error(
        "target residual {target:e} outside achievable interval [{low:e}, {high:e}]"
    )]
    Bracket { target: f64, low: f64, high: f64 },

    #[error("residual not monotone in lambda: {0}")]
    NonMonotone(String),

    #[error("reference not certified: primal residual {primal:e}, dual residual {dual:e}, tolerance {tol:e}")]
    Uncertified { primal: f64, dual: f64, tol: f64 },

    #[error("dual variable infeasible in block {block}: dual norm {norm} > lambda {lambda}")]
    InfeasibleDual { block: usize, norm: f64, lambda: f64 },

    #[error("trace is missing iterate snapshots")]
    MissingSnapshots,

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
