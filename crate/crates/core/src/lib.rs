//! Explicit primal-dual solver for
//!
//! ```text
//! min_x  ½‖Kx − y‖² + λ Σᵢ |(Ax)ᵢ|
//! ```
//!
//! with non-separable penalties (total variation, analysis sparsity,
//! overlapping group sparsity), the iterative soft-thresholding and dual
//! gradient projection special cases, and saddle-point diagnostics that verify
//! convergence, the `1/N` ergodic rate and monotone error decay.

pub mod diagnostics;
pub mod error;
pub mod linops;
pub mod problems;
pub mod prox;
pub mod reference;
pub mod solver;
pub mod vector;

pub use error::{Error, Result};
pub use linops::{BlockLayout, GridShape, LinearOp};
pub use prox::{NormKind, Penalty};
pub use solver::{lv_solve, lv_step, Problem, SolverConfig, SolverResult, SolverTrace, TraceMode};
