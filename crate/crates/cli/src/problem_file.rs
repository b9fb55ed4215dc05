//! JSON problem documents.
//!
//! ```json
//! {
//!   "K": {"type": "identity", "n": 2},
//!   "A": {"type": "gradient", "n": 2},
//!   "y": [0.0, 10.0],
//!   "penalty": {"lambda": 1.0, "norm_kind": "euclidean"}
//! }
//! ```
//!
//! Operators are tagged by `type`: `dense` (`rows`, `cols`, `data` row-major,
//! or `path` to a CSV file), `sparse` (`rows`, `cols`, and `triplets` or
//! `path` to an `i j v` file), `identity` (`n`), `gradient` (`n` for 1D or
//! `rows` and `cols` for 2D) and `groups` (`in_dim`, `groups`). Any operator
//! may carry `block_dim` to regroup its output into uniform blocks; a
//! top-level `blocks` does the same for `A`. The data vector is inline or
//! `{"path": ...}`. Relative paths resolve against the document's directory.

use std::path::{Path, PathBuf};

use nsp_core::{GridShape, LinearOp, NormKind, Penalty, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum OperatorSpec {
    Dense {
        #[serde(default)]
        rows: Option<usize>,
        #[serde(default)]
        cols: Option<usize>,
        #[serde(default)]
        data: Option<Vec<f64>>,
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        block_dim: Option<usize>,
    },
    Sparse {
        rows: usize,
        cols: usize,
        #[serde(default)]
        triplets: Option<Vec<(usize, usize, f64)>>,
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        block_dim: Option<usize>,
    },
    Identity {
        n: usize,
        #[serde(default)]
        block_dim: Option<usize>,
    },
    Gradient {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        rows: Option<usize>,
        #[serde(default)]
        cols: Option<usize>,
    },
    Groups {
        in_dim: usize,
        groups: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Inline(Vec<f64>),
    File { path: PathBuf },
}

fn default_kind() -> NormKind {
    NormKind::Euclidean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub lambda: f64,
    #[serde(default = "default_kind")]
    pub norm_kind: NormKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(rename = "K")]
    pub k: OperatorSpec,
    #[serde(rename = "A")]
    pub a: OperatorSpec,
    pub y: VectorSpec,
    pub penalty: PenaltySpec,
    /// Uniform block size for `A`'s output.
    #[serde(default)]
    pub blocks: Option<usize>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn regroup(op: LinearOp, block_dim: Option<usize>) -> CliResult<LinearOp> {
    match block_dim {
        Some(d) => Ok(op.with_block_dim(d)?),
        None => Ok(op),
    }
}

fn exactly_one<T>(doc: &Path, what: &str, inline: Option<T>, path: Option<&PathBuf>) -> CliResult<Result<T, PathBuf>> {
    match (inline, path) {
        (Some(v), None) => Ok(Ok(v)),
        (None, Some(p)) => Ok(Err(p.clone())),
        _ => Err(CliError::input(doc, format!("{what}: give exactly one of an inline payload or `path`"))),
    }
}

impl OperatorSpec {
    pub fn build(&self, doc: &Path, base: &Path, name: &str) -> CliResult<LinearOp> {
        let op = match self {
            OperatorSpec::Dense {
                rows,
                cols,
                data,
                path,
                block_dim,
            } => {
                let (r, c, entries) = match exactly_one(doc, name, data.clone(), path.as_ref())? {
                    Ok(d) => {
                        let (Some(r), Some(c)) = (*rows, *cols) else {
                            return Err(CliError::input(doc, format!("{name}: inline dense data needs `rows` and `cols`")));
                        };
                        (r, c, d)
                    }
                    Err(p) => {
                        let file = resolve(base, &p);
                        let (r, c, d) = formats::read_dense_csv(&file)?;
                        if rows.is_some_and(|x| x != r) || cols.is_some_and(|x| x != c) {
                            return Err(CliError::input(&file, format!("{name}: file is {r}x{c}, document says otherwise")));
                        }
                        (r, c, d)
                    }
                };
                regroup(LinearOp::dense(r, c, entries)?, *block_dim)?
            }
            OperatorSpec::Sparse {
                rows,
                cols,
                triplets,
                path,
                block_dim,
            } => {
                let t = match exactly_one(doc, name, triplets.clone(), path.as_ref())? {
                    Ok(t) => t,
                    Err(p) => formats::read_triplets(&resolve(base, &p))?,
                };
                regroup(LinearOp::sparse(*rows, *cols, &t)?, *block_dim)?
            }
            OperatorSpec::Identity { n, block_dim } => regroup(LinearOp::identity(*n)?, *block_dim)?,
            OperatorSpec::Gradient { n, rows, cols } => {
                let shape = match (n, rows, cols) {
                    (Some(n), None, None) => GridShape::OneD(*n),
                    (None, Some(r), Some(c)) => GridShape::TwoD { rows: *r, cols: *c },
                    _ => return Err(CliError::input(doc, format!("{name}: gradient needs `n` or both `rows` and `cols`"))),
                };
                LinearOp::gradient(shape)?
            }
            OperatorSpec::Groups { in_dim, groups } => LinearOp::group_selector(groups, *in_dim)?,
        };
        Ok(op)
    }
}

impl VectorSpec {
    pub fn load(&self, base: &Path) -> CliResult<Vec<f64>> {
        match self {
            VectorSpec::Inline(v) => Ok(v.clone()),
            VectorSpec::File { path } => formats::read_vector(&resolve(base, path)),
        }
    }
}

pub fn parse_spec(doc: &Path, text: &str) -> CliResult<ProblemSpec> {
    serde_json::from_str(text).map_err(|e| CliError::input(doc, e))
}

impl ProblemSpec {
    pub fn build(&self, doc: &Path) -> CliResult<Problem> {
        let base = doc.parent().unwrap_or(Path::new("."));
        let k = self.k.build(doc, base, "K")?;
        let a = regroup(self.a.build(doc, base, "A")?, self.blocks)?;
        let y = self.y.load(base)?;
        let penalty = Penalty::new(self.penalty.lambda, self.penalty.norm_kind)?;
        Ok(Problem::new(k, a, y, penalty)?)
    }
}

/// Reads and validates a problem document with all its side files.
pub fn load_problem(doc: &Path) -> CliResult<Problem> {
    let text = formats::read_text(doc)?;
    parse_spec(doc, &text)?.build(doc)
}
