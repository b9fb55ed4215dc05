//! Linear operators with adjoints, block structure and norm bounds.
//!
//! Every operator used by the solver (the data operator `K` and the penalty
//! operator `A`) is a [`LinearOp`] built by one of the constructors here. The
//! output of an operator is partitioned into blocks; the penalty acts on each
//! block through a within-block norm, so the partition lives on the operator.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::vector;

/// Multiplier applied to the power-iteration estimate of `‖op‖²`.
pub const NORM_SAFETY_FACTOR: f64 = 1.01;
pub const DEFAULT_NORM_TOL: f64 = 1e-6;
pub const DEFAULT_NORM_MAX_ITER: usize = 500;
const NORM_SEED: u64 = 0x5eed_0f_c0ffee;

/// Partition of an operator's output into consecutive blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    total: usize,
    kind: LayoutKind,
}

#[derive(Debug, Clone, PartialEq)]
enum LayoutKind {
    Uniform(usize),
    /// Block boundaries; `offsets[0] == 0`, last entry is the total length.
    Offsets(Vec<usize>),
}

impl BlockLayout {
    pub fn uniform(total: usize, block_dim: usize) -> Result<Self> {
        if block_dim == 0 || total % block_dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "block dimension {block_dim} does not divide output dimension {total}"
            )));
        }
        Ok(Self {
            total,
            kind: LayoutKind::Uniform(block_dim),
        })
    }

    pub fn scalar(total: usize) -> Self {
        Self {
            total,
            kind: LayoutKind::Uniform(1),
        }
    }

    /// Variable-size blocks, one per entry of `sizes`.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &s in sizes {
            if s == 0 {
                return Err(Error::InvalidArgument("empty block".into()));
            }
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(Self {
            total: *offsets.last().unwrap(),
            kind: LayoutKind::Offsets(offsets),
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn num_blocks(&self) -> usize {
        match &self.kind {
            LayoutKind::Uniform(d) => self.total / d,
            LayoutKind::Offsets(o) => o.len() - 1,
        }
    }

    /// The common block dimension, or `None` for variable-size blocks.
    pub fn block_dim(&self) -> Option<usize> {
        match &self.kind {
            LayoutKind::Uniform(d) => Some(*d),
            LayoutKind::Offsets(_) => None,
        }
    }

    pub fn block(&self, i: usize) -> Range<usize> {
        match &self.kind {
            LayoutKind::Uniform(d) => i * d..(i + 1) * d,
            LayoutKind::Offsets(o) => o[i]..o[i + 1],
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_blocks()).map(move |i| self.block(i))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks().map(|r| r.len()).collect()
    }
}

/// Grid shape of the unknown for gradient operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridShape {
    OneD(usize),
    TwoD { rows: usize, cols: usize },
}

impl GridShape {
    pub fn len(&self) -> usize {
        match *self {
            GridShape::OneD(n) => n,
            GridShape::TwoD { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Compressed sparse rows; built from triplets sorted by (row, col) with
/// duplicates summed.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// Row-major entries.
    Dense(Vec<f64>),
    Sparse(Csr),
    Gradient1d,
    Gradient2d { rows: usize, cols: usize },
    /// Output entry `k` copies input entry `indices[k]`.
    GroupSelector { indices: Vec<usize> },
    Identity,
    Scaled { inner: Box<LinearOp>, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    /// Inflated upper bound on `‖op‖²`.
    pub value: f64,
    /// Raw Rayleigh quotient before inflation.
    pub rayleigh: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOp {
    in_dim: usize,
    out_dim: usize,
    layout: BlockLayout,
    kind: OpKind,
}

impl LinearOp {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("identity of dimension 0".into()));
        }
        Ok(Self {
            in_dim: n,
            out_dim: n,
            layout: BlockLayout::scalar(n),
            kind: OpKind::Identity,
        })
    }

    pub fn dense(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "dense matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        check_len("dense matrix entries", rows * cols, entries.len())?;
        if !vector::all_finite(&entries) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self {
            in_dim: cols,
            out_dim: rows,
            layout: BlockLayout::scalar(rows),
            kind: OpKind::Dense(entries),
        })
    }

    pub fn sparse(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "sparse matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        let mut sorted = triplets.to_vec();
        for &(i, j, v) in &sorted {
            if i >= rows || j >= cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({i}, {j}) out of range for {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite value at ({i}, {j})"
                )));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            in_dim: cols,
            out_dim: rows,
            layout: BlockLayout::scalar(rows),
            kind: OpKind::Sparse(Csr {
                row_ptr,
                col_idx,
                values,
            }),
        })
    }

    /// Forward-difference gradient. In 1D the output has `n - 1` scalar
    /// blocks. In 2D every pixel `(i, j)` gets a block `(∂x, ∂y)` where
    /// `∂x = x[i, j+1] - x[i, j]` and `∂y = x[i+1, j] - x[i, j]`, with the
    /// difference set to zero on the last column/row.
    pub fn gradient(shape: GridShape) -> Result<Self> {
        match shape {
            GridShape::OneD(n) => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "gradient needs at least 2 samples, got {n}"
                    )));
                }
                Ok(Self {
                    in_dim: n,
                    out_dim: n - 1,
                    layout: BlockLayout::scalar(n - 1),
                    kind: OpKind::Gradient1d,
                })
            }
            GridShape::TwoD { rows, cols } => {
                if rows < 2 || cols < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "2D gradient needs at least 2x2 pixels, got {rows}x{cols}"
                    )));
                }
                let n = rows * cols;
                Ok(Self {
                    in_dim: n,
                    out_dim: 2 * n,
                    layout: BlockLayout::uniform(2 * n, 2)?,
                    kind: OpKind::Gradient2d { rows, cols },
                })
            }
        }
    }

    /// Selection operator with one output block per group. Groups may
    /// overlap; each row has a single 1.
    pub fn group_selector(groups: &[Vec<usize>], in_dim: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidArgument("no groups given".into()));
        }
        if in_dim == 0 {
            return Err(Error::InvalidArgument("input dimension 0".into()));
        }
        let mut indices = Vec::new();
        let mut sizes = Vec::with_capacity(groups.len());
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidArgument(format!("group {g} is empty")));
            }
            if let Some(&bad) = group.iter().find(|&&i| i >= in_dim) {
                return Err(Error::InvalidArgument(format!(
                    "group {g} index {bad} out of range for dimension {in_dim}"
                )));
            }
            indices.extend_from_slice(group);
            sizes.push(group.len());
        }
        Ok(Self {
            in_dim,
            out_dim: indices.len(),
            layout: BlockLayout::from_sizes(&sizes)?,
            kind: OpKind::GroupSelector { indices },
        })
    }

    /// `c · op`, keeping the block layout of `op`.
    pub fn scaled(op: LinearOp, factor: f64) -> Result<Self> {
        if !factor.is_finite() {
            return Err(Error::InvalidArgument("non-finite scale factor".into()));
        }
        Ok(Self {
            in_dim: op.in_dim,
            out_dim: op.out_dim,
            layout: op.layout.clone(),
            kind: OpKind::Scaled {
                inner: Box::new(op),
                factor,
            },
        })
    }

    /// Regroup the output into uniform blocks of `block_dim`.
    pub fn with_block_dim(mut self, block_dim: usize) -> Result<Self> {
        self.layout = BlockLayout::uniform(self.out_dim, block_dim)?;
        Ok(self)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn kind(&self) -> &OpKind {
        &self.kind
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, OpKind::Identity)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.out_dim];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    pub fn adjoint_apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.in_dim];
        self.adjoint_apply_into(w, &mut out)?;
        Ok(out)
    }

    /// `out = op · x`, overwriting `out`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("operator input", self.in_dim, x.len())?;
        check_len("operator output", self.out_dim, out.len())?;
        match &self.kind {
            OpKind::Identity => out.copy_from_slice(x),
            OpKind::Dense(a) => {
                for (row, o) in a.chunks_exact(self.in_dim).zip(out.iter_mut()) {
                    *o = vector::dot(row, x);
                }
            }
            OpKind::Sparse(csr) => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = csr.row(r).map(|(c, v)| v * x[c]).sum();
                }
            }
            OpKind::Gradient1d => {
                for (o, pair) in out.iter_mut().zip(x.windows(2)) {
                    *o = pair[1] - pair[0];
                }
            }
            &OpKind::Gradient2d { rows, cols } => {
                for r in 0..rows {
                    for c in 0..cols {
                        let p = r * cols + c;
                        out[2 * p] = if c + 1 < cols { x[p + 1] - x[p] } else { 0.0 };
                        out[2 * p + 1] = if r + 1 < rows { x[p + cols] - x[p] } else { 0.0 };
                    }
                }
            }
            OpKind::GroupSelector { indices } => {
                for (o, &i) in out.iter_mut().zip(indices) {
                    *o = x[i];
                }
            }
            OpKind::Scaled { inner, factor } => {
                inner.apply_into(x, out)?;
                out.iter_mut().for_each(|v| *v *= factor);
            }
        }
        Ok(())
    }

    /// `out = opᵀ · w`, overwriting `out`.
    pub fn adjoint_apply_into(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("adjoint input", self.out_dim, w.len())?;
        check_len("adjoint output", self.in_dim, out.len())?;
        match &self.kind {
            OpKind::Identity => out.copy_from_slice(w),
            OpKind::Dense(a) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (row, &wr) in a.chunks_exact(self.in_dim).zip(w) {
                    for (o, &aij) in out.iter_mut().zip(row) {
                        *o += aij * wr;
                    }
                }
            }
            OpKind::Sparse(csr) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (r, &wr) in w.iter().enumerate() {
                    for (c, v) in csr.row(r) {
                        out[c] += v * wr;
                    }
                }
            }
            OpKind::Gradient1d => {
                let n = self.in_dim;
                out[0] = -w[0];
                for i in 1..n - 1 {
                    out[i] = w[i - 1] - w[i];
                }
                out[n - 1] = w[n - 2];
            }
            &OpKind::Gradient2d { rows, cols } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..rows {
                    for c in 0..cols {
                        let p = r * cols + c;
                        if c + 1 < cols {
                            let gx = w[2 * p];
                            out[p + 1] += gx;
                            out[p] -= gx;
                        }
                        if r + 1 < rows {
                            let gy = w[2 * p + 1];
                            out[p + cols] += gy;
                            out[p] -= gy;
                        }
                    }
                }
            }
            OpKind::GroupSelector { indices } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (&wk, &i) in w.iter().zip(indices) {
                    out[i] += wk;
                }
            }
            OpKind::Scaled { inner, factor } => {
                inner.adjoint_apply_into(w, out)?;
                out.iter_mut().for_each(|v| *v *= factor);
            }
        }
        Ok(())
    }

    /// Upper bound on `‖op‖²` (largest eigenvalue of `opᵀop`) by power
    /// iteration from a fixed pseudo-random start, inflated by
    /// [`NORM_SAFETY_FACTOR`]. A zero operator yields 0.
    pub fn norm_sq_estimate(&self, tol: f64, max_iter: usize) -> Result<NormEstimate> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
        }
        if max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if let OpKind::Scaled { inner, factor } = &self.kind {
            let est = inner.norm_sq_estimate(tol, max_iter)?;
            let f2 = factor * factor;
            return Ok(NormEstimate {
                value: est.value * f2,
                rayleigh: est.rayleigh * f2,
                ..est
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(NORM_SEED);
        let mut v: Vec<f64> = (0..self.in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nv = vector::norm(&v);
        v.iter_mut().for_each(|e| *e /= nv);

        let mut av = vec![0.0; self.out_dim];
        let mut u = vec![0.0; self.in_dim];
        let mut rayleigh = 0.0;
        for it in 1..=max_iter {
            self.apply_into(&v, &mut av)?;
            self.adjoint_apply_into(&av, &mut u)?;
            let next = vector::norm_sq(&av);
            let nu = vector::norm(&u);
            if nu == 0.0 {
                return Ok(NormEstimate {
                    value: 0.0,
                    rayleigh: 0.0,
                    iterations: it,
                    converged: true,
                });
            }
            let done = it > 1 && (next - rayleigh).abs() <= tol * next;
            rayleigh = next;
            if done {
                return Ok(NormEstimate {
                    value: NORM_SAFETY_FACTOR * rayleigh,
                    rayleigh,
                    iterations: it,
                    converged: true,
                });
            }
            for (vi, ui) in v.iter_mut().zip(&u) {
                *vi = ui / nu;
            }
        }
        Ok(NormEstimate {
            value: NORM_SAFETY_FACTOR * rayleigh,
            rayleigh,
            iterations: max_iter,
            converged: false,
        })
    }

    /// [`Self::norm_sq_estimate`] with the default tolerance and budget.
    pub fn norm_sq_bound(&self) -> f64 {
        self.norm_sq_estimate(DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITER)
            .map(|e| e.value)
            .expect("default norm-estimate parameters are valid")
    }

    /// Materialize as a row-major `out_dim × in_dim` matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.out_dim * self.in_dim];
        let mut e = vec![0.0; self.in_dim];
        let mut col = vec![0.0; self.out_dim];
        for j in 0..self.in_dim {
            e[j] = 1.0;
            self.apply_into(&e, &mut col).expect("sizes match");
            for (i, &v) in col.iter().enumerate() {
                m[i * self.in_dim + j] = v;
            }
            e[j] = 0.0;
        }
        m
    }
}
