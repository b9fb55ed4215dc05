//! Penalties `H(u) = λ Σᵢ |uᵢ|` over operator blocks and their proximity
//! operators.
//!
//! The conjugate `H*` of every shipped penalty is the indicator of a dual-norm
//! ball of radius `λ` per block, so `prox_{cH*}` is a projection for every
//! `c > 0` and `prox_H` follows from the Moreau identity
//! `prox_H(u) + prox_{H*}(u) = u`.
//!
//! | within-block norm | dual norm | `prox_{H*}` per block          |
//! |-------------------|-----------|--------------------------------|
//! | Euclidean         | Euclidean | radial clip to the `λ`-ball    |
//! | 1-norm            | ∞-norm    | clamp each entry to `[-λ, λ]`  |
//! | ∞-norm            | 1-norm    | projection onto the `ℓ1` ball  |

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linops::BlockLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[serde(alias = "block-euclidean")]
    Euclidean,
    #[serde(alias = "block-l1")]
    L1,
    #[serde(alias = "block-linf")]
    Linf,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::Euclidean => "euclidean",
            NormKind::L1 => "l1",
            NormKind::Linf => "linf",
        }
    }

    /// Within-block norm `|u|`.
    pub fn norm(self, block: &[f64]) -> f64 {
        match self {
            NormKind::Euclidean => euclid(block),
            NormKind::L1 => block.iter().map(|v| v.abs()).sum(),
            NormKind::Linf => block.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        }
    }

    /// Norm whose unit ball is the domain of the conjugate.
    pub fn dual_norm(self, block: &[f64]) -> f64 {
        match self {
            NormKind::Euclidean => euclid(block),
            NormKind::L1 => NormKind::Linf.norm(block),
            NormKind::Linf => NormKind::L1.norm(block),
        }
    }
}

fn euclid(block: &[f64]) -> f64 {
    if let [v] = block {
        v.abs()
    } else {
        block.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Relative slack on the ball boundary. Points within rounding of the sphere
/// count as inside, which makes every projection exactly idempotent.
fn boundary_slack(dim: usize) -> f64 {
    (dim as f64 + 4.0) * f64::EPSILON
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    lambda: f64,
    kind: NormKind,
}

impl Penalty {
    pub fn new(lambda: f64, kind: NormKind) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty weight must be positive and finite, got {lambda}"
            )));
        }
        Ok(Self { lambda, kind })
    }

    pub fn euclidean(lambda: f64) -> Result<Self> {
        Self::new(lambda, NormKind::Euclidean)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.kind)
    }

    /// `λ Σᵢ |uᵢ|` with the within-block norm of this penalty.
    pub fn value(&self, layout: &BlockLayout, u: &[f64]) -> Result<f64> {
        check_len("penalty argument", layout.len(), u.len())?;
        let sum: f64 = layout.blocks().map(|r| self.kind.norm(&u[r])).sum();
        Ok(self.lambda * sum)
    }

    /// Largest per-block dual norm of `w` and the block attaining it.
    pub fn max_dual_norm(&self, layout: &BlockLayout, w: &[f64]) -> Result<(usize, f64)> {
        check_len("dual variable", layout.len(), w.len())?;
        Ok(layout
            .blocks()
            .enumerate()
            .map(|(i, r)| (i, self.kind.dual_norm(&w[r])))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best }))
    }

    /// Whether `w` lies in the domain of `H*` up to a relative tolerance.
    pub fn check_dual_feasible(&self, layout: &BlockLayout, w: &[f64], rel_tol: f64) -> Result<()> {
        let (block, norm) = self.max_dual_norm(layout, w)?;
        if norm > self.lambda * (1.0 + rel_tol) {
            return Err(Error::InfeasibleDual {
                block,
                norm,
                lambda: self.lambda,
            });
        }
        Ok(())
    }

    fn require_euclidean(&self, op: &str) -> Result<()> {
        if self.kind != NormKind::Euclidean {
            return Err(Error::InvalidArgument(format!(
                "{op} is defined for the Euclidean block norm, penalty uses {}",
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Block soft-thresholding `S_λ`: shrink each block's length by `λ`,
    /// zeroing blocks with `|u| ≤ λ`.
    pub fn soft_threshold(&self, layout: &BlockLayout, u: &[f64]) -> Result<Vec<f64>> {
        self.require_euclidean("soft-thresholding")?;
        check_len("soft-threshold argument", layout.len(), u.len())?;
        let mut out = vec![0.0; u.len()];
        for r in layout.blocks() {
            let block = &u[r.clone()];
            let n = euclid(block);
            if n > self.lambda * (1.0 + boundary_slack(block.len())) {
                let f = self.lambda / n;
                for (o, &v) in out[r].iter_mut().zip(block) {
                    *o = v - v * f;
                }
            }
        }
        Ok(out)
    }

    /// Projection `P_λ` onto the per-block Euclidean ball of radius `λ`.
    pub fn project_linf_ball(&self, layout: &BlockLayout, u: &[f64]) -> Result<Vec<f64>> {
        self.require_euclidean("l-infinity ball projection")?;
        let mut out = vec![0.0; u.len()];
        self.prox_conjugate_into(layout, u, 1.0, &mut out)?;
        Ok(out)
    }

    /// `prox_{scale·H*}(u)`. The conjugate is an indicator, so the result does
    /// not depend on `scale`; it is still validated.
    pub fn prox_conjugate(&self, layout: &BlockLayout, u: &[f64], scale: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; u.len()];
        self.prox_conjugate_into(layout, u, scale, &mut out)?;
        Ok(out)
    }

    pub fn prox_conjugate_into(
        &self,
        layout: &BlockLayout,
        u: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("prox scale must be positive, got {scale}")));
        }
        check_len("prox argument", layout.len(), u.len())?;
        check_len("prox output", layout.len(), out.len())?;
        let lambda = self.lambda;
        for r in layout.blocks() {
            let block = &u[r.clone()];
            let dst = &mut out[r];
            match self.kind {
                NormKind::Euclidean => {
                    let n = euclid(block);
                    if n > lambda * (1.0 + boundary_slack(block.len())) {
                        let f = lambda / n;
                        for (o, &v) in dst.iter_mut().zip(block) {
                            *o = v * f;
                        }
                    } else {
                        dst.copy_from_slice(block);
                    }
                }
                NormKind::L1 => {
                    for (o, &v) in dst.iter_mut().zip(block) {
                        *o = v.clamp(-lambda, lambda);
                    }
                }
                NormKind::Linf => project_l1_ball_into(block, lambda, dst),
            }
        }
        Ok(())
    }

    /// `u - prox_{scale·H*}(u)`, which is `prox_H(u)` for these penalties.
    pub fn prox_primal(&self, layout: &BlockLayout, u: &[f64], scale: f64) -> Result<Vec<f64>> {
        let p = self.prox_conjugate(layout, u, scale)?;
        Ok(u.iter().zip(&p).map(|(a, b)| a - b).collect())
    }
}

/// Euclidean projection of `v` onto `{z : Σ|zᵢ| ≤ radius}` by sorting the
/// magnitudes and locating the soft-threshold level.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "l1-ball radius must be positive and finite, got {radius}"
        )));
    }
    let mut out = vec![0.0; v.len()];
    project_l1_ball_into(v, radius, &mut out);
    Ok(out)
}

fn project_l1_ball_into(v: &[f64], radius: f64, out: &mut [f64]) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius * (1.0 + boundary_slack(v.len())) {
        out.copy_from_slice(v);
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (j + 1) as f64;
        if m - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for (o, &x) in out.iter_mut().zip(v) {
        *o = x.signum() * (x.abs() - theta).max(0.0);
    }
    // `|x| − θ` cancels badly when the entries dwarf the radius; pull the
    // result back onto the sphere so a second projection is a no-op.
    let s: f64 = out.iter().map(|x| x.abs()).sum();
    if s > radius {
        let f = radius / s;
        out.iter_mut().for_each(|o| *o *= f);
    }
}
