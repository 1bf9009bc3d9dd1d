//! The budget contract shared by every attack: norm family, radius, step
//! schedule, and the projection operator that enforces containment.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
    L0,
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::Linf => write!(f, "linf"),
            Norm::L2 => write!(f, "l2"),
            Norm::L0 => write!(f, "l0"),
        }
    }
}

/// Perturbation budget. `epsilon` is per-coordinate for `Linf`, a radius over
/// the flattened cloud for `L2`, and a point count for `L0`. An `epsilon` of
/// zero is allowed as a degenerate budget (the projection collapses to the
/// original), which is what makes zero-strength adversarial training coincide
/// with plain training.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackBudget {
    pub norm: Norm,
    pub epsilon: f64,
    pub steps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl AttackBudget {
    /// Standard step size: `alpha = 2.5 * epsilon / steps`.
    fn default_alpha(epsilon: f64, steps: usize) -> f64 {
        2.5 * epsilon / steps.max(1) as f64
    }

    pub fn linf(epsilon: f64, steps: usize, seed: u64) -> Self {
        Self {
            norm: Norm::Linf,
            epsilon,
            steps,
            alpha: Self::default_alpha(epsilon, steps),
            seed,
        }
    }

    pub fn l2(epsilon: f64, steps: usize, seed: u64) -> Self {
        Self {
            norm: Norm::L2,
            epsilon,
            steps,
            alpha: Self::default_alpha(epsilon, steps),
            seed,
        }
    }

    pub fn l0(points: usize, steps: usize, seed: u64) -> Self {
        Self {
            norm: Norm::L0,
            epsilon: points as f64,
            steps,
            alpha: 0.05, // coordinate step for optimizing added points
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Attack(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.norm == Norm::L0 && self.epsilon.fract() != 0.0 {
            return Err(Error::Attack(format!(
                "l0 epsilon must be an integer point count, got {}",
                self.epsilon
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Attack("alpha must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn l0_points(&self) -> usize {
        self.epsilon as usize
    }
}

/// Clip every coordinate into the valid data cube `[-1, 1]`.
pub(crate) fn clip_cube(mut pts: Array2<f64>) -> Array2<f64> {
    pts.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    pts
}

/// Project `x` onto the budget ball around `x0`, then into the data cube.
///
/// For `Linf`/`L2` the shapes must match; callers must keep `x0` inside the
/// cube (all dataset clouds are) for the projection to be idempotent. For
/// `L0` the cardinality budget is enforced by the attacks themselves and only
/// the cube clip applies here.
pub fn project_to_budget(
    x: &PointCloud,
    x0: &PointCloud,
    budget: &AttackBudget,
) -> Result<PointCloud> {
    budget.validate()?;
    if budget.norm == Norm::L0 {
        return PointCloud::new(clip_cube(x.points().to_owned()));
    }
    if x.n_points() != x0.n_points() {
        return Err(Error::Attack(format!(
            "shape mismatch: {} vs {} points",
            x.n_points(),
            x0.n_points()
        )));
    }
    let mut delta = x.points() - x0.points();
    match budget.norm {
        Norm::Linf => {
            let eps = budget.epsilon;
            delta.mapv_inplace(|d| d.clamp(-eps, eps));
        }
        Norm::L2 => {
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            // The relative slack keeps the projection idempotent: rescaling to
            // the sphere lands a few ulps off the exact radius, and without it
            // a second projection would rescale again by a factor near one.
            if norm > budget.epsilon * (1.0 + 1e-12) {
                let scale = if norm > 0.0 { budget.epsilon / norm } else { 0.0 };
                delta *= scale;
            }
        }
        Norm::L0 => unreachable!(),
    }
    PointCloud::new(clip_cube(x0.points() + &delta))
}

/// True when `x` already satisfies the budget around `x0` (within 1e-12).
pub fn within_budget(x: &PointCloud, x0: &PointCloud, budget: &AttackBudget) -> bool {
    match project_to_budget(x, x0, budget) {
        Ok(p) => {
            let diff = (x.points() - p.points()).mapv(f64::abs);
            diff.iter().all(|&d| d < 1e-12)
        }
        Err(_) => false,
    }
}
