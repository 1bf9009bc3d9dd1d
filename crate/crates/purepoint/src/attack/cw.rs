//! The Carlini-Wagner family: norm-minimizing attacks that descend a margin
//! objective with a Lagrange constant found by binary search, plus a variant
//! regularized to keep every perturbed point inside its clean neighborhood.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::attack::budget::clip_cube;
use crate::attack::{project_to_budget, AttackBudget, AttackResult, AttackSurface, Norm};
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};

/// Neighborhood size for the kNN regularizer.
const KNN_K: usize = 5;

/// Default weight of the spacing term in [`knn_attack`].
pub const DEFAULT_KNN_LAMBDA: f64 = 3.0;

/// Optimizer settings shared by [`cw_attack`] and [`knn_attack`]. The number
/// of descent iterations per constant comes from `budget.steps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CwConfig {
    /// Confidence target: the misclassification term stays active until the
    /// true-label margin falls below `-kappa`.
    pub kappa: f64,
    /// Starting Lagrange constant on the misclassification term.
    pub c_init: f64,
    /// Binary-search rounds refining the constant.
    pub c_rounds: usize,
    /// Descent step size on the perturbation.
    pub lr: f64,
}

impl Default for CwConfig {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            c_init: 1.0,
            c_rounds: 5,
            lr: 0.01,
        }
    }
}

impl CwConfig {
    fn validate(&self) -> Result<()> {
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::Attack("cw kappa must be finite and >= 0".into()));
        }
        if !self.c_init.is_finite() || self.c_init < 0.0 {
            return Err(Error::Attack("cw c_init must be finite and >= 0".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Attack("cw lr must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// What the optimizer produced. The C&W convention reports the perturbation
/// without a radius constraint; budgeted comparisons need the projected
/// version, so both are kept.
#[derive(Debug, Clone)]
pub struct CwOutcome {
    /// Unconstrained cloud projected into the caller's budget and rescored.
    pub clipped: AttackResult,
    /// Raw optimizer output, clipped only to the data cube.
    pub unconstrained: PointCloud,
    /// Whether the unconstrained cloud fools the end-to-end pipeline.
    pub unconstrained_success: bool,
    /// Flattened l2 norm of the unconstrained perturbation.
    pub delta_norm: f64,
}

/// Minimize `||delta||^2 + c * max(margin, -kappa)` by gradient descent,
/// re-running the descent for `cfg.c_rounds` values of `c`: raise `c`
/// tenfold until a round misclassifies, then binary-search the smallest
/// constant that still does. Among all misclassifying iterates the one of
/// smallest norm is kept; if none exists the most adversarial iterate (lowest
/// margin) is returned instead. Deterministic, no random start.
pub fn cw_attack(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    cfg: &CwConfig,
) -> Result<CwOutcome> {
    cw_core(target, sample, budget, cfg, 0.0)
}

/// [`cw_attack`] plus `lambda` times a spacing penalty: the mean distance
/// from each perturbed point to its 5 nearest points of the clean cloud.
/// Points that wander out of their clean neighborhood, the outlier artifact
/// norm-only attacks are known for on point clouds, pay for the excursion;
/// each point's own clean copy sits among its neighbors, so a heavy `lambda`
/// pins the whole perturbation near zero. `lambda = 0` recovers `cw_attack`
/// exactly.
pub fn knn_attack(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    cfg: &CwConfig,
    lambda: f64,
) -> Result<CwOutcome> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Attack("knn lambda must be finite and >= 0".into()));
    }
    cw_core(target, sample, budget, cfg, lambda)
}

fn cw_core(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    cfg: &CwConfig,
    lambda: f64,
) -> Result<CwOutcome> {
    budget.validate()?;
    cfg.validate()?;
    if budget.norm == Norm::L0 {
        return Err(Error::Attack(
            "cw-family attacks need an linf or l2 cap; use the point attacks for l0".into(),
        ));
    }

    let x0 = &sample.cloud;
    let clean = x0.points();

    // Smallest-norm misclassifying iterate across rounds, plus the most
    // adversarial iterate overall as the fallback when none misclassifies.
    let mut best: Option<(f64, PointCloud)> = None;
    let mut fallback = (f64::INFINITY, x0.clone());

    let mut c = cfg.c_init;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut step_key = 0usize;

    for _ in 0..cfg.c_rounds {
        let mut delta: Array2<f64> = Array2::zeros(clean.dim());
        let mut round_hit = false;
        for _ in 0..budget.steps {
            let x = PointCloud::new(clip_cube(clean + &delta))?;
            // Fold the cube clip back into delta so the norm term measures
            // the perturbation actually applied.
            delta = x.points() - clean;

            let (margin, margin_grad) = target.margin_grad(&x, sample.label, step_key)?;
            step_key += 1;
            if !margin.is_finite() {
                return Err(Error::Attack(format!(
                    "cw optimizer diverged: non-finite margin at c = {c}"
                )));
            }

            let norm = flat_l2(&delta);
            if margin < 0.0 {
                round_hit = true;
                if best.as_ref().is_none_or(|(b, _)| norm < *b) {
                    best = Some((norm, x.clone()));
                }
            }
            if margin < fallback.0 {
                fallback = (margin, x.clone());
            }

            let mut grad = &delta * 2.0;
            if margin > -cfg.kappa {
                grad += &(margin_grad * c);
            }
            if lambda > 0.0 {
                let (p, p_grad) = knn_penalty(x.points().view(), clean.view())?;
                if !p.is_finite() {
                    return Err(Error::Attack(
                        "cw optimizer diverged: non-finite spacing penalty".into(),
                    ));
                }
                grad += &(p_grad * lambda);
            }
            delta.scaled_add(-cfg.lr, &grad);
        }
        if round_hit {
            hi = c;
        } else {
            lo = c;
        }
        c = if hi.is_finite() { 0.5 * (lo + hi) } else { c * 10.0 };
    }

    let unconstrained = best.map(|(_, x)| x).unwrap_or(fallback.1);
    let delta_norm = flat_l2(&(unconstrained.points() - clean));
    let unconstrained_success = target.predict_final(&unconstrained)? != sample.label;
    let clipped_cloud = project_to_budget(&unconstrained, x0, budget)?;
    let clipped = AttackResult::score(target, clipped_cloud, sample.label, 0)?;
    Ok(CwOutcome {
        clipped,
        unconstrained,
        unconstrained_success,
        delta_norm,
    })
}

fn flat_l2(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean distance from every perturbed point to its `KNN_K` nearest clean
/// points, and its gradient with respect to the perturbed points. The
/// neighbor assignment is recomputed here each call and held fixed for the
/// differentiation; coincident pairs contribute zero gradient.
fn knn_penalty(pts: ArrayView2<f64>, clean: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let n = pts.nrows();
    let m = clean.nrows();
    let k = KNN_K.min(m);
    if k == 0 {
        return Err(Error::Attack("knn regularizer needs a non-empty clean cloud".into()));
    }
    let mut value = 0.0;
    let mut grad = Array2::zeros((n, 3));
    let w = 1.0 / (n as f64 * k as f64);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(m);
    for i in 0..n {
        dists.clear();
        for j in 0..m {
            let mut s = 0.0;
            for d in 0..3 {
                let t = pts[[i, d]] - clean[[j, d]];
                s += t * t;
            }
            dists.push((s, j));
        }
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(sq, j) in dists.iter().take(k) {
            let dist = sq.sqrt();
            value += w * dist;
            if dist > 1e-12 {
                for d in 0..3 {
                    grad[[i, d]] += w * (pts[[i, d]] - clean[[j, d]]) / dist;
                }
            }
        }
    }
    Ok((value, grad))
}
