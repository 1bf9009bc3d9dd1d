//! SPSA: gradient-free ascent that estimates the loss gradient from
//! antithetic finite differences along random sign directions, for victims
//! that expose nothing but a loss value.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{project_to_budget, AttackBudget, AttackResult, AttackSurface, Norm};
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};
use crate::rng::named_stream;

/// Estimator settings for [`spsa_attack`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpsaConfig {
    /// Antithetic direction pairs averaged per step.
    pub batch: usize,
    /// Probe radius of the finite difference.
    pub delta: f64,
    /// Update step size; SPSA carries its own rate rather than reusing the
    /// budget's alpha.
    pub lr: f64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            batch: 128,
            delta: 0.01,
            lr: 0.01,
        }
    }
}

impl SpsaConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Attack("spsa batch must be >= 1".into()));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(Error::Attack("spsa delta must be finite and > 0".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Attack("spsa lr must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// One SPSA estimate of the loss gradient at `x`: the average over
/// `cfg.batch` antithetic pairs of `[L(x + delta u) - L(x - delta u)] /
/// (2 delta) * u` with Rademacher direction `u`. Probe clouds are evaluated
/// as-is, without projection. Costs `2 * cfg.batch` loss queries.
pub(crate) fn spsa_gradient_estimate<R: Rng>(
    target: &dyn AttackSurface,
    x: &PointCloud,
    label: usize,
    step: usize,
    cfg: &SpsaConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let dim = x.points().dim();
    let mut acc = Array2::zeros(dim);
    for _ in 0..cfg.batch {
        let mut u = Array2::zeros(dim);
        for v in u.iter_mut() {
            *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let probe = &u * cfg.delta;
        let plus = PointCloud::new(x.points() + &probe)?;
        let minus = PointCloud::new(x.points() - &probe)?;
        let lp = target.loss_only(&plus, label, step)?;
        let lm = target.loss_only(&minus, label, step)?;
        acc.scaled_add((lp - lm) / (2.0 * cfg.delta), &u);
    }
    Ok(acc / cfg.batch as f64)
}

/// Black-box PGD: estimate the gradient by SPSA each step, take a signed
/// (linf) or normalized (l2) step of size `cfg.lr`, project, and keep the
/// best iterate seen by loss. Each step spends `2 * cfg.batch` probe queries
/// plus one on the updated iterate, so the result reports exactly
/// `steps * (2 * batch + 1)` queries.
pub fn spsa_attack(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    cfg: &SpsaConfig,
) -> Result<AttackResult> {
    budget.validate()?;
    cfg.validate()?;
    if budget.norm == Norm::L0 {
        return Err(Error::Attack(
            "spsa_attack handles linf/l2 budgets; use the point add/drop attacks for l0".into(),
        ));
    }
    let x0 = &sample.cloud;
    let mut x = x0.clone();
    let mut best: Option<(f64, PointCloud)> = None;
    let mut queries = 0u64;

    for step in 0..budget.steps {
        let mut rng = named_stream(budget.seed, "spsa", &[step as u64]);
        let g = spsa_gradient_estimate(target, &x, sample.label, step, cfg, &mut rng)?;
        queries += 2 * cfg.batch as u64;
        let update = match budget.norm {
            Norm::Linf => g.mapv(|v| cfg.lr * v.signum()),
            Norm::L2 => {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    g.mapv(|v| cfg.lr * v / norm)
                } else {
                    g.mapv(|_| 0.0)
                }
            }
            Norm::L0 => unreachable!(),
        };
        x = project_to_budget(&PointCloud::new(x.points() + &update)?, x0, budget)?;
        let loss = target.loss_only(&x, sample.label, step)?;
        queries += 1;
        if !loss.is_finite() {
            return Err(Error::Attack(format!("non-finite loss at step {step}")));
        }
        if best.as_ref().is_none_or(|(b, _)| loss > *b) {
            best = Some((loss, x.clone()));
        }
    }

    let cloud = best.map(|(_, c)| c).unwrap_or(x);
    AttackResult::score(target, cloud, sample.label, queries)
}
