//! NATTACK-style NES: fit a Gaussian over an unconstrained parameter space
//! whose samples are squashed into the budget by tanh, and ascend the
//! expected loss through the score-function estimator. No victim gradients.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attack::{project_to_budget, AttackBudget, AttackResult, AttackSurface, Norm};
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};
use crate::rng::{named_stream, normal_matrix};

/// Search settings for [`nattack`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NattackConfig {
    /// Gaussian samples drawn per step.
    pub population: usize,
    /// Standard deviation of the search distribution.
    pub sigma: f64,
    /// Learning rate on the distribution mean.
    pub lr: f64,
}

impl Default for NattackConfig {
    fn default() -> Self {
        Self {
            population: 100,
            sigma: 0.1,
            lr: 0.02,
        }
    }
}

impl NattackConfig {
    fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Attack("nattack population must be >= 1".into()));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::Attack("nattack sigma must be finite and > 0".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Attack("nattack lr must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Natural-evolution-strategy search: each step draws `population` Gaussian
/// parameter samples around the mean, maps each into an in-budget candidate
/// (tanh squash, radius rescale, projection), and moves the mean along the
/// z-scored rewards. The best candidate ever evaluated is returned, spending
/// exactly `steps * population` queries; a flat population (for example of
/// size one) provides no direction and leaves the mean in place.
pub fn nattack(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    cfg: &NattackConfig,
) -> Result<AttackResult> {
    budget.validate()?;
    cfg.validate()?;
    if budget.norm == Norm::L0 {
        return Err(Error::Attack(
            "nattack handles linf/l2 budgets; use the point add/drop attacks for l0".into(),
        ));
    }
    let x0 = &sample.cloud;
    let n = x0.n_points();
    let mut mu = Array2::<f64>::zeros((n, 3));
    let mut best: Option<(f64, PointCloud)> = None;
    let mut queries = 0u64;

    for step in 0..budget.steps {
        let mut rng = named_stream(budget.seed, "nattack", &[step as u64]);
        let noise: Vec<Array2<f64>> = (0..cfg.population)
            .map(|_| normal_matrix(&mut rng, n, 3))
            .collect();
        let mut rewards = Vec::with_capacity(cfg.population);
        for eps in &noise {
            let theta = &mu + &(eps * cfg.sigma);
            let cand = candidate(x0, &theta, budget)?;
            let loss = target.loss_only(&cand, sample.label, step)?;
            queries += 1;
            if !loss.is_finite() {
                return Err(Error::Attack(format!("non-finite loss at step {step}")));
            }
            if best.as_ref().is_none_or(|(b, _)| loss > *b) {
                best = Some((loss, cand));
            }
            rewards.push(loss);
        }

        let pop = cfg.population as f64;
        let mean = rewards.iter().sum::<f64>() / pop;
        let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / pop).sqrt();
        if std > 1e-12 {
            let scale = cfg.lr / (pop * cfg.sigma);
            for (eps, r) in noise.iter().zip(&rewards) {
                mu.scaled_add(scale * (r - mean) / std, eps);
            }
        }
    }

    let cloud = best.map(|(_, c)| c).unwrap_or_else(|| x0.clone());
    AttackResult::score(target, cloud, sample.label, queries)
}

/// Map a Gaussian parameter matrix into an in-budget candidate. tanh bounds
/// every coordinate of the perturbation direction in (-1, 1); the budget
/// radius then scales it and the projection applies the cube clip.
fn candidate(x0: &PointCloud, theta: &Array2<f64>, budget: &AttackBudget) -> Result<PointCloud> {
    let v = theta.mapv(f64::tanh);
    let delta = match budget.norm {
        Norm::Linf => v * budget.epsilon,
        Norm::L2 => {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v * (budget.epsilon / norm.max(1.0))
        }
        Norm::L0 => unreachable!(),
    };
    project_to_budget(&PointCloud::new(x0.points() + &delta)?, x0, budget)
}
