//! Latent-space attack: ignore the classification loss and instead push the
//! encoder's code for the current cloud away from the oracle code of the
//! clean input. The purifier conditions its denoising on that code, so
//! corrupting it starves the defense without differentiating through a
//! single reverse step.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{project_to_budget, AttackBudget, AttackResult, AttackSurface, Norm};
use crate::diffusion::{DiffusionModel, LatentCode};
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};
use crate::model::softmax;
use crate::rng::named_stream;

/// Distance measure between latent codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMetric {
    /// KL divergence between softmax-normalized codes.
    Kl,
    /// Elementwise l1 distance.
    L1,
}

impl std::fmt::Display for LatentMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LatentMetric::Kl => write!(f, "kl"),
            LatentMetric::L1 => write!(f, "l1"),
        }
    }
}

/// Distance `D(encode(x), z_oracle)` under `metric`.
pub fn latent_distance(
    model: &DiffusionModel,
    x: &PointCloud,
    z_oracle: &LatentCode,
    metric: LatentMetric,
) -> Result<f64> {
    let z = model.encode(x)?;
    Ok(metric_value_grad(z.values(), z_oracle.values(), metric)?.0)
}

/// PGD ascent on the latent distance from the clean input's code, scored end
/// to end against `target`. The loop queries only the encoder, so it applies
/// unchanged whether the victim runs the purifier or not; `target` decides
/// how success is judged.
pub fn latent_attack(
    target: &dyn AttackSurface,
    model: &DiffusionModel,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    metric: LatentMetric,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm == Norm::L0 {
        return Err(Error::Attack(
            "latent_attack handles linf/l2 budgets; use the point add/drop attacks for l0".into(),
        ));
    }
    let x0 = &sample.cloud;
    let z_oracle = model.encode(x0)?;
    let mut x = x0.clone();

    if budget.epsilon > 0.0 {
        let mut rng = named_stream(budget.seed, "latent-start", &[]);
        let mut pts = x.points().to_owned();
        match budget.norm {
            Norm::Linf => {
                let eps = budget.epsilon;
                for v in pts.iter_mut() {
                    *v += rng.random_range(-eps..eps);
                }
            }
            Norm::L2 => {
                let dir = crate::rng::normal_matrix(&mut rng, pts.nrows(), pts.ncols());
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
                let radius = rng.random_range(0.0..budget.epsilon);
                pts += &(dir * (radius / norm));
            }
            Norm::L0 => unreachable!(),
        }
        x = project_to_budget(&PointCloud::new(pts)?, x0, budget)?;
    }

    for step in 0..budget.steps {
        let z = model.encode(&x)?;
        let (dist, z_grad) = metric_value_grad(z.values(), z_oracle.values(), metric)?;
        if !dist.is_finite() {
            return Err(Error::Attack(format!(
                "non-finite latent distance at step {step}"
            )));
        }
        let grad = model.encoder_vjp(&x, &z_grad)?;
        let update = match budget.norm {
            Norm::Linf => grad.mapv(|g| budget.alpha * g.signum()),
            Norm::L2 => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > 0.0 {
                    grad.mapv(|g| budget.alpha * g / norm)
                } else {
                    grad.mapv(|_| 0.0)
                }
            }
            Norm::L0 => unreachable!(),
        };
        x = project_to_budget(&PointCloud::new(x.points() + &update)?, x0, budget)?;
    }

    AttackResult::score(target, x, sample.label, 0)
}

/// Value and z-gradient of the chosen metric against a fixed reference code.
fn metric_value_grad(
    z: &Array1<f64>,
    z0: &Array1<f64>,
    metric: LatentMetric,
) -> Result<(f64, Array1<f64>)> {
    if z.len() != z0.len() {
        return Err(Error::InvalidArgument(format!(
            "latent dims differ: {} vs {}",
            z.len(),
            z0.len()
        )));
    }
    match metric {
        LatentMetric::Kl => {
            let p = softmax(z);
            let q = softmax(z0);
            let a = ndarray::Zip::from(&p)
                .and(&q)
                .map_collect(|&pi, &qi| pi.ln() - qi.ln());
            let value: f64 = p.iter().zip(a.iter()).map(|(pi, ai)| pi * ai).sum();
            // d/dz_j of sum_i p_i (ln p_i - ln q_i) with p = softmax(z)
            let grad = ndarray::Zip::from(&p)
                .and(&a)
                .map_collect(|&pj, &aj| pj * (aj - value));
            Ok((value, grad))
        }
        LatentMetric::L1 => {
            let mut value = 0.0;
            let mut grad = Array1::zeros(z.len());
            for i in 0..z.len() {
                let d = z[i] - z0[i];
                value += d.abs();
                grad[i] = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            Ok((value, grad))
        }
    }
}
