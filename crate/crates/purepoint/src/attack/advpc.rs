//! AdvPC: PGD on a blend of the direct classification loss and the loss
//! after a reconstruction round through the diffusion autoencoder, so the
//! perturbation survives re-encoding instead of overfitting one raw cloud.

use ndarray::Array2;
use rand::Rng;

use crate::attack::{project_to_budget, AttackBudget, AttackResult, AttackSurface, Norm};
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};
use crate::purify::{purify, purify_input_grad, GradMode, PurifierConfig};
use crate::rng::named_stream;

/// PGD ascent on `(1 - gamma) * L(f(x)) + gamma * L(f(AE(x)))`, where `AE`
/// is one reconstruction round through the diffusion model under `ae` with
/// the stochastic reverse overridden off; the forward-noising draw is seeded
/// per step. `gamma = 0` reduces bitwise to [`pgd_attack`] under the same
/// budget, `gamma = 1` attacks only the reconstructed path.
///
/// [`pgd_attack`]: crate::attack::pgd_attack
pub fn advpc_attack(
    target: &dyn AttackSurface,
    model: &DiffusionModel,
    ae: &PurifierConfig,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    gamma: f64,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm == Norm::L0 {
        return Err(Error::Attack(
            "advpc_attack handles linf/l2 budgets; use the point add/drop attacks for l0".into(),
        ));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Attack(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let ae_cfg = PurifierConfig {
        stochastic: false,
        ..ae.clone()
    };
    ae_cfg.validate()?;

    let x0 = &sample.cloud;
    let mut x = x0.clone();

    if budget.epsilon > 0.0 {
        let mut rng = named_stream(budget.seed, "pgd-start", &[]);
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
        let (loss, grad) = blended_grad(target, model, &ae_cfg, &x, sample.label, step, budget.seed, gamma)?;
        if !loss.is_finite() {
            return Err(Error::Attack(format!("non-finite loss at step {step}")));
        }
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

#[allow(clippy::too_many_arguments)]
fn blended_grad(
    target: &dyn AttackSurface,
    model: &DiffusionModel,
    ae: &PurifierConfig,
    x: &PointCloud,
    label: usize,
    step: usize,
    seed: u64,
    gamma: f64,
) -> Result<(f64, Array2<f64>)> {
    if gamma == 0.0 {
        // Bitwise reduction to plain PGD. Adding `0.0 * g` is not a no-op
        // under IEEE signed zeros (it can flip -0.0 to +0.0 and change a
        // later signum), so the reconstruction path is skipped outright.
        return target.loss_grad(x, label, step);
    }
    let mut forward = named_stream(seed, "advpc", &[step as u64]);
    let mut back = forward.clone();
    let recon = purify(model, x, ae, &mut forward)?;
    let (ae_loss, up) = target.loss_grad(&recon, label, step)?;
    let ae_grad = purify_input_grad(model, x, ae, &up, GradMode::Unrolled, &mut back)?;
    if gamma == 1.0 {
        return Ok((ae_loss, ae_grad));
    }
    let (direct_loss, direct_grad) = target.loss_grad(x, label, step)?;
    let loss = (1.0 - gamma) * direct_loss + gamma * ae_loss;
    let grad = direct_grad * (1.0 - gamma) + &(ae_grad * gamma);
    Ok((loss, grad))
}
