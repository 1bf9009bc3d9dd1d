//! Projected gradient descent on the classification loss. With a defended
//! target this same routine realizes BPDA-PGD, EOT-PGD, and the fully
//! unrolled adaptive attack, depending on how the target routes gradients.

use rand::Rng;

use crate::attack::{project_to_budget, AttackBudget, AttackResult, AttackSurface, Norm};
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};
use crate::rng::named_stream;

/// Iterative ascent: `x <- Proj(x + alpha * dir(grad))` where `dir` is the
/// sign for `Linf` and the normalized gradient for `L2`. A random start draws
/// uniformly inside the ball (the PGD-family convention); pass `false` for
/// the single-step FGSM reading or for C&W-style warm starts.
pub fn pgd_attack(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
    random_start: bool,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm == Norm::L0 {
        return Err(Error::Attack(
            "pgd_attack handles linf/l2 budgets; use the point add/drop attacks for l0".into(),
        ));
    }
    let x0 = &sample.cloud;
    let mut x = x0.clone();

    if random_start && budget.epsilon > 0.0 {
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
        let (loss, grad) = target.loss_grad(&x, sample.label, step)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::PlainTarget;
    use crate::testutil::LinearStub;
    use ndarray::arr2;

    fn sample() -> LabeledCloud {
        let cloud = PointCloud::new(arr2(&[[0.1, -0.2, 0.0], [0.0, 0.3, -0.1]])).unwrap();
        LabeledCloud::new(cloud, 0, 2).unwrap()
    }

    #[test]
    fn fgsm_is_analytic_on_linear_model() {
        let stub = LinearStub { w: [1.0, -2.0, 0.5] };
        let target = PlainTarget { classifier: &stub };
        let s = sample();
        let budget = AttackBudget::linf(0.05, 1, 7);
        let res = pgd_attack(&target, &s, &budget, false).unwrap();
        // raising the label-1 logit lowers label-0 likelihood: move along +w
        let expected = s.cloud.points() + &arr2(&[[0.05, -0.05, 0.05], [0.05, -0.05, 0.05]]);
        let diff = (res.cloud.points() - &expected).mapv(f64::abs).sum();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn zero_steps_no_start_is_identity() {
        let stub = LinearStub { w: [1.0, 1.0, 1.0] };
        let target = PlainTarget { classifier: &stub };
        let s = sample();
        let budget = AttackBudget::linf(0.05, 0, 7);
        let res = pgd_attack(&target, &s, &budget, false).unwrap();
        assert_eq!(res.cloud.points(), s.cloud.points());
    }

    #[test]
    fn random_start_stays_in_budget_and_is_seeded() {
        let stub = LinearStub { w: [1.0, 0.0, 0.0] };
        let target = PlainTarget { classifier: &stub };
        let s = sample();
        let budget = AttackBudget::linf(0.05, 0, 42);
        let a = pgd_attack(&target, &s, &budget, true).unwrap();
        let b = pgd_attack(&target, &s, &budget, true).unwrap();
        assert_eq!(a.cloud.points(), b.cloud.points());
        assert_ne!(a.cloud.points(), s.cloud.points());
        assert!(crate::attack::within_budget(&a.cloud, &s.cloud, &budget));

        let other = pgd_attack(&target, &s, &budget.clone().with_seed(43), true).unwrap();
        assert_ne!(a.cloud.points(), other.cloud.points());
    }

    #[test]
    fn l2_attack_respects_radius() {
        let stub = LinearStub { w: [0.3, -1.0, 0.7] };
        let target = PlainTarget { classifier: &stub };
        let s = sample();
        let budget = AttackBudget::l2(0.2, 20, 3);
        let res = pgd_attack(&target, &s, &budget, true).unwrap();
        let norm: f64 = (res.cloud.points() - s.cloud.points())
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt();
        assert!(norm <= 0.2 + 1e-12, "norm {norm}");
        assert!(res.final_loss > 0.0);
    }

    #[test]
    fn l0_budget_rejected() {
        let stub = LinearStub { w: [1.0, 0.0, 0.0] };
        let target = PlainTarget { classifier: &stub };
        let res = pgd_attack(&target, &sample(), &AttackBudget::l0(5, 1, 0), false);
        assert!(res.is_err());
    }
}
