//! Cardinality attacks: add a handful of freshly optimized points, or drop
//! the points whose removal hurts the victim most. Surviving original
//! coordinates are never modified.

use ndarray::{s, Array2};

use crate::attack::{AttackBudget, AttackResult, AttackSurface, Norm};
use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};
use crate::rng::{named_stream, normal_matrix};

/// Spread of the initial jitter around the source points of added points.
const ADD_JITTER: f64 = 0.01;

/// Rounds of interleaved saliency recomputation in [`point_drop_attack`].
const DROP_ROUNDS: usize = 10;

/// Append `budget.l0_points()` new points and optimize only them. Each new
/// point starts as a jittered copy of a high-saliency original so the
/// optimizer begins on the shape, then takes `budget.steps` signed gradient
/// steps of size `budget.alpha` inside the data cube. The original points
/// are returned bitwise untouched; the output has `N + k` points.
pub fn point_add_attack(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm != Norm::L0 {
        return Err(Error::Attack("point_add_attack needs an l0 budget".into()));
    }
    let x0 = &sample.cloud;
    let k = budget.l0_points();
    if k == 0 {
        return AttackResult::score(target, x0.clone(), sample.label, 0);
    }

    let (_, grad) = target.loss_grad(x0, sample.label, 0)?;
    let order = rank_desc(&saliency_scores(x0, &grad));
    let n = x0.n_points();
    let mut rng = named_stream(budget.seed, "l0-add", &[]);
    let jitter = normal_matrix(&mut rng, k, 3) * ADD_JITTER;
    let mut pts = Array2::zeros((n + k, 3));
    pts.slice_mut(s![..n, ..]).assign(x0.points());
    for a in 0..k {
        let src = order[a % n];
        for d in 0..3 {
            pts[[n + a, d]] = (x0.points()[[src, d]] + jitter[[a, d]]).clamp(-1.0, 1.0);
        }
    }

    let mut cloud = PointCloud::new(pts)?;
    for step in 0..budget.steps {
        let (loss, g) = target.loss_grad(&cloud, sample.label, step)?;
        if !loss.is_finite() {
            return Err(Error::Attack(format!("non-finite loss at step {step}")));
        }
        let mut next = cloud.points().to_owned();
        for a in n..n + k {
            for d in 0..3 {
                next[[a, d]] = (next[[a, d]] + budget.alpha * g[[a, d]].signum()).clamp(-1.0, 1.0);
            }
        }
        cloud = PointCloud::new(next)?;
    }
    AttackResult::score(target, cloud, sample.label, 0)
}

/// Remove `budget.l0_points()` points in [`DROP_ROUNDS`] batches, dropping
/// the highest-saliency points of the current cloud each round. Survivors
/// keep their coordinates and relative order bitwise; the output has
/// `N - k` points.
pub fn point_drop_attack(
    target: &dyn AttackSurface,
    sample: &LabeledCloud,
    budget: &AttackBudget,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm != Norm::L0 {
        return Err(Error::Attack("point_drop_attack needs an l0 budget".into()));
    }
    let x0 = &sample.cloud;
    let k = budget.l0_points();
    let n = x0.n_points();
    if k >= n {
        return Err(Error::Attack(format!(
            "cannot drop {k} of {n} points; at least one must survive"
        )));
    }
    if k == 0 {
        return AttackResult::score(target, x0.clone(), sample.label, 0);
    }

    let base = k / DROP_ROUNDS;
    let extra = k % DROP_ROUNDS;
    let mut cloud = x0.clone();
    for round in 0..DROP_ROUNDS {
        let drop_now = base + usize::from(round < extra);
        if drop_now == 0 {
            continue;
        }
        let (_, grad) = target.loss_grad(&cloud, sample.label, round)?;
        let order = rank_desc(&saliency_scores(&cloud, &grad));
        let mut doomed = vec![false; cloud.n_points()];
        for &i in order.iter().take(drop_now) {
            doomed[i] = true;
        }
        let survivors: Vec<usize> = (0..cloud.n_points()).filter(|&i| !doomed[i]).collect();
        let mut pts = Array2::zeros((survivors.len(), 3));
        for (row, &i) in survivors.iter().enumerate() {
            pts.row_mut(row).assign(&cloud.points().row(i));
        }
        cloud = PointCloud::new(pts)?;
    }
    AttackResult::score(target, cloud, sample.label, 0)
}

/// Per-point saliency from a loss gradient: the first-order loss increase
/// from retracting each point onto the cloud's coordinate median. High
/// scores mark the points whose removal, or crowding by added points, helps
/// the attacker most.
fn saliency_scores(cloud: &PointCloud, grad: &Array2<f64>) -> Vec<f64> {
    let med = cloud.median();
    let pts = cloud.points();
    (0..pts.nrows())
        .map(|i| {
            let mut s = 0.0;
            for d in 0..3 {
                s -= grad[[i, d]] * (pts[[i, d]] - med[d]);
            }
            s
        })
        .collect()
}

/// Indices sorted by score descending, ties broken by index so the ordering
/// is deterministic.
fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::pgd::pgd_attack;
    use crate::attack::PlainTarget;
    use crate::model::CloudClassifier;
    use crate::rng::stream;
    use crate::testutil::{LinearStub, TOY_CLASSIFIER, TOY_DIFFUSION as TOY};

    fn random_sample(n: usize, seed: u64) -> LabeledCloud {
        let pts = normal_matrix(&mut stream(seed), n, 3).mapv(|v| (v * 0.3).clamp(-1.0, 1.0));
        LabeledCloud::new(PointCloud::new(pts).unwrap(), 0, 2).unwrap()
    }

    #[test]
    fn zero_budget_is_identity_for_both() {
        let stub = LinearStub { w: [1.0, -2.0, 0.5] };
        let target = PlainTarget { classifier: &stub };
        let s = random_sample(16, 1);
        let b = AttackBudget::l0(0, 5, 0);
        let add = point_add_attack(&target, &s, &b).unwrap();
        let drop = point_drop_attack(&target, &s, &b).unwrap();
        assert_eq!(add.cloud.points(), s.cloud.points());
        assert_eq!(drop.cloud.points(), s.cloud.points());
    }

    #[test]
    fn cardinality_contract_at_eps_200() {
        let stub = LinearStub { w: [0.4, 1.0, -0.7] };
        let target = PlainTarget { classifier: &stub };
        let s = random_sample(256, 2);
        let b = AttackBudget::l0(200, 3, 7);

        let add = point_add_attack(&target, &s, &b).unwrap();
        assert_eq!(add.cloud.n_points(), 456);
        assert_eq!(
            add.cloud.points().slice(s![..256, ..]),
            s.cloud.points().slice(s![.., ..])
        );
        for v in add.cloud.points().iter() {
            assert!((-1.0..=1.0).contains(v));
        }

        let drop = point_drop_attack(&target, &s, &b).unwrap();
        assert_eq!(drop.cloud.n_points(), 56);
        // survivors must be an in-order subsequence of the original rows
        let mut j = 0;
        for row in drop.cloud.points().rows() {
            loop {
                assert!(j < 256, "survivor row not found among originals");
                if s.cloud.points().row(j) == row {
                    j += 1;
                    break;
                }
                j += 1;
            }
        }
    }

    #[test]
    fn add_is_seed_deterministic() {
        let stub = LinearStub { w: [1.0, 0.3, -0.2] };
        let target = PlainTarget { classifier: &stub };
        let s = random_sample(32, 3);
        let b = AttackBudget::l0(8, 10, 11);
        let a = point_add_attack(&target, &s, &b).unwrap();
        let b2 = point_add_attack(&target, &s, &b).unwrap();
        assert_eq!(a.cloud.points(), b2.cloud.points());
        let other = point_add_attack(&target, &s, &b.clone().with_seed(12)).unwrap();
        assert_ne!(a.cloud.points(), other.cloud.points());
    }

    #[test]
    fn drop_rejects_overfull_budget() {
        let stub = LinearStub { w: [1.0, 0.0, 0.0] };
        let target = PlainTarget { classifier: &stub };
        let s = random_sample(4, 4);
        assert!(point_drop_attack(&target, &s, &AttackBudget::l0(4, 1, 0)).is_err());
        assert!(point_drop_attack(&target, &s, &AttackBudget::l0(3, 1, 0)).is_ok());
    }

    #[test]
    fn saliency_drop_beats_random_drop_on_toy() {
        let (_, data) = &*TOY;
        let target = PlainTarget {
            classifier: &*TOY_CLASSIFIER,
        };
        let samples: Vec<_> = data.train.iter().chain(data.test.iter()).collect();
        let k = 12;
        let mut guided_correct = 0;
        let mut random_correct = 0;
        for (i, s) in samples.iter().enumerate() {
            let b = AttackBudget::l0(k, 1, 40 + i as u64);
            let dropped = point_drop_attack(&target, s, &b).unwrap();
            guided_correct += (!dropped.success) as u32;

            let mut rng = named_stream(40 + i as u64, "random-drop", &[]);
            let keep = rand::seq::index::sample(&mut rng, s.cloud.n_points(), s.cloud.n_points() - k);
            let mut pts = Array2::zeros((s.cloud.n_points() - k, 3));
            let mut kept: Vec<usize> = keep.into_vec();
            kept.sort_unstable();
            for (row, &idx) in kept.iter().enumerate() {
                pts.row_mut(row).assign(&s.cloud.points().row(idx));
            }
            let surviving = PointCloud::new(pts).unwrap();
            random_correct +=
                (TOY_CLASSIFIER.predict(&surviving).unwrap() == s.label) as u32;
        }
        assert!(
            guided_correct < random_correct,
            "guided {guided_correct} vs random {random_correct} correct of {}",
            samples.len()
        );
    }

    #[test]
    fn add_success_does_not_exceed_pgd_on_toy() {
        let (_, data) = &*TOY;
        let target = PlainTarget {
            classifier: &*TOY_CLASSIFIER,
        };
        let samples: Vec<_> = data.train.iter().chain(data.test.iter()).collect();
        let mut add_hits = 0;
        let mut pgd_hits = 0;
        for (i, s) in samples.iter().enumerate() {
            let add = point_add_attack(&target, s, &AttackBudget::l0(2, 10, 60 + i as u64)).unwrap();
            add_hits += add.success as u32;
            let pgd = pgd_attack(
                &target,
                s,
                &AttackBudget::linf(0.05, 200, 60 + i as u64),
                true,
            )
            .unwrap();
            pgd_hits += pgd.success as u32;
        }
        assert!(
            add_hits <= pgd_hits,
            "point-add {add_hits} vs pgd {pgd_hits} of {}",
            samples.len()
        );
    }
}
