//! Classifier training: shuffled minibatch Adam on cross-entropy, optional
//! rotation augmentation, optional adversarial training with an inner PGD
//! loop. Every random choice comes from a named stream keyed off the config
//! seed, so a zero-strength adversarial budget is bitwise identical to plain
//! training and reruns reproduce parameters exactly.

use ndarray::Array2;
use rayon::prelude::*;

use crate::attack::pgd::pgd_attack;
use crate::attack::{AttackBudget, Norm, PlainTarget};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geom::{rotate_z, LabeledCloud, PointCloud};
use crate::model::accuracy;
use crate::rng::{label, mix, named_stream};
use rand::Rng;

use super::{loss_and_param_grads, ClassifierModel};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Random rotation about the up axis per sample per epoch.
    pub augment_rotation: bool,
    /// When set, each training input is replaced by a PGD adversarial example
    /// against the current parameters.
    pub at_budget: Option<AttackBudget>,
    /// Inner PGD steps for adversarial training.
    pub at_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            augment_rotation: true,
            at_budget: None,
            at_steps: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Test accuracy after each epoch.
    pub test_accuracy: Vec<f64>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
}

pub fn train_classifier(
    model: &mut ClassifierModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.n_classes() != model.config.n_classes {
        return Err(Error::Model(format!(
            "dataset has {} classes, model expects {}",
            data.n_classes(),
            model.config.n_classes
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument("lr must be positive".into()));
    }
    if let Some(b) = &cfg.at_budget {
        b.validate()?;
        if b.norm == Norm::L0 {
            return Err(Error::Attack(
                "adversarial training supports linf/l2 budgets".into(),
            ));
        }
    }

    let mut opt = crate::nn::Adam::new(cfg.lr);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut shuffle_rng = named_stream(cfg.seed, "shuffle", &[epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            // per-sample tapes in parallel, reduced in index order
            let results: Vec<(f64, Vec<Array2<f64>>)> = chunk
                .par_iter()
                .map(|&idx| {
                    let sample = &data.train[idx];
                    let input = training_input(model, sample, cfg, epoch, idx)?;
                    loss_and_param_grads(model, &input, sample.label)
                })
                .collect::<Result<Vec<_>>>()?;

            let inv = 1.0 / chunk.len() as f64;
            let mut grads: Vec<Array2<f64>> = results[0]
                .1
                .iter()
                .map(|g| Array2::zeros(g.dim()))
                .collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Model(format!(
                        "training diverged (non-finite loss) at epoch {epoch}"
                    )));
                }
                epoch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            for g in &mut grads {
                *g *= inv;
            }
            opt.step(&mut model.params, &grads);
        }

        report.train_loss.push(epoch_loss / data.train.len() as f64);
        report.test_accuracy.push(accuracy(model, &data.test)?);
    }
    Ok(report)
}

/// The (possibly augmented, possibly adversarial) input for one sample.
fn training_input(
    model: &ClassifierModel,
    sample: &LabeledCloud,
    cfg: &TrainConfig,
    epoch: usize,
    idx: usize,
) -> Result<PointCloud> {
    let mut cloud = sample.cloud.clone();
    if cfg.augment_rotation {
        let mut rng = named_stream(cfg.seed, "augment", &[epoch as u64, idx as u64]);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        cloud = PointCloud::new(rotate_z(cloud.points(), angle))?;
    }
    let Some(base) = &cfg.at_budget else {
        return Ok(cloud);
    };
    if base.epsilon == 0.0 {
        return Ok(cloud);
    }
    let budget = AttackBudget {
        norm: base.norm,
        epsilon: base.epsilon,
        steps: cfg.at_steps,
        alpha: 2.5 * base.epsilon / cfg.at_steps.max(1) as f64,
        seed: mix(cfg.seed, &[label("at"), epoch as u64, idx as u64]),
    };
    let target = PlainTarget { classifier: model };
    let labeled = LabeledCloud::new(cloud, sample.label, model.config.n_classes)?;
    let result = pgd_attack(&target, &labeled, &budget, true)?;
    Ok(result.cloud)
}

/// Standard adversarial training: requires a budget in the config.
pub fn adversarial_train(
    model: &mut ClassifierModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.at_budget.is_none() {
        return Err(Error::InvalidArgument(
            "adversarial_train needs an attack budget in the config".into(),
        ));
    }
    train_classifier(model, data, cfg)
}
