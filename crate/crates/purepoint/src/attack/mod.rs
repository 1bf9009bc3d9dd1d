//! Adversarial attacks against a classifier, optionally wrapped in a defense.
//!
//! Attacks talk to their victim through [`AttackSurface`], which hides whether
//! gradients come straight from a classifier or are routed through a
//! purification defense. Every attack is a deterministic function of its
//! inputs and the seed carried by the [`AttackBudget`].

pub mod advpc;
pub mod budget;
pub mod cw;
pub mod l0;
pub mod latent;
pub mod nattack;
pub mod pgd;
pub mod spsa;

pub use advpc::advpc_attack;
pub use budget::{project_to_budget, within_budget, AttackBudget, Norm};
pub use cw::{cw_attack, knn_attack, CwConfig, CwOutcome};
pub use l0::{point_add_attack, point_drop_attack};
pub use latent::{latent_attack, latent_distance, LatentMetric};
pub use nattack::{nattack, NattackConfig};
pub use pgd::pgd_attack;
pub use spsa::{spsa_attack, SpsaConfig};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::model::CloudClassifier;

/// The victim pipeline as seen by an attack.
///
/// `step` identifies the attack iteration so stochastic defenses can vary
/// their noise per step while remaining reproducible.
pub trait AttackSurface: Sync {
    fn n_classes(&self) -> usize;

    /// Cross-entropy loss of the pipeline on `(x, label)` and its gradient
    /// with respect to `x`.
    fn loss_grad(&self, x: &PointCloud, label: usize, step: usize)
        -> Result<(f64, Array2<f64>)>;

    /// Margin `logit_true - max_other_logit` of the pipeline and its gradient
    /// with respect to `x`; negative margin means the sample is already
    /// misclassified. The C&W family optimizes this instead of cross-entropy.
    fn margin_grad(&self, x: &PointCloud, label: usize, step: usize)
        -> Result<(f64, Array2<f64>)>;

    /// Loss only; the black-box query primitive.
    fn loss_only(&self, x: &PointCloud, label: usize, step: usize) -> Result<f64>;

    /// End-to-end prediction (defense included) used to score success.
    fn predict_final(&self, x: &PointCloud) -> Result<usize>;

    /// Raw pipeline logits, used by margin-style objectives.
    fn logits_final(&self, x: &PointCloud) -> Result<ndarray::Array1<f64>>;
}

/// Margin of `logits` for `label` and the upstream logit gradient that pulls
/// the margin's derivative back through a pipeline.
pub(crate) fn margin_and_upstream(
    logits: &Array1<f64>,
    label: usize,
) -> Result<(f64, Array1<f64>)> {
    if logits.len() < 2 || label >= logits.len() {
        return Err(Error::Attack(format!(
            "margin needs >= 2 classes and a valid label, got {} classes, label {label}",
            logits.len()
        )));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_i = usize::MAX;
    for (i, &v) in logits.iter().enumerate() {
        if i != label && v > best {
            best = v;
            best_i = i;
        }
    }
    let mut upstream = Array1::zeros(logits.len());
    upstream[label] = 1.0;
    upstream[best_i] = -1.0;
    Ok((logits[label] - best, upstream))
}

/// An undefended classifier.
pub struct PlainTarget<'a> {
    pub classifier: &'a dyn CloudClassifier,
}

impl AttackSurface for PlainTarget<'_> {
    fn n_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn loss_grad(
        &self,
        x: &PointCloud,
        label: usize,
        _step: usize,
    ) -> Result<(f64, Array2<f64>)> {
        self.classifier.loss_and_input_grad(x, label)
    }

    fn margin_grad(
        &self,
        x: &PointCloud,
        label: usize,
        _step: usize,
    ) -> Result<(f64, Array2<f64>)> {
        let logits = self.classifier.logits(x)?;
        let (margin, upstream) = margin_and_upstream(&logits, label)?;
        let (_, grad) = self.classifier.logits_vjp(x, &upstream)?;
        Ok((margin, grad))
    }

    fn loss_only(&self, x: &PointCloud, label: usize, _step: usize) -> Result<f64> {
        let logits = self.classifier.logits(x)?;
        Ok(crate::model::cross_entropy(&logits, label))
    }

    fn predict_final(&self, x: &PointCloud) -> Result<usize> {
        self.classifier.predict(x)
    }

    fn logits_final(&self, x: &PointCloud) -> Result<ndarray::Array1<f64>> {
        self.classifier.logits(x)
    }
}

/// Outcome of one attack on one sample.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub cloud: PointCloud,
    pub success: bool,
    pub final_loss: f64,
    /// Forward evaluations consumed; zero for white-box attacks.
    pub queries: u64,
}

impl AttackResult {
    pub(crate) fn score(
        target: &dyn AttackSurface,
        cloud: PointCloud,
        label: usize,
        queries: u64,
    ) -> Result<Self> {
        let final_loss = target.loss_only(&cloud, label, usize::MAX)?;
        let success = target.predict_final(&cloud)? != label;
        Ok(Self {
            cloud,
            success,
            final_loss,
            queries,
        })
    }
}
