//! Gradient-obfuscation diagnostics.
//!
//! Quantifies how much of the input the loss gradient actually sees: the
//! fraction of coordinates with an exactly-zero gradient (max-pool shadows),
//! the spread of per-sample gradient norms, and the fraction of coordinates
//! whose perturbation silently rewires a kNN graph (a gradient-invisible
//! discrete jump).

use crate::error::Result;
use crate::geom::LabeledCloud;
use crate::model::CloudClassifier;

use super::{dgcnn, Arch, ClassifierModel};

/// Perturbation used for the index-flip probe.
const FLIP_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientHealth {
    /// Fraction of input coordinates whose loss gradient is exactly zero.
    pub zero_grad_fraction: f64,
    pub grad_norm_min: f64,
    pub grad_norm_median: f64,
    pub grad_norm_max: f64,
    /// Fraction of coordinates where a `1e-3` nudge changes some kNN
    /// neighbor set. Always zero for architectures without kNN indexing.
    pub flip_fraction: f64,
}

pub fn gradient_health_report(
    model: &ClassifierModel,
    batch: &[LabeledCloud],
) -> Result<GradientHealth> {
    assert!(!batch.is_empty(), "health report needs at least one sample");

    let mut zero = 0usize;
    let mut total = 0usize;
    let mut norms = Vec::with_capacity(batch.len());
    for sample in batch {
        let (_, grad) = model.loss_and_input_grad(&sample.cloud, sample.label)?;
        zero += grad.iter().filter(|&&g| g == 0.0).count();
        total += grad.len();
        norms.push(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
    }
    norms.sort_by(|a, b| a.total_cmp(b));

    let flip_fraction = match model.config.arch {
        Arch::PointnetMini => 0.0,
        Arch::DgcnnMini => flip_fraction(model, batch)?,
    };

    Ok(GradientHealth {
        zero_grad_fraction: zero as f64 / total as f64,
        grad_norm_min: norms[0],
        grad_norm_median: norms[norms.len() / 2],
        grad_norm_max: norms[norms.len() - 1],
        flip_fraction,
    })
}

/// Per-point neighbor sets (sorted) for every EdgeConv layer.
fn neighbor_sets(
    model: &ClassifierModel,
    points: &ndarray::Array2<f64>,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let k = model.config.k;
    let layers = dgcnn::layer_indices(&model.config, &model.params, points)?;
    Ok(layers
        .into_iter()
        .map(|flat| {
            flat.chunks(k)
                .map(|c| {
                    let mut s = c.to_vec();
                    s.sort_unstable();
                    s
                })
                .collect()
        })
        .collect())
}

fn flip_fraction(model: &ClassifierModel, batch: &[LabeledCloud]) -> Result<f64> {
    let mut flips = 0usize;
    let mut total = 0usize;
    for sample in batch {
        let base_pts = sample.cloud.points();
        let base = neighbor_sets(model, &base_pts.to_owned())?;
        for i in 0..base_pts.nrows() {
            for d in 0..3 {
                let mut pert = base_pts.to_owned();
                pert[[i, d]] += FLIP_DELTA;
                if neighbor_sets(model, &pert)? != base {
                    flips += 1;
                }
                total += 1;
            }
        }
    }
    Ok(flips as f64 / total as f64)
}
