//! Shared classifier interface.
//!
//! Attacks, saliency, and the evaluation harness only need three things from a
//! classifier: logits, a vector-Jacobian product against the input points, and
//! the cross-entropy loss gradient. Keeping this behind a trait lets the
//! harness treat trained networks and test stubs uniformly.

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::geom::PointCloud;

pub trait CloudClassifier: Sync {
    fn num_classes(&self) -> usize;

    /// Class logits for one cloud.
    fn logits(&self, cloud: &PointCloud) -> Result<Array1<f64>>;

    /// Logits plus the input-point gradient of `upstream . logits`.
    ///
    /// `upstream` has length `num_classes()`; the returned matrix is N x 3.
    fn logits_vjp(
        &self,
        cloud: &PointCloud,
        upstream: &Array1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)>;

    /// Cross-entropy loss on the true label and its input-point gradient.
    fn loss_and_input_grad(&self, cloud: &PointCloud, label: usize) -> Result<(f64, Array2<f64>)>;

    fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let logits = self.logits(cloud)?;
        Ok(argmax(&logits))
    }
}

/// Fraction of samples the classifier labels correctly.
pub fn accuracy(model: &dyn CloudClassifier, samples: &[crate::geom::LabeledCloud]) -> Result<f64> {
    use rayon::prelude::*;
    if samples.is_empty() {
        return Err(crate::error::Error::InvalidArgument(
            "accuracy over an empty sample set".into(),
        ));
    }
    let correct: usize = samples
        .par_iter()
        .map(|s| Ok(usize::from(model.predict(&s.cloud)? == s.label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / samples.len() as f64)
}

/// Index of the largest entry; first one wins on ties.
pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - m).exp());
    let s = exp.sum();
    exp / s
}

/// Cross-entropy of `logits` against a hard label.
pub fn cross_entropy(logits: &Array1<f64>, label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.mapv(|v| (v - m).exp()).sum().ln() + m;
    log_z - logits[label]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&array![1.0, 2.0, 3.0]);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let logits = array![0.5, -1.0, 2.0];
        let p = softmax(&logits);
        for label in 0..3 {
            assert!((cross_entropy(&logits, label) - (-p[label].ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&array![1.0, 1.0, 0.5]), 0);
    }
}
