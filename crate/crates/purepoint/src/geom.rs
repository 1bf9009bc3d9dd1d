//! Point-cloud primitives: normalization, k-nearest neighbours, farthest point
//! sampling, Chamfer distance, and drop-attack saliency.
//!
//! All coordinates live in normalized model space (the edge-length-2 cube
//! after [`PointCloud::normalize_to_unit_cube`]). Everything here is pure and
//! deterministic; ties in top-k and FPS break toward the lowest index.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::CloudClassifier;

/// An ordered set of N points in 3-D model space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
}

impl PointCloud {
    /// Wrap an N x 3 coordinate matrix. Rejects empty or non-finite input.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::InvalidArgument(format!(
                "point cloud must be N x 3, got N x {}",
                points.ncols()
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument("point cloud must be non-empty".into()));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bbox(&self) -> (Array1<f64>, Array1<f64>) {
        let mut lo = Array1::from_elem(3, f64::INFINITY);
        let mut hi = Array1::from_elem(3, f64::NEG_INFINITY);
        for row in self.points.rows() {
            for d in 0..3 {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
        (lo, hi)
    }

    /// Center on the bounding-box midpoint and scale uniformly so the largest
    /// |coordinate| is exactly 1 (edge-length-2 cube). Aspect ratios are
    /// preserved. Fails on clouds with zero extent.
    pub fn normalize_to_unit_cube(&self) -> Result<PointCloud> {
        let (lo, hi) = self.bbox();
        let center = (&lo + &hi) / 2.0;
        let mut max_abs = 0.0f64;
        for row in self.points.rows() {
            for d in 0..3 {
                max_abs = max_abs.max((row[d] - center[d]).abs());
            }
        }
        if max_abs == 0.0 {
            return Err(Error::DegenerateCloud(
                "all points identical; cannot normalize".into(),
            ));
        }
        let mut out = self.points.clone();
        for mut row in out.rows_mut() {
            for d in 0..3 {
                row[d] = (row[d] - center[d]) / max_abs;
            }
        }
        PointCloud::new(out)
    }

    /// Coordinate-wise median of the points.
    pub fn median(&self) -> Array1<f64> {
        let n = self.n_points();
        let mut med = Array1::zeros(3);
        for d in 0..3 {
            let mut col: Vec<f64> = self.points.column(d).to_vec();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            med[d] = if n % 2 == 1 {
                col[n / 2]
            } else {
                0.5 * (col[n / 2 - 1] + col[n / 2])
            };
        }
        med
    }
}

/// A cloud with its class index.
#[derive(Debug, Clone)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub label: usize,
}

impl LabeledCloud {
    pub fn new(cloud: PointCloud, label: usize, n_classes: usize) -> Result<Self> {
        if label >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {n_classes} classes"
            )));
        }
        Ok(Self { cloud, label })
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Row i holds the indices of the k nearest rows to row i by squared Euclidean
/// distance, nearest first. Self is included (distance zero), matching the
/// negate-and-top-k convention of dynamic-graph feature layers. Ties break
/// toward the lower index. Works on any feature width, not just 3-D points.
pub fn knn_indices(points: ArrayView2<f64>, k: usize) -> Result<Array2<usize>> {
    let n = points.nrows();
    if k > n {
        return Err(Error::InvalidArgument(format!("knn k={k} exceeds N={n}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("knn k must be >= 1".into()));
    }
    let mut out = Array2::zeros((n, k));
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        scratch.clear();
        let pi = points.row(i);
        for j in 0..n {
            scratch.push((sq_dist(pi, points.row(j)), j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        if k < n {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        scratch[..k].sort_unstable_by(cmp);
        for (slot, &(_, j)) in scratch[..k].iter().enumerate() {
            out[[i, slot]] = j;
        }
    }
    Ok(out)
}

/// Greedy farthest point sampling. The first index is drawn uniformly from the
/// seeded stream; each following index maximizes the minimum distance to the
/// already-chosen set (ties to the lowest index).
pub fn farthest_point_sample(points: ArrayView2<f64>, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    if m > n {
        return Err(Error::InvalidArgument(format!("fps m={m} exceeds N={n}")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut rng = crate::rng::named_stream(seed, "fps", &[]);
    let first = rng.random_range(0..n);
    let mut chosen = Vec::with_capacity(m);
    chosen.push(first);
    let mut min_d2: Vec<f64> = (0..n)
        .map(|j| sq_dist(points.row(first), points.row(j)))
        .collect();
    while chosen.len() < m {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (j, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = j;
            }
        }
        chosen.push(best);
        for j in 0..n {
            let d = sq_dist(points.row(best), points.row(j));
            if d < min_d2[j] {
                min_d2[j] = d;
            }
        }
    }
    Ok(chosen)
}

/// Symmetric Chamfer distance: mean over `a` of the min squared distance to
/// `b`, plus the mirrored term.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    let one_way = |x: &Array2<f64>, y: &Array2<f64>| -> f64 {
        let mut total = 0.0;
        for xi in x.rows() {
            let mut best = f64::INFINITY;
            for yj in y.rows() {
                let d = sq_dist(xi, yj);
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / x.nrows() as f64
    };
    one_way(a.points(), b.points()) + one_way(b.points(), a.points())
}

/// Drop-attack saliency: score of point i is the inner product of the loss
/// gradient at i with the vector from point i to the cloud median. A positive
/// score means that, to first order, collapsing the point toward the core
/// raises the true-class loss — dropping it helps the attacker.
pub fn point_saliency(model: &dyn CloudClassifier, sample: &LabeledCloud) -> Result<Vec<f64>> {
    let (_, grad) = model.loss_and_input_grad(&sample.cloud, sample.label)?;
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("saliency gradient".into()));
    }
    let med = sample.cloud.median();
    let pts = sample.cloud.points();
    let mut scores = Vec::with_capacity(pts.nrows());
    for i in 0..pts.nrows() {
        let mut s = 0.0;
        for d in 0..3 {
            s -= grad[[i, d]] * (pts[[i, d]] - med[d]);
        }
        scores.push(s);
    }
    Ok(scores)
}

/// Mean Euclidean distance from each point to its k nearest neighbours
/// (self excluded). Used by outlier-penalizing attacks and diagnostics.
pub fn mean_knn_distance(points: ArrayView2<f64>, k: usize) -> Result<f64> {
    let idx = knn_indices(points, (k + 1).min(points.nrows()))?;
    let n = points.nrows();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for slot in 0..idx.ncols() {
            let j = idx[[i, slot]];
            if j == i {
                continue;
            }
            total += sq_dist(points.row(i), points.row(j)).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("mean_knn_distance needs N >= 2".into()));
    }
    Ok(total / count as f64)
}

/// Apply a rotation about the z (up) axis.
pub fn rotate_z(points: &Array2<f64>, angle: f64) -> Array2<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = points.clone();
    for mut row in out.rows_mut() {
        let (x, y) = (row[0], row[1]);
        row[0] = c * x - s * y;
        row[1] = s * x + c * y;
    }
    out
}

/// Elementwise L2 norm of a flattened N x 3 perturbation.
pub fn flat_l2_norm(delta: &Array2<f64>) -> f64 {
    delta.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest absolute entry.
pub fn linf_norm(delta: &Array2<f64>) -> f64 {
    delta.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn centroid(points: &Array2<f64>) -> Array1<f64> {
    points.mean_axis(Axis(0)).expect("non-empty")
}
