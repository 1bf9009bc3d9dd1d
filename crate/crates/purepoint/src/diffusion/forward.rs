//! Forward (noising) process: the single-step transition and its closed-form
//! multi-step shortcut.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::rng::normal_matrix;

use super::schedule::NoiseSchedule;

/// One forward transition: a draw from
/// `N(sqrt(1 - beta_t) * x_prev, beta_t * I)`.
pub fn forward_step<R: Rng>(
    x_prev: &PointCloud,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<PointCloud> {
    let beta = schedule.beta(t)?;
    let noise = normal_matrix(rng, x_prev.n_points(), 3);
    PointCloud::new(x_prev.points() * (1.0 - beta).sqrt() + noise * beta.sqrt())
}

/// Jump straight to step `t_star`:
/// `x(t*) = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`, equal in
/// distribution to `t_star` chained [`forward_step`]s. Returns the drawn
/// noise for training use; at `t_star = 0` the input is returned exactly and
/// the noise is zero (nothing is drawn from `rng`).
pub fn diffuse_closed_form<R: Rng>(
    x0: &PointCloud,
    t_star: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(PointCloud, Array2<f64>)> {
    if t_star > schedule.t_steps() {
        return Err(Error::InvalidArgument(format!(
            "t_star {t_star} out of range 0..={}",
            schedule.t_steps()
        )));
    }
    let n = x0.n_points();
    if t_star == 0 {
        return Ok((x0.clone(), Array2::zeros((n, 3))));
    }
    let ab = schedule.alpha_bar(t_star)?;
    let eps = normal_matrix(rng, n, 3);
    let x = x0.points() * ab.sqrt() + &eps * (1.0 - ab).sqrt();
    Ok((PointCloud::new(x)?, eps))
}
