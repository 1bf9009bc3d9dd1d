//! Reverse (denoising) process: the discrete DDPM-style step, the score
//! function derived from the noise predictor, and an Euler-Maruyama
//! integrator for the reverse-time SDE.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::rng::normal_matrix;

use super::model::{DiffusionModel, LatentCode};
use super::schedule::NoiseSchedule;

/// One reverse transition given a precomputed noise estimate:
/// `x(t-1) = (x_t - ((1 - alpha_t) / sqrt(1 - alpha_bar_t)) * eps) / sqrt(alpha_t)`,
/// plus `sqrt(beta_t)`-scaled noise when `stochastic` and `t > 1`.
pub fn reverse_step_with_eps<R: Rng>(
    x_t: &PointCloud,
    t: usize,
    schedule: &NoiseSchedule,
    eps: &Array2<f64>,
    rng: &mut R,
    stochastic: bool,
) -> Result<PointCloud> {
    let beta = schedule.beta(t)?;
    let alpha = 1.0 - beta;
    let ab = schedule.alpha_bar(t)?;
    // 1 - alpha_bar = 0 forces beta = 0 too, so the correction vanishes
    let coef = if 1.0 - ab > 0.0 {
        (1.0 - alpha) / (1.0 - ab).sqrt()
    } else {
        0.0
    };
    let mut out = (x_t.points() - &(eps * coef)) / alpha.sqrt();
    if stochastic && t > 1 {
        out += &(normal_matrix(rng, x_t.n_points(), 3) * beta.sqrt());
    }
    PointCloud::new(out)
}

/// One reverse transition with the model's own noise prediction,
/// conditioned on `z`.
pub fn reverse_step<R: Rng>(
    model: &DiffusionModel,
    x_t: &PointCloud,
    t: usize,
    z: &LatentCode,
    rng: &mut R,
    stochastic: bool,
) -> Result<PointCloud> {
    let eps = model.eps_theta(x_t.points(), t as f64, z)?;
    reverse_step_with_eps(x_t, t, &model.schedule, &eps, rng, stochastic)
}

/// Score estimate `s = -eps / sqrt(1 - alpha_bar_t)` from a given noise
/// estimate.
pub fn score_from_eps_array(
    eps: &Array2<f64>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    let ab = schedule.alpha_bar(t)?;
    if 1.0 - ab <= 0.0 {
        return Err(Error::Model(format!(
            "score undefined at t={t}: alpha_bar is 1"
        )));
    }
    Ok(eps * (-1.0 / (1.0 - ab).sqrt()))
}

/// Score estimate at step `t` using the model's noise prediction.
pub fn score_from_eps(
    model: &DiffusionModel,
    x_t: &PointCloud,
    t: usize,
    z: &LatentCode,
) -> Result<Array2<f64>> {
    let eps = model.eps_theta(x_t.points(), t as f64, z)?;
    score_from_eps_array(&eps, t, &model.schedule)
}

/// Reverse-time drift `f_rev(x, tau) = -0.5 * beta(tau) * x
/// + beta(tau) / sqrt(1 - alpha_bar(tau)) * eps_theta(x, tau, z)`, which is
/// `-0.5 * beta * [x + 2 s]` written in terms of the noise prediction.
pub(crate) fn reverse_drift(
    model: &DiffusionModel,
    x: &Array2<f64>,
    tau: f64,
    z: &LatentCode,
) -> Result<Array2<f64>> {
    let beta = model.schedule.beta_cont(tau);
    if beta == 0.0 {
        return Ok(Array2::zeros(x.raw_dim()));
    }
    let ab = model.schedule.alpha_bar_cont(tau);
    let eps = model.eps_theta(x, tau, z)?;
    Ok(x * (-0.5 * beta) + eps * (beta / (1.0 - ab).sqrt()))
}

/// Euler-Maruyama integration of the reverse SDE from `t_star` down to 0 in
/// `n_steps` uniform steps:
/// `x_{j+1} = x_j - dt * f_rev(x_j, tau_j) + sqrt(dt) * g(tau_j) * xi_j`
/// with `g(tau) = sqrt(beta(tau))`; the Wiener increments come from `rng`
/// and are omitted when `stochastic` is false.
pub fn sde_reverse_integrate<R: Rng>(
    model: &DiffusionModel,
    x_tstar: &PointCloud,
    t_star: usize,
    z: &LatentCode,
    rng: &mut R,
    n_steps: usize,
    stochastic: bool,
) -> Result<PointCloud> {
    validate_sde_args(model, t_star, n_steps)?;
    let n = x_tstar.n_points();
    let noise: Option<Vec<Array2<f64>>> = stochastic
        .then(|| (0..n_steps).map(|_| normal_matrix(rng, n, 3)).collect());
    sde_reverse_with_noise(model, x_tstar, t_star, z, n_steps, noise.as_deref())
}

pub(crate) fn validate_sde_args(
    model: &DiffusionModel,
    t_star: usize,
    n_steps: usize,
) -> Result<()> {
    if t_star == 0 || t_star > model.schedule.t_steps() {
        return Err(Error::InvalidArgument(format!(
            "t_star {t_star} out of range 1..={}",
            model.schedule.t_steps()
        )));
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
    }
    Ok(())
}

/// The integration body behind [`sde_reverse_integrate`], with the Wiener
/// increments supplied explicitly (`None` for the deterministic probability
/// flow). The adjoint gradient pass replays this exact path.
pub(crate) fn sde_reverse_with_noise(
    model: &DiffusionModel,
    x_tstar: &PointCloud,
    t_star: usize,
    z: &LatentCode,
    n_steps: usize,
    noise: Option<&[Array2<f64>]>,
) -> Result<PointCloud> {
    let dt = t_star as f64 / n_steps as f64;
    let mut x = x_tstar.points().to_owned();
    for j in 0..n_steps {
        let tau = t_star as f64 - j as f64 * dt;
        let drift = reverse_drift(model, &x, tau, z)?;
        x -= &(drift * dt);
        if let Some(xis) = noise {
            let g = model.schedule.beta_cont(tau).sqrt();
            x += &(&xis[j] * (dt.sqrt() * g));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Model(format!(
                "non-finite state during SDE integration at tau={tau}"
            )));
        }
    }
    PointCloud::new(x)
}
