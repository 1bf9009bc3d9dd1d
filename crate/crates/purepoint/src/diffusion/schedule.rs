//! Variance schedule for the diffusion chain.
//!
//! Discrete convention throughout: `alpha_bar[t] = prod_{s<=t} (1 - beta[s])`
//! with `alpha_bar[0] = 1`. The continuous interpolants used by the SDE
//! integrator agree with the discrete values at integer times.

use ndarray::Array1;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[t-1]` is the variance added at step `t`, for `t` in `1..=T`.
    betas: Vec<f64>,
    /// `alpha_bars[t-1]` is the cumulative product at step `t`.
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_T: usize = 200;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.05;

impl NoiseSchedule {
    /// Linear schedule from `beta_min` at step 1 to `beta_max` at step `T`.
    pub fn linear(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "schedule needs 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas: Vec<f64> = (0..t_steps)
            .map(|i| {
                let frac = if t_steps == 1 {
                    0.0
                } else {
                    i as f64 / (t_steps - 1) as f64
                };
                beta_min + (beta_max - beta_min) * frac
            })
            .collect();
        Ok(Self::from_betas_unchecked(betas))
    }

    /// Build directly from per-step variances without range validation. This
    /// is the escape hatch for degenerate diagnostic schedules (for example
    /// `beta = 0` everywhere, which turns every sampler into the identity).
    pub fn from_betas_unchecked(betas: Vec<f64>) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Self { betas, alpha_bars }
    }

    pub fn t_steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.betas.len() {
            return Err(Error::InvalidArgument(format!(
                "step {t} out of range 1..={}",
                self.betas.len()
            )));
        }
        Ok(())
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    /// `alpha_t = 1 - beta_t`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(1.0 - self.beta(t)?)
    }

    /// Cumulative `alpha_bar_t` for `t` in `0..=T`; `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_t(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    /// Continuous `beta` at fractional time `tau` (in step units, `0..=T`):
    /// piecewise-linear through the knots `beta(t) = beta_t`, held flat
    /// outside `[1, T]`.
    pub fn beta_cont(&self, tau: f64) -> f64 {
        let t_max = self.betas.len() as f64;
        let tau = tau.clamp(1.0, t_max);
        let lo = (tau.floor() as usize).clamp(1, self.betas.len());
        let hi = (lo + 1).min(self.betas.len());
        let w = tau - lo as f64;
        self.betas[lo - 1] * (1.0 - w) + self.betas[hi - 1] * w
    }

    /// Continuous `alpha_bar` at fractional time `tau`, interpolated in log
    /// space between the integer knots so that positivity and monotonicity
    /// carry over; `alpha_bar_cont(t) == alpha_bar(t)` at integers.
    pub fn alpha_bar_cont(&self, tau: f64) -> f64 {
        let t_max = self.betas.len() as f64;
        let tau = tau.clamp(0.0, t_max);
        let lo = tau.floor() as usize;
        let hi = (lo + 1).min(self.betas.len());
        let w = tau - lo as f64;
        let a_lo = self.alpha_bar(lo).expect("clamped");
        let a_hi = self.alpha_bar(hi).expect("clamped");
        if a_lo <= 0.0 || a_hi <= 0.0 {
            // degenerate diagnostic schedules may zero out alpha_bar
            return a_lo * (1.0 - w) + a_hi * w;
        }
        (a_lo.ln() * (1.0 - w) + a_hi.ln() * w).exp()
    }

    pub fn betas_array(&self) -> Array1<f64> {
        Array1::from_vec(self.betas.clone())
    }

    pub fn from_betas_array(betas: &Array1<f64>) -> Self {
        Self::from_betas_unchecked(betas.to_vec())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_T, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("valid defaults")
    }
}
