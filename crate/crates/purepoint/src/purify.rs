//! The purification defense: diffuse an incoming (possibly adversarial) cloud
//! partway up the noise schedule, then denoise it back down conditioned on the
//! latent code of the input itself.
//!
//! Adaptive attacks need gradients through that pipeline, so three pathways
//! are provided: exact reverse-mode differentiation through every step
//! ([`GradMode::Unrolled`]), an augmented-SDE adjoint that integrates the
//! sensitivities alongside a reconstruction of the same sample path
//! ([`GradMode::Adjoint`]), and the identity shortcut that pretends the
//! purifier is not there ([`GradMode::BpdaIdentity`]). The gradient pass
//! always re-draws the identical noise realizations as the forward pass from
//! an equally-seeded stream; gradients of a different sample path would be
//! meaningless.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::AttackSurface;
use crate::diffusion::reverse::{reverse_drift, sde_reverse_with_noise, validate_sde_args};
use crate::diffusion::{diffuse_closed_form, reverse_step, DiffusionModel};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::model::{cross_entropy, CloudClassifier};
use crate::nn::tape::Tape;
use crate::rng::{mix, named_stream, normal_matrix};

/// How the reverse half of the purifier runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseMode {
    /// `t_star` discrete ancestral steps.
    DdpmChain,
    /// Euler-Maruyama integration of the reverse-time SDE.
    Sde,
}

/// Purifier hyperparameters. `t_star = 0` is the degenerate identity
/// purifier, accepted so a pipeline can be configured defense-off without
/// changing shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurifierConfig {
    /// How far up the schedule to diffuse before denoising.
    pub t_star: usize,
    /// Total schedule length; must match the diffusion model's schedule.
    pub t_steps: usize,
    pub reverse: ReverseMode,
    /// Integration steps for [`ReverseMode::Sde`]; defaults to `t_star`.
    pub n_sde_steps: Option<usize>,
    /// Draw Wiener increments during the reverse pass instead of following
    /// the deterministic flow.
    pub stochastic: bool,
    /// Randomized-defense samples averaged by [`DefendedTarget`].
    pub eot_samples: usize,
}

impl Default for PurifierConfig {
    fn default() -> Self {
        Self {
            t_star: 10,
            t_steps: 200,
            reverse: ReverseMode::DdpmChain,
            n_sde_steps: None,
            stochastic: false,
            eot_samples: 1,
        }
    }
}

impl PurifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::InvalidArgument("t_steps must be >= 1".into()));
        }
        if self.t_star > self.t_steps {
            return Err(Error::InvalidArgument(format!(
                "t_star {} exceeds schedule length {}",
                self.t_star, self.t_steps
            )));
        }
        if self.n_sde_steps == Some(0) {
            return Err(Error::InvalidArgument("n_sde_steps must be >= 1".into()));
        }
        if self.eot_samples == 0 {
            return Err(Error::InvalidArgument("eot_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_sde_steps(&self) -> usize {
        self.n_sde_steps.unwrap_or(self.t_star)
    }

    fn check_model(&self, model: &DiffusionModel) -> Result<()> {
        self.validate()?;
        if model.schedule.t_steps() != self.t_steps {
            return Err(Error::InvalidArgument(format!(
                "purifier configured for a {}-step schedule but the model has {}",
                self.t_steps,
                model.schedule.t_steps()
            )));
        }
        Ok(())
    }
}

/// Gradient pathway through the purifier for adaptive attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Exact backpropagation through the encoder, the closed-form diffusion,
    /// and every reverse step.
    Unrolled,
    /// Augmented reverse-SDE adjoint; requires [`ReverseMode::Sde`].
    Adjoint,
    /// Treat the purifier as the identity (BPDA).
    BpdaIdentity,
}

/// Run the defense: `z = encode(x_a)`, diffuse to `t_star` in closed form,
/// then denoise back to step 0 conditioned on `z`. The output always has the
/// same point count as the input, and the result is a pure function of
/// `(model, x_a, config, rng state)`.
pub fn purify<R: Rng>(
    model: &DiffusionModel,
    x_a: &PointCloud,
    config: &PurifierConfig,
    rng: &mut R,
) -> Result<PointCloud> {
    config.check_model(model)?;
    if config.t_star == 0 {
        return Ok(x_a.clone());
    }
    let z = model.encode(x_a)?;
    let (x_t, _) = diffuse_closed_form(x_a, config.t_star, &model.schedule, rng)?;
    match config.reverse {
        ReverseMode::DdpmChain => {
            let mut x = x_t;
            for t in (1..=config.t_star).rev() {
                x = reverse_step(model, &x, t, &z, rng, config.stochastic)?;
            }
            Ok(x)
        }
        ReverseMode::Sde => sde_reverse_integrate_cfg(model, &x_t, &z, config, rng),
    }
}

fn sde_reverse_integrate_cfg<R: Rng>(
    model: &DiffusionModel,
    x_t: &PointCloud,
    z: &crate::diffusion::LatentCode,
    config: &PurifierConfig,
    rng: &mut R,
) -> Result<PointCloud> {
    crate::diffusion::sde_reverse_integrate(
        model,
        x_t,
        config.t_star,
        z,
        rng,
        config.n_sde_steps(),
        config.stochastic,
    )
}

/// Pull `upstream` (the loss gradient at the purified cloud) back to the
/// purifier's input. `rng` must start in the same state as the one passed to
/// the matching [`purify`] call so the pass sees the identical noise path.
pub fn purify_input_grad<R: Rng>(
    model: &DiffusionModel,
    x_a: &PointCloud,
    config: &PurifierConfig,
    upstream: &Array2<f64>,
    mode: GradMode,
    rng: &mut R,
) -> Result<Array2<f64>> {
    config.check_model(model)?;
    if upstream.dim() != (x_a.n_points(), 3) {
        return Err(Error::InvalidArgument(format!(
            "upstream gradient is {:?}, expected ({}, 3)",
            upstream.dim(),
            x_a.n_points()
        )));
    }
    if config.t_star == 0 {
        return Ok(upstream.clone());
    }
    match mode {
        GradMode::BpdaIdentity => Ok(upstream.clone()),
        GradMode::Unrolled => unrolled_grad(model, x_a, config, upstream, rng),
        GradMode::Adjoint => match config.reverse {
            ReverseMode::DdpmChain => Err(Error::InvalidArgument(
                "adjoint gradients require the sde reverse mode".into(),
            )),
            ReverseMode::Sde => adjoint_grad(model, x_a, config, upstream, rng),
        },
    }
}

/// Build the whole purifier on one tape (encoder, closed-form diffusion, and
/// each reverse step, drawing noise in the same order as [`purify`]) and run
/// a single backward pass from the output.
fn unrolled_grad<R: Rng>(
    model: &DiffusionModel,
    x_a: &PointCloud,
    config: &PurifierConfig,
    upstream: &Array2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let schedule = &model.schedule;
    let n = x_a.n_points();
    let t_star = config.t_star;

    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let xa = tape.leaf(x_a.points().to_owned());
    let z = model.encode_on(&mut tape, &vars, xa);

    let ab = schedule.alpha_bar(t_star)?;
    let eps0 = normal_matrix(rng, n, 3);
    let signal = tape.scale(xa, ab.sqrt());
    let noise = tape.leaf(eps0 * (1.0 - ab).sqrt());
    let mut x = tape.add(signal, noise);

    match config.reverse {
        ReverseMode::DdpmChain => {
            for t in (1..=t_star).rev() {
                let beta = schedule.beta(t)?;
                let alpha = 1.0 - beta;
                let abt = schedule.alpha_bar(t)?;
                let coef = if 1.0 - abt > 0.0 {
                    (1.0 - alpha) / (1.0 - abt).sqrt()
                } else {
                    0.0
                };
                let eps_hat = model.eps_on(&mut tape, &vars, x, t as f64, z);
                let correction = tape.scale(eps_hat, coef);
                let centered = tape.sub(x, correction);
                x = tape.scale(centered, 1.0 / alpha.sqrt());
                if config.stochastic && t > 1 {
                    let xi = tape.leaf(normal_matrix(rng, n, 3) * beta.sqrt());
                    x = tape.add(x, xi);
                }
            }
        }
        ReverseMode::Sde => {
            let n_steps = config.n_sde_steps();
            let dt = t_star as f64 / n_steps as f64;
            for j in 0..n_steps {
                let tau = t_star as f64 - j as f64 * dt;
                let beta = schedule.beta_cont(tau);
                if beta != 0.0 {
                    let abt = schedule.alpha_bar_cont(tau);
                    let eps_hat = model.eps_on(&mut tape, &vars, x, tau, z);
                    let dx = tape.scale(x, -0.5 * beta);
                    let de = tape.scale(eps_hat, beta / (1.0 - abt).sqrt());
                    let drift = tape.add(dx, de);
                    let step = tape.scale(drift, dt);
                    x = tape.sub(x, step);
                }
                if config.stochastic {
                    let g = schedule.beta_cont(tau).sqrt();
                    let xi = tape.leaf(normal_matrix(rng, n, 3) * (dt.sqrt() * g));
                    x = tape.add(x, xi);
                }
            }
        }
    }

    if !tape.value(x).iter().all(|v| v.is_finite()) {
        return Err(Error::Model(
            "non-finite state while unrolling the purifier".into(),
        ));
    }
    let grads = tape.backward(x, upstream.clone());
    Ok(grads.of(&tape, xa))
}

/// Adjoint sensitivities via the augmented reverse SDE: re-integrate the same
/// sample path, then sweep back from the output reconstructing the states
/// with the Wiener increments negated and reversed, accumulating
/// `a_j = a_{j+1} - dt * (df_rev/dx)^T a_{j+1}` and the latent-condition
/// contribution along the way. The input gradient is the closed-form
/// diffusion pullback of `a_0` plus the encoder pullback of the accumulated
/// latent term.
fn adjoint_grad<R: Rng>(
    model: &DiffusionModel,
    x_a: &PointCloud,
    config: &PurifierConfig,
    upstream: &Array2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let schedule = &model.schedule;
    let n = x_a.n_points();
    let t_star = config.t_star;
    let n_steps = config.n_sde_steps();
    validate_sde_args(model, t_star, n_steps)?;
    let dt = t_star as f64 / n_steps as f64;

    let z = model.encode(x_a)?;
    let (x_t, _) = diffuse_closed_form(x_a, t_star, schedule, rng)?;
    let xis: Vec<Array2<f64>> = if config.stochastic {
        (0..n_steps).map(|_| normal_matrix(rng, n, 3)).collect()
    } else {
        Vec::new()
    };
    let x_hat = sde_reverse_with_noise(
        model,
        &x_t,
        t_star,
        &z,
        n_steps,
        config.stochastic.then_some(xis.as_slice()),
    )?;

    let mut x = x_hat.into_points();
    let mut a = upstream.clone();
    let mut gz = Array1::<f64>::zeros(model.config.latent_dim);
    for j in (0..n_steps).rev() {
        let tau = t_star as f64 - j as f64 * dt;
        // reconstruct x_j: strip this step's Wiener increment, then step the
        // drift backward from the nearest available state
        if config.stochastic {
            let g = schedule.beta_cont(tau).sqrt();
            x -= &(&xis[j] * (dt.sqrt() * g));
        }
        let drift = reverse_drift(model, &x, tau, &z)?;
        x += &(drift * dt);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Model(format!(
                "non-finite state during adjoint reconstruction at tau={tau}"
            )));
        }

        let beta = schedule.beta_cont(tau);
        if beta != 0.0 {
            let ab = schedule.alpha_bar_cont(tau);
            let c = beta / (1.0 - ab).sqrt();
            let (gx, gzj) = model.eps_vjp(&x, tau, &z, &a)?;
            a = &a * (1.0 + 0.5 * beta * dt) - &(gx * (dt * c));
            gz -= &(gzj * (dt * c));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Model(format!(
                "non-finite adjoint state at tau={tau}"
            )));
        }
    }

    let ab_star = schedule.alpha_bar(t_star)?;
    let mut grad = a * ab_star.sqrt();
    grad += &model.encoder_vjp(x_a, &gz)?;
    Ok(grad)
}

pub(crate) fn eot_stream(base_seed: u64, i: u64) -> ChaCha8Rng {
    named_stream(base_seed, "eot", &[i])
}

/// Expectation over transformation: average `f` over `n` independently seeded
/// randomness draws. Sample `i` receives the stream
/// `named_stream(base_seed, "eot", [i])`, so callers that need to pair a
/// forward and a gradient pass per sample can re-derive the same streams.
pub fn eot_average<F>(mut f: F, n: usize, base_seed: u64) -> Result<Array2<f64>>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<Array2<f64>>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("eot sample count must be >= 1".into()));
    }
    let mut acc: Option<Array2<f64>> = None;
    for i in 0..n {
        let mut rng = eot_stream(base_seed, i as u64);
        let out = f(&mut rng)?;
        match &mut acc {
            None => acc = Some(out),
            Some(sum) => {
                if sum.dim() != out.dim() {
                    return Err(Error::InvalidArgument(format!(
                        "eot sample {} has shape {:?}, expected {:?}",
                        i,
                        out.dim(),
                        sum.dim()
                    )));
                }
                *sum += &out;
            }
        }
    }
    Ok(acc.expect("n >= 1") / n as f64)
}

/// A classifier behind the purification defense, as seen by attacks.
///
/// Purification noise is keyed by `(seed, attack step, eot sample)`, so
/// repeated queries at one step see one fixed defense draw while different
/// steps see fresh ones; `predict_final` and `logits_final` use a separate
/// evaluation stream.
pub struct DefendedTarget<'a> {
    pub classifier: &'a dyn CloudClassifier,
    pub model: &'a DiffusionModel,
    pub config: PurifierConfig,
    pub grad_mode: GradMode,
    pub seed: u64,
}

impl DefendedTarget<'_> {
    fn step_seed(&self, step: usize) -> u64 {
        mix(self.seed, &[crate::rng::label("defense"), step as u64])
    }

    fn eval_purify(&self, x: &PointCloud) -> Result<PointCloud> {
        let mut rng = named_stream(self.seed, "eval", &[]);
        purify(self.model, x, &self.config, &mut rng)
    }
}

impl AttackSurface for DefendedTarget<'_> {
    fn n_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn loss_grad(
        &self,
        x: &PointCloud,
        label: usize,
        step: usize,
    ) -> Result<(f64, Array2<f64>)> {
        let n = self.config.eot_samples;
        let mut loss_sum = 0.0;
        let grad = eot_average(
            |rng: &mut ChaCha8Rng| {
                let mut forward = rng.clone();
                let purified = purify(self.model, x, &self.config, &mut forward)?;
                let (loss, up) = self.classifier.loss_and_input_grad(&purified, label)?;
                loss_sum += loss;
                purify_input_grad(self.model, x, &self.config, &up, self.grad_mode, rng)
            },
            n,
            self.step_seed(step),
        )?;
        Ok((loss_sum / n as f64, grad))
    }

    fn margin_grad(
        &self,
        x: &PointCloud,
        label: usize,
        step: usize,
    ) -> Result<(f64, Array2<f64>)> {
        let n = self.config.eot_samples;
        let mut margin_sum = 0.0;
        let grad = eot_average(
            |rng: &mut ChaCha8Rng| {
                let mut forward = rng.clone();
                let purified = purify(self.model, x, &self.config, &mut forward)?;
                let logits = self.classifier.logits(&purified)?;
                let (margin, upstream) = crate::attack::margin_and_upstream(&logits, label)?;
                margin_sum += margin;
                let (_, up) = self.classifier.logits_vjp(&purified, &upstream)?;
                purify_input_grad(self.model, x, &self.config, &up, self.grad_mode, rng)
            },
            n,
            self.step_seed(step),
        )?;
        Ok((margin_sum / n as f64, grad))
    }

    fn loss_only(&self, x: &PointCloud, label: usize, step: usize) -> Result<f64> {
        let base = self.step_seed(step);
        let mut sum = 0.0;
        for i in 0..self.config.eot_samples {
            let mut rng = eot_stream(base, i as u64);
            let purified = purify(self.model, x, &self.config, &mut rng)?;
            let logits = self.classifier.logits(&purified)?;
            sum += cross_entropy(&logits, label);
        }
        Ok(sum / self.config.eot_samples as f64)
    }

    fn predict_final(&self, x: &PointCloud) -> Result<usize> {
        self.classifier.predict(&self.eval_purify(x)?)
    }

    fn logits_final(&self, x: &PointCloud) -> Result<Array1<f64>> {
        self.classifier.logits(&self.eval_purify(x)?)
    }
}
