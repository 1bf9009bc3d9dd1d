//! Conditional noise-prediction model: a permutation-invariant encoder that
//! compresses a cloud into a latent code, and a per-point residual MLP that
//! predicts the noise content of a diffused cloud given the step's time
//! embedding and that latent code.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::nn::{xavier, zeros_row, ParamSet, Tape, Var};
use crate::rng::named_stream;

use super::schedule::{NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_T};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// Dimension of the latent condition vector.
    pub latent_dim: usize,
    /// Sinusoidal time-embedding width (even).
    pub time_dim: usize,
    /// Per-point MLP widths of the encoder.
    pub enc_widths: Vec<usize>,
    /// Hidden width of the noise predictor.
    pub eps_hidden: usize,
    /// Residual blocks in the noise predictor.
    pub n_res_blocks: usize,
    /// Schedule length and endpoints used at construction time.
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            time_dim: 16,
            enc_widths: vec![64, 128],
            eps_hidden: 128,
            n_res_blocks: 2,
            t_steps: DEFAULT_T,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl DiffusionConfig {
    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.eps_hidden == 0 || self.enc_widths.is_empty() {
            return Err(Error::Model(
                "diffusion config needs latent_dim, eps_hidden, enc_widths".into(),
            ));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Model(format!(
                "time_dim must be positive and even, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }
}

/// Latent condition vector produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    z: Array1<f64>,
}

impl LatentCode {
    pub fn new(z: Array1<f64>) -> Result<Self> {
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Self { z })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.z
    }

    pub(crate) fn as_row(&self) -> Array2<f64> {
        self.z.clone().insert_axis(Axis(0))
    }
}

/// Sinusoidal embedding of a (possibly fractional) diffusion time, in step
/// units. Frequencies follow the usual geometric ladder.
pub(crate) fn time_embedding(tau: f64, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut row = Array2::zeros((1, dim));
    for j in 0..half {
        let freq = 10_000f64.powf(-(j as f64) / half as f64);
        row[[0, 2 * j]] = (tau * freq).sin();
        row[[0, 2 * j + 1]] = (tau * freq).cos();
    }
    row
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub params: ParamSet,
}

impl DiffusionModel {
    pub fn new(config: DiffusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::linear(config.t_steps, config.beta_min, config.beta_max)?;
        let params = init_params(&config, seed);
        Ok(Self {
            config,
            schedule,
            params,
        })
    }

    fn enc_var_count(&self) -> usize {
        2 * (self.config.enc_widths.len() + 1)
    }

    /// Append the encoder to `tape`: per-point tanh MLP, column-wise max
    /// pool, then a linear projection to `1 x latent_dim`. `vars` must be the
    /// full bound parameter list in parameter order.
    pub(crate) fn encode_on(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let mut it = vars.iter().copied();
        let mut h = x;
        for _ in &self.config.enc_widths {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            let lin = tape.matmul(h, w);
            let lin = tape.add_row(lin, b);
            h = tape.tanh(lin);
        }
        let (w, b) = (it.next().unwrap(), it.next().unwrap());
        let pooled = tape.maxpool_rows(h);
        let lin = tape.matmul(pooled, w);
        tape.add_row(lin, b)
    }

    /// Append the noise predictor to `tape`. Input rows are
    /// `concat(point, time embedding, z)`; the body is a tanh MLP with
    /// residual blocks and a zero-initialized output layer.
    pub(crate) fn eps_on(&self, tape: &mut Tape, vars: &[Var], x_t: Var, tau: f64, z: Var) -> Var {
        let mut it = vars.iter().copied().skip(self.enc_var_count());
        let n = tape.value(x_t).nrows();
        let temb_row = tape.leaf(time_embedding(tau, self.config.time_dim));
        let temb = tape.broadcast_rows(temb_row, n);
        let zb = tape.broadcast_rows(z, n);
        let tz = tape.concat_cols(temb, zb);
        let inp = tape.concat_cols(x_t, tz);

        let (w, b) = (it.next().unwrap(), it.next().unwrap());
        let lin = tape.matmul(inp, w);
        let lin = tape.add_row(lin, b);
        let mut h = tape.tanh(lin);
        for _ in 0..self.config.n_res_blocks {
            let (wa, ba) = (it.next().unwrap(), it.next().unwrap());
            let (wb, bb) = (it.next().unwrap(), it.next().unwrap());
            let a = tape.matmul(h, wa);
            let a = tape.add_row(a, ba);
            let a = tape.tanh(a);
            let o = tape.matmul(a, wb);
            let o = tape.add_row(o, bb);
            h = tape.add(h, o);
        }
        let (w, b) = (it.next().unwrap(), it.next().unwrap());
        let out = tape.matmul(h, w);
        tape.add_row(out, b)
    }

    pub fn encode(&self, x: &PointCloud) -> Result<LatentCode> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let xv = tape.leaf(x.points().to_owned());
        let zv = self.encode_on(&mut tape, &vars, xv);
        LatentCode::new(tape.value(zv).row(0).to_owned())
    }

    /// Noise prediction for a diffused cloud at time `tau` (step units).
    pub fn eps_theta(&self, x_t: &Array2<f64>, tau: f64, z: &LatentCode) -> Result<Array2<f64>> {
        if x_t.ncols() != 3 {
            return Err(Error::Model(format!(
                "expected N x 3 input, got {} columns",
                x_t.ncols()
            )));
        }
        if z.dim() != self.config.latent_dim {
            return Err(Error::Model(format!(
                "latent dim {} does not match model dim {}",
                z.dim(),
                self.config.latent_dim
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let xv = tape.leaf(x_t.clone());
        let zv = tape.leaf(z.as_row());
        let e = self.eps_on(&mut tape, &vars, xv, tau, zv);
        Ok(tape.value(e).to_owned())
    }

    /// Vector-Jacobian products of the noise predictor with respect to its
    /// cloud input and latent condition, for the adjoint integrator.
    pub(crate) fn eps_vjp(
        &self,
        x_t: &Array2<f64>,
        tau: f64,
        z: &LatentCode,
        upstream: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let xv = tape.leaf(x_t.clone());
        let zv = tape.leaf(z.as_row());
        let e = self.eps_on(&mut tape, &vars, xv, tau, zv);
        let grads = tape.backward(e, upstream.clone());
        Ok((
            grads.of(&tape, xv),
            grads.of(&tape, zv).row(0).to_owned(),
        ))
    }

    /// Vector-Jacobian product of the encoder with respect to its input.
    pub(crate) fn encoder_vjp(
        &self,
        x: &PointCloud,
        upstream: &Array1<f64>,
    ) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let xv = tape.leaf(x.points().to_owned());
        let zv = self.encode_on(&mut tape, &vars, xv);
        let seed = upstream.clone().insert_axis(Axis(0));
        let grads = tape.backward(zv, seed);
        Ok(grads.of(&tape, xv))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut archive = Archive::new();
        let cfg = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Model(format!("config serialization: {e}")))?;
        archive.insert_bytes("config", cfg)?;
        archive.insert_f64("schedule", self.schedule.betas_array())?;
        self.params.write_archive("param.", &mut archive)?;
        archive.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::load(path)?;
        let config: DiffusionConfig = serde_json::from_slice(archive.get_bytes("config")?)
            .map_err(|e| Error::Model(format!("config deserialization: {e}")))?;
        let mut model = Self::new(config, 0)?;
        model.schedule = NoiseSchedule::from_betas_array(&archive.get_f64_1d("schedule")?);
        model.params.read_archive("param.", &archive)?;
        Ok(model)
    }
}

fn init_params(cfg: &DiffusionConfig, seed: u64) -> ParamSet {
    let mut rng = named_stream(seed, "init", &[]);
    let mut params = ParamSet::new();

    let mut d = 3;
    for (i, &w) in cfg.enc_widths.iter().enumerate() {
        params.push(&format!("enc{i}.w"), xavier(&mut rng, d, w));
        params.push(&format!("enc{i}.b"), zeros_row(w));
        d = w;
    }
    params.push("enc_out.w", xavier(&mut rng, d, cfg.latent_dim));
    params.push("enc_out.b", zeros_row(cfg.latent_dim));

    let d_in = 3 + cfg.time_dim + cfg.latent_dim;
    let h = cfg.eps_hidden;
    params.push("eps_in.w", xavier(&mut rng, d_in, h));
    params.push("eps_in.b", zeros_row(h));
    for i in 0..cfg.n_res_blocks {
        params.push(&format!("res{i}.a.w"), xavier(&mut rng, h, h));
        params.push(&format!("res{i}.a.b"), zeros_row(h));
        params.push(&format!("res{i}.b.w"), xavier(&mut rng, h, h));
        params.push(&format!("res{i}.b.b"), zeros_row(h));
    }
    // zero-initialized output keeps the fresh model an exact zero predictor
    params.push("eps_out.w", Array2::zeros((h, 3)));
    params.push("eps_out.b", zeros_row(3));
    params
}
