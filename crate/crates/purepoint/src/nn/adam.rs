//! Parameter containers, initialization, and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};

/// Ordered, named collection of 2-d parameter arrays. The order is the
/// checkpoint layout and the order in which gradients are reported.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, value: Array2<f64>) -> usize {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Register every parameter as a tape leaf, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// Collect per-parameter gradients from a backward pass over `vars`
    /// (as returned by [`ParamSet::bind`]).
    pub fn grads(
        &self,
        tape: &Tape,
        vars: &[Var],
        grads: &crate::nn::tape::Gradients,
    ) -> Vec<Array2<f64>> {
        vars.iter().map(|&v| grads.of(tape, v)).collect()
    }

    pub fn write_archive(&self, prefix: &str, archive: &mut Archive) -> Result<()> {
        for (name, value) in self.names.iter().zip(&self.values) {
            archive.insert_f64(&format!("{prefix}{name}"), value.clone())?;
        }
        Ok(())
    }

    /// Fill existing parameters (layout already constructed) from an archive;
    /// shapes must match the constructed layout.
    pub fn read_archive(&mut self, prefix: &str, archive: &Archive) -> Result<()> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let stored = archive.get_f64_2d(&format!("{prefix}{name}"))?;
            if stored.dim() != value.dim() {
                return Err(Error::Model(format!(
                    "parameter {name}: checkpoint shape {:?} != expected {:?}",
                    stored.dim(),
                    value.dim()
                )));
            }
            *value = stored;
        }
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Xavier/Glorot uniform initialization for a dense layer.
pub fn xavier<R: Rng>(rng: &mut R, n_in: usize, n_out: usize) -> Array2<f64> {
    let bound = (6.0 / (n_in + n_out) as f64).sqrt();
    Array2::from_shape_fn((n_in, n_out), |_| rng.random_range(-bound..bound))
}

pub fn zeros_row(d: usize) -> Array2<f64> {
    Array2::zeros((1, d))
}

/// Adam with the standard bias-corrected moment estimates. Moment buffers are
/// allocated lazily on the first step to match the parameter shapes.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
            self.v = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}
