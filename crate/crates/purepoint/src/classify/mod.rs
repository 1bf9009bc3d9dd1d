//! Point-cloud classifiers: a smooth PointNet-style network and a
//! kNN-indexing DGCNN-style network, plus training and gradient diagnostics.
//!
//! Both are built on the autodiff tape, share one parameter/checkpoint
//! format, and implement [`CloudClassifier`]. The architectural contrast is
//! the point: the PointNet variant is differentiable everywhere except its
//! global max pool, while the DGCNN variant routes features through frozen
//! kNN gather indices whose selection is invisible to gradients.

mod dgcnn;
mod health;
mod pointnet;
mod train;

pub use health::{gradient_health_report, GradientHealth};
pub use train::{adversarial_train, train_classifier, TrainConfig, TrainReport};

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::model::CloudClassifier;
use crate::nn::{ParamSet, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    PointnetMini,
    DgcnnMini,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::PointnetMini => write!(f, "pointnet_mini"),
            Arch::DgcnnMini => write!(f, "dgcnn_mini"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub arch: Arch,
    pub n_classes: usize,
    /// Per-point MLP widths (PointNet path).
    pub point_widths: Vec<usize>,
    /// EdgeConv output widths (DGCNN path).
    pub edge_widths: Vec<usize>,
    /// Post-EdgeConv projection width before the global pool (DGCNN path).
    pub proj_width: usize,
    /// Hidden width of the classification head.
    pub head_width: usize,
    /// Neighbors per point for EdgeConv.
    pub k: usize,
}

impl ClassifierConfig {
    pub fn pointnet_mini(n_classes: usize) -> Self {
        Self {
            arch: Arch::PointnetMini,
            n_classes,
            point_widths: vec![64, 128, 256],
            edge_widths: vec![],
            proj_width: 0,
            head_width: 128,
            k: 0,
        }
    }

    pub fn dgcnn_mini(n_classes: usize) -> Self {
        Self {
            arch: Arch::DgcnnMini,
            n_classes,
            point_widths: vec![],
            edge_widths: vec![64, 128],
            proj_width: 256,
            head_width: 128,
            k: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Model("need at least 2 classes".into()));
        }
        match self.arch {
            Arch::PointnetMini => {
                if self.point_widths.is_empty() {
                    return Err(Error::Model("pointnet_mini needs point_widths".into()));
                }
            }
            Arch::DgcnnMini => {
                if self.edge_widths.is_empty() || self.proj_width == 0 || self.k == 0 {
                    return Err(Error::Model(
                        "dgcnn_mini needs edge_widths, proj_width, and k".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub params: ParamSet,
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = match config.arch {
            Arch::PointnetMini => pointnet::init_params(&config, seed),
            Arch::DgcnnMini => dgcnn::init_params(&config, seed),
        };
        Ok(Self { config, params })
    }

    /// Append the forward pass to `tape` starting from input var `x` (N x 3).
    /// Returns the logits var (1 x C) and the bound parameter vars in
    /// parameter order.
    pub fn logits_tape(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        match self.config.arch {
            Arch::PointnetMini => pointnet::forward(&self.config, &self.params, tape, x),
            Arch::DgcnnMini => dgcnn::forward(&self.config, &self.params, tape, x),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut archive = Archive::new();
        let cfg = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Model(format!("config serialization: {e}")))?;
        archive.insert_bytes("config", cfg)?;
        self.params.write_archive("param.", &mut archive)?;
        archive.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::load(path)?;
        let config: ClassifierConfig = serde_json::from_slice(archive.get_bytes("config")?)
            .map_err(|e| Error::Model(format!("config deserialization: {e}")))?;
        let mut model = Self::new(config, 0)?;
        model.params.read_archive("param.", &archive)?;
        Ok(model)
    }
}

impl CloudClassifier for ClassifierModel {
    fn num_classes(&self) -> usize {
        self.config.n_classes
    }

    fn logits(&self, cloud: &PointCloud) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let x = tape.leaf(cloud.points().to_owned());
        let (logits, _) = self.logits_tape(&mut tape, x)?;
        Ok(tape.value(logits).row(0).to_owned())
    }

    fn logits_vjp(
        &self,
        cloud: &PointCloud,
        upstream: &Array1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(cloud.points().to_owned());
        let (logits, _) = self.logits_tape(&mut tape, x)?;
        let seed = upstream.clone().insert_axis(ndarray::Axis(0));
        let grads = tape.backward(logits, seed);
        Ok((tape.value(logits).row(0).to_owned(), grads.of(&tape, x)))
    }

    fn loss_and_input_grad(&self, cloud: &PointCloud, label: usize) -> Result<(f64, Array2<f64>)> {
        if label >= self.config.n_classes {
            return Err(Error::Model(format!(
                "label {label} out of range for {} classes",
                self.config.n_classes
            )));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(cloud.points().to_owned());
        let (logits, _) = self.logits_tape(&mut tape, x)?;
        let loss = tape.cross_entropy_logits(logits, label);
        let value = tape.value(loss)[[0, 0]];
        let grads = tape.backward(loss, ndarray::arr2(&[[1.0]]));
        Ok((value, grads.of(&tape, x)))
    }
}

/// Loss and parameter gradients for one sample; the training primitive.
pub(crate) fn loss_and_param_grads(
    model: &ClassifierModel,
    cloud: &PointCloud,
    label: usize,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(cloud.points().to_owned());
    let (logits, param_vars) = model.logits_tape(&mut tape, x)?;
    let loss = tape.cross_entropy_logits(logits, label);
    let value = tape.value(loss)[[0, 0]];
    let grads = tape.backward(loss, ndarray::arr2(&[[1.0]]));
    Ok((value, model.params.grads(&tape, &param_vars, &grads)))
}
