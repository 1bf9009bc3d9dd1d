//! Desk-scale laboratory for diffusion-driven purification of adversarial 3D
//! point clouds.
//!
//! The crate covers the full loop: synthetic shape data, two small cloud
//! classifiers, a conditional point diffusion model, a purification defense
//! built on it, a family of white-box and black-box attacks, and an evaluation
//! harness that writes versioned reports. Everything runs on CPU with `f64`
//! and is deterministic for a fixed seed.

pub mod archive;
pub mod attack;
pub mod classify;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod geom;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod purify;
pub mod rng;
#[cfg(test)]
pub(crate) mod testutil;

pub use archive::Archive;
pub use attack::{
    advpc_attack, cw_attack, knn_attack, latent_attack, latent_distance, nattack, pgd_attack,
    point_add_attack, point_drop_attack, project_to_budget, spsa_attack, within_budget,
    AttackBudget, AttackResult, AttackSurface, CwConfig, CwOutcome, LatentMetric, NattackConfig,
    Norm, PlainTarget, SpsaConfig,
};
pub use classify::{ClassifierConfig, ClassifierModel, TrainConfig};
pub use dataset::{make_synthetic_dataset, Dataset, SyntheticConfig};
pub use diffusion::{
    DiffusionConfig, DiffusionModel, DiffusionTrainConfig, LatentCode, NoiseSchedule,
};
pub use error::{Error, Result};
pub use geom::{LabeledCloud, PointCloud};
pub use mesh::{parse_off, sample_surface, serialize_off, Mesh, ShapeClass};
pub use model::CloudClassifier;
pub use purify::{
    eot_average, purify, purify_input_grad, DefendedTarget, GradMode, PurifierConfig, ReverseMode,
};
