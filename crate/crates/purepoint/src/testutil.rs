//! Trained fixtures shared across test modules. Training the small models
//! takes a few seconds, so each fixture is built once per test binary behind a
//! `LazyLock` and borrowed everywhere it is needed.

use std::sync::LazyLock;

use ndarray::{Array1, Array2};

use crate::classify::{train_classifier, ClassifierConfig, ClassifierModel, TrainConfig};
use crate::dataset::{make_synthetic_dataset, Dataset, SyntheticConfig};
use crate::diffusion::{train_diffusion, DiffusionConfig, DiffusionModel, DiffusionTrainConfig};
use crate::geom::PointCloud;
use crate::model::CloudClassifier;

/// Binary classifier with logits `(0, sum_i w . x_i)`: differentiable, no
/// pooling, analytic gradient for exactness checks. Accepts any point count,
/// which the cardinality-changing attacks rely on.
pub(crate) struct LinearStub {
    pub(crate) w: [f64; 3],
}

impl CloudClassifier for LinearStub {
    fn num_classes(&self) -> usize {
        2
    }

    fn logits(&self, cloud: &PointCloud) -> crate::error::Result<Array1<f64>> {
        let s: f64 = cloud
            .points()
            .rows()
            .into_iter()
            .map(|r| r[0] * self.w[0] + r[1] * self.w[1] + r[2] * self.w[2])
            .sum();
        Ok(ndarray::arr1(&[0.0, s]))
    }

    fn logits_vjp(
        &self,
        cloud: &PointCloud,
        upstream: &Array1<f64>,
    ) -> crate::error::Result<(Array1<f64>, Array2<f64>)> {
        let logits = self.logits(cloud)?;
        let mut grad = Array2::zeros(cloud.points().dim());
        for mut row in grad.rows_mut() {
            for d in 0..3 {
                row[d] = upstream[1] * self.w[d];
            }
        }
        Ok((logits, grad))
    }

    fn loss_and_input_grad(
        &self,
        cloud: &PointCloud,
        label: usize,
    ) -> crate::error::Result<(f64, Array2<f64>)> {
        let logits = self.logits(cloud)?;
        let loss = crate::model::cross_entropy(&logits, label);
        let mut p = crate::model::softmax(&logits);
        p[label] -= 1.0;
        let (_, grad) = self.logits_vjp(cloud, &p)?;
        Ok((loss, grad))
    }
}

pub(crate) fn toy_diffusion_config() -> DiffusionConfig {
    DiffusionConfig {
        latent_dim: 16,
        time_dim: 8,
        enc_widths: vec![32],
        eps_hidden: 32,
        n_res_blocks: 2,
        t_steps: 40,
        beta_min: 1e-4,
        beta_max: 0.05,
    }
}

pub(crate) fn toy_dataset() -> Dataset {
    make_synthetic_dataset(&SyntheticConfig {
        n_classes: 2,
        per_class: 10,
        points_per_cloud: 32,
        jitter_sigma: 0.01,
        seed: 41,
    })
    .unwrap()
}

/// Small diffusion model trained on two shape classes, with the dataset it
/// was trained on.
pub(crate) static TOY_DIFFUSION: LazyLock<(DiffusionModel, Dataset)> = LazyLock::new(|| {
    let data = toy_dataset();
    let mut model = DiffusionModel::new(toy_diffusion_config(), 5).unwrap();
    train_diffusion(
        &mut model,
        &data.train,
        &DiffusionTrainConfig {
            epochs: 60,
            batch_size: 8,
            lr: 3e-3,
            t_range: None,
            seed: 9,
        },
    )
    .unwrap();
    (model, data)
});

/// PointNet-style classifier trained on the same toy dataset.
pub(crate) static TOY_CLASSIFIER: LazyLock<ClassifierModel> = LazyLock::new(|| {
    let data = &TOY_DIFFUSION.1;
    let mut model = ClassifierModel::new(ClassifierConfig::pointnet_mini(2), 17).unwrap();
    train_classifier(
        &mut model,
        data,
        &TrainConfig {
            epochs: 25,
            batch_size: 8,
            lr: 5e-3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    model
});

/// Dense end-to-end fixture for purification-quality tests: 512-point clouds,
/// a purifier-specialized diffusion model on the full-length default schedule,
/// and a classifier for the same data.
///
/// The sampling density matters. Purification can only remove the component
/// of a perturbation normal to the surface; the tangential part slides points
/// along the shape, and Chamfer distance forgives that slide only when the
/// clean cloud is sampled finely enough that a slid point still lands near
/// some reference point. The diffusion model is trained with `t_range`
/// restricted to the first few steps, since that is the only regime the
/// purifier integrates through and uniform sampling over the full schedule
/// leaves those steps untrained. Building this fixture takes around a minute;
/// it is shared per test binary.
pub(crate) static DENSE_PIPELINE: LazyLock<(DiffusionModel, ClassifierModel, Dataset)> =
    LazyLock::new(|| {
        let data = make_synthetic_dataset(&SyntheticConfig {
            n_classes: 2,
            per_class: 10,
            points_per_cloud: 512,
            jitter_sigma: 0.01,
            seed: 43,
        })
        .unwrap();
        let mut diffusion = DiffusionModel::new(
            DiffusionConfig {
                t_steps: 200,
                ..toy_diffusion_config()
            },
            5,
        )
        .unwrap();
        for (k, (epochs, lr)) in [(800usize, 5e-3), (300, 2e-3)].into_iter().enumerate() {
            train_diffusion(
                &mut diffusion,
                &data.train,
                &DiffusionTrainConfig {
                    epochs,
                    batch_size: 4,
                    lr,
                    t_range: Some((1, 10)),
                    seed: 10 + k as u64,
                },
            )
            .unwrap();
        }
        let mut classifier = ClassifierModel::new(ClassifierConfig::pointnet_mini(2), 19).unwrap();
        train_classifier(
            &mut classifier,
            &data,
            &TrainConfig {
                epochs: 25,
                batch_size: 8,
                lr: 5e-3,
                seed: 3,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        (diffusion, classifier, data)
    });
