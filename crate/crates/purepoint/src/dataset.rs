//! Synthetic point-cloud dataset built from the parametric primitives.
//!
//! Every instance is a primitive mesh with a random per-axis scale and a
//! random rotation about z, sampled uniformly over its surface, jittered with
//! Gaussian noise, and normalized to the unit cube. Instances can be
//! materialized directly in memory or exported as an OFF directory tree
//! (`<root>/<class>/{train,test}/<id>.off`) and loaded back; both paths
//! produce bitwise-identical clouds for the same seed because all per-instance
//! randomness is keyed by class name and instance id rather than iteration
//! order.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{LabeledCloud, PointCloud};
use crate::mesh::{parse_off, sample_surface, serialize_off, Mesh, ShapeClass};
use crate::rng::{label, mix, named_stream};

/// A labeled train/test split with shared class names.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<LabeledCloud>,
    pub test: Vec<LabeledCloud>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Number of shape classes to include, at most 8.
    pub n_classes: usize,
    /// Instances per class across both splits; the first 4/5 go to train.
    pub per_class: usize,
    pub points_per_cloud: usize,
    /// Standard deviation of the Gaussian jitter applied before normalization.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            per_class: 50,
            points_per_cloud: 128,
            jitter_sigma: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_classes > ShapeClass::ALL.len() {
            return Err(Error::InvalidArgument(format!(
                "n_classes must be 1..={}, got {}",
                ShapeClass::ALL.len(),
                self.n_classes
            )));
        }
        if self.per_class < 2 {
            return Err(Error::InvalidArgument(
                "per_class must be >= 2 so both splits are populated".into(),
            ));
        }
        if self.points_per_cloud < 8 {
            return Err(Error::InvalidArgument(
                "points_per_cloud must be >= 8".into(),
            ));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidArgument("jitter_sigma must be >= 0".into()));
        }
        Ok(())
    }

    fn train_per_class(&self) -> usize {
        self.per_class * 4 / 5
    }
}

/// One generated shape instance before sampling.
struct Instance {
    class: &'static str,
    id: String,
    mesh: Mesh,
    is_train: bool,
}

fn generate_instances(cfg: &SyntheticConfig) -> Vec<Instance> {
    let n_train = cfg.train_per_class();
    let mut out = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for class in &ShapeClass::ALL[..cfg.n_classes] {
        let base = class.mesh();
        for idx in 0..cfg.per_class {
            let mut rng = named_stream(cfg.seed, "shape", &[label(class.name()), idx as u64]);
            let scale = [
                rng.random_range(0.7..1.3),
                rng.random_range(0.7..1.3),
                rng.random_range(0.7..1.3),
            ];
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            out.push(Instance {
                class: class.name(),
                id: format!("{}_{idx:03}", class.name()),
                mesh: base.scaled_rotated(scale, angle),
                is_train: idx < n_train,
            });
        }
    }
    out
}

/// Sampling seed for one instance; shared by the in-memory and on-disk paths.
fn instance_sample_seed(base: u64, class: &str, id: &str) -> u64 {
    mix(base, &[label("sample"), label(class), label(id)])
}

fn cloud_from_mesh(
    mesh: &Mesh,
    class: &str,
    id: &str,
    cfg_seed: u64,
    points: usize,
    jitter_sigma: f64,
) -> Result<PointCloud> {
    let pc = sample_surface(mesh, points, instance_sample_seed(cfg_seed, class, id))?;
    let mut pts = pc.points().to_owned();
    if jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, jitter_sigma).expect("sigma checked nonneg");
        let mut rng = named_stream(cfg_seed, "jitter", &[label(class), label(id)]);
        for v in pts.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    PointCloud::new(pts)?.normalize_to_unit_cube()
}

/// Build the synthetic dataset entirely in memory.
pub fn make_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let class_names: Vec<String> = ShapeClass::ALL[..cfg.n_classes]
        .iter()
        .map(|c| c.name().to_string())
        .collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for inst in generate_instances(cfg) {
        let cloud = cloud_from_mesh(
            &inst.mesh,
            inst.class,
            &inst.id,
            cfg.seed,
            cfg.points_per_cloud,
            cfg.jitter_sigma,
        )?;
        let lbl = class_names.iter().position(|n| n == inst.class).unwrap();
        let sample = LabeledCloud::new(cloud, lbl, cfg.n_classes)?;
        if inst.is_train {
            train.push(sample);
        } else {
            test.push(sample);
        }
    }
    Ok(Dataset {
        class_names,
        train,
        test,
    })
}

/// Write the transformed instance meshes as an OFF tree:
/// `<root>/<class>/{train,test}/<id>.off`.
pub fn export_synthetic_off(root: &Path, cfg: &SyntheticConfig) -> Result<()> {
    cfg.validate()?;
    for inst in generate_instances(cfg) {
        let split = if inst.is_train { "train" } else { "test" };
        let dir = root.join(inst.class).join(split);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("{}.off", inst.id)), serialize_off(&inst.mesh))?;
    }
    Ok(())
}

/// Load an OFF tree produced by [`export_synthetic_off`] (or hand-arranged in
/// the same layout). Classes are the sorted subdirectory names; labels follow
/// that order.
pub fn load_off_dataset(
    root: &Path,
    points_per_cloud: usize,
    jitter_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut class_names = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            class_names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no class directories under {}",
            root.display()
        )));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (lbl, class) in class_names.iter().enumerate() {
        for (split, bucket) in [("train", &mut train), ("test", &mut test)] {
            let dir = root.join(class).join(split);
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<_> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "off"))
                .collect();
            files.sort();
            for path in files {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let mesh = parse_off(&std::fs::read(&path)?).map_err(|e| {
                    Error::InvalidArgument(format!("{}: {e}", path.display()))
                })?;
                let cloud =
                    cloud_from_mesh(&mesh, class, &stem, seed, points_per_cloud, jitter_sigma)?;
                bucket.push(LabeledCloud::new(cloud, lbl, class_names.len())?);
            }
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .off files under {}",
            root.display()
        )));
    }
    Ok(Dataset {
        class_names,
        train,
        test,
    })
}

/// Deterministically pick `k` distinct indices from the test split.
pub fn seeded_test_subset(ds: &Dataset, k: usize, seed: u64) -> Vec<usize> {
    let n = ds.test.len();
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = named_stream(seed, "subset", &[]);
    // Fisher-Yates; only the first k positions matter but a full shuffle keeps
    // the prefix property: subset(k1) is a prefix of subset(k2) for k1 < k2.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order.truncate(k);
    order
}
