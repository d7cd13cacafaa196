use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{CellId, ClassifierConfig, Variant};
use crate::crop::CropSettings;
use crate::dataset::{Layout, ResizeMode};
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::landmarks::LandmarkModelConfig;
use crate::metrics::RandomProjectionExtractor;
use crate::toy::ToyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Directory { root: PathBuf, layout: Layout },
    Toy(ToyConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Annotation file with 14 landmark coordinates per image, keyed by file name.
    pub landmarks: Option<PathBuf>,
    /// Separate annotated manifest to train the landmark model on.
    pub landmark_manifest: Option<PathBuf>,
    /// Test share per class when the layout carries no official split.
    pub test_fraction: f64,
    /// Working resolution for crops, the GAN and the classifier.
    pub resolution: u32,
    pub resize_mode: ResizeMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Toy(ToyConfig::default()),
            landmarks: None,
            landmark_manifest: None,
            test_fraction: 0.5,
            resolution: 128,
            resize_mode: ResizeMode::Stretch,
        }
    }
}

/// Settings of the random-projection feature extractor used for FID.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidConfig {
    pub pool: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for FidConfig {
    fn default() -> Self {
        Self {
            pool: 8,
            dim: 64,
            seed: 0,
        }
    }
}

impl FidConfig {
    pub fn extractor(&self) -> RandomProjectionExtractor {
        RandomProjectionExtractor::new(self.pool, self.dim, self.seed)
    }
}

/// One declarative description of the whole experiment matrix.
///
/// Per-module `seed` fields are ignored by the pipeline: every stage gets
/// `derive_seed(seed, [stage, cell])` instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_root: PathBuf,
    pub fractions: Vec<f64>,
    pub variants: Vec<Variant>,
    /// Generated images merged per class into augmented training sets.
    pub synthetic_per_class: usize,
    pub dataset: DatasetConfig,
    pub crop: CropSettings,
    pub landmarks: LandmarkModelConfig,
    pub gan: GanConfig,
    pub classifier: ClassifierConfig,
    pub fid: FidConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_root: PathBuf::from("runs/default"),
            fractions: vec![0.1, 0.5, 1.0],
            variants: Variant::ALL.to_vec(),
            synthetic_per_class: 200,
            dataset: DatasetConfig::default(),
            crop: CropSettings::default(),
            landmarks: LandmarkModelConfig::default(),
            gan: GanConfig::default(),
            classifier: ClassifierConfig::default(),
            fid: FidConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale preset: 2 classes x 128 procedural 32x32 faces.
    pub fn toy() -> Self {
        let res = 32;
        Self {
            output_root: PathBuf::from("runs/toy"),
            synthetic_per_class: 96,
            dataset: DatasetConfig {
                source: DataSource::Toy(ToyConfig::default()),
                test_fraction: 0.25,
                resolution: res,
                ..Default::default()
            },
            landmarks: LandmarkModelConfig {
                input_size: (res, res),
                ..Default::default()
            },
            gan: GanConfig {
                total_kimg: 6,
                snapshot_interval_kimg: 1,
                ..GanConfig::desk(2)
            },
            classifier: ClassifierConfig {
                input_size: res,
                width: 8,
                lr: 2e-2,
                batch_size: 8,
                epochs: 20,
                ..Default::default()
            },
            fid: FidConfig { pool: 4, dim: 32, seed: 0 },
            ..Default::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::parse("experiment config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.output_root);
        if let DataSource::Directory { root, .. } = &mut cfg.dataset.source {
            fix(root);
        }
        if let Some(p) = &mut cfg.dataset.landmarks {
            fix(p);
        }
        if let Some(p) = &mut cfg.dataset.landmark_manifest {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("experiment config", e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidConfig("fractions must be non-empty and lie in (0, 1]".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("at least one variant is required".into()));
        }
        if self.gan.resolution != self.dataset.resolution || self.classifier.input_size != self.dataset.resolution {
            return Err(Error::InvalidConfig(format!(
                "gan.resolution ({}) and classifier.input_size ({}) must equal dataset.resolution ({})",
                self.gan.resolution, self.classifier.input_size, self.dataset.resolution
            )));
        }
        if !(self.dataset.test_fraction >= 0.0 && self.dataset.test_fraction < 1.0) {
            return Err(Error::InvalidConfig("dataset.test_fraction must lie in [0, 1)".into()));
        }
        if self.crop.margin < 0.0 {
            return Err(Error::NegativeMargin(self.crop.margin));
        }
        self.landmarks.validate()?;
        self.classifier.validate()?;
        GanConfig {
            class_count: 1,
            ..self.gan.clone()
        }
        .validate()
    }

    /// All matrix cells, variant-major in the configured order.
    pub fn cells(&self) -> Vec<CellId> {
        self.variants
            .iter()
            .flat_map(|&variant| self.fractions.iter().map(move |&fraction| CellId { variant, fraction }))
            .collect()
    }

    /// Hash of everything that determines results; `output_root` is excluded
    /// so copied or relocated trees report the same hash.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_root = PathBuf::new();
        hash_json(&c)
    }
}

pub(crate) fn hash_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("config types serialize");
    hex::encode(Sha256::digest(&bytes))
}
