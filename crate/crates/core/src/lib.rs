//! Landmark-guided GAN data augmentation for fine-grained classification.
//!
//! The pipeline predicts seven facial landmarks per image, crops around
//! them, trains a class-conditional GAN with adaptive discriminator
//! augmentation on the crops, merges generated images into the real
//! training set, and measures the effect with FID, landmark RMSE, and
//! classification accuracy.
//!
//! Modules map onto pipeline stages:
//!
//! * [`dataset`] manifests, ingestion, subsetting, resizing, merging
//! * [`landmarks`] keypoint regressor, normalization, RMSE, outlier filter
//! * [`crop`] landmark-driven square crops
//! * [`gan`] conditional GAN, ADA controller, checkpoints, sampling
//! * [`metrics`] Gaussian stats, PSD square root, FID, accuracy
//! * [`classifier`] classifier training/evaluation and the experiment matrix
//! * [`pipeline`] staged, content-hashed orchestration

pub mod checkpoint;
pub mod classifier;
pub mod crop;
pub mod dataset;
pub mod error;
pub mod gan;
pub mod imageio;
pub mod landmarks;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod toy;

pub use crop::{compute_crop, CropBox};
pub use dataset::{DatasetManifest, Provenance, Record, Split};
pub use error::{Error, Result};
pub use landmarks::LandmarkSet;
pub use metrics::{FeatureExtractor, GaussianStats};
pub use pipeline::{ExperimentConfig, Pipeline, Stage, StageOutcome};
