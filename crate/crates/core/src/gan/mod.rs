//! Class-conditional GAN with an adaptive discriminator-augmentation controller.
//!
//! The generator maps `(z, class)` to an image in `[-1, 1]`; the discriminator
//! is a strided convolutional stack with a projection head for the class.
//! Training uses the non-saturating logistic loss with lazy R1, feeds the
//! sign of `D(real)` to [`ada_update`], and snapshots FID every
//! `snapshot_interval_kimg`.

mod ada;
mod augment;
mod generate;
mod models;
mod train;

pub use ada::{ada_update, AdaState};
pub use augment::{augment_batch, AugmentConfig, AugmentPlan};
pub use generate::generate_per_class;
pub use models::{build_models, Discriminator, Generator};
pub use train::{balanced_labels, load_checkpoint, train_gan, GanCheckpoint, TrainOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kimg over which `p` would traverse `[0, 1]` in a full-length run.
pub const ADA_TRAVERSE_KIMG: f64 = 500.0;
/// Run length the traverse time above refers to.
pub const REFERENCE_TOTAL_KIMG: u64 = 5120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub resolution: u32,
    pub class_count: u32,
    pub latent_dim: usize,
    pub g_lr: f32,
    pub d_lr: f32,
    pub ada_target: f64,
    /// Change in `p` per controller update.
    pub ada_step: f64,
    /// Real images between controller updates.
    pub ada_interval_images: u64,
    /// Decay of the `r_hat` moving average per update.
    pub ada_ema: f64,
    pub total_kimg: u64,
    pub snapshot_interval_kimg: u64,
    pub batch_size: usize,
    /// Feature maps at resolution `r` are `min(channel_max, channel_base / r)`.
    pub channel_base: usize,
    pub channel_max: usize,
    pub r1_gamma: f32,
    pub r1_interval: u64,
    pub augment: AugmentConfig,
    pub fid_max_samples: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        let interval = 256;
        Self {
            resolution: 128,
            class_count: 37,
            latent_dim: 128,
            g_lr: 0.0025,
            d_lr: 0.0025,
            ada_target: 0.6,
            ada_step: ada_step_for(REFERENCE_TOTAL_KIMG, interval),
            ada_interval_images: interval,
            ada_ema: 0.9,
            total_kimg: REFERENCE_TOTAL_KIMG,
            snapshot_interval_kimg: 200,
            batch_size: 32,
            channel_base: 16384,
            channel_max: 512,
            r1_gamma: 0.2,
            r1_interval: 16,
            augment: AugmentConfig::default(),
            fid_max_samples: 10_000,
            seed: 0,
        }
    }
}

/// Step size that moves `p` across `[0, 1]` in `500 * total_kimg / 5120` kimg.
pub fn ada_step_for(total_kimg: u64, interval_images: u64) -> f64 {
    let traverse_images = ADA_TRAVERSE_KIMG * total_kimg as f64 / REFERENCE_TOTAL_KIMG as f64 * 1000.0;
    interval_images as f64 / traverse_images.max(1.0)
}

impl GanConfig {
    /// 32x32, narrow networks, 64 kimg.
    pub fn desk(class_count: u32) -> Self {
        let interval = 64;
        let total_kimg = 64;
        Self {
            resolution: 32,
            class_count,
            ada_step: ada_step_for(total_kimg, interval),
            ada_interval_images: interval,
            total_kimg,
            snapshot_interval_kimg: 4,
            batch_size: 16,
            channel_base: 256,
            channel_max: 32,
            r1_gamma: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.resolution < 4 || !self.resolution.is_power_of_two() {
            return bad(format!("GAN resolution must be a power of two >= 4, got {}", self.resolution));
        }
        if !(self.ada_target > 0.0 && self.ada_target < 1.0) {
            return bad(format!("ada_target must lie in (0, 1), got {}", self.ada_target));
        }
        if !(self.g_lr > 0.0 && self.d_lr > 0.0) {
            return bad("GAN learning rates must be positive".into());
        }
        if self.class_count == 0 || self.latent_dim == 0 || self.batch_size == 0 {
            return bad("class_count, latent_dim and batch_size must be positive".into());
        }
        if self.ada_step < 0.0 || !(0.0..=1.0).contains(&self.ada_ema) || self.ada_interval_images == 0 {
            return bad("ADA step must be >= 0, ema in [0, 1], interval > 0".into());
        }
        if self.snapshot_interval_kimg == 0 || self.r1_interval == 0 || self.r1_gamma < 0.0 {
            return bad("snapshot/R1 intervals must be positive and r1_gamma >= 0".into());
        }
        if self.channel_max == 0 || self.channel_base < self.resolution as usize {
            return bad("channel_base must be at least the resolution".into());
        }
        Ok(())
    }

    pub(crate) fn channels(&self, res: u32) -> usize {
        (self.channel_base / res as usize).clamp(1, self.channel_max)
    }
}
