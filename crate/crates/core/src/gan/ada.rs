use serde::{Deserialize, Serialize};

use super::GanConfig;

/// Adaptive augmentation controller state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaState {
    /// Augmentation probability, always in `[0, 1]`.
    pub p: f64,
    /// Running estimate of `E[sign(D(real))]`.
    pub r_hat: f64,
    /// Real images whose discriminator signs have been fed to the controller.
    pub images_seen: u64,
}

/// One controller step.
///
/// `r_hat` moves toward the batch mean of `sign(D(real))` by the factor
/// `1 - ada_ema`; `p` then moves by `ada_step` toward less overfitting:
/// up when `r_hat` exceeds the target, down when below, unchanged on equality.
pub fn ada_update(s: AdaState, d_signs: &[f32], cfg: &GanConfig) -> AdaState {
    if d_signs.is_empty() {
        return s;
    }
    let mean = d_signs.iter().map(|v| v.signum() as f64 * (*v != 0.0) as u8 as f64).sum::<f64>() / d_signs.len() as f64;
    let r_hat = s.r_hat + (1.0 - cfg.ada_ema) * (mean - s.r_hat);
    let p = if r_hat > cfg.ada_target {
        s.p + cfg.ada_step
    } else if r_hat < cfg.ada_target {
        s.p - cfg.ada_step
    } else {
        s.p
    };
    AdaState {
        p: p.clamp(0.0, 1.0),
        r_hat,
        images_seen: s.images_seen + d_signs.len() as u64,
    }
}
