use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::Tensor;
use crate::seed;

/// Maps an image to a fixed-length feature vector.
///
/// Inputs are `[3, H, W]` tensors in `[-1, 1]`. FID values are only
/// comparable between runs that report the same [`descriptor`](Self::descriptor).
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn descriptor(&self) -> String;
    fn extract(&self, image: &Tensor) -> Vec<f64>;
}

/// Raw pixels as features; only sensible for tiny inputs.
#[derive(Clone, Debug)]
pub struct IdentityExtractor {
    dim: usize,
}

impl IdentityExtractor {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl FeatureExtractor for IdentityExtractor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn descriptor(&self) -> String {
        format!("identity-v1(dim={})", self.dim)
    }

    fn extract(&self, image: &Tensor) -> Vec<f64> {
        assert_eq!(image.len(), self.dim, "identity extractor input size");
        image.data().iter().map(|&v| v as f64).collect()
    }
}

/// Area-pools each channel to a `pool x pool` grid, then applies a fixed
/// Gaussian random projection. Deterministic from its seed.
#[derive(Clone, Debug)]
pub struct RandomProjectionExtractor {
    pool: usize,
    dim: usize,
    seed: u64,
    /// `dim x (3 * pool * pool)`, row-major.
    projection: Vec<f64>,
}

impl RandomProjectionExtractor {
    pub fn new(pool: usize, dim: usize, seed: u64) -> Self {
        let inputs = 3 * pool * pool;
        let mut rng = seed::rng(seed::derive_seed(seed, &["random-projection"]));
        let scale = 1.0 / (inputs as f64).sqrt();
        let projection = (0..dim * inputs)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Self {
            pool,
            dim,
            seed,
            projection,
        }
    }

    fn pooled(&self, image: &Tensor) -> Vec<f64> {
        let s = image.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        assert_eq!(c, 3, "extractor expects RGB input");
        let p = self.pool;
        let mut out = vec![0.0; 3 * p * p];
        let d = image.data();
        for ch in 0..3 {
            for gy in 0..p {
                let (y0, y1) = (gy * h / p, ((gy + 1) * h / p).max(gy * h / p + 1));
                for gx in 0..p {
                    let (x0, x1) = (gx * w / p, ((gx + 1) * w / p).max(gx * w / p + 1));
                    let mut acc = 0.0;
                    for y in y0..y1.min(h) {
                        for x in x0..x1.min(w) {
                            acc += d[ch * h * w + y * w + x] as f64;
                        }
                    }
                    out[(ch * p + gy) * p + gx] = acc / ((y1.min(h) - y0) * (x1.min(w) - x0)) as f64;
                }
            }
        }
        out
    }
}

impl FeatureExtractor for RandomProjectionExtractor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn descriptor(&self) -> String {
        format!("random-projection-v1(pool={},dim={},seed={})", self.pool, self.dim, self.seed)
    }

    fn extract(&self, image: &Tensor) -> Vec<f64> {
        let v = self.pooled(image);
        self.projection
            .chunks(v.len())
            .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_deterministic_and_fixed_width() {
        let e = RandomProjectionExtractor::new(4, 16, 7);
        let img = Tensor::from_vec(&[3, 8, 8], (0..192).map(|i| (i as f32 / 96.0) - 1.0).collect());
        let f = e.extract(&img);
        assert_eq!(f.len(), 16);
        assert_eq!(f, RandomProjectionExtractor::new(4, 16, 7).extract(&img));
        assert_ne!(f, RandomProjectionExtractor::new(4, 16, 8).extract(&img));
        assert!(e.descriptor().contains("seed=7"));
    }

    #[test]
    fn pooling_averages_blocks() {
        let e = RandomProjectionExtractor::new(2, 1, 0);
        let mut data = vec![0.0f32; 3 * 4 * 4];
        data[0] = 1.0; // top-left block of channel 0
        let pooled = e.pooled(&Tensor::from_vec(&[3, 4, 4], data));
        assert_eq!(pooled[0], 0.25);
        assert!(pooled[1..].iter().all(|v| *v == 0.0));
    }
}
