use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LandmarkSet;
use crate::error::{Error, Result};
use crate::seed;

/// Geometric transform applied identically to pixels and keypoints.
/// Rotation and zoom act about the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeometricOp {
    Mirror,
    /// Degrees; positive turns +x toward +y (clockwise on screen).
    Rotate(f64),
    Zoom(f64),
}

/// Ranges from which per-sample ops are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub mirror_prob: f64,
    pub max_rotation_deg: f64,
    pub zoom_range: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            mirror_prob: 0.5,
            max_rotation_deg: 15.0,
            zoom_range: (0.9, 1.1),
        }
    }
}

impl AugmentPolicy {
    pub fn sample(&self, seed: u64) -> Vec<GeometricOp> {
        let mut rng = seed::rng(seed);
        let mut ops = Vec::new();
        if rng.gen::<f64>() < self.mirror_prob {
            ops.push(GeometricOp::Mirror);
        }
        if self.max_rotation_deg > 0.0 {
            ops.push(GeometricOp::Rotate(rng.gen_range(-self.max_rotation_deg..=self.max_rotation_deg)));
        }
        let (lo, hi) = self.zoom_range;
        if hi > lo {
            ops.push(GeometricOp::Zoom(rng.gen_range(lo..=hi)));
        }
        ops
    }
}

/// Bilinear sample at continuous pixel position, black outside the frame.
fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    // convert from continuous coords to pixel-center index space
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor() as i64, fy.floor() as i64);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let mut acc = [0.0; 3];
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let (px, py) = (x0 + dx, y0 + dy);
            if px < 0 || py < 0 || px >= w || py >= h {
                continue;
            }
            let p = img.get_pixel(px as u32, py as u32);
            for c in 0..3 {
                acc[c] += wx * wy * p[c] as f64;
            }
        }
    }
    acc
}

/// Resamples `img` under the center-relative linear map `m` (dst = c + m (src - c)).
fn warp(img: &RgbImage, m: [[f64; 2]; 2]) -> RgbImage {
    let (cx, cy) = (img.width() as f64 / 2.0, img.height() as f64 / 2.0);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let (qx, qy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let sx = cx + inv[0][0] * qx + inv[0][1] * qy;
        let sy = cy + inv[1][0] * qx + inv[1][1] * qy;
        let v = sample_bilinear(img, sx, sy);
        image::Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
    })
}

fn map_points(l: &LandmarkSet, m: [[f64; 2]; 2], (cx, cy): (f64, f64)) -> LandmarkSet {
    l.map(|[x, y]| {
        let (dx, dy) = (x - cx, y - cy);
        [cx + m[0][0] * dx + m[0][1] * dy, cy + m[1][0] * dx + m[1][1] * dy]
    })
}

/// Applies `ops` in order. Fails when every landmark ends up outside the frame.
pub fn apply_geometric(img: &RgbImage, l: &LandmarkSet, ops: &[GeometricOp]) -> Result<(RgbImage, LandmarkSet)> {
    let dims = img.dimensions();
    let center = (dims.0 as f64 / 2.0, dims.1 as f64 / 2.0);
    let mut img = img.clone();
    let mut l = *l;
    for op in ops {
        match *op {
            GeometricOp::Mirror => {
                image::imageops::flip_horizontal_in_place(&mut img);
                l = l.mirrored(dims.0 as f64);
            }
            GeometricOp::Rotate(deg) => {
                let (s, c) = deg.to_radians().sin_cos();
                let m = [[c, -s], [s, c]];
                img = warp(&img, m);
                l = map_points(&l, m, center);
            }
            GeometricOp::Zoom(z) => {
                if !(z > 0.0) {
                    return Err(Error::InvalidConfig(format!("zoom factor {z} must be positive")));
                }
                let m = [[z, 0.0], [0.0, z]];
                img = warp(&img, m);
                l = map_points(&l, m, center);
            }
        }
    }
    if !l.any_inside(dims) {
        return Err(Error::LandmarksOutOfFrame);
    }
    Ok((img, l))
}

/// Draws ops from `policy` with `seed` and applies them.
pub fn augment_training_pair(
    img: &RgbImage,
    l: &LandmarkSet,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<(RgbImage, LandmarkSet)> {
    if !l.all_inside(img.dimensions()) {
        return Err(Error::LandmarksOutOfFrame);
    }
    apply_geometric(img, l, &policy.sample(seed))
}
