//! Procedural desk-scale corpus: cartoon animal faces on a plain background.
//!
//! Each class has its own background and face palette, so the classes are
//! linearly separable. Every landmark is painted as a small blob in a color
//! reserved for that landmark, which makes the ground truth recoverable from
//! pixels alone by [`centroid_baseline`].

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Record, Split};
use crate::error::Result;
use crate::imageio;
use crate::landmarks::{LandmarkSet, POINT_COUNT};
use crate::seed;

/// Blob colors in landmark order.
pub const BLOB_COLORS: [[u8; 3]; POINT_COUNT] = [
    [255, 0, 0],
    [255, 255, 0],
    [0, 255, 0],
    [0, 255, 255],
    [0, 0, 255],
    [255, 0, 255],
    [255, 255, 255],
];

const BLOB_RADIUS: f64 = 1.6;

const PALETTES: [([u8; 3], [u8; 3]); 4] = [
    ([30, 40, 90], [205, 130, 60]),
    ([40, 90, 40], [150, 150, 160]),
    ([90, 30, 30], [220, 200, 150]),
    ([70, 70, 20], [120, 80, 50]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub classes: u32,
    pub per_class: usize,
    pub size: u32,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            per_class: 128,
            size: 32,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

fn face_landmarks(cx: f64, cy: f64, r: f64) -> LandmarkSet {
    LandmarkSet::new([
        [cx - 0.8 * r, cy - 0.6 * r],
        [cx - 0.6 * r, cy - 1.2 * r],
        [cx + 0.8 * r, cy - 0.6 * r],
        [cx + 0.6 * r, cy - 1.2 * r],
        [cx - 0.4 * r, cy - 0.1 * r],
        [cx + 0.4 * r, cy - 0.1 * r],
        [cx, cy + 0.4 * r],
    ])
}

/// Renders one face; returns the image and its exact landmarks.
pub fn render_face(class_id: u32, size: u32, rng: &mut impl Rng) -> (RgbImage, LandmarkSet) {
    let (bg, face) = PALETTES[(class_id as usize - 1) % PALETTES.len()];
    let s = size as f64;
    let r = rng.gen_range(0.19..0.28) * s;
    let cx = rng.gen_range(r + 2.0..s - r - 2.0);
    let cy = rng.gen_range(1.3 * r + 2.0..s - r - 2.0);
    let l = face_landmarks(cx, cy, r);
    let ears = [l.points[1], l.points[3]];
    let mut img = RgbImage::from_fn(size, size, |_, _| {
        let n: i16 = rng.gen_range(-10..=10);
        Rgb(bg.map(|c| (c as i16 + n).clamp(0, 255) as u8))
    });
    for (x, y, px) in img.enumerate_pixels_mut() {
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let d = |q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        if d([cx, cy]) <= r || ears.iter().any(|e| d(*e) <= 0.45 * r) {
            *px = Rgb(face);
        }
        for (k, q) in l.points.iter().enumerate() {
            if d(*q) <= BLOB_RADIUS {
                *px = Rgb(BLOB_COLORS[k]);
            }
        }
    }
    (img, l)
}

/// Brute-force landmark estimate: centroid of the pixels carrying each
/// landmark's reserved color. Missing blobs fall back to the image center.
pub fn centroid_baseline(img: &RgbImage) -> LandmarkSet {
    let mut acc = [[0.0f64; 3]; POINT_COUNT];
    for (x, y, px) in img.enumerate_pixels() {
        if let Some(k) = BLOB_COLORS.iter().position(|c| *c == px.0) {
            acc[k][0] += x as f64 + 0.5;
            acc[k][1] += y as f64 + 0.5;
            acc[k][2] += 1.0;
        }
    }
    let center = [img.width() as f64 / 2.0, img.height() as f64 / 2.0];
    LandmarkSet::new(acc.map(|[sx, sy, n]| if n > 0.0 { [sx / n, sy / n] } else { center }))
}

/// Writes the corpus under `out_dir/<class>/` and returns its manifest, with
/// `floor(test_fraction * per_class)` test records per class.
pub fn generate_toy_corpus(cfg: &ToyConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let names: Vec<String> = (1..=cfg.classes).map(|c| format!("toy{c}")).collect();
    let n_test = (cfg.test_fraction * cfg.per_class as f64 + 1e-9).floor() as usize;
    let mut records = Vec::new();
    for c in 1..=cfg.classes {
        for i in 0..cfg.per_class {
            let mut rng = seed::rng(seed::derive_seed(cfg.seed, &["toy", &c.to_string(), &i.to_string()]));
            let (img, l) = render_face(c, cfg.size, &mut rng);
            let path = out_dir.join(&names[c as usize - 1]).join(format!("{i:04}.png"));
            imageio::save_png(&img, &path)?;
            let split = if i < n_test { Split::Test } else { Split::Train };
            records.push(Record {
                landmarks: Some(l),
                ..Record::real(path, c, split)
            });
        }
    }
    DatasetManifest::new(names, Some((cfg.size, cfg.size)), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::rmse;

    #[test]
    fn landmarks_inside_frame_and_baseline_recovers_them() {
        let mut truth = Vec::new();
        let mut est = Vec::new();
        for i in 0..50 {
            let mut rng = seed::rng(i);
            let (img, l) = render_face(1 + (i % 2) as u32, 32, &mut rng);
            assert!(l.all_inside((32, 32)));
            truth.push(l);
            est.push(centroid_baseline(&img));
        }
        let e = rmse(&est, &truth).unwrap();
        assert!(e < 0.5, "baseline rmse {e}");
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyConfig {
            per_class: 8,
            ..Default::default()
        };
        let m = generate_toy_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(m.records.len(), 16);
        assert_eq!(m.class_counts(Some(Split::Test)), vec![2, 2]);
        assert_eq!(m.class_counts(Some(Split::Train)), vec![6, 6]);
        let again = generate_toy_corpus(&cfg, &dir.path().join("again")).unwrap();
        for (a, b) in m.records.iter().zip(&again.records) {
            assert_eq!(imageio::file_hash(&a.image_ref).unwrap(), imageio::file_hash(&b.image_ref).unwrap());
        }
    }
}
