//! Square crop boxes derived from facial landmarks.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::imageio;
use crate::landmarks::{is_plausible, LandmarkModel, LandmarkSet};

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl CropBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn within(&self, (w, h): (u32, u32)) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 <= w as i64 && self.y1 <= h as i64 && self.x0 < self.x1 && self.y0 < self.y1
    }

    /// Largest centered square.
    pub fn center_square((w, h): (u32, u32)) -> Self {
        let side = w.min(h) as i64;
        let x0 = (w as i64 - side) / 2;
        let y0 = (h as i64 - side) / 2;
        Self::new(x0, y0, x0 + side, y0 + side)
    }
}

/// Fits `[lo, lo + len)` into `[0, limit)`: shift first, shrink only when `len > limit`.
fn fit_axis(lo: i64, len: i64, limit: i64) -> (i64, i64) {
    if len >= limit {
        return (0, limit);
    }
    let lo = lo.clamp(0, limit - len);
    (lo, lo + len)
}

/// Crop around the landmark bounding box.
///
/// Each side grows by `margin * max(bbox_w, bbox_h)`; in square mode the
/// shorter side is then widened symmetrically. The box is moved back inside
/// the frame by shifting, and only shrunk along an axis the frame cannot hold.
pub fn compute_crop(l: &LandmarkSet, (w, h): (u32, u32), margin: f64, square: bool) -> Result<CropBox> {
    if !(margin >= 0.0) {
        return Err(Error::NegativeMargin(margin));
    }
    if !l.is_finite() || !l.any_inside((w, h)) {
        return Err(Error::LandmarksOutOfFrame);
    }
    let (bx0, by0, bx1, by1) = l.bounds();
    let grow = margin * (bx1 - bx0).max(by1 - by0);
    let mut x0 = (bx0 - grow).floor() as i64;
    let mut y0 = (by0 - grow).floor() as i64;
    let mut bw = ((bx1 + grow).ceil() as i64 - x0).max(1);
    let mut bh = ((by1 + grow).ceil() as i64 - y0).max(1);
    if square {
        let side = bw.max(bh);
        x0 -= (side - bw) / 2;
        y0 -= (side - bh) / 2;
        bw = side;
        bh = side;
    }
    let (x0, x1) = fit_axis(x0, bw, w as i64);
    let (y0, y1) = fit_axis(y0, bh, h as i64);
    Ok(CropBox { x0, y0, x1, y1 })
}

/// Cuts `b` out of `img` and resizes it to `out_size`; no resampling when sizes match.
pub fn apply_crop(img: &RgbImage, b: &CropBox, out_size: (u32, u32)) -> Result<RgbImage> {
    if !b.within(img.dimensions()) {
        return Err(Error::CropOutOfBounds([b.x0, b.y0, b.x1, b.y1], img.width(), img.height()));
    }
    let region = image::imageops::crop_imm(img, b.x0 as u32, b.y0 as u32, b.width() as u32, b.height() as u32).to_image();
    Ok(imageio::resize(&region, out_size.0, out_size.1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSettings {
    pub margin: f64,
    pub square: bool,
    /// Landmark bbox area as a fraction of the image; predictions outside fall back to a center crop.
    pub plausible_area: (f64, f64),
}

impl Default for CropSettings {
    fn default() -> Self {
        Self {
            margin: 0.6,
            square: true,
            plausible_area: (0.01, 0.95),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub image_ref: String,
    pub crop: CropBox,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CropReport {
    pub entries: Vec<CropEntry>,
    pub fallbacks: usize,
}

/// Predicts landmarks for every record and writes one cropped image per record
/// under `out_dir`. Implausible predictions fall back to a center crop; they
/// are counted in the report, never dropped.
pub fn crop_manifest(
    m: &DatasetManifest,
    model: &LandmarkModel,
    settings: &CropSettings,
    out_size: (u32, u32),
    out_dir: &Path,
) -> Result<(DatasetManifest, CropReport)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = m.empty_like();
    out.resolution = Some(out_size);
    let mut report = CropReport::default();
    for (i, r) in m.records.iter().enumerate() {
        let img = imageio::load_rgb(&r.image_ref)?;
        let dims = img.dimensions();
        let pred = model.predict(&img);
        let (lo, hi) = settings.plausible_area;
        let attempt = if is_plausible(&pred, dims, lo, hi) {
            compute_crop(&pred, dims, settings.margin, settings.square).map_err(|e| e.to_string())
        } else {
            Err("implausible landmark prediction".to_string())
        };
        let (crop, reason) = match attempt {
            Ok(b) => (b, None),
            Err(why) => (CropBox::center_square(dims), Some(why)),
        };
        let cropped = apply_crop(&img, &crop, out_size)?;
        let stem = r.image_ref.file_stem().unwrap_or_default().to_string_lossy();
        let dst = out_dir.join(m.class_name(r.class_id)).join(format!("{i:06}_{stem}.png"));
        imageio::save_png(&cropped, &dst)?;

        let (sx, sy) = (
            out_size.0 as f64 / crop.width() as f64,
            out_size.1 as f64 / crop.height() as f64,
        );
        let mut rec = r.clone();
        rec.image_ref = dst;
        rec.source_crop = Some(crop);
        rec.landmarks = Some(pred.map(|[x, y]| [(x - crop.x0 as f64) * sx, (y - crop.y0 as f64) * sy]));
        out.records.push(rec);

        let fallback = reason.is_some();
        if fallback {
            report.fallbacks += 1;
        }
        report.entries.push(CropEntry {
            image_ref: r.ref_str(),
            crop,
            fallback,
            reason,
        });
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corners(a: f64, b: f64) -> LandmarkSet {
        LandmarkSet::new([[a, a], [b, a], [a, b], [b, b], [a, b], [b, a], [a, a]])
    }

    #[test]
    fn bbox_itself_with_zero_margin() {
        assert_eq!(compute_crop(&corners(10.0, 20.0), (128, 128), 0.0, true).unwrap(), CropBox::new(10, 10, 20, 20));
    }

    #[test]
    fn half_margin_expands_by_five() {
        assert_eq!(compute_crop(&corners(10.0, 20.0), (128, 128), 0.5, true).unwrap(), CropBox::new(5, 5, 25, 25));
    }

    #[test]
    fn near_left_edge_shifts_right() {
        // bbox [2, 12], margin 0.5 -> [-3, 17]; shifted right by 3 to [0, 20]
        let b = compute_crop(&corners(2.0, 12.0), (128, 128), 0.5, true).unwrap();
        assert_eq!(b, CropBox::new(0, 0, 20, 20));
    }

    #[test]
    fn rejects_negative_margin_and_offscreen_landmarks() {
        assert!(matches!(compute_crop(&corners(1.0, 2.0), (8, 8), -0.1, true), Err(Error::NegativeMargin(_))));
        assert!(matches!(compute_crop(&corners(-9.0, -5.0), (8, 8), 0.1, true), Err(Error::LandmarksOutOfFrame)));
    }

    #[test]
    fn frame_too_small_shrinks_only_that_axis() {
        let l = LandmarkSet::new([[0.0, 10.0], [60.0, 12.0], [30.0, 11.0], [5.0, 10.0], [6.0, 10.0], [7.0, 10.0], [8.0, 10.0]]);
        let b = compute_crop(&l, (40, 100), 0.0, true).unwrap();
        assert_eq!((b.x0, b.x1), (0, 40));
        assert_eq!(b.height(), 60);
    }

    fn pattern(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 3) as u8, (y * 5) as u8, ((x ^ y) & 0xff) as u8]))
    }

    #[test]
    fn crop_equals_direct_slice() {
        let img = pattern(80, 80);
        let b = CropBox::new(7, 9, 71, 73);
        let out = apply_crop(&img, &b, (64, 64)).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(x + 7, y + 9));
            }
        }
    }

    #[test]
    fn full_frame_crop_is_resize() {
        let img = pattern(40, 40);
        let out = apply_crop(&img, &CropBox::new(0, 0, 40, 40), (20, 20)).unwrap();
        assert_eq!(out, imageio::resize(&img, 20, 20));
    }

    #[test]
    fn out_of_bounds_crop_errors() {
        let img = pattern(10, 10);
        assert!(matches!(apply_crop(&img, &CropBox::new(-1, 0, 5, 5), (4, 4)), Err(Error::CropOutOfBounds(..))));
    }

    proptest! {
        #[test]
        fn crop_contains_visible_bbox_and_is_square(
            pts in prop::array::uniform7(prop::array::uniform2(0.0f64..200.0)),
            margin in 0.0f64..1.0,
        ) {
            let l = LandmarkSet::new(pts);
            let dims = (200, 200);
            let b = compute_crop(&l, dims, margin, true).unwrap();
            let (x0, y0, x1, y1) = l.bounds();
            prop_assert!(b.within(dims));
            prop_assert!(b.x0 as f64 <= x0 && b.y0 as f64 <= y0);
            prop_assert!(b.x1 as f64 >= x1.min(200.0) && b.y1 as f64 >= y1.min(200.0));
            prop_assert_eq!(b.width(), b.height());
        }
    }
}
