use std::collections::HashSet;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Provenance, Split};
use crate::error::{Error, Result};
use crate::imageio;
use crate::landmarks::LandmarkSet;
use crate::seed;

/// `floor(fraction * n)`, tolerant of representation error just below an integer.
pub(crate) fn floor_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Per class, keeps `floor(fraction * n_c)` train records chosen by `seed`.
/// Non-train records pass through untouched and record order is preserved.
pub fn stratified_subset(m: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("subset fraction {fraction} outside (0, 1]")));
    }
    let mut keep = vec![true; m.records.len()];
    for class_id in 1..=m.class_count() {
        let idx: Vec<usize> = m
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Split::Train && r.class_id == class_id)
            .map(|(i, _)| i)
            .collect();
        let k = floor_count(fraction, idx.len());
        if k == 0 {
            return Err(Error::EmptyClass(m.class_name(class_id).to_string()));
        }
        let mut order = idx.clone();
        order.shuffle(&mut seed::rng(seed::derive_indexed(seed, "subset-class", class_id as u64)));
        for &i in &order[k..] {
            keep[i] = false;
        }
    }
    let records = m
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(DatasetManifest {
        class_names: m.class_names.clone(),
        resolution: m.resolution,
        records,
    })
}

/// Moves `floor(test_fraction * n_c)` train records of every class into the test split.
pub fn assign_test_split(m: &DatasetManifest, test_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut out = m.clone();
    for class_id in 1..=m.class_count() {
        let mut idx: Vec<usize> = m
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Split::Train && r.class_id == class_id)
            .map(|(i, _)| i)
            .collect();
        let k = floor_count(test_fraction, idx.len());
        idx.shuffle(&mut seed::rng(seed::derive_indexed(seed, "test-split-class", class_id as u64)));
        for &i in &idx[..k] {
            out.records[i].split = Split::Test;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizeMode {
    /// Scale each axis independently to the target size.
    #[default]
    Stretch,
    /// Preserve aspect ratio and pad the remainder with black.
    Letterbox,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizeOptions {
    pub mode: ResizeMode,
    /// Re-encode images that already have the target size instead of copying bytes.
    pub reencode: bool,
}

/// Pixel mapping `(x, y) -> (sx*x + ox, sy*y + oy)` from source to output.
struct Placement {
    scale: (f64, f64),
    offset: (f64, f64),
}

fn resize_one(img: &RgbImage, (w, h): (u32, u32), mode: ResizeMode) -> (RgbImage, Placement) {
    let (sw, sh) = (img.width() as f64, img.height() as f64);
    match mode {
        ResizeMode::Stretch => (
            imageio::resize(img, w, h),
            Placement {
                scale: (w as f64 / sw, h as f64 / sh),
                offset: (0.0, 0.0),
            },
        ),
        ResizeMode::Letterbox => {
            let s = (w as f64 / sw).min(h as f64 / sh);
            let nw = ((sw * s).round() as u32).clamp(1, w);
            let nh = ((sh * s).round() as u32).clamp(1, h);
            let inner = imageio::resize(img, nw, nh);
            let (ox, oy) = ((w - nw) / 2, (h - nh) / 2);
            let mut canvas = RgbImage::new(w, h);
            image::imageops::replace(&mut canvas, &inner, ox as i64, oy as i64);
            (
                canvas,
                Placement {
                    scale: (nw as f64 / sw, nh as f64 / sh),
                    offset: (ox as f64, oy as f64),
                },
            )
        }
    }
}

/// Writes resized copies under `out_dir/<class name>/` and returns a manifest
/// pointing at them. Landmarks are carried into the new pixel frame.
pub fn resize_images(
    m: &DatasetManifest,
    size: (u32, u32),
    out_dir: &Path,
    opts: ResizeOptions,
) -> Result<DatasetManifest> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::InvalidConfig(format!("resize target {size:?} must be positive")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = m.empty_like();
    out.resolution = Some(size);
    for (i, r) in m.records.iter().enumerate() {
        let src = &r.image_ref;
        let stem = src.file_stem().unwrap_or_default().to_string_lossy();
        let class_dir = out_dir.join(m.class_name(r.class_id));
        let img = imageio::load_rgb(src)?;
        let mut rec = r.clone();
        if img.dimensions() == size && !opts.reencode {
            let ext = src.extension().unwrap_or_default().to_string_lossy();
            let dst = class_dir.join(format!("{i:06}_{stem}.{ext}"));
            std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
            std::fs::copy(src, &dst).map_err(|e| Error::io(&dst, e))?;
            rec.image_ref = dst;
        } else {
            let (resized, place) = resize_one(&img, size, opts.mode);
            let dst = class_dir.join(format!("{i:06}_{stem}.png"));
            imageio::save_png(&resized, &dst)?;
            rec.landmarks = r.landmarks.as_ref().map(|l| {
                LandmarkSet::new(l.points.map(|[x, y]| {
                    [
                        x * place.scale.0 + place.offset.0,
                        y * place.scale.1 + place.offset.1,
                    ]
                }))
            });
            rec.image_ref = dst;
        }
        out.records.push(rec);
    }
    Ok(out)
}

/// Union of real and synthetic records. At most `per_class_cap` synthetic
/// records per class are taken, in manifest order. Test and validation
/// records come only from `real`.
pub fn merge(real: &DatasetManifest, synthetic: &DatasetManifest, per_class_cap: Option<usize>) -> Result<DatasetManifest> {
    if real.class_names != synthetic.class_names {
        return Err(Error::ClassMapMismatch(format!(
            "real classes {:?} vs synthetic classes {:?}",
            real.class_names, synthetic.class_names
        )));
    }
    let resolution = match (real.resolution, synthetic.resolution) {
        (a, b) if synthetic.records.is_empty() || a == b => a,
        (a, b) => {
            return Err(Error::DimensionMismatch(format!(
                "real resolution {a:?} vs synthetic resolution {b:?}"
            )))
        }
    };
    let mut out = real.clone();
    out.resolution = resolution;
    let mut taken = vec![0usize; real.class_names.len()];
    let mut seen: HashSet<_> = real.records.iter().map(|r| r.image_ref.clone()).collect();
    for r in &synthetic.records {
        if r.split != Split::Train {
            return Err(Error::Contamination {
                image_ref: r.ref_str(),
                split: r.split.to_string(),
            });
        }
        let slot = &mut taken[r.class_id as usize - 1];
        if per_class_cap.is_some_and(|cap| *slot >= cap) {
            continue;
        }
        if !seen.insert(r.image_ref.clone()) {
            return Err(Error::DuplicateImage(r.ref_str()));
        }
        *slot += 1;
        let mut rec = r.clone();
        rec.provenance = Provenance::Synthetic;
        out.records.push(rec);
    }
    out.validate()?;
    Ok(out)
}
