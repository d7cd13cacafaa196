//! Seven-point animal facial landmarks: normalization, error metrics,
//! outlier filtering, augmentation, and the keypoint regressor.
//!
//! Point order is fixed: `left_ear_1, left_ear_2, right_ear_1, right_ear_2,
//! left_eye, right_eye, nose`. Coordinates are continuous pixel positions
//! where pixel `i` spans `[i, i + 1)`.

mod augment;
mod model;

pub use augment::{apply_geometric, augment_training_pair, AugmentPolicy, GeometricOp};
pub use model::{
    predict_landmarks, train_landmark_model, EpochStats, LandmarkBackbone, LandmarkModel, LandmarkModelConfig,
    TrainingReport,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Record;
use crate::error::{Error, Result};

pub const POINT_COUNT: usize = 7;

pub const POINT_NAMES: [&str; POINT_COUNT] = [
    "left_ear_1",
    "left_ear_2",
    "right_ear_1",
    "right_ear_2",
    "left_eye",
    "right_eye",
    "nose",
];

/// Slot each point moves to under a horizontal mirror.
pub const MIRROR_SWAP: [usize; POINT_COUNT] = [2, 3, 0, 1, 5, 4, 6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet {
    pub points: [[f64; 2]; POINT_COUNT],
}

impl LandmarkSet {
    pub fn new(points: [[f64; 2]; POINT_COUNT]) -> Self {
        Self { points }
    }

    /// Builds a set from 14 interleaved `x y` values.
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 2 * POINT_COUNT {
            return Err(Error::LengthMismatch {
                left: v.len(),
                right: 2 * POINT_COUNT,
            });
        }
        let mut points = [[0.0; 2]; POINT_COUNT];
        for (i, p) in points.iter_mut().enumerate() {
            *p = [v[2 * i], v[2 * i + 1]];
        }
        Ok(Self { points })
    }

    pub fn to_flat(&self) -> [f64; 2 * POINT_COUNT] {
        let mut out = [0.0; 2 * POINT_COUNT];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    pub fn inside(p: [f64; 2], (w, h): (u32, u32)) -> bool {
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= w as f64 && p[1] <= h as f64
    }

    pub fn any_inside(&self, dims: (u32, u32)) -> bool {
        self.points.iter().any(|p| Self::inside(*p, dims))
    }

    pub fn all_inside(&self, dims: (u32, u32)) -> bool {
        self.points.iter().all(|p| Self::inside(*p, dims))
    }

    /// `(min_x, min_y, max_x, max_y)` over all points.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
        )
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            points: self.points.map(f),
        }
    }

    /// Mirror across the vertical axis of a `width`-wide frame, swapping
    /// left/right identities.
    pub fn mirrored(&self, width: f64) -> Self {
        let mut points = [[0.0; 2]; POINT_COUNT];
        for (i, p) in self.points.iter().enumerate() {
            points[MIRROR_SWAP[i]] = [width - p[0], p[1]];
        }
        Self { points }
    }
}

/// Reference region for normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub center: (f64, f64),
    pub size: (f64, f64),
}

impl Anchor {
    /// The whole image frame.
    pub fn frame(width: f64, height: f64) -> Self {
        Self {
            center: (width / 2.0, height / 2.0),
            size: (width, height),
        }
    }

    fn check(&self) -> Result<()> {
        let (w, h) = self.size;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidAnchor(w, h));
        }
        Ok(())
    }
}

/// Maps each point to `((x - cx) / w, (y - cy) / h)`.
pub fn normalize_landmarks(l: &LandmarkSet, anchor: &Anchor) -> Result<LandmarkSet> {
    anchor.check()?;
    let (cx, cy) = anchor.center;
    let (w, h) = anchor.size;
    Ok(l.map(|[x, y]| [(x - cx) / w, (y - cy) / h]))
}

pub fn denormalize_landmarks(l: &LandmarkSet, anchor: &Anchor) -> Result<LandmarkSet> {
    anchor.check()?;
    let (cx, cy) = anchor.center;
    let (w, h) = anchor.size;
    Ok(l.map(|[x, y]| [x * w + cx, y * h + cy]))
}

/// Mean Euclidean distance between corresponding points of two sets.
pub fn mean_point_error(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .sum::<f64>()
        / POINT_COUNT as f64
}

/// Mean point-to-point distance over every point of every image.
pub fn rmse(predicted: &[LandmarkSet], truth: &[LandmarkSet]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("rmse over zero landmark sets".into()));
    }
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.points.iter().zip(&t.points))
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .sum();
    Ok(total / (predicted.len() * POINT_COUNT) as f64)
}

/// A model prediction attached to the record it was made for.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedRecord {
    pub record: Record,
    pub landmarks: LandmarkSet,
    pub image_dims: (u32, u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum OutlierMethod {
    /// Requires ground truth in `record.landmarks`; removes predictions whose
    /// mean point error strictly exceeds `median + k * IQR`.
    DistanceThreshold { k: f64 },
    /// No ground truth: removes predictions whose landmark bounding-box area,
    /// as a fraction of the image area, falls outside `[lo, hi]`, or whose
    /// points all lie outside the frame.
    GeometricPlausibility { lo: f64, hi: f64 },
}

impl Default for OutlierMethod {
    fn default() -> Self {
        OutlierMethod::DistanceThreshold { k: 3.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutlierSplit {
    pub kept: Vec<PredictedRecord>,
    pub removed: Vec<PredictedRecord>,
    /// Threshold applied in distance mode.
    pub threshold: Option<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Whether a prediction looks like a single plausible face in its frame.
pub fn is_plausible(l: &LandmarkSet, dims: (u32, u32), lo: f64, hi: f64) -> bool {
    if !l.is_finite() || !l.any_inside(dims) {
        return false;
    }
    let (x0, y0, x1, y1) = l.bounds();
    let ratio = (x1 - x0) * (y1 - y0) / (dims.0 as f64 * dims.1 as f64);
    (lo..=hi).contains(&ratio)
}

pub fn filter_outliers(preds: Vec<PredictedRecord>, method: OutlierMethod) -> Result<OutlierSplit> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("outlier filtering over zero predictions".into()));
    }
    match method {
        OutlierMethod::DistanceThreshold { k } => {
            let missing: Vec<String> = preds
                .iter()
                .filter(|p| p.record.landmarks.is_none())
                .map(|p| p.record.ref_str())
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingLandmarks(missing));
            }
            let errors: Vec<f64> = preds
                .iter()
                .map(|p| mean_point_error(&p.landmarks, p.record.landmarks.as_ref().expect("checked above")))
                .collect();
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            let median = quantile(&sorted, 0.5);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            let threshold = if k.is_infinite() { f64::INFINITY } else { median + k * iqr };
            let mut split = OutlierSplit {
                threshold: Some(threshold),
                ..Default::default()
            };
            for (p, e) in preds.into_iter().zip(errors) {
                if e > threshold {
                    split.removed.push(p);
                } else {
                    split.kept.push(p);
                }
            }
            Ok(split)
        }
        OutlierMethod::GeometricPlausibility { lo, hi } => {
            let (kept, removed) = preds
                .into_iter()
                .partition(|p| is_plausible(&p.landmarks, p.image_dims, lo, hi));
            Ok(OutlierSplit {
                kept,
                removed,
                threshold: None,
            })
        }
    }
}

/// Reads an annotation file: one line per image, `<image_ref>` followed by
/// 14 whitespace-separated reals in point order. `#` starts a comment line.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<String, LandmarkSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let name = fields.next().expect("non-empty line").to_string();
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse("landmark annotation", format!("line {}: {e}", n + 1)))?;
        let set = LandmarkSet::from_flat(&values)
            .map_err(|_| Error::parse("landmark annotation", format!("line {}: expected 14 values", n + 1)))?;
        if out.insert(name.clone(), set).is_some() {
            return Err(Error::DuplicateImage(name));
        }
    }
    Ok(out)
}

pub fn write_annotations<'a>(path: &Path, entries: impl IntoIterator<Item = (&'a str, &'a LandmarkSet)>) -> Result<()> {
    use std::fmt::Write as _;
    let mut text = format!("# image {}\n", POINT_NAMES.map(|n| format!("{n}.x {n}.y")).join(" "));
    for (name, l) in entries {
        let vals: Vec<String> = l.to_flat().iter().map(|v| v.to_string()).collect();
        writeln!(text, "{name} {}", vals.join(" ")).expect("writing to a String");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use proptest::prelude::*;

    fn set_of(p: [f64; 2]) -> LandmarkSet {
        LandmarkSet::new([p; POINT_COUNT])
    }

    #[test]
    fn normalize_center_and_corner() {
        let a = Anchor {
            center: (50.0, 40.0),
            size: (20.0, 10.0),
        };
        let n = normalize_landmarks(&set_of([50.0, 40.0]), &a).unwrap();
        assert_eq!(n.points[0], [0.0, 0.0]);
        let n = normalize_landmarks(&set_of([60.0, 45.0]), &a).unwrap();
        assert_eq!(n.points[3], [0.5, 0.5]);
    }

    #[test]
    fn non_positive_anchor_is_rejected() {
        let a = Anchor {
            center: (0.0, 0.0),
            size: (0.0, 1.0),
        };
        assert!(matches!(normalize_landmarks(&set_of([1.0, 1.0]), &a), Err(Error::InvalidAnchor(..))));
        let a = Anchor {
            center: (0.0, 0.0),
            size: (3.0, -1.0),
        };
        assert!(denormalize_landmarks(&set_of([1.0, 1.0]), &a).is_err());
    }

    fn arb_set() -> impl Strategy<Value = LandmarkSet> {
        prop::array::uniform7(prop::array::uniform2(-500.0f64..500.0)).prop_map(LandmarkSet::new)
    }

    /// Per-point loop, deliberately written without iterator adapters.
    fn rmse_oracle(p: &[LandmarkSet], t: &[LandmarkSet]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..p.len() {
            for j in 0..POINT_COUNT {
                let dx = p[i].points[j][0] - t[i].points[j][0];
                let dy = p[i].points[j][1] - t[i].points[j][1];
                sum += (dx * dx + dy * dy).sqrt();
                n += 1;
            }
        }
        sum / n as f64
    }

    proptest! {
        #[test]
        fn normalize_roundtrip(l in arb_set(), cx in -100.0f64..100.0, cy in -100.0f64..100.0,
                               w in 0.5f64..500.0, h in 0.5f64..500.0) {
            let a = Anchor { center: (cx, cy), size: (w, h) };
            let back = denormalize_landmarks(&normalize_landmarks(&l, &a).unwrap(), &a).unwrap();
            for (p, q) in back.points.iter().zip(&l.points) {
                prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn rmse_matches_loop_oracle(pairs in prop::collection::vec((arb_set(), arb_set()), 1..20)) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let got = rmse(&p, &t).unwrap();
            prop_assert!((got - rmse_oracle(&p, &t)).abs() <= 1e-12 * got.max(1.0));
            prop_assert!(got >= 0.0);
        }

        #[test]
        fn rmse_translation_invariant(pairs in prop::collection::vec((arb_set(), arb_set()), 1..8),
                                      dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let shift = |s: &LandmarkSet| s.map(|[x, y]| [x + dx, y + dy]);
            let ps: Vec<_> = p.iter().map(shift).collect();
            let ts: Vec<_> = t.iter().map(shift).collect();
            let a = rmse(&p, &t).unwrap();
            prop_assert!((a - rmse(&ps, &ts).unwrap()).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn rmse_examples() {
        let z = set_of([0.0, 0.0]);
        assert_eq!(rmse(&[z], &[z]).unwrap(), 0.0);
        assert_eq!(rmse(&[set_of([3.0, 4.0])], &[z]).unwrap(), 5.0);

        // every point of one image off by 1, of the other off by 2
        assert_eq!(rmse(&[set_of([1.0, 0.0]), set_of([0.0, 2.0])], &[z, z]).unwrap(), 1.5);

        assert!(matches!(rmse(&[z, z], &[z]), Err(Error::LengthMismatch { .. })));
    }

    fn pred_with_error(i: usize, err: f64) -> PredictedRecord {
        let mut record = Record::real(format!("/x/{i}.png"), 1, Split::Train);
        record.landmarks = Some(set_of([10.0, 10.0]));
        PredictedRecord {
            record,
            landmarks: set_of([10.0 + err, 10.0]),
            image_dims: (64, 64),
        }
    }

    #[test]
    fn outlier_examples() {
        let equal: Vec<_> = (0..5).map(|i| pred_with_error(i, 2.0)).collect();
        let s = filter_outliers(equal, OutlierMethod::default()).unwrap();
        assert_eq!((s.kept.len(), s.removed.len()), (5, 0));

        let mut mixed: Vec<_> = (0..9).map(|i| pred_with_error(i, 2.0)).collect();
        mixed.push(pred_with_error(9, 200.0));
        let s = filter_outliers(mixed.clone(), OutlierMethod::DistanceThreshold { k: 3.0 }).unwrap();
        assert_eq!(s.removed.len(), 1);
        assert_eq!(s.removed[0].record.image_ref, std::path::PathBuf::from("/x/9.png"));

        let s = filter_outliers(mixed, OutlierMethod::DistanceThreshold { k: f64::INFINITY }).unwrap();
        assert!(s.removed.is_empty());

        assert!(matches!(filter_outliers(vec![], OutlierMethod::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn outlier_iqr_threshold_arithmetic() {
        // errors 1..=8 and 40: Q1 = 3, median = 5, Q3 = 7, IQR = 4 -> threshold 5 + 3*4 = 17
        let mut preds: Vec<_> = (1..=8).map(|i| pred_with_error(i, i as f64)).collect();
        preds.push(pred_with_error(9, 40.0));
        let s = filter_outliers(preds, OutlierMethod::default()).unwrap();
        assert!((s.threshold.unwrap() - 17.0).abs() < 1e-12);
        assert_eq!(s.removed.len(), 1);
    }

    #[test]
    fn geometric_mode_needs_no_truth() {
        let mut tiny = pred_with_error(0, 0.0);
        tiny.record.landmarks = None;
        let mut good = tiny.clone();
        good.record.image_ref = "/x/good.png".into();
        good.landmarks = LandmarkSet::new([[10.0, 10.0], [10.0, 40.0], [40.0, 10.0], [40.0, 40.0], [20.0, 20.0], [30.0, 20.0], [25.0, 30.0]]);
        let s = filter_outliers(vec![tiny, good], OutlierMethod::GeometricPlausibility { lo: 0.05, hi: 0.95 }).unwrap();
        assert_eq!(s.kept.len(), 1);
        assert_eq!(s.kept[0].record.image_ref, std::path::PathBuf::from("/x/good.png"));
    }

    #[test]
    fn distance_mode_requires_truth() {
        let mut p = pred_with_error(0, 1.0);
        p.record.landmarks = None;
        assert!(matches!(filter_outliers(vec![p], OutlierMethod::default()), Err(Error::MissingLandmarks(_))));
    }

    #[test]
    fn mirror_swaps_identities() {
        let mut l = set_of([0.0, 0.0]);
        for (i, p) in l.points.iter_mut().enumerate() {
            *p = [i as f64, 50.0];
        }
        let m = l.mirrored(100.0);
        assert_eq!(m.points[5], [96.0, 50.0]); // left_eye moved into right_eye slot
        assert_eq!(m.points[4], [95.0, 50.0]);
        assert_eq!(m.points[6], [94.0, 50.0]); // nose stays nose
        assert_eq!(m.mirrored(100.0), l);
    }

    #[test]
    fn annotation_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.txt");
        let l = LandmarkSet::from_flat(&(0..14).map(|v| v as f64 * 1.5).collect::<Vec<_>>()).unwrap();
        write_annotations(&p, [("img_1.png", &l)]).unwrap();
        let back = read_annotations(&p).unwrap();
        assert_eq!(back["img_1.png"], l);
        std::fs::write(&p, "a 1 2 3\n").unwrap();
        assert!(matches!(read_annotations(&p), Err(Error::Parse { .. })));
    }
}
