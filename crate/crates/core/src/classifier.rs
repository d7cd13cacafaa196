//! Classifier training, evaluation, and the variant x fraction experiment matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{DatasetManifest, Provenance, Split};
use crate::error::{Error, Result};
use crate::imageio;
use crate::metrics;
use crate::nn::{self, Adam, Conv2d, GlobalPool, Layer, LeakyRelu, Linear, Optimizer, PoolKind, Sequential, Sgd, Tensor};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    SmallConv,
    /// Large pretrained hybrid network; weights are not shipped, so this
    /// backbone is only reachable through an external [`ImageClassifier`].
    HybridExternal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    AdaptiveMoment,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub backbone: Backbone,
    pub input_size: u32,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub batch_size: usize,
    /// Channels of the first convolution; doubled at each downsampling.
    pub width: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::SmallConv,
            input_size: 128,
            epochs: 16,
            optimizer: OptimizerKind::AdaptiveMoment,
            lr: 1e-3,
            batch_size: 32,
            width: 16,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 8 || self.batch_size == 0 || self.lr <= 0.0 || self.width == 0 {
            return Err(Error::InvalidConfig(
                "classifier input_size >= 8 and positive batch size, lr, width required".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that maps an image to a 1-based class id.
pub trait ImageClassifier {
    fn predict(&self, img: &RgbImage) -> u32;
    fn descriptor(&self) -> String;
}

pub struct ClassifierModel {
    cfg: ClassifierConfig,
    class_count: u32,
    net: Mutex<Sequential>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierCheckpoint {
    config: ClassifierConfig,
    class_count: u32,
    #[serde(with = "nn::hexbuf::nested")]
    params: Vec<Vec<f32>>,
}

fn build_network(cfg: &ClassifierConfig, class_count: u32) -> Sequential {
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, &["classifier-init"]));
    let mut net = Sequential::new();
    let (mut c, mut side) = (3usize, cfg.input_size as usize);
    let mut out = cfg.width;
    while side > 4 {
        net = net.push(Conv2d::new(c, out, 3, 2, 1, &mut rng)).push(LeakyRelu::relu());
        side = (side - 1) / 2 + 1;
        c = out;
        out = (out * 2).min(cfg.width * 8);
    }
    net.push(Conv2d::new(c, c, 3, 1, 1, &mut rng))
        .push(LeakyRelu::relu())
        .push(GlobalPool::new(PoolKind::Avg))
        .push(Linear::new(c, class_count as usize, &mut rng))
}

impl ClassifierModel {
    pub fn new(cfg: ClassifierConfig, class_count: u32) -> Result<Self> {
        cfg.validate()?;
        if cfg.backbone == Backbone::HybridExternal {
            return Err(Error::Unsupported(
                "the hybrid-external backbone needs an external ImageClassifier implementation".into(),
            ));
        }
        let net = build_network(&cfg, class_count);
        Ok(Self {
            cfg,
            class_count,
            net: Mutex::new(net),
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn weight_hash(&self) -> String {
        nn::weight_hash(&*self.net.lock().expect("model lock"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = ClassifierCheckpoint {
            config: self.cfg.clone(),
            class_count: self.class_count,
            params: nn::export_params(&*self.net.lock().expect("model lock")),
        };
        checkpoint::write(path, "classifier", &ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: ClassifierCheckpoint = checkpoint::read(path, "classifier")?;
        let m = Self::new(ck.config, ck.class_count)?;
        nn::import_params(&mut *m.net.lock().expect("model lock"), &ck.params)?;
        Ok(m)
    }

    fn input(&self, img: &RgbImage) -> Tensor {
        let s = self.cfg.input_size;
        imageio::to_tensor(&imageio::resize(img, s, s))
    }

    fn logits(&self, x: &Tensor) -> Tensor {
        self.net.lock().expect("model lock").forward(x)
    }
}

fn argmax(row: &[f32]) -> u32 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32 + 1
}

impl ImageClassifier for ClassifierModel {
    fn predict(&self, img: &RgbImage) -> u32 {
        let x = Tensor::stack(&[self.input(img)]);
        argmax(self.logits(&x).sample(0))
    }

    fn descriptor(&self) -> String {
        format!("small-conv(width={},input={})", self.cfg.width, self.cfg.input_size)
    }
}

/// Rejects any synthetic record outside the training split.
pub fn check_contamination(m: &DatasetManifest) -> Result<()> {
    match m
        .records
        .iter()
        .find(|r| r.provenance == Provenance::Synthetic && r.split != Split::Train)
    {
        Some(r) => Err(Error::Contamination {
            image_ref: r.ref_str(),
            split: r.split.to_string(),
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Mean softmax cross-entropy; when `grad` is given it receives `dL/dlogits`.
fn cross_entropy(logits: &Tensor, labels: &[u32], mut grad: Option<&mut Tensor>) -> f64 {
    let n = labels.len();
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.sample(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        let k = y as usize - 1;
        total += (sum.ln() - (row[k] - max)) as f64;
        if let Some(g) = grad.as_deref_mut() {
            for (j, gv) in g.sample_mut(i).iter_mut().enumerate() {
                *gv = (exps[j] / sum - if j == k { 1.0 } else { 0.0 }) / n as f32;
            }
        }
    }
    total / n as f64
}

fn load_split(m: &DatasetManifest, split: Split, size: u32) -> Result<(Vec<Tensor>, Vec<u32>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in m.records_in(split) {
        let img = imageio::load_rgb(&r.image_ref)?;
        xs.push(imageio::to_tensor(&imageio::resize(&img, size, size)));
        ys.push(r.class_id);
    }
    Ok((xs, ys))
}

/// Trains on the `train` split of `m`; a `val` split, if present, feeds the
/// validation loss curve.
pub fn train_classifier(cfg: &ClassifierConfig, m: &DatasetManifest) -> Result<(ClassifierModel, Vec<EpochLoss>)> {
    check_contamination(m)?;
    let model = ClassifierModel::new(cfg.clone(), m.class_count())?;
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    let counts = m.class_counts(Some(Split::Train));
    if let Some(c) = counts.iter().position(|n| *n == 0) {
        return Err(Error::EmptyClass(m.class_name(c as u32 + 1).to_string()));
    }
    let (xs, ys) = load_split(m, Split::Train, cfg.input_size)?;
    let (vx, vy) = load_split(m, Split::Val, cfg.input_size)?;
    let mut opt = match cfg.optimizer {
        OptimizerKind::AdaptiveMoment => Optimizer::Adam(Adam::new(cfg.lr, 0.9, 0.999)),
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(cfg.lr, 0.9)),
    };
    let mut curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_indexed(cfg.seed, "classifier-epoch", epoch as u64)));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = Tensor::stack(&batch.iter().map(|&i| xs[i].clone()).collect::<Vec<_>>());
            let y: Vec<u32> = batch.iter().map(|&i| ys[i]).collect();
            let mut net = model.net.lock().expect("model lock");
            let logits = net.forward(&x);
            let mut grad = Tensor::zeros(logits.shape());
            loss_sum += cross_entropy(&logits, &y, Some(&mut grad)) * batch.len() as f64;
            net.backward(&grad);
            opt.step(&mut net.params_mut());
        }
        let train_loss = loss_sum / xs.len() as f64;
        let val_loss = if vx.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for (cx, cy) in vx.chunks(64).zip(vy.chunks(64)) {
                total += cross_entropy(&model.logits(&Tensor::stack(cx)), cy, None) * cx.len() as f64;
            }
            Some(total / vx.len() as f64)
        };
        log::info!("classifier epoch {epoch}: train {train_loss:.4} val {val_loss:?}");
        curve.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok((model, curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: u32,
    pub name: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub total: usize,
    pub model: String,
    pub per_class: Vec<ClassAccuracy>,
}

/// Accuracy over every record of `test`, which must be entirely real.
pub fn evaluate(model: &dyn ImageClassifier, test: &DatasetManifest) -> Result<AccuracyReport> {
    if let Some(r) = test.records.iter().find(|r| r.provenance == Provenance::Synthetic) {
        return Err(Error::Contamination {
            image_ref: r.ref_str(),
            split: r.split.to_string(),
        });
    }
    if test.records.is_empty() {
        return Err(Error::EmptyInput("evaluation set has no records".into()));
    }
    let mut preds = Vec::with_capacity(test.records.len());
    let mut labels = Vec::with_capacity(test.records.len());
    for r in &test.records {
        preds.push(model.predict(&imageio::load_rgb(&r.image_ref)?));
        labels.push(r.class_id);
    }
    let accuracy = metrics::accuracy(&preds, &labels)?;
    let per_class = (1..=test.class_count())
        .map(|c| {
            let total = labels.iter().filter(|l| **l == c).count();
            let correct = preds.iter().zip(&labels).filter(|(p, l)| **l == c && *p == *l).count();
            ClassAccuracy {
                class_id: c,
                name: test.class_name(c).to_string(),
                total,
                correct,
                accuracy: (total > 0).then(|| correct as f64 / total as f64),
            }
        })
        .collect();
    Ok(AccuracyReport {
        accuracy,
        total: labels.len(),
        model: model.descriptor(),
        per_class,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Real images only.
    Original,
    /// Real images plus samples from a GAN trained on uncropped images.
    Augmented,
    /// Real images plus samples from a GAN trained on landmark crops.
    CroppedAugmented,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Original, Variant::Augmented, Variant::CroppedAugmented];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Augmented => "augmented",
            Variant::CroppedAugmented => "cropped-augmented",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::parse("variant", format!("unknown variant '{s}'")))
    }
}

/// Fractions print with at least one decimal so `1` and `1.0` name the same cell.
pub fn fraction_label(f: f64) -> String {
    if f.fract() == 0.0 {
        format!("{f:.1}")
    } else {
        format!("{f}")
    }
}

/// One cell of the experiment matrix, written `VARIANT:FRACTION`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub variant: Variant,
    pub fraction: f64,
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.variant, fraction_label(self.fraction))
    }
}

impl FromStr for CellId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (v, f) = s
            .split_once(':')
            .ok_or_else(|| Error::parse("cell", format!("expected VARIANT:FRACTION, got '{s}'")))?;
        let fraction: f64 = f.parse().map_err(|_| Error::parse("cell", format!("bad fraction '{f}'")))?;
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::parse("cell", format!("fraction {fraction} outside (0, 1]")));
        }
        Ok(Self {
            variant: v.parse()?,
            fraction,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: Variant,
    pub fraction: f64,
    pub fid: Option<f64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub metadata: BTreeMap<String, String>,
}

impl ResultsTable {
    /// Tab-separated, `#`-prefixed metadata first; absent FIDs print as `--`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str("variant\tfraction\tfid\taccuracy\n");
        for r in &self.rows {
            let fid = r.fid.map_or_else(|| "--".to_string(), |v| format!("{v:.4}"));
            s.push_str(&format!("{}\t{}\t{fid}\t{:.6}\n", r.variant, fraction_label(r.fraction), r.accuracy));
        }
        s
    }
}

/// Inputs for one matrix cell.
pub struct CellData {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    /// FID of the generator that produced the cell's synthetic images.
    pub fid: Option<f64>,
}

/// Trains and evaluates one classifier per cell, seeding each from
/// `(cfg.seed, cell)`. A `None` entry fails with the cell's name.
pub fn run_matrix(cells: &[(CellId, Option<CellData>)], cfg: &ClassifierConfig) -> Result<ResultsTable> {
    let mut table = ResultsTable::default();
    for (id, data) in cells {
        let data = data.as_ref().ok_or_else(|| Error::MissingCell(id.to_string()))?;
        let cell_cfg = ClassifierConfig {
            seed: seed::derive_seed(cfg.seed, &["train-classifier", &id.to_string()]),
            ..cfg.clone()
        };
        let (model, _) = train_classifier(&cell_cfg, &data.train)?;
        let report = evaluate(&model, &data.test)?;
        table.rows.push(ResultRow {
            variant: id.variant,
            fraction: id.fraction,
            fid: if id.variant == Variant::Original { None } else { data.fid },
            accuracy: report.accuracy,
        });
    }
    table.metadata.insert("classifier".into(), format!("{:?}", cfg.backbone).to_lowercase());
    table.metadata.insert("classifier_seed".into(), cfg.seed.to_string());
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;

    struct Constant(u32);

    impl ImageClassifier for Constant {
        fn predict(&self, _: &RgbImage) -> u32 {
            self.0
        }
        fn descriptor(&self) -> String {
            "constant".into()
        }
    }

    /// Solid red for class 1, solid blue for class 2, with mild noise.
    fn solid_colors(dir: &Path, per_class: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for c in 1..=2u32 {
            for i in 0..per_class {
                let mut rng = seed::rng(seed::derive_seed(7, &[&c.to_string(), &i.to_string()]));
                let img = RgbImage::from_fn(16, 16, |_, _| {
                    let n = rand::Rng::gen_range(&mut rng, 0..40u8);
                    if c == 1 {
                        image::Rgb([200 + n / 2, n, n])
                    } else {
                        image::Rgb([n, n, 200 + n / 2])
                    }
                });
                let p = dir.join(format!("{c}_{i}.png"));
                imageio::save_png(&img, &p).unwrap();
                let split = if i % 4 == 0 { Split::Test } else { Split::Train };
                records.push(Record::real(p, c, split));
            }
        }
        DatasetManifest::new(vec!["red".into(), "blue".into()], Some((16, 16)), records).unwrap()
    }

    fn cfg() -> ClassifierConfig {
        ClassifierConfig {
            input_size: 16,
            width: 8,
            batch_size: 8,
            lr: 3e-3,
            ..Default::default()
        }
    }

    #[test]
    fn separable_colors_train_to_high_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let m = solid_colors(dir.path(), 24);
        let (model, curve) = train_classifier(&cfg(), &m).unwrap();
        assert_eq!(curve.len(), 16);
        let report = evaluate(&model, &m.split_only(Split::Test)).unwrap();
        assert!(report.accuracy > 0.95, "{report:?}");
        let weighted: f64 = report
            .per_class
            .iter()
            .map(|c| c.accuracy.unwrap() * c.total as f64)
            .sum::<f64>()
            / report.total as f64;
        assert!((weighted - report.accuracy).abs() < 1e-9);
        let (again, _) = train_classifier(&cfg(), &m).unwrap();
        assert_eq!(model.weight_hash(), again.weight_hash());
    }

    #[test]
    fn zero_epochs_and_constant_model() {
        let dir = tempfile::tempdir().unwrap();
        let m = solid_colors(dir.path(), 4);
        let (model, curve) = train_classifier(&ClassifierConfig { epochs: 0, ..cfg() }, &m).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model.weight_hash(), ClassifierModel::new(cfg(), 2).unwrap().weight_hash());
        let report = evaluate(&Constant(2), &m).unwrap();
        assert_eq!(report.accuracy, 0.5);
    }

    #[test]
    fn synthetic_in_evaluation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = solid_colors(dir.path(), 4);
        m.records[0].provenance = Provenance::Synthetic;
        assert!(matches!(evaluate(&Constant(1), &m), Err(Error::Contamination { .. })));
        // the same record in a test split also trips the training-time guard
        m.records[0].split = Split::Test;
        assert!(matches!(train_classifier(&cfg(), &m), Err(Error::Contamination { .. })));
    }

    #[test]
    fn hybrid_backbone_is_a_plugin() {
        let c = ClassifierConfig {
            backbone: Backbone::HybridExternal,
            ..cfg()
        };
        assert!(matches!(ClassifierModel::new(c, 2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn cell_ids_roundtrip() {
        let c: CellId = "cropped-augmented:0.5".parse().unwrap();
        assert_eq!(c.variant, Variant::CroppedAugmented);
        assert_eq!(c.to_string(), "cropped-augmented:0.5");
        assert_eq!("original:1".parse::<CellId>().unwrap().to_string(), "original:1.0");
        assert!("bogus:0.5".parse::<CellId>().is_err());
        assert!("original:0".parse::<CellId>().is_err());
    }

    #[test]
    fn matrix_names_missing_cell_and_marks_original_fid_absent() {
        let dir = tempfile::tempdir().unwrap();
        let m = solid_colors(dir.path(), 8);
        let quick = ClassifierConfig { epochs: 1, ..cfg() };
        let cells = vec![(
            CellId {
                variant: Variant::Original,
                fraction: 1.0,
            },
            Some(CellData {
                train: m.clone(),
                test: m.split_only(Split::Test),
                fid: Some(3.0),
            }),
        )];
        let t = run_matrix(&cells, &quick).unwrap();
        assert_eq!(t.rows[0].fid, None);
        assert!(t.to_tsv().contains("original\t1.0\t--\t"));
        let missing = vec![(
            CellId {
                variant: Variant::Augmented,
                fraction: 0.1,
            },
            None,
        )];
        assert!(matches!(run_matrix(&missing, &quick), Err(Error::MissingCell(c)) if c == "augmented:0.1"));
    }
}
