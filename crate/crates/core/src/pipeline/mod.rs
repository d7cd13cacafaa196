//! Staged, content-hashed orchestration of the experiment matrix.
//!
//! Stages form a DAG. Each writes into its own directory below the output
//! root and finishes by writing a [`Stamp`]. A stage refuses to run when a
//! dependency has no stamp ([`Error::MissingStage`]) or when the dependency
//! was produced under a different configuration or has been edited since
//! ([`Error::StaleInput`]). A stage whose key, inputs and outputs all still
//! match is a no-op.
//!
//! Stage seeds are `derive_seed(seed, [stage, cell])`; the per-module `seed`
//! fields of the configuration are overridden. Real-image subsets are drawn
//! once per fraction with `derive_seed(seed, ["prepare", "subset", fraction])`
//! so every variant of a fraction sees the same real images.
//!
//! Output layout:
//!
//! ```text
//! prepare/         corpus/ (toy only), images/, full.jsonl, cells/<cell>.jsonl, report.json
//! landmarks/       model.ckpt, report.json
//! crop/            images/, full.jsonl, report.json
//! cells/<cell>/gan/         data.jsonl, latest.ckpt, fid_log.txt, fid_reports.jsonl
//! cells/<cell>/generate/    images/, synthetic.jsonl, train.jsonl
//! cells/<cell>/classifier/  model.ckpt, curve.json
//! cells/<cell>/evaluate/    report.json
//! plot/            fid_<fraction>.svg, fid_<fraction>_<variant>.txt, summary.tsv
//! ```

mod config;
pub mod plot;
mod stamp;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{DataSource, DatasetConfig, ExperimentConfig, FidConfig};
pub use stamp::{Stamp, STAMP_FILE};

use crate::classifier::{self, fraction_label, AccuracyReport, CellId, ClassifierModel, ResultRow, ResultsTable, Variant};
use crate::crop::crop_manifest;
use crate::dataset::{self, DatasetManifest, ResizeOptions, Split};
use crate::error::{Error, Result};
use crate::gan::{self, GanConfig, TrainOptions};
use crate::imageio;
use crate::landmarks::{self, read_annotations, LandmarkModel, OutlierMethod, PredictedRecord};
use crate::seed;
use crate::toy;
use config::hash_json;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Prepare,
    TrainLandmarks,
    Crop,
    TrainGan,
    Generate,
    TrainClassifier,
    Evaluate,
    Plot,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::TrainLandmarks => "train-landmarks",
            Stage::Crop => "crop",
            Stage::TrainGan => "train-gan",
            Stage::Generate => "generate",
            Stage::TrainClassifier => "train-classifier",
            Stage::Evaluate => "evaluate",
            Stage::Plot => "plot",
        }
    }

    pub fn per_cell(&self) -> bool {
        matches!(self, Stage::TrainGan | Stage::Generate | Stage::TrainClassifier | Stage::Evaluate)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
    Skipped(String),
}

/// Directory name of a matrix cell, e.g. `cropped-augmented_0.5`.
pub fn cell_dir_name(cell: &CellId) -> String {
    format!("{}_{}", cell.variant, fraction_label(cell.fraction))
}

fn label(stage: Stage, cell: Option<&CellId>) -> String {
    match cell {
        Some(c) => format!("{}[{c}]", stage.name()),
        None => stage.name().to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::parse("report", e))? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse("report", e))
}

fn relative(path: &Path, base: &Path) -> String {
    let rel = pathdiff::diff_paths(path, base).unwrap_or_else(|| path.to_path_buf());
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn with_landmarks(m: &DatasetManifest, splits: &[Split]) -> DatasetManifest {
    let mut out = m.empty_like();
    out.records = m
        .records
        .iter()
        .filter(|r| r.landmarks.is_some() && splits.contains(&r.split))
        .cloned()
        .collect();
    out
}

/// Attaches annotations keyed by file name, falling back to file stem.
fn attach_annotations(m: &mut DatasetManifest, path: &Path) -> Result<usize> {
    let ann = read_annotations(path)?;
    let mut hits = 0;
    for r in &mut m.records {
        let name = r.image_ref.file_name().map(|s| s.to_string_lossy().into_owned());
        let stem = r.image_ref.file_stem().map(|s| s.to_string_lossy().into_owned());
        if let Some(l) = name.and_then(|n| ann.get(&n)).or_else(|| stem.and_then(|s| ann.get(&s))) {
            r.landmarks = Some(*l);
            hits += 1;
        }
    }
    Ok(hits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierSummary {
    pub method: OutlierMethod,
    pub threshold: Option<f64>,
    pub kept: usize,
    pub removed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkStageReport {
    pub config_hash: String,
    pub training: landmarks::TrainingReport,
    pub val_records: usize,
    /// RMSE in pixels of the working resolution on the validation records.
    pub val_rmse_px: Option<f64>,
    /// Blob-centroid estimate on the same records (toy corpus only).
    pub baseline_rmse_px: Option<f64>,
    pub outliers: Option<OutlierSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub cell: String,
    pub accuracy: AccuracyReport,
    /// Final-snapshot FID of the cell's generator.
    pub fid: Option<f64>,
    pub fid_kimg: Option<u64>,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    root: PathBuf,
    config_hash: String,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let root = std::path::absolute(&cfg.output_root).map_err(|e| Error::io(&cfg.output_root, e))?;
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let config_hash = cfg.config_hash();
        Ok(Self { cfg, root, config_hash })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn cells(&self) -> Vec<CellId> {
        self.cfg.cells()
    }

    pub fn stage_dir(&self, stage: Stage, cell: Option<&CellId>) -> PathBuf {
        match (stage, cell) {
            (Stage::Prepare, _) => self.root.join("prepare"),
            (Stage::TrainLandmarks, _) => self.root.join("landmarks"),
            (Stage::Crop, _) => self.root.join("crop"),
            (Stage::Plot, _) => self.root.join("plot"),
            (s, Some(c)) => self.root.join("cells").join(cell_dir_name(c)).join(match s {
                Stage::TrainGan => "gan",
                Stage::Generate => "generate",
                Stage::TrainClassifier => "classifier",
                _ => "evaluate",
            }),
            (s, None) => panic!("stage {} needs a cell", s.name()),
        }
    }

    fn cell_manifest_path(&self, cell: &CellId) -> PathBuf {
        self.stage_dir(Stage::Prepare, None)
            .join("cells")
            .join(format!("{}.jsonl", cell_dir_name(cell)))
    }

    pub fn stage_seed(&self, stage: Stage, cell: Option<&CellId>) -> u64 {
        match cell {
            Some(c) => seed::derive_seed(self.cfg.seed, &[stage.name(), &c.to_string()]),
            None => seed::derive_seed(self.cfg.seed, &[stage.name()]),
        }
    }

    fn key(&self, stage: Stage, cell: Option<&CellId>) -> String {
        let c = &self.cfg;
        let slice = match stage {
            Stage::Prepare => json!({ "dataset": c.dataset, "fractions": c.fractions, "variants": c.variants }),
            Stage::TrainLandmarks => json!({ "landmarks": c.landmarks }),
            Stage::Crop => json!({ "crop": c.crop }),
            Stage::TrainGan => json!({ "gan": c.gan, "fid": c.fid }),
            Stage::Generate => json!({ "synthetic_per_class": c.synthetic_per_class }),
            Stage::TrainClassifier => json!({ "classifier": c.classifier }),
            Stage::Evaluate => json!({}),
            Stage::Plot => json!({ "fractions": c.fractions, "variants": c.variants }),
        };
        hash_json(&json!({
            "stage": stage.name(),
            "cell": cell.map(|c| c.to_string()),
            "seed": c.seed,
            "resolution": c.dataset.resolution,
            "slice": slice,
        }))
    }

    fn deps(&self, stage: Stage, cell: Option<&CellId>) -> Vec<(Stage, Option<CellId>)> {
        match (stage, cell) {
            (Stage::Prepare, _) => vec![],
            (Stage::TrainLandmarks, _) => vec![(Stage::Prepare, None)],
            (Stage::Crop, _) => vec![(Stage::Prepare, None), (Stage::TrainLandmarks, None)],
            (Stage::TrainGan, Some(c)) if c.variant == Variant::CroppedAugmented => {
                vec![(Stage::Prepare, None), (Stage::Crop, None)]
            }
            (Stage::TrainGan, _) => vec![(Stage::Prepare, None)],
            (Stage::Generate, c) => vec![(Stage::Prepare, None), (Stage::TrainGan, c.copied())],
            (Stage::TrainClassifier, Some(c)) if c.variant == Variant::Original => vec![(Stage::Prepare, None)],
            (Stage::TrainClassifier, c) => vec![(Stage::Generate, c.copied())],
            (Stage::Evaluate, c) => vec![(Stage::Prepare, None), (Stage::TrainClassifier, c.copied())],
            (Stage::Plot, _) => self
                .cells()
                .into_iter()
                .flat_map(|c| {
                    let mut v = vec![(Stage::Evaluate, Some(c))];
                    if c.variant != Variant::Original {
                        v.push((Stage::TrainGan, Some(c)));
                    }
                    v
                })
                .collect(),
        }
    }

    /// Validates a finished dependency and everything upstream of it.
    /// Output files are re-hashed only for direct dependencies.
    fn check_dep(&self, stage: Stage, cell: Option<&CellId>, verify_outputs: bool) -> Result<Stamp> {
        let dir = self.stage_dir(stage, cell);
        let name = label(stage, cell);
        let stamp = Stamp::read(&dir)?.ok_or_else(|| Error::MissingStage {
            stage: name.clone(),
            artifact: dir.join(STAMP_FILE),
        })?;
        if stamp.key != self.key(stage, cell) {
            return Err(Error::StaleInput {
                stage: name,
                detail: "configuration changed since it ran; rerun it".into(),
            });
        }
        if verify_outputs {
            if let Some(f) = stamp.first_modified_output(&self.root)? {
                return Err(Error::StaleInput {
                    stage: name,
                    detail: format!("output {f} was modified or removed; rerun it"),
                });
            }
        }
        for (ds, dc) in self.deps(stage, cell) {
            let upstream = self.check_dep(ds, dc.as_ref(), false)?;
            let dl = label(ds, dc.as_ref());
            if stamp.inputs.get(&dl) != Some(&upstream.digest()) {
                return Err(Error::StaleInput {
                    stage: name,
                    detail: format!("its input {dl} changed since it ran; rerun it"),
                });
            }
        }
        Ok(stamp)
    }

    fn run_stage(
        &self,
        stage: Stage,
        cell: Option<&CellId>,
        keep_dir: bool,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<StageOutcome> {
        let name = label(stage, cell);
        let key = self.key(stage, cell);
        let mut inputs = BTreeMap::new();
        for (ds, dc) in self.deps(stage, cell) {
            let s = self.check_dep(ds, dc.as_ref(), true)?;
            inputs.insert(label(ds, dc.as_ref()), s.digest());
        }
        let dir = self.stage_dir(stage, cell);
        if let Some(old) = Stamp::read(&dir)? {
            if old.key == key && old.inputs == inputs && old.first_modified_output(&self.root)?.is_none() {
                log::info!("{name}: up to date");
                return Ok(StageOutcome::UpToDate);
            }
        }
        if dir.exists() {
            if keep_dir {
                let _ = std::fs::remove_file(dir.join(STAMP_FILE));
            } else {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        log::info!("{name}: running");
        body(&dir)?;
        let stamp = Stamp {
            stage: stage.name().into(),
            cell: cell.map(|c| c.to_string()),
            config_hash: self.config_hash.clone(),
            key,
            inputs,
            outputs: stamp::hash_outputs(&self.root, &dir)?,
        };
        stamp.write(&dir)?;
        log::info!("{name}: done");
        Ok(StageOutcome::Ran)
    }

    fn check_cell(&self, cell: &CellId) -> Result<()> {
        if self.cells().contains(cell) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("cell {cell} is not part of the configured matrix")))
        }
    }

    /// Ingests or synthesizes the corpus, resizes it to the working
    /// resolution, and writes one real-image manifest per cell.
    pub fn prepare(&self) -> Result<StageOutcome> {
        self.run_stage(Stage::Prepare, None, false, |dir| {
            let seed = self.stage_seed(Stage::Prepare, None);
            let ds = &self.cfg.dataset;
            let mut report = serde_json::Map::new();
            let source = match &ds.source {
                DataSource::Toy(tc) => {
                    let tc = toy::ToyConfig {
                        seed: seed::derive_seed(seed, &["toy"]),
                        ..tc.clone()
                    };
                    toy::generate_toy_corpus(&tc, &dir.join("corpus"))?
                }
                DataSource::Directory { root, layout } => {
                    let (mut m, ingest) = dataset::ingest_directory(root, *layout)?;
                    let skipped: Vec<_> = ingest
                        .skipped
                        .iter()
                        .map(|s| json!({ "path": relative(&s.path, root), "reason": s.reason }))
                        .collect();
                    report.insert("skipped".into(), json!(skipped));
                    if let Some(ann) = &ds.landmarks {
                        let hits = attach_annotations(&mut m, ann)?;
                        report.insert("annotated".into(), json!(hits));
                    }
                    if m.records_in(Split::Test).next().is_none() {
                        m = dataset::assign_test_split(&m, ds.test_fraction, seed::derive_seed(seed, &["test-split"]))?;
                    }
                    m
                }
            };
            let res = ds.resolution;
            let opts = ResizeOptions {
                mode: ds.resize_mode,
                reencode: false,
            };
            let full = dataset::resize_images(&source, (res, res), &dir.join("images"), opts)?;
            full.write(&dir.join("full.jsonl"))?;
            let mut subsets = Vec::new();
            for &f in &self.cfg.fractions {
                let label = fraction_label(f);
                let sub = dataset::stratified_subset(&full, f, seed::derive_seed(seed, &["subset", &label]))?;
                subsets.push(json!({
                    "fraction": label,
                    "train_per_class": sub.class_counts(Some(Split::Train)),
                }));
                for cell in self.cells().iter().filter(|c| c.fraction == f) {
                    sub.write(&self.cell_manifest_path(cell))?;
                }
            }
            report.insert("config_hash".into(), json!(self.config_hash));
            report.insert("classes".into(), json!(full.class_names));
            report.insert("train_per_class".into(), json!(full.class_counts(Some(Split::Train))));
            report.insert("test_per_class".into(), json!(full.class_counts(Some(Split::Test))));
            report.insert("subsets".into(), json!(subsets));
            write_json(&dir.join("report.json"), &report)
        })
    }

    fn full_manifest(&self) -> Result<DatasetManifest> {
        DatasetManifest::read(&self.stage_dir(Stage::Prepare, None).join("full.jsonl"))
    }

    /// Trains the landmark regressor. Without a dedicated landmark manifest,
    /// annotated train records train it and annotated test records validate it.
    pub fn train_landmarks(&self) -> Result<StageOutcome> {
        self.run_stage(Stage::TrainLandmarks, None, false, |dir| {
            let (train, val) = match &self.cfg.dataset.landmark_manifest {
                Some(p) => {
                    let m = DatasetManifest::read(p)?;
                    (with_landmarks(&m, &[Split::Train]), with_landmarks(&m, &[Split::Val, Split::Test]))
                }
                None => {
                    let m = self.full_manifest()?;
                    (with_landmarks(&m, &[Split::Train]), with_landmarks(&m, &[Split::Val, Split::Test]))
                }
            };
            let lcfg = landmarks::LandmarkModelConfig {
                seed: self.stage_seed(Stage::TrainLandmarks, None),
                ..self.cfg.landmarks.clone()
            };
            let (model, training) = landmarks::train_landmark_model(&lcfg, &train, &val)?;
            model.save(&dir.join("model.ckpt"))?;

            let mut preds = Vec::new();
            let mut truth = Vec::new();
            let mut baseline = Vec::new();
            for r in &val.records {
                let img = imageio::load_rgb(&r.image_ref)?;
                let p = model.predict(&img);
                preds.push(PredictedRecord {
                    record: r.clone(),
                    landmarks: p,
                    image_dims: img.dimensions(),
                });
                truth.push(r.landmarks.expect("filtered to annotated records"));
                baseline.push(toy::centroid_baseline(&img));
            }
            let predicted: Vec<_> = preds.iter().map(|p| p.landmarks).collect();
            let val_rmse_px = if preds.is_empty() { None } else { Some(landmarks::rmse(&predicted, &truth)?) };
            let baseline_rmse_px = match (&self.cfg.dataset.source, preds.is_empty()) {
                (DataSource::Toy(_), false) => Some(landmarks::rmse(&baseline, &truth)?),
                _ => None,
            };
            let outliers = if preds.is_empty() {
                None
            } else {
                let method = OutlierMethod::default();
                let split = landmarks::filter_outliers(preds, method)?;
                Some(OutlierSummary {
                    method,
                    threshold: split.threshold,
                    kept: split.kept.len(),
                    removed: split.removed.iter().map(|p| relative(&p.record.image_ref, &self.root)).collect(),
                })
            };
            if let Some(v) = val_rmse_px {
                log::info!("landmark validation rmse {v:.3} px");
            }
            write_json(
                &dir.join("report.json"),
                &LandmarkStageReport {
                    config_hash: self.config_hash.clone(),
                    training,
                    val_records: val.records.len(),
                    val_rmse_px,
                    baseline_rmse_px,
                    outliers,
                },
            )
        })
    }

    pub fn landmark_report(&self) -> Result<LandmarkStageReport> {
        read_json(&self.stage_dir(Stage::TrainLandmarks, None).join("report.json"))
    }

    /// Crops every prepared image around its predicted landmarks.
    pub fn crop(&self) -> Result<StageOutcome> {
        self.run_stage(Stage::Crop, None, false, |dir| {
            let full = self.full_manifest()?;
            let model = LandmarkModel::load(&self.stage_dir(Stage::TrainLandmarks, None).join("model.ckpt"))?;
            let res = self.cfg.dataset.resolution;
            let (cropped, mut report) = crop_manifest(&full, &model, &self.cfg.crop, (res, res), &dir.join("images"))?;
            for e in &mut report.entries {
                e.image_ref = relative(Path::new(&e.image_ref), &self.root);
            }
            cropped.write(&dir.join("full.jsonl"))?;
            log::info!("crop: {} of {} images fell back to a center crop", report.fallbacks, report.entries.len());
            write_json(
                &dir.join("report.json"),
                &json!({ "config_hash": self.config_hash, "report": report }),
            )
        })
    }

    /// Real subset of the cell, in cropped form for the cropped variant.
    fn gan_training_set(&self, cell: &CellId) -> Result<DatasetManifest> {
        let real = DatasetManifest::read(&self.cell_manifest_path(cell))?;
        if cell.variant != Variant::CroppedAugmented {
            return Ok(real);
        }
        let full = self.full_manifest()?;
        let cropped = DatasetManifest::read(&self.stage_dir(Stage::Crop, None).join("full.jsonl"))?;
        if cropped.records.len() != full.records.len() {
            return Err(Error::LengthMismatch {
                left: cropped.records.len(),
                right: full.records.len(),
            });
        }
        let index: HashMap<&Path, usize> = full
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.image_ref.as_path(), i))
            .collect();
        let mut out = cropped.empty_like();
        for r in &real.records {
            let i = index
                .get(r.image_ref.as_path())
                .ok_or_else(|| Error::MissingCell(format!("{cell}: {} not in prepared set", r.ref_str())))?;
            out.records.push(cropped.records[*i].clone());
        }
        Ok(out)
    }

    fn gan_config(&self, cell: &CellId, class_count: u32) -> GanConfig {
        GanConfig {
            class_count,
            seed: self.stage_seed(Stage::TrainGan, Some(cell)),
            ..self.cfg.gan.clone()
        }
    }

    /// Trains the cell's GAN. With `resume`, an interrupted or shorter run
    /// continues from its `latest.ckpt`.
    pub fn train_gan(&self, cell: &CellId, resume: bool) -> Result<StageOutcome> {
        self.check_cell(cell)?;
        if cell.variant == Variant::Original {
            return Ok(StageOutcome::Skipped("original cells train no GAN".into()));
        }
        self.run_stage(Stage::TrainGan, Some(cell), resume, |dir| {
            let data = self.gan_training_set(cell)?;
            data.write(&dir.join("data.jsonl"))?;
            let cfg = self.gan_config(cell, data.class_count());
            let latest = dir.join("latest.ckpt");
            let resume_from = if resume && latest.is_file() {
                let ck = gan::load_checkpoint(&latest)?;
                log::info!("{cell}: resuming GAN from kimg {}", ck.kimg);
                Some(ck)
            } else {
                None
            };
            let extractor = self.cfg.fid.extractor();
            gan::train_gan(
                &cfg,
                &data,
                &extractor,
                &TrainOptions {
                    out_dir: Some(dir.to_path_buf()),
                    resume: resume_from,
                    keep_snapshots: false,
                },
            )?;
            Ok(())
        })
    }

    /// The cell's FID log as written by GAN training.
    pub fn fid_log(&self, cell: &CellId) -> Result<Vec<(u64, f64)>> {
        let path = self.stage_dir(Stage::TrainGan, Some(cell)).join("fid_log.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        plot::parse_fid_log(&text)
    }

    /// Samples the cell's generator and merges the samples into its real subset.
    pub fn generate(&self, cell: &CellId) -> Result<StageOutcome> {
        self.check_cell(cell)?;
        if cell.variant == Variant::Original {
            return Ok(StageOutcome::Skipped("original cells use real images only".into()));
        }
        self.run_stage(Stage::Generate, Some(cell), false, |dir| {
            let ck = gan::load_checkpoint(&self.stage_dir(Stage::TrainGan, Some(cell)).join("latest.ckpt"))?;
            let mut g = ck.generator()?;
            let real = DatasetManifest::read(&self.cell_manifest_path(cell))?;
            let syn = gan::generate_per_class(
                &mut g,
                self.cfg.synthetic_per_class,
                &real.class_names,
                &dir.join("images"),
                self.stage_seed(Stage::Generate, Some(cell)),
            )?;
            syn.write(&dir.join("synthetic.jsonl"))?;
            dataset::merge(&real, &syn, None)?.write(&dir.join("train.jsonl"))
        })
    }

    pub fn train_classifier(&self, cell: &CellId) -> Result<StageOutcome> {
        self.check_cell(cell)?;
        self.run_stage(Stage::TrainClassifier, Some(cell), false, |dir| {
            let m = if cell.variant == Variant::Original {
                DatasetManifest::read(&self.cell_manifest_path(cell))?
            } else {
                DatasetManifest::read(&self.stage_dir(Stage::Generate, Some(cell)).join("train.jsonl"))?
            };
            let cfg = classifier::ClassifierConfig {
                seed: self.stage_seed(Stage::TrainClassifier, Some(cell)),
                ..self.cfg.classifier.clone()
            };
            let (model, curve) = classifier::train_classifier(&cfg, &m)?;
            model.save(&dir.join("model.ckpt"))?;
            let real = m.records_in(Split::Train).filter(|r| r.provenance == dataset::Provenance::Real).count();
            let total = m.records_in(Split::Train).count();
            write_json(
                &dir.join("curve.json"),
                &json!({
                    "config_hash": self.config_hash,
                    "cell": cell.to_string(),
                    "train_real": real,
                    "train_synthetic": total - real,
                    "weight_hash": model.weight_hash(),
                    "curve": curve,
                }),
            )
        })
    }

    /// Scores the cell's classifier on the real test split.
    pub fn evaluate(&self, cell: &CellId) -> Result<StageOutcome> {
        self.check_cell(cell)?;
        self.run_stage(Stage::Evaluate, Some(cell), false, |dir| {
            let model = ClassifierModel::load(&self.stage_dir(Stage::TrainClassifier, Some(cell)).join("model.ckpt"))?;
            let test = DatasetManifest::read(&self.cell_manifest_path(cell))?.split_only(Split::Test);
            let accuracy = classifier::evaluate(&model, &test)?;
            let last = if cell.variant == Variant::Original {
                None
            } else {
                self.fid_log(cell)?.last().copied()
            };
            log::info!("{cell}: accuracy {:.4}", accuracy.accuracy);
            write_json(
                &dir.join("report.json"),
                &EvaluationReport {
                    config_hash: self.config_hash.clone(),
                    cell: cell.to_string(),
                    accuracy,
                    fid: last.map(|(_, v)| v),
                    fid_kimg: last.map(|(k, _)| k),
                },
            )
        })
    }

    pub fn evaluation(&self, cell: &CellId) -> Result<EvaluationReport> {
        let dir = self.stage_dir(Stage::Evaluate, Some(cell));
        if !dir.join(STAMP_FILE).is_file() {
            return Err(Error::MissingStage {
                stage: label(Stage::Evaluate, Some(cell)),
                artifact: dir.join(STAMP_FILE),
            });
        }
        read_json(&dir.join("report.json"))
    }

    /// Accuracy and FID for every cell, in matrix order.
    pub fn results_table(&self) -> Result<ResultsTable> {
        let mut table = ResultsTable::default();
        for cell in self.cells() {
            let r = self.evaluation(&cell)?;
            table.rows.push(ResultRow {
                variant: cell.variant,
                fraction: cell.fraction,
                fid: r.fid,
                accuracy: r.accuracy.accuracy,
            });
        }
        table.metadata.insert("config_hash".into(), self.config_hash.clone());
        table.metadata.insert("seed".into(), self.cfg.seed.to_string());
        Ok(table)
    }

    /// One FID-vs-kimg figure per fraction with cropped and uncropped
    /// series, the raw logs beside it, and the summary table.
    pub fn plot(&self) -> Result<StageOutcome> {
        self.run_stage(Stage::Plot, None, false, |dir| {
            let mut any = false;
            for &f in &self.cfg.fractions {
                let fl = fraction_label(f);
                let mut series = Vec::new();
                for (variant, name) in [(Variant::CroppedAugmented, "cropped"), (Variant::Augmented, "uncropped")] {
                    let cell = CellId { variant, fraction: f };
                    if !self.cells().contains(&cell) {
                        continue;
                    }
                    let src = self.stage_dir(Stage::TrainGan, Some(&cell)).join("fid_log.txt");
                    let dst = dir.join(format!("fid_{fl}_{variant}.txt"));
                    std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
                    series.push(plot::Series {
                        label: name.into(),
                        points: self.fid_log(&cell)?,
                    });
                }
                if series.is_empty() {
                    continue;
                }
                any = true;
                plot::write_svg(&dir.join(format!("fid_{fl}.svg")), &format!("FID vs kimg, fraction {fl}"), &series)?;
            }
            if !any {
                return Err(Error::EmptyInput("no FID logs to plot; the matrix has no augmented variant".into()));
            }
            let tsv = self.results_table()?.to_tsv();
            std::fs::write(dir.join("summary.tsv"), tsv).map_err(|e| Error::io(dir, e))
        })
    }

    /// Every stage in dependency order, as one call.
    pub fn run_all(&self, resume: bool) -> Result<Vec<(String, StageOutcome)>> {
        let mut out = vec![
            (label(Stage::Prepare, None), self.prepare()?),
            (label(Stage::TrainLandmarks, None), self.train_landmarks()?),
            (label(Stage::Crop, None), self.crop()?),
        ];
        for cell in self.cells() {
            let c = Some(&cell);
            out.push((label(Stage::TrainGan, c), self.train_gan(&cell, resume)?));
            out.push((label(Stage::Generate, c), self.generate(&cell)?));
            out.push((label(Stage::TrainClassifier, c), self.train_classifier(&cell)?));
            out.push((label(Stage::Evaluate, c), self.evaluate(&cell)?));
        }
        if self.cfg.variants.iter().any(|v| *v != Variant::Original) {
            out.push((label(Stage::Plot, None), self.plot()?));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
