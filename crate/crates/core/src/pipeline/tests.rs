use super::*;
use crate::toy::ToyConfig;

fn tiny(root: &Path) -> ExperimentConfig {
    let res = 16;
    let mut cfg = ExperimentConfig::toy();
    cfg.output_root = root.to_path_buf();
    cfg.fractions = vec![0.5, 1.0];
    cfg.synthetic_per_class = 4;
    cfg.dataset.source = DataSource::Toy(ToyConfig {
        per_class: 12,
        size: res,
        ..Default::default()
    });
    cfg.dataset.resolution = res;
    cfg.landmarks.input_size = (res, res);
    cfg.landmarks.epochs = 1;
    cfg.landmarks.batch_size = 8;
    cfg.landmarks.head_widths = vec![16];
    cfg.gan = GanConfig {
        resolution: res,
        latent_dim: 8,
        channel_base: 64,
        channel_max: 8,
        batch_size: 8,
        total_kimg: 1,
        snapshot_interval_kimg: 1,
        ada_interval_images: 16,
        fid_max_samples: 64,
        ..GanConfig::desk(2)
    };
    cfg.classifier.input_size = res;
    cfg.classifier.width = 4;
    cfg.classifier.epochs = 1;
    cfg.fid = FidConfig { pool: 4, dim: 8, seed: 0 };
    cfg
}

fn cell(s: &str) -> CellId {
    s.parse().unwrap()
}

#[test]
fn prepare_writes_one_manifest_per_cell_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.fractions = vec![0.25, 0.5, 1.0];
    let p = Pipeline::new(cfg.clone()).unwrap();
    assert_eq!(p.prepare().unwrap(), StageOutcome::Ran);
    let cells = std::fs::read_dir(dir.path().join("prepare/cells")).unwrap().count();
    assert_eq!(cells, 9);
    assert_eq!(p.prepare().unwrap(), StageOutcome::UpToDate);

    let a = DatasetManifest::read(&p.cell_manifest_path(&cell("original:0.5"))).unwrap();
    let b = DatasetManifest::read(&p.cell_manifest_path(&cell("cropped-augmented:0.5"))).unwrap();
    assert_eq!(a, b, "variants of one fraction share the real subset");
    assert_eq!(a.class_counts(Some(Split::Train)), vec![4, 4]);

    cfg.fractions = vec![1.0];
    let p = Pipeline::new(cfg).unwrap();
    assert_eq!(p.cells().len(), 3);
    assert_eq!(p.prepare().unwrap(), StageOutcome::Ran);
    assert_eq!(std::fs::read_dir(dir.path().join("prepare/cells")).unwrap().count(), 3);
}

#[test]
fn downstream_before_upstream_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(dir.path())).unwrap();
    match p.train_landmarks() {
        Err(Error::MissingStage { stage, .. }) => assert_eq!(stage, "prepare"),
        other => panic!("expected MissingStage, got {other:?}"),
    }
    p.prepare().unwrap();
    match p.generate(&cell("augmented:1.0")) {
        Err(Error::MissingStage { stage, .. }) => assert_eq!(stage, "train-gan[augmented:1.0]"),
        other => panic!("expected MissingStage, got {other:?}"),
    }
    assert!(matches!(p.train_gan(&cell("original:1.0"), false), Ok(StageOutcome::Skipped(_))));
    assert!(matches!(p.train_gan(&cell("augmented:0.3"), false), Err(Error::InvalidConfig(_))));
}

#[test]
fn full_run_is_cached_and_detects_staleness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let p = Pipeline::new(cfg.clone()).unwrap();
    let first = p.run_all(false).unwrap();
    assert!(first.iter().all(|(_, o)| o != &StageOutcome::UpToDate));
    let second = p.run_all(false).unwrap();
    assert!(second
        .iter()
        .all(|(_, o)| matches!(o, StageOutcome::UpToDate | StageOutcome::Skipped(_))));

    let table = p.results_table().unwrap();
    assert_eq!(table.rows.len(), 6);
    assert!(table.rows.iter().all(|r| (r.fid.is_none()) == (r.variant == Variant::Original)));
    let summary = std::fs::read_to_string(dir.path().join("plot/summary.tsv")).unwrap();
    assert_eq!(summary, table.to_tsv());
    let log = std::fs::read(dir.path().join("cells/cropped-augmented_0.5/gan/fid_log.txt")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("plot/fid_0.5_cropped-augmented.txt")).unwrap(), log);
    assert!(dir.path().join("plot/fid_1.0.svg").is_file());

    let report = std::fs::read(dir.path().join("cells/original_1.0/evaluate/report.json")).unwrap();
    std::fs::remove_file(dir.path().join("cells/original_1.0/evaluate/stage.json")).unwrap();
    assert_eq!(p.evaluate(&cell("original:1.0")).unwrap(), StageOutcome::Ran);
    assert_eq!(std::fs::read(dir.path().join("cells/original_1.0/evaluate/report.json")).unwrap(), report);

    std::fs::write(dir.path().join("landmarks/report.json"), "{}").unwrap();
    match p.crop() {
        Err(Error::StaleInput { stage, .. }) => assert_eq!(stage, "train-landmarks"),
        other => panic!("expected StaleInput, got {other:?}"),
    }

    let mut changed = cfg.clone();
    changed.classifier.lr *= 2.0;
    let q = Pipeline::new(changed).unwrap();
    match q.evaluate(&cell("augmented:0.5")) {
        Err(Error::StaleInput { stage, .. }) => assert_eq!(stage, "train-classifier[augmented:0.5]"),
        other => panic!("expected StaleInput, got {other:?}"),
    }
    assert_eq!(q.train_classifier(&cell("augmented:0.5")).unwrap(), StageOutcome::Ran);
    assert_eq!(q.evaluate(&cell("augmented:0.5")).unwrap(), StageOutcome::Ran);
    match q.plot() {
        Err(Error::StaleInput { .. }) => {}
        other => panic!("plot must refuse a partially rerun matrix, got {other:?}"),
    }
}

#[test]
fn plot_without_gan_cells_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.variants = vec![Variant::Original];
    cfg.fractions = vec![1.0];
    let p = Pipeline::new(cfg).unwrap();
    let out = p.run_all(false).unwrap();
    assert!(out.iter().all(|(l, _)| l != "plot"));
    assert!(matches!(p.plot(), Err(Error::EmptyInput(_))));
}

#[test]
fn resume_continues_a_shorter_gan_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.variants = vec![Variant::Augmented];
    cfg.fractions = vec![1.0];
    let c = cell("augmented:1.0");
    let p = Pipeline::new(cfg.clone()).unwrap();
    p.prepare().unwrap();
    p.train_gan(&c, false).unwrap();
    cfg.gan.total_kimg = 2;
    let p = Pipeline::new(cfg.clone()).unwrap();
    assert_eq!(p.train_gan(&c, true).unwrap(), StageOutcome::Ran);
    let resumed = gan::load_checkpoint(&dir.path().join("cells/augmented_1.0/gan/latest.ckpt")).unwrap();
    assert_eq!(resumed.kimg, 2);
    assert_eq!(p.fid_log(&c).unwrap().len(), 3);

    let other = tempfile::tempdir().unwrap();
    cfg.output_root = other.path().to_path_buf();
    let q = Pipeline::new(cfg).unwrap();
    q.prepare().unwrap();
    q.train_gan(&c, false).unwrap();
    let straight = gan::load_checkpoint(&other.path().join("cells/augmented_1.0/gan/latest.ckpt")).unwrap();
    assert_eq!(resumed.weight_hash(), straight.weight_hash());
}
