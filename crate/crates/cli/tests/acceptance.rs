//! Acceptance harness. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use petaug_core::classifier::{evaluate, ImageClassifier};
use petaug_core::dataset::{merge, stratified_subset};
use petaug_core::gan::{ada_update, load_checkpoint, train_gan, AdaState, GanConfig, TrainOptions};
use petaug_core::landmarks::{rmse, POINT_COUNT};
use petaug_core::metrics::{fid, sqrtm_psd, RandomProjectionExtractor};
use petaug_core::toy::{generate_toy_corpus, ToyConfig};
use petaug_core::{compute_crop, seed, CropBox, DatasetManifest, Error, GaussianStats, LandmarkSet, Provenance, Record, Split};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn stats(mu: DVector<f64>, sigma: DMatrix<f64>) -> GaussianStats {
    GaussianStats {
        mu,
        sigma,
        n: 1000,
        shrinkage: 0.0,
    }
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q()
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.1
}

// 1: FID identities and closed form for commuting covariances.
fn fid_oracles() -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..150 {
        let n = rng.gen_range(1..=24);
        let mu_x = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let mu_g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..5.0)).collect();
        let q = random_orthogonal(n, &mut rng);
        let sx = &q * DMatrix::from_diagonal(&DVector::from_vec(a.clone())) * q.transpose();
        let sg = &q * DMatrix::from_diagonal(&DVector::from_vec(b.clone())) * q.transpose();
        let expected = (&mu_x - &mu_g).norm_squared() + a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        let x = stats(mu_x, sx);
        let g = stats(mu_g, sg);
        let got = fid(&x, &g).map_err(|e| e.to_string())?;
        ensure((got - expected).abs() < 1e-8, || format!("closed form: {got} vs {expected} (n={n})"))?;
        let back = fid(&g, &x).map_err(|e| e.to_string())?;
        ensure((got - back).abs() < 1e-9, || format!("asymmetric: {got} vs {back}"))?;

        let full = stats(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)), random_spd(n, &mut rng));
        let selfd = fid(&full, &full).map_err(|e| e.to_string())?;
        ensure(selfd.abs() < 1e-9, || format!("fid(x,x) = {selfd:e} (n={n})"))?;
        let other = stats(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)), random_spd(n, &mut rng));
        let (d1, d2) = (fid(&full, &other).unwrap(), fid(&other, &full).unwrap());
        ensure((d1 - d2).abs() < 1e-9, || format!("asymmetric general case: {d1} vs {d2}"))?;
        worst = worst.max((got - expected).abs());
        cases += 1;
    }
    let mut shift = DVector::zeros(8);
    shift[0] = 1.0;
    let unit = fid(&stats(DVector::zeros(8), DMatrix::identity(8, 8)), &stats(shift, DMatrix::identity(8, 8))).unwrap();
    ensure((unit - 1.0).abs() < 1e-8, || format!("unit mean shift gave {unit}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} cases, max closed-form error {worst:.1e}, unit shift {unit}, {elapsed:.2?}"))
}

// 2: PSD square root reconstruction.
fn sqrtm_reconstruction() -> Check {
    let mut rng = seed::rng(202);
    let mut worst: f64 = 0.0;
    for n in [1, 2, 5, 16, 32, 64, 128, 256] {
        for rank_deficient in [false, true] {
            let k = if rank_deficient { (n / 2).max(1) } else { n };
            let b = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
            let a = &b * b.transpose();
            let s = sqrtm_psd(&a).map_err(|e| e.to_string())?;
            let rel = (&s * &s - &a).norm() / a.norm();
            ensure(rel < 1e-8, || format!("n={n} rank={k}: relative error {rel:e}"))?;
            worst = worst.max(rel);
        }
    }
    let d = sqrtm_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).map_err(|e| e.to_string())?;
    let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
    let err = (&d - &want).abs().max();
    ensure(err < 1e-12, || format!("diag(4,9) root off by {err:e}"))?;
    Ok(format!("max relative Frobenius error {worst:.1e} up to 256x256; diag(4,9) error {err:.1e}"))
}

// 3: RMSE against a brute-force per-point loop.
fn rmse_oracle() -> Check {
    let mut rng = seed::rng(303);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let m = rng.gen_range(1..20);
        let mut gen = || LandmarkSet::new(std::array::from_fn(|_| [rng.gen_range(-50.0..300.0), rng.gen_range(-50.0..300.0)]));
        let p: Vec<LandmarkSet> = (0..m).map(|_| gen()).collect();
        let t: Vec<LandmarkSet> = (0..m).map(|_| gen()).collect();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..m {
            for k in 0..POINT_COUNT {
                let dx = p[i].points[k][0] - t[i].points[k][0];
                let dy = p[i].points[k][1] - t[i].points[k][1];
                sum += (dx * dx + dy * dy).sqrt();
                count += 1;
            }
        }
        let oracle = sum / count as f64;
        let got = rmse(&p, &t).map_err(|e| e.to_string())?;
        ensure((got - oracle).abs() < 1e-12, || format!("{got} vs oracle {oracle}"))?;
        worst = worst.max((got - oracle).abs());
    }
    let t = LandmarkSet::new([[10.0, 20.0]; POINT_COUNT]);
    let p = t.map(|[x, y]| [x + 3.0, y + 4.0]);
    let five = rmse(&[p], &[t]).map_err(|e| e.to_string())?;
    ensure(five == 5.0, || format!("(3,4) offset gave {five}"))?;
    Ok(format!("500 random sets, max deviation {worst:.1e}; (3,4) offset = {five}"))
}

// 4: crop geometry properties. Coordinates live on a 1/8 grid and margins
// on a 1/16 grid so every comparison below is exact.
fn crop_properties() -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(404);
    let (mut contained, mut square, mut equivariant, mut shifted) = (0, 0, 0, 0);
    let cases = 2000;
    for _ in 0..cases {
        let w = rng.gen_range(16..400u32);
        let h = rng.gen_range(16..400u32);
        let margin = rng.gen_range(0..=16) as f64 / 16.0;
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let spread = rng.gen_range(1.0..(w.min(h) as f64 / 2.0));
        let grid = |v: f64| (v * 8.0).round() / 8.0;
        let l = LandmarkSet::new(std::array::from_fn(|_| {
            [grid(cx + rng.gen_range(-spread..spread)), grid(cy + rng.gen_range(-spread..spread))]
        }));
        if !l.any_inside((w, h)) {
            continue;
        }
        let b = compute_crop(&l, (w, h), margin, true).map_err(|e| e.to_string())?;
        ensure(b.within((w, h)), || format!("{b:?} escapes {w}x{h}"))?;
        contained += 1;

        // Reference box in a frame large enough that nothing is clamped.
        let pad = 4096i64;
        let big = (w + 2 * pad as u32, h + 2 * pad as u32);
        let free = compute_crop(&l.map(|[x, y]| [x + pad as f64, y + pad as f64]), big, margin, true).unwrap();
        let free = CropBox::new(free.x0 - pad, free.y0 - pad, free.x1 - pad, free.y1 - pad);
        let side = free.width();
        ensure(free.width() == free.height(), || format!("unclamped box not square: {free:?}"))?;
        if side <= w.min(h) as i64 {
            ensure(b.width() == side && b.height() == side, || format!("{b:?} not square with side {side}"))?;
            square += 1;
            let x0 = free.x0.clamp(0, w as i64 - side);
            let y0 = free.y0.clamp(0, h as i64 - side);
            ensure(b == CropBox::new(x0, y0, x0 + side, y0 + side), || format!("{b:?} is not {free:?} shifted inside"))?;
            if free != b {
                shifted += 1;
            }
        }

        let (dx, dy) = (rng.gen_range(-64..=64i64), rng.gen_range(-64..=64i64));
        let moved = l.map(|[x, y]| [x + (dx + pad) as f64, y + (dy + pad) as f64]);
        let t = compute_crop(&moved, big, margin, true).unwrap();
        let want = CropBox::new(free.x0 + dx + pad, free.y0 + dy + pad, free.x1 + dx + pad, free.y1 + dy + pad);
        ensure(t == want, || format!("translation by ({dx},{dy}): {t:?} vs {want:?}"))?;
        equivariant += 1;
    }
    let elapsed = start.elapsed();
    ensure(contained >= 1000 && square >= 1000 && equivariant >= 1000, || {
        format!("too few cases: {contained}/{square}/{equivariant}")
    })?;
    ensure(shifted > 0, || "no case exercised clamping".into())?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "containment {contained}, squareness {square}, translation {equivariant}, clamp-by-shift {shifted} cases in {elapsed:.2?}"
    ))
}

// 5: ADA controller bounds and linear response.
fn ada_controller() -> Check {
    let mut rng = seed::rng(505);
    let mut updates = 0;
    for _ in 0..500 {
        let cfg = GanConfig {
            ada_step: rng.gen_range(0.0..1.5),
            ada_target: rng.gen_range(0.01..0.99),
            ada_ema: rng.gen_range(0.0..1.0),
            ..GanConfig::desk(2)
        };
        let mut s = AdaState {
            p: rng.gen_range(0.0..=1.0),
            r_hat: rng.gen_range(-1.0..=1.0),
            images_seen: 0,
        };
        for _ in 0..100 {
            let n = rng.gen_range(0..40);
            let signs: Vec<f32> = match rng.gen_range(0..4) {
                0 => vec![1.0; n],
                1 => vec![-1.0; n],
                2 => (0..n).map(|i| if i % 2 == 0 { f32::MAX } else { -f32::MAX }).collect(),
                _ => (0..n).map(|_| rng.gen_range(-1e6..1e6)).collect(),
            };
            s = ada_update(s, &signs, &cfg);
            ensure((0.0..=1.0).contains(&s.p), || format!("p escaped: {}", s.p))?;
            updates += 1;
        }
    }
    let mut checked = 0;
    for _ in 0..200 {
        let cfg = GanConfig {
            ada_step: rng.gen_range(1e-4..0.05),
            ada_target: rng.gen_range(0.1..0.9),
            ada_ema: rng.gen_range(0.5..0.99),
            ..GanConfig::desk(2)
        };
        let p0 = rng.gen_range(0.0..0.5);
        let mut s = AdaState {
            p: p0,
            r_hat: 1.0,
            images_seen: 0,
        };
        let k = rng.gen_range(1..=60u32);
        for _ in 0..k {
            s = ada_update(s, &[1.0; 16], &cfg);
            ensure(s.r_hat > cfg.ada_target, || "r_hat fell to the target".into())?;
        }
        let want = (p0 + k as f64 * cfg.ada_step).min(1.0);
        ensure((s.p - want).abs() < 1e-12, || format!("k={k}: p {} vs {want}", s.p))?;
        checked += 1;
    }
    Ok(format!("{updates} adversarial updates stayed in [0,1]; {checked} runs rose by exactly k*step"))
}

fn synthetic_manifest(rng: &mut ChaCha8Rng, counts: &[usize], test_per_class: usize) -> DatasetManifest {
    let mut records = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n + test_per_class {
            let split = if i < n { Split::Train } else { Split::Test };
            records.push(Record::real(format!("/data/c{c}/{i}.png"), c as u32 + 1, split));
        }
    }
    use rand::seq::SliceRandom;
    records.shuffle(rng);
    let names = (0..counts.len()).map(|c| format!("class{c}")).collect();
    DatasetManifest::new(names, None, records).expect("valid manifest")
}

// 6: stratified subsetting counts and determinism.
fn stratified_subsetting() -> Check {
    let mut rng = seed::rng(606);
    let mut checked = 0;
    for _ in 0..300 {
        let classes = rng.gen_range(1..8);
        let fraction: f64 = [0.1, 0.25, 0.5, 0.75, 1.0, rng.gen_range(0.05..1.0)][rng.gen_range(0..6)];
        let min_n = (1.0 / fraction).ceil() as usize;
        let counts: Vec<usize> = (0..classes).map(|_| rng.gen_range(min_n..min_n + 60)).collect();
        let test = rng.gen_range(0..5);
        let m = synthetic_manifest(&mut rng, &counts, test);
        let s = rng.gen::<u64>();
        let sub = stratified_subset(&m, fraction, s).map_err(|e| e.to_string())?;
        let want: Vec<usize> = counts.iter().map(|&n| (fraction * n as f64 + 1e-9).floor() as usize).collect();
        ensure(sub.class_counts(Some(Split::Train)) == want, || {
            format!("fraction {fraction}: {:?} vs {want:?}", sub.class_counts(Some(Split::Train)))
        })?;
        ensure(sub.class_counts(Some(Split::Test)) == vec![test; classes], || "test records changed".into())?;
        let again = stratified_subset(&m, fraction, s).unwrap();
        ensure(again == sub, || "same seed gave a different subset".into())?;
        checked += 1;
    }
    let m = synthetic_manifest(&mut rng, &[3, 20], 0);
    ensure(
        matches!(stratified_subset(&m, 0.1, 1), Err(Error::EmptyClass(_))),
        || "a class rounded to zero records was accepted".into(),
    )?;
    Ok(format!("{checked} randomized manifests matched floor(fraction*n_c) and were deterministic"))
}

fn workspace_target() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
}

fn fresh_dir(name: &str) -> PathBuf {
    let d = workspace_target().join(name);
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn petaug(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_petaug"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "petaug {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).expect("below root").to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("report exists")).expect("valid json")
}

// 7: end-to-end toy pipeline.
fn toy_pipeline() -> Check {
    let one_shot = fresh_dir("acceptance-run-all");
    let staged = fresh_dir("acceptance-staged");
    let start = Instant::now();
    petaug(&["--toy", "--out", one_shot.to_str().unwrap(), "run-all"])?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(15 * 60), || format!("run-all took {elapsed:?}"))?;

    let lm = read_json(&one_shot.join("landmarks/report.json"));
    let val_rmse = lm["val_rmse_px"].as_f64().ok_or("no val_rmse_px")?;
    let baseline = lm["baseline_rmse_px"].as_f64().ok_or("no baseline_rmse_px")?;
    ensure(val_rmse < 5.0, || format!("landmark val RMSE {val_rmse:.3} px"))?;

    let mut fid_notes = Vec::new();
    let mut min_acc = f64::INFINITY;
    for variant in ["original", "augmented", "cropped-augmented"] {
        for fraction in ["0.1", "0.5", "1.0"] {
            let cell = one_shot.join("cells").join(format!("{variant}_{fraction}"));
            let acc = read_json(&cell.join("evaluate/report.json"))["accuracy"]["accuracy"]
                .as_f64()
                .ok_or("no accuracy")?;
            ensure(acc > 0.95, || format!("{variant}:{fraction} accuracy {acc}"))?;
            min_acc = min_acc.min(acc);
            if variant == "original" {
                continue;
            }
            let log = std::fs::read_to_string(cell.join("gan/fid_log.txt")).map_err(|e| e.to_string())?;
            let pts: Vec<(u64, f64)> = log
                .lines()
                .filter(|l| !l.starts_with('#'))
                .filter_map(|l| l.split_once('\t'))
                .map(|(k, v)| (k.parse().unwrap(), v.parse().unwrap()))
                .collect();
            let (first, last) = (pts[0], pts[pts.len() - 1]);
            ensure(first.0 == 0 && last.1 < first.1, || {
                format!("{variant}:{fraction} FID kimg0 {:.3} -> kimg{} {:.3}", first.1, last.0, last.1)
            })?;
            fid_notes.push(format!("{:.1}->{:.1}", first.1, last.1));
        }
    }

    let out = staged.to_str().unwrap();
    for verb in ["prepare", "train-landmarks", "crop", "train-gan", "generate", "train-classifier", "evaluate", "plot"] {
        petaug(&["--toy", "--out", out, verb])?;
    }
    let (a, b) = (tree(&one_shot), tree(&staged));
    ensure(a.keys().eq(b.keys()), || "staged and run-all trees list different files".into())?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), || format!("{} files differ, e.g. {}", differing.len(), differing[0]))?;
    Ok(format!(
        "run-all {elapsed:.0?}; landmark RMSE {val_rmse:.2} px (centroid baseline {baseline:.2}); \
         FID kimg0->final [{}]; min accuracy {min_acc:.3}; staged == run-all over {} files",
        fid_notes.join(", "),
        a.len()
    ))
}

struct Constant;

impl ImageClassifier for Constant {
    fn predict(&self, _: &image::RgbImage) -> u32 {
        1
    }
    fn descriptor(&self) -> String {
        "constant".into()
    }
}

// 8: synthetic records never reach evaluation.
fn contamination_guard() -> Check {
    let real = Record::real("/data/a.png", 1, Split::Test);
    let synthetic = Record {
        provenance: Provenance::Synthetic,
        ..Record::real("/data/syn.png", 1, Split::Train)
    };
    let test = DatasetManifest {
        class_names: vec!["a".into()],
        resolution: None,
        records: vec![real.clone(), synthetic.clone()],
    };
    match evaluate(&Constant, &test) {
        Err(Error::Contamination { image_ref, .. }) => ensure(image_ref.ends_with("syn.png"), || image_ref.clone())?,
        other => return Err(format!("evaluation accepted a synthetic record: {other:?}")),
    }
    let leaked = Record {
        split: Split::Test,
        ..synthetic.clone()
    };
    ensure(
        matches!(
            DatasetManifest::new(vec!["a".into()], None, vec![real.clone(), leaked.clone()]),
            Err(Error::Contamination { .. })
        ),
        || "manifest accepted a synthetic test record".into(),
    )?;
    let base = DatasetManifest::new(vec!["a".into()], None, vec![real]).unwrap();
    let bad = DatasetManifest {
        records: vec![leaked],
        ..base.clone()
    };
    ensure(
        matches!(merge(&base, &bad, None), Err(Error::Contamination { .. })),
        || "merge accepted a synthetic test record".into(),
    )?;
    Ok("evaluate, manifest validation and merge all reject synthetic evaluation records with Contamination".into())
}

// 9: resumed GAN training equals an uninterrupted run.
fn gan_resume() -> Check {
    let dir = fresh_dir("acceptance-resume");
    let data = generate_toy_corpus(
        &ToyConfig {
            per_class: 24,
            size: 16,
            ..Default::default()
        },
        &dir.join("corpus"),
    )
    .map_err(|e| e.to_string())?;
    let cfg = |kimg| GanConfig {
        resolution: 16,
        latent_dim: 16,
        channel_base: 128,
        channel_max: 8,
        batch_size: 8,
        total_kimg: kimg,
        snapshot_interval_kimg: 1,
        ada_interval_images: 32,
        fid_max_samples: 64,
        seed: 9,
        ..GanConfig::desk(2)
    };
    let extractor = RandomProjectionExtractor::new(4, 8, 0);
    let opts = |sub: &str, resume| TrainOptions {
        out_dir: Some(dir.join(sub)),
        resume,
        keep_snapshots: false,
    };
    let run = |c: &GanConfig, o: &TrainOptions| train_gan(c, &data, &extractor, o).map_err(|e| e.to_string());
    run(&cfg(1), &opts("staged", None))?;
    let k = load_checkpoint(&dir.join("staged/latest.ckpt")).map_err(|e| e.to_string())?;
    let resumed = run(&cfg(2), &opts("staged", Some(k)))?;
    let straight = run(&cfg(2), &opts("straight", None))?;
    let (a, b) = (resumed.last().ok_or("no snapshot")?, straight.last().ok_or("no snapshot")?);
    ensure(a.kimg == 2 && b.kimg == 2, || "runs did not reach kimg 2".into())?;
    ensure(a.weight_hash() == b.weight_hash(), || "weight hashes differ".into())?;
    ensure(a.fid_log == b.fid_log, || "FID logs differ".into())?;
    let on_disk = load_checkpoint(&dir.join("staged/latest.ckpt")).map_err(|e| e.to_string())?;
    ensure(on_disk.weight_hash() == b.weight_hash(), || "saved checkpoint differs".into())?;
    Ok(format!("kimg 1 + resume to 2 == straight to 2, weight hash {}", &b.weight_hash()[..16]))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let checks: [(u32, &str, fn() -> Check); 9] = [
        (1, "FID oracle suite", fid_oracles),
        (2, "sqrtm_psd reconstruction", sqrtm_reconstruction),
        (3, "RMSE brute-force oracle", rmse_oracle),
        (4, "crop geometry properties", crop_properties),
        (5, "ADA controller bounds and response", ada_controller),
        (6, "stratified subsetting", stratified_subsetting),
        (7, "end-to-end toy pipeline", toy_pipeline),
        (8, "contamination guard", contamination_guard),
        (9, "GAN resume determinism", gan_resume),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
