use petaug_core::toy::{generate_toy_corpus, ToyConfig};
use petaug_core::{compute_crop, DatasetManifest, Split};

fn small() -> ToyConfig {
    ToyConfig {
        per_class: 8,
        size: 24,
        ..Default::default()
    }
}

#[test]
fn corpus_is_deterministic_and_manifest_roundtrips() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_toy_corpus(&small(), a.path()).unwrap();
    let mb = generate_toy_corpus(&small(), b.path()).unwrap();
    assert_eq!(ma.records.len(), 16);
    assert_eq!(ma.class_counts(Some(Split::Test)), vec![2, 2]);
    for (ra, rb) in ma.records.iter().zip(&mb.records) {
        let pa = std::fs::read(&ra.image_ref).unwrap();
        let pb = std::fs::read(&rb.image_ref).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ra.landmarks, rb.landmarks);
    }

    let path = a.path().join("manifest.jsonl");
    ma.write(&path).unwrap();
    let back = DatasetManifest::read(&path).unwrap();
    assert_eq!(back, ma);
}

#[test]
fn crops_of_toy_faces_contain_every_landmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let m = generate_toy_corpus(&cfg, dir.path()).unwrap();
    for r in &m.records {
        let l = r.landmarks.as_ref().expect("toy records are annotated");
        let b = compute_crop(l, (cfg.size, cfg.size), 0.6, true).unwrap();
        assert_eq!(b.x1 - b.x0, b.y1 - b.y0);
        assert!(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= cfg.size as i64 && b.y1 <= cfg.size as i64);
        for [x, y] in l.points {
            assert!(x >= b.x0 as f64 && x <= b.x1 as f64 && y >= b.y0 as f64 && y <= b.y1 as f64);
        }
    }
}
