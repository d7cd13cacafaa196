use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Record, Split};
use crate::error::{Error, Result};

/// Supported on-disk layouts.
///
/// * `ClassPerFolder`: `root/<class name>/<image>`; every record lands in the
///   train split.
/// * `AnnotationFile`: Oxford-IIIT Pet style, `root/images/<name>.jpg` with
///   `root/annotations/{trainval,test}.txt` listing `<name> <id> <species> <breed>`.
///   The class name is the image name without its trailing `_<number>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    ClassPerFolder,
    AnnotationFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub skipped: Vec<SkippedFile>,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodes the whole file so truncated images are caught here, not mid-training.
fn probe(path: &Path) -> std::result::Result<(u32, u32), String> {
    image::open(path).map(|i| (i.width(), i.height())).map_err(|e| e.to_string())
}

pub fn ingest_directory(root: &Path, layout: Layout) -> Result<(DatasetManifest, IngestReport)> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    match layout {
        Layout::ClassPerFolder => ingest_class_folders(root),
        Layout::AnnotationFile => ingest_annotation_file(root),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn ingest_class_folders(root: &Path) -> Result<(DatasetManifest, IngestReport)> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::EmptyInput(format!("{} contains no class folders", root.display())));
    }
    let mut names: Vec<String> = class_dirs
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    names.sort();

    let mut report = IngestReport::default();
    let mut records = Vec::new();
    let mut dims = BTreeSet::new();
    for (idx, dir) in class_dirs.iter().enumerate() {
        let mut kept = 0;
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            match probe(&file) {
                Ok(d) => {
                    dims.insert(d);
                    records.push(Record::real(file, idx as u32 + 1, Split::Train));
                    kept += 1;
                }
                Err(reason) => report.skipped.push(SkippedFile { path: file, reason }),
            }
        }
        if kept == 0 {
            return Err(Error::EmptyInput(format!("class folder {} has no decodable images", dir.display())));
        }
    }
    for s in &report.skipped {
        log::warn!("skipping undecodable image {}: {}", s.path.display(), s.reason);
    }
    let resolution = (dims.len() == 1).then(|| *dims.iter().next().expect("one element"));
    Ok((DatasetManifest::new(names, resolution, records)?, report))
}

fn breed_name(image_name: &str) -> &str {
    match image_name.rsplit_once('_') {
        Some((breed, n)) if n.chars().all(|c| c.is_ascii_digit()) => breed,
        _ => image_name,
    }
}

fn ingest_annotation_file(root: &Path) -> Result<(DatasetManifest, IngestReport)> {
    let ann = root.join("annotations");
    let mut listed: Vec<(String, Split)> = Vec::new();
    for (file, split) in [("trainval.txt", Split::Train), ("test.txt", Split::Test)] {
        let path = ann.join(file);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let name = line.split_whitespace().next().expect("non-empty line");
            listed.push((name.to_string(), split));
        }
    }
    if listed.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no images", ann.display())));
    }
    let mut seen = HashSet::new();
    for (name, _) in &listed {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateImage(name.clone()));
        }
    }
    let class_ids: BTreeMap<&str, u32> = listed
        .iter()
        .map(|(n, _)| breed_name(n))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, n)| (n, i as u32 + 1))
        .collect();

    let mut report = IngestReport::default();
    let mut records = Vec::new();
    let mut dims = BTreeSet::new();
    for (name, split) in &listed {
        let path = root.join("images").join(format!("{name}.jpg"));
        match probe(&path) {
            Ok(d) => {
                dims.insert(d);
                records.push(Record::real(path, class_ids[breed_name(name)], *split));
            }
            Err(reason) => report.skipped.push(SkippedFile { path, reason }),
        }
    }
    for s in &report.skipped {
        log::warn!("skipping undecodable image {}: {}", s.path.display(), s.reason);
    }
    let names = class_ids.keys().map(|s| s.to_string()).collect();
    let resolution = (dims.len() == 1).then(|| *dims.iter().next().expect("one element"));
    Ok((DatasetManifest::new(names, resolution, records)?, report))
}
