//! Manifest-based dataset representation.
//!
//! A manifest file is line-delimited JSON: the first line is a header carrying
//! the class map and resolution, every following line is one [`Record`].
//! Relative image references are resolved against the manifest file's
//! directory on read and re-expressed relative to it on write.

mod ingest;
mod ops;

pub use ingest::{ingest_directory, IngestReport, Layout, SkippedFile};
pub use ops::{assign_test_split, merge, resize_images, stratified_subset, ResizeMode, ResizeOptions};

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crop::CropBox;
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;

pub const MANIFEST_FORMAT: &str = "petaug-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image_ref: PathBuf,
    /// 1-based class id.
    pub class_id: u32,
    pub split: Split,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<LandmarkSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_crop: Option<CropBox>,
}

impl Record {
    pub fn real(image_ref: impl Into<PathBuf>, class_id: u32, split: Split) -> Self {
        Self {
            image_ref: image_ref.into(),
            class_id,
            split,
            provenance: Provenance::Real,
            landmarks: None,
            source_crop: None,
        }
    }

    pub fn ref_str(&self) -> String {
        self.image_ref.display().to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    /// Common `(width, height)` of all images, when uniform.
    pub resolution: Option<(u32, u32)>,
    pub records: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    class_count: u32,
    class_names: Vec<String>,
    #[serde(default)]
    resolution: Option<(u32, u32)>,
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, resolution: Option<(u32, u32)>, records: Vec<Record>) -> Result<Self> {
        let m = Self {
            class_names,
            resolution,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn empty_like(&self) -> Self {
        Self {
            class_names: self.class_names.clone(),
            resolution: self.resolution,
            records: Vec::new(),
        }
    }

    pub fn class_count(&self) -> u32 {
        self.class_names.len() as u32
    }

    pub fn class_name(&self, class_id: u32) -> &str {
        &self.class_names[class_id as usize - 1]
    }

    /// Checks class ranges, reference uniqueness, and that synthetic
    /// records stay in the training split.
    pub fn validate(&self) -> Result<()> {
        let c = self.class_count();
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.class_id == 0 || r.class_id > c {
                return Err(Error::ClassOutOfRange {
                    image_ref: r.ref_str(),
                    class_id: r.class_id,
                    class_count: c,
                });
            }
            if !seen.insert(&r.image_ref) {
                return Err(Error::DuplicateImage(r.ref_str()));
            }
            if r.provenance == Provenance::Synthetic && r.split != Split::Train {
                return Err(Error::Contamination {
                    image_ref: r.ref_str(),
                    split: r.split.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Records per class (index 0 is class 1), optionally restricted to a split.
    pub fn class_counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in &self.records {
            if split.map_or(true, |s| r.split == s) {
                counts[r.class_id as usize - 1] += 1;
            }
        }
        counts
    }

    /// Copy restricted to the given split.
    pub fn split_only(&self, split: Split) -> Self {
        Self {
            class_names: self.class_names.clone(),
            resolution: self.resolution,
            records: self.records_in(split).cloned().collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = abs_parent(path)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            class_count: self.class_count(),
            class_names: self.class_names.clone(),
            resolution: self.resolution,
        };
        let io = |e| Error::io(path, e);
        serde_json::to_writer(&mut w, &header).map_err(|e| Error::parse("manifest", e))?;
        w.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            let mut r = r.clone();
            r.image_ref = relative_to(&r.image_ref, &dir)?;
            serde_json::to_writer(&mut w, &r).map_err(|e| Error::parse("manifest", e))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let dir = abs_parent(path)?;
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::parse("manifest", format!("{}: empty file", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::parse("manifest header", e))?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::parse(
                "manifest header",
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        if header.class_count as usize != header.class_names.len() {
            return Err(Error::parse("manifest header", "class_count disagrees with class_names"));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut r: Record =
                serde_json::from_str(&line).map_err(|e| Error::parse("manifest record", format!("line {}: {e}", i + 2)))?;
            if r.image_ref.is_relative() {
                r.image_ref = normalize(&dir.join(&r.image_ref));
            }
            records.push(r);
        }
        Self::new(header.class_names, header.resolution, records)
    }
}

fn abs_parent(path: &Path) -> Result<PathBuf> {
    let abs = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
    Ok(abs.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn relative_to(target: &Path, dir: &Path) -> Result<PathBuf> {
    let abs = std::path::absolute(target).map_err(|e| Error::io(target, e))?;
    Ok(pathdiff::diff_paths(normalize(&abs), normalize(dir)).unwrap_or(abs))
}

/// Lexical normalization: drops `.` and resolves `..` against earlier components.
pub(crate) fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}
