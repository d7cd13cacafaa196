//! Content-hash stage stamps.
//!
//! Every stage directory holds a `stage.json` naming the stage, the hash of
//! the configuration slice it depends on, the stamps of its direct inputs,
//! and the sha256 of every file it produced. Paths are relative to the run
//! root so a copied tree keeps validating.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hash_json;
use crate::error::{Error, Result};

pub const STAMP_FILE: &str = "stage.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    pub config_hash: String,
    /// Hash of the configuration slice this stage reads.
    pub key: String,
    /// Digest of each direct input stamp, by stage label.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of each produced file, by `/`-separated path relative to the root.
    pub outputs: BTreeMap<String, String>,
}

impl Stamp {
    pub fn digest(&self) -> String {
        hash_json(self)
    }

    pub fn read(stage_dir: &Path) -> Result<Option<Self>> {
        let path = stage_dir.join(STAMP_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| Error::parse("stage stamp", e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn write(&self, stage_dir: &Path) -> Result<()> {
        let path = stage_dir.join(STAMP_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse("stage stamp", e))? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    /// First recorded output that is missing or no longer matches its hash.
    pub fn first_modified_output(&self, root: &Path) -> Result<Option<String>> {
        for (rel, want) in &self.outputs {
            let path = root.join(rel);
            if !path.is_file() || &file_sha256(&path)? != want {
                return Ok(Some(rel.clone()));
            }
        }
        Ok(None)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file below `stage_dir` except the stamp itself.
pub fn hash_outputs(root: &Path, stage_dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    if stage_dir.is_dir() {
        collect(stage_dir, &mut files)?;
    }
    let stamp = stage_dir.join(STAMP_FILE);
    let mut out = BTreeMap::new();
    for f in files.into_iter().filter(|f| *f != stamp) {
        let rel = f.strip_prefix(root).unwrap_or(&f);
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        out.insert(key, file_sha256(&f)?);
    }
    Ok(out)
}
