//! Versioned checkpoint envelope: one text header line, then a JSON body.
//!
//! ```text
//! PETAUG-CHECKPOINT v1 kind=gan
//! {...}
//! ```

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &str = "PETAUG-CHECKPOINT";
pub const VERSION: u32 = 1;

pub fn write<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_vec(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tmp = path.with_extension("partial");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    writeln!(f, "{MAGIC} v{VERSION} kind={kind}").map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&json).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing header", path.display())))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Checkpoint(format!("{}: bad version field", path.display())))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let found = parts.next().and_then(|k| k.strip_prefix("kind=")).unwrap_or("");
    if found != kind {
        return Err(Error::Checkpoint(format!(
            "{}: expected a '{kind}' checkpoint, found '{found}'",
            path.display()
        )));
    }
    serde_json::from_slice(&bytes[nl + 1..]).map_err(|e| Error::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_roundtrip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let body = vec![vec![0.1f32, -3.5e-7, f32::MAX], vec![]];
        write(&p, "test", &body).unwrap();
        let back: Vec<Vec<f32>> = read(&p, "test").unwrap();
        assert_eq!(back, body);
        assert!(matches!(read::<Vec<Vec<f32>>>(&p, "gan"), Err(Error::Checkpoint(_))));
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("PETAUG-CHECKPOINT v1 kind=test\n"));
    }

    #[test]
    fn f64_fields_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ckpt");
        let body = vec![0.9586329063186952f64, 1.0 / 3.0, 5e-324, -2.2250738585072014e-308];
        write(&p, "test", &body).unwrap();
        let back: Vec<f64> = read(&p, "test").unwrap();
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), body.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
