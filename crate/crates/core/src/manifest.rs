//! Run manifests: the resolved command line, configuration hash, seeds and
//! output digests of one invocation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "incognipipe-manifest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub command: String,
    /// Arguments that reproduce this run, including the effective seed.
    pub args: Vec<String>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Output file (relative to the output directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let v = serde_json::to_value(config)?;
    Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Digest over every file below `dir`, visited in sorted path order.
pub fn dir_digest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let p = dir.join(&rel);
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("walked below root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

impl Manifest {
    pub fn new<T: Serialize>(
        command: &str,
        args: Vec<String>,
        config: &T,
        seeds: BTreeMap<String, u64>,
    ) -> Result<Self> {
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            seeds,
            outputs: BTreeMap::new(),
            extra: serde_json::Value::Null,
        })
    }

    /// Records the digest of `dir/rel`.
    pub fn add_output(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let p = dir.join(rel);
        let d = if p.is_dir() {
            dir_digest(&p)?
        } else {
            file_digest(&p)?
        };
        self.outputs.insert(rel.into(), d);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Data(format!(
                "{} is not a run manifest",
                path.display()
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order_and_detects_changes() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        let c: serde_json::Value = serde_json::from_str(r#"{"a":[1,2],"b":2}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_roundtrip_and_digests() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("d/e")).unwrap();
        fs::write(dir.path().join("d/e/x.txt"), "x").unwrap();
        fs::write(dir.path().join("m.json"), "{}").unwrap();
        let mut m = Manifest::new(
            "eval",
            vec!["--seed".into(), "3".into()],
            &3u32,
            [("seed".into(), 3)].into(),
        )
        .unwrap();
        m.add_output(dir.path(), "d").unwrap();
        m.add_output(dir.path(), "m.json").unwrap();
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        assert_eq!(Manifest::load(&p).unwrap(), m);
        fs::write(dir.path().join("d/e/x.txt"), "y").unwrap();
        assert_ne!(dir_digest(&dir.path().join("d")).unwrap(), m.outputs["d"]);
        assert!(Manifest::load(&dir.path().join("m.json")).is_err());
    }
}
