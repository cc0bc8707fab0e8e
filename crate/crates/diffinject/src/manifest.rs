//! Per-stage manifests and content hashes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Everything needed to rerun a stage: the resolved configuration, seed and
/// layers, stage arguments, and content hashes of inputs and outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub layers: Vec<usize>,
    pub config: serde_json::Value,
    pub args: BTreeMap<String, String>,
    /// Role → content hash.
    pub inputs: BTreeMap<String, String>,
    /// Hash over all input hashes.
    pub input_hash: String,
    /// Decoder hash before and after the stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_hash_before: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_hash_after: Option<String>,
    /// File name → content hash.
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 of a file, or of a directory's sorted file names and contents.
pub fn content_hash(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    hash_into(&mut h, path, path)?;
    Ok(hex::encode(h.finalize()))
}

fn hash_into(h: &mut Sha256, root: &Path, path: &Path) -> Result<()> {
    let meta = std::fs::metadata(path).map_err(Error::io(path))?;
    if meta.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(Error::io(path))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(Error::io(path))?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == MANIFEST_FILE) {
                continue;
            }
            hash_into(h, root, &e)?;
        }
    } else {
        let rel = path.strip_prefix(root).unwrap_or(path);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(path).map_err(Error::io(path))?);
    }
    Ok(())
}

impl Manifest {
    pub fn new(command: &str, seed: u64, layers: &[usize], config: &impl Serialize) -> Self {
        Manifest {
            command: command.into(),
            seed,
            layers: layers.to_vec(),
            config: serde_json::to_value(config).expect("config serializes"),
            ..Manifest::default()
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.into(), value.to_string());
        self
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<&mut Self> {
        self.inputs.insert(role.into(), content_hash(path)?);
        let mut h = Sha256::new();
        for (k, v) in &self.inputs {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
        }
        self.input_hash = hex::encode(h.finalize());
        Ok(self)
    }

    /// Hashes every file in `out` and writes the manifest next to them.
    pub fn finish(&mut self, out: &Path) -> Result<()> {
        self.finish_excluding(out, &[])
    }

    /// As [`Manifest::finish`], leaving the named files out.
    pub fn finish_excluding(&mut self, out: &Path, skip: &[&str]) -> Result<()> {
        self.outputs.clear();
        let mut entries: Vec<_> = std::fs::read_dir(out)
            .map_err(Error::io(out))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE && !skip.iter().any(|s| n == *s)))
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            self.outputs.insert(name, content_hash(&p)?);
        }
        let path = out.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json).map_err(Error::io(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_follows_contents_not_location() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [a.path(), b.path()] {
            std::fs::write(d.join("x.txt"), "1").unwrap();
            std::fs::create_dir(d.join("sub")).unwrap();
            std::fs::write(d.join("sub/y.txt"), "2").unwrap();
        }
        assert_eq!(content_hash(a.path()).unwrap(), content_hash(b.path()).unwrap());
        std::fs::write(b.path().join("sub/y.txt"), "3").unwrap();
        assert_ne!(content_hash(a.path()).unwrap(), content_hash(b.path()).unwrap());
    }

    #[test]
    fn manifest_lists_outputs() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("out.bin"), [1u8, 2]).unwrap();
        let mut m = Manifest::new("test", 3, &[1, 2], &serde_json::json!({"a": 1}));
        m.input("data", &d.path().join("out.bin")).unwrap();
        m.finish(d.path()).unwrap();
        let back = Manifest::load(d.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.outputs.keys().collect::<Vec<_>>(), vec!["out.bin"]);
        assert_eq!(back.input_hash.len(), 64);
    }
}
