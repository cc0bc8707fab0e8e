//! On-disk capture cache: `index.json` lists the records, and each layer's
//! targets live in their own `layer_<l>.bin`, so one encoder's job reads
//! only its own file.
//!
//! A layer file is the magic `DICL`, then `u32` layer, `u32` d_model,
//! `u64` record count, then each record's valid rows as little-endian
//! floats in index order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffinject_core::injection::AlignedTarget;
use diffinject_core::train::{CaptureCache, CaptureRecord};
use diffinject_core::Real;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LAYER_MAGIC: &[u8; 4] = b"DICL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub id: u64,
    pub k_len: usize,
    pub tokens: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub dtype: String,
    pub d_model: usize,
    pub layers: Vec<usize>,
    pub decoder_hash: String,
    pub skipped: usize,
    pub warnings: Vec<String>,
    pub records: Vec<IndexRecord>,
}

pub fn layer_file(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer_{layer}.bin"))
}

pub fn index_file(dir: &Path) -> PathBuf {
    dir.join("index.json")
}

pub fn save_cache<T: Real>(dir: &Path, cache: &CaptureCache<T>, decoder_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let index = CacheIndex {
        dtype: T::NAME.into(),
        d_model: cache.d_model,
        layers: cache.layers.clone(),
        decoder_hash: decoder_hash.into(),
        skipped: cache.skipped,
        warnings: cache.warnings.clone(),
        records: cache
            .records
            .iter()
            .map(|r| IndexRecord { id: r.id, k_len: r.k_len(), tokens: r.tokens.clone() })
            .collect(),
    };
    let path = index_file(dir);
    let json = serde_json::to_vec_pretty(&index).expect("index serializes");
    std::fs::write(&path, json).map_err(Error::io(&path))?;
    for &l in &cache.layers {
        let mut out = Vec::new();
        out.extend_from_slice(LAYER_MAGIC);
        out.extend_from_slice(&(l as u32).to_le_bytes());
        out.extend_from_slice(&(cache.d_model as u32).to_le_bytes());
        out.extend_from_slice(&(cache.records.len() as u64).to_le_bytes());
        for r in &cache.records {
            for v in r.target.layer(l)? {
                v.put_le(&mut out);
            }
        }
        let path = layer_file(dir, l);
        std::fs::write(&path, out).map_err(Error::io(&path))?;
    }
    Ok(())
}

pub fn load_index(dir: &Path) -> Result<CacheIndex> {
    let path = index_file(dir);
    let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads the listed layers (all when `None`); other layer files are not
/// opened.
pub fn load_cache<T: Real>(dir: &Path, layers: Option<&[usize]>) -> Result<(CaptureCache<T>, CacheIndex)> {
    let index = load_index(dir)?;
    if index.dtype != T::NAME {
        return Err(Error::format(index_file(dir), format!("cache holds {}, requested {}", index.dtype, T::NAME)));
    }
    let wanted: Vec<usize> = layers.map(<[usize]>::to_vec).unwrap_or_else(|| index.layers.clone());
    if let Some(&l) = wanted.iter().find(|l| !index.layers.contains(l)) {
        return Err(diffinject_core::Error::MissingLayer(l).into());
    }
    let d = index.d_model;
    let mut per_layer: BTreeMap<usize, Vec<Vec<T>>> = BTreeMap::new();
    for &l in &wanted {
        let path = layer_file(dir, l);
        let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
        let bad = |m: &str| Error::format(&path, m.to_string());
        if bytes.len() < 20 || &bytes[..4] != LAYER_MAGIC {
            return Err(bad("not a cache layer file"));
        }
        let stored_layer = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let stored_d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if stored_layer != l || stored_d != d || count != index.records.len() {
            return Err(bad("layer file disagrees with the index"));
        }
        let mut pos = 20;
        let mut rows = Vec::with_capacity(count);
        for r in &index.records {
            let n = (r.tokens.len() - r.k_len - 1) * d * T::BYTES;
            let chunk = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated layer file"))?;
            rows.push(chunk.chunks_exact(T::BYTES).map(T::get_le).collect());
            pos += n;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes in layer file"));
        }
        per_layer.insert(l, rows);
    }
    let records = index
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| CaptureRecord {
            id: r.id,
            tokens: r.tokens.clone(),
            target: AlignedTarget {
                k_len: r.k_len,
                rows: r.tokens.len(),
                d_model: d,
                layers: per_layer.iter_mut().map(|(l, v)| (*l, std::mem::take(&mut v[i]))).collect(),
            },
        })
        .collect();
    let cache = CaptureCache { d_model: d, layers: wanted, records, skipped: index.skipped, warnings: index.warnings.clone() };
    Ok((cache, index))
}
