//! Binary checkpoints for the decoder and the encoder bank.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! (configs, parameter manifest, decoder hash) and the raw little-endian
//! parameter payloads in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use diffinject_core::model::{DecoderConfig, DecoderModel, Encoder, EncoderBank, EncoderConfig};
use diffinject_core::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DIFFINJ\x01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Decoder,
    Bank,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: Kind,
    pub dtype: String,
    pub decoder: DecoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    /// For a decoder checkpoint the hash of its own parameters; for a bank
    /// the decoder it was trained against.
    pub decoder_hash: String,
    pub params: Vec<ParamEntry>,
    /// Free-form provenance (stage, steps, diverged layers).
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

fn encode<T: Real>(header: &Header, tensors: &[&Tensor<T>]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + tensors.iter().map(|t| t.numel() * T::BYTES).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t.data() {
            v.put_le(&mut out);
        }
    }
    out
}

fn manifest<T: Real>(named: &[(String, &Tensor<T>)]) -> Vec<ParamEntry> {
    let mut offset = 0u64;
    named
        .iter()
        .map(|(name, t)| {
            let e = ParamEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += (t.numel() * T::BYTES) as u64;
            e
        })
        .collect()
}

/// Splits a checkpoint into its header and payload section.
pub fn read_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(Header, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::format(path, format!("header: {e}")))?;
    Ok((header, &bytes[16 + len..]))
}

fn fill<T: Real>(header: &Header, payload: &[u8], named: Vec<(String, &mut Tensor<T>)>, path: &Path) -> Result<()> {
    if header.dtype != T::NAME {
        return Err(Error::format(path, format!("stored as {}, requested {}", header.dtype, T::NAME)));
    }
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>() * T::BYTES).sum();
    if payload.len() != expected {
        return Err(Error::format(path, format!("payload holds {} bytes, manifest needs {expected}", payload.len())));
    }
    if named.len() != header.params.len() {
        return Err(Error::format(path, format!("{} parameters stored, model has {}", header.params.len(), named.len())));
    }
    for ((name, t), entry) in named.into_iter().zip(&header.params) {
        if name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::format(
                path,
                format!("parameter `{}` {:?} does not match model `{name}` {:?}", entry.name, entry.shape, t.shape()),
            ));
        }
        let start = entry.offset as usize;
        let bytes = &payload[start..start + t.numel() * T::BYTES];
        for (v, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(T::BYTES)) {
            *v = T::get_le(chunk);
        }
    }
    Ok(())
}

pub fn encode_decoder<T: Real>(decoder: &DecoderModel<T>) -> Vec<u8> {
    let named = decoder.named_params();
    let header = Header {
        kind: Kind::Decoder,
        dtype: T::NAME.into(),
        decoder: decoder.config.clone(),
        encoder: None,
        decoder_hash: decoder.hash(),
        params: manifest(&named),
        meta: BTreeMap::new(),
    };
    encode(&header, &named.iter().map(|(_, t)| *t).collect::<Vec<_>>())
}

/// Decodes a decoder checkpoint and verifies the stored hash.
pub fn decode_decoder<T: Real>(bytes: &[u8], path: &Path) -> Result<DecoderModel<T>> {
    let (header, payload) = read_header(bytes, path)?;
    if header.kind != Kind::Decoder {
        return Err(Error::format(path, "expected a decoder checkpoint"));
    }
    let mut dec = DecoderModel::<T>::init(header.decoder.clone(), 0)?;
    fill(&header, payload, dec.named_params_mut(), path)?;
    let found = dec.hash();
    if found != header.decoder_hash {
        return Err(diffinject_core::Error::FrozenDecoderViolated { expected: header.decoder_hash, found }.into());
    }
    Ok(dec)
}

pub fn encode_bank<T: Real>(
    bank: &EncoderBank<T>,
    decoder: &DecoderModel<T>,
    meta: BTreeMap<String, serde_json::Value>,
) -> Vec<u8> {
    let named = bank.named_params();
    let header = Header {
        kind: Kind::Bank,
        dtype: T::NAME.into(),
        decoder: decoder.config.clone(),
        encoder: Some(bank.config.clone()),
        decoder_hash: decoder.hash(),
        params: manifest(&named),
        meta,
    };
    encode(&header, &named.iter().map(|(_, t)| *t).collect::<Vec<_>>())
}

/// Decodes a bank checkpoint. The bank must have been trained against
/// `decoder`.
pub fn decode_bank<T: Real>(bytes: &[u8], path: &Path, decoder: &DecoderModel<T>) -> Result<(EncoderBank<T>, Header)> {
    let (header, payload) = read_header(bytes, path)?;
    let cfg = match (&header.kind, &header.encoder) {
        (Kind::Bank, Some(cfg)) => cfg.clone(),
        _ => return Err(Error::format(path, "expected an encoder-bank checkpoint")),
    };
    let found = decoder.hash();
    if found != header.decoder_hash {
        return Err(diffinject_core::Error::FrozenDecoderViolated { expected: header.decoder_hash, found }.into());
    }
    let encoders: Vec<Encoder<T>> =
        cfg.layer_subset.iter().map(|&l| Encoder::init(&cfg, &decoder.config, l, 0)).collect();
    let mut bank = EncoderBank::from_encoders(cfg, encoders)?;
    let mut named = Vec::new();
    for e in bank.encoders_mut() {
        named.extend(e.named_params_mut());
    }
    fill(&header, payload, named, path)?;
    Ok((bank, header))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(Error::io(path))
}

pub fn save_decoder<T: Real>(path: &Path, decoder: &DecoderModel<T>) -> Result<()> {
    write_bytes(path, &encode_decoder(decoder))
}

pub fn load_decoder<T: Real>(path: &Path) -> Result<DecoderModel<T>> {
    decode_decoder(&read_bytes(path)?, path)
}

pub fn save_bank<T: Real>(
    path: &Path,
    bank: &EncoderBank<T>,
    decoder: &DecoderModel<T>,
    meta: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    write_bytes(path, &encode_bank(bank, decoder, meta))
}

pub fn load_bank<T: Real>(path: &Path, decoder: &DecoderModel<T>) -> Result<(EncoderBank<T>, Header)> {
    decode_bank(&read_bytes(path)?, path, decoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffinject_core::model::init_models;

    fn small() -> (DecoderModel<f32>, EncoderBank<f32>) {
        let dc = DecoderConfig { n_layers: 3, d_model: 16, n_heads: 2, d_mlp: 32, ..DecoderConfig::default() };
        let ec = EncoderConfig { n_blocks: 1, d_enc: 8, n_heads: 2, layer_subset: [1, 2].into_iter().collect(), ..EncoderConfig::default() };
        init_models(dc, ec, 5).unwrap()
    }

    #[test]
    fn decoder_round_trip_is_byte_identical() {
        let (dec, _) = small();
        let bytes = encode_decoder(&dec);
        let back: DecoderModel<f32> = decode_decoder(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.hash(), dec.hash());
        assert!(back.is_frozen());
        assert_eq!(encode_decoder(&back), bytes);
    }

    #[test]
    fn tampered_payload_is_caught_by_hash() {
        let (dec, _) = small();
        let mut bytes = encode_decoder(&dec);
        let n = bytes.len();
        bytes[n - 2] ^= 0x40;
        let err = decode_decoder::<f32>(&bytes, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Core(diffinject_core::Error::FrozenDecoderViolated { .. })), "{err}");
    }

    #[test]
    fn bank_round_trip_and_decoder_binding() {
        let (dec, mut bank) = small();
        for e in bank.encoders_mut() {
            for (i, v) in e.up.data_mut().iter_mut().enumerate() {
                *v = i as f32 * 0.01;
            }
        }
        let meta = BTreeMap::from([("stage".to_string(), serde_json::json!("test"))]);
        let bytes = encode_bank(&bank, &dec, meta.clone());
        let (back, header) = decode_bank(&bytes, Path::new("mem"), &dec).unwrap();
        assert_eq!(header.meta, meta);
        assert_eq!(back.layers(), vec![1, 2]);
        assert_eq!(encode_bank(&back, &dec, meta), bytes);

        let other = DecoderModel::<f32>::init(dec.config.clone(), 6).unwrap();
        assert!(decode_bank(&bytes, Path::new("mem"), &other).is_err());
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(decode_decoder::<f32>(b"nope", Path::new("x")), Err(Error::Format { .. })));
        let (dec, _) = small();
        let bytes = encode_decoder(&dec);
        assert!(matches!(decode_decoder::<f64>(&bytes, Path::new("x")), Err(Error::Format { .. })));
        assert!(decode_decoder::<f32>(&bytes[..bytes.len() - 4], Path::new("x")).is_err());
    }
}
