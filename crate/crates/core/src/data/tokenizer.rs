//! Byte-level tokenizer with role markers.
//!
//! Bytes map to ids `0..256`; the special tokens follow in a fixed order.

use alloc::string::String;
use alloc::vec::Vec;

pub const BOS: u32 = 256;
pub const PAD: u32 = 257;
pub const USR: u32 = 258;
pub const SYS: u32 = 259;
pub const SEP: u32 = 260;
pub const VOCAB_SIZE: usize = 261;

pub const SPECIALS: [(u32, &str); 5] = [(BOS, "[BOS]"), (PAD, "[PAD]"), (USR, "[USR]"), (SYS, "[SYS]"), (SEP, "[SEP]")];

pub fn tokenize(text: &str) -> Vec<u32> {
    tokenize_bytes(text.as_bytes())
}

pub fn tokenize_bytes(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|b| *b as u32).collect()
}

/// Bytes of the byte tokens; special tokens are dropped.
pub fn detokenize_bytes(ids: &[u32]) -> Vec<u8> {
    ids.iter().filter(|id| **id < 256).map(|id| *id as u8).collect()
}

pub fn detokenize(ids: &[u32]) -> String {
    String::from_utf8_lossy(&detokenize_bytes(ids)).into_owned()
}

/// Human-readable rendering with special tokens spelled out.
pub fn display(ids: &[u32]) -> String {
    let mut out = String::new();
    let mut bytes = Vec::new();
    for id in ids {
        if *id < 256 {
            bytes.push(*id as u8);
            continue;
        }
        out.push_str(&String::from_utf8_lossy(&bytes));
        bytes.clear();
        match SPECIALS.iter().find(|(t, _)| t == id) {
            Some((_, name)) => out.push_str(name),
            None => out.push_str("[?]"),
        }
    }
    out.push_str(&String::from_utf8_lossy(&bytes));
    out
}
