use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::tokenizer::VOCAB_SIZE;
use crate::{Error, Result};

/// Shape of the frozen decoder. Blocks are indexed `0..n_layers`; the
/// hidden state `o_l` is the residual output of block `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub rope_base: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            n_layers: 9,
            d_model: 64,
            n_heads: 4,
            d_mlp: 256,
            vocab_size: VOCAB_SIZE,
            max_context: 512,
            rope_base: 10000.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.d_mlp == 0 || self.vocab_size == 0 {
            return Err(Error::Config(format!("decoder dimensions must be positive: {:?}", self)));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if (self.d_model / self.n_heads) % 2 != 0 {
            return Err(Error::Config(format!("head width {} must be even for rotary", self.d_model / self.n_heads)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Layer indices `0..n_layers`.
    pub fn all_layers(&self) -> Vec<usize> {
        (0..self.n_layers).collect()
    }

    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        self.vocab_size * d + self.n_layers * block_param_count(d, self.d_mlp) + d
    }
}

/// Parameters of one pre-norm block: two norm weights, four attention
/// projections and a three-matrix SiLU-gated MLP.
pub fn block_param_count(d: usize, d_mlp: usize) -> usize {
    2 * d + 4 * d * d + 3 * d * d_mlp
}

/// Shape of each encoder and where encoders sit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub d_enc: usize,
    pub n_heads: usize,
    /// Hidden width of the encoder MLP; `4 · d_enc` when zero.
    pub d_mlp: usize,
    pub layer_subset: BTreeSet<usize>,
    /// Causal masking inside the encoder blocks.
    pub causal: bool,
}

pub const MEMIT_LAYERS: [usize; 6] = [3, 4, 5, 6, 7, 8];

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_blocks: 4,
            d_enc: 32,
            n_heads: 2,
            d_mlp: 0,
            layer_subset: MEMIT_LAYERS.into_iter().collect(),
            causal: true,
        }
    }
}

impl EncoderConfig {
    pub fn mlp_width(&self) -> usize {
        if self.d_mlp == 0 {
            4 * self.d_enc
        } else {
            self.d_mlp
        }
    }

    pub fn validate(&self, decoder: &DecoderConfig) -> Result<()> {
        if self.n_blocks == 0 || self.d_enc == 0 {
            return Err(Error::Config(format!("encoder dimensions must be positive: {:?}", self)));
        }
        if self.n_heads == 0 || self.d_enc % self.n_heads != 0 || (self.d_enc / self.n_heads) % 2 != 0 {
            return Err(Error::Config(format!(
                "d_enc {} cannot split into {} even-width heads",
                self.d_enc, self.n_heads
            )));
        }
        if let Some(bad) = self.layer_subset.iter().find(|l| **l >= decoder.n_layers) {
            return Err(Error::Config(format!(
                "encoder layer {} outside decoder layers 0..{}",
                bad, decoder.n_layers
            )));
        }
        Ok(())
    }

    /// Parameters of one encoder feeding a decoder of width `d_model`:
    /// down-projection, blocks, final norm and up-projection.
    pub fn param_count(&self, d_model: usize) -> usize {
        2 * d_model * self.d_enc + self.n_blocks * block_param_count(self.d_enc, self.mlp_width()) + self.d_enc
    }
}
