//! The frozen decoder and the bank of per-layer knowledge encoders.

mod block;
mod config;
mod decoder;
mod encoder;
mod layers;

pub use block::Block;
pub use config::{block_param_count, DecoderConfig, EncoderConfig, MEMIT_LAYERS};
pub use decoder::{DecoderModel, ForwardOutput};
pub use encoder::{Encoder, EncoderBank};
pub use layers::LayerSpec;

use crate::{Real, Result};

/// Builds a frozen decoder and a fresh encoder bank from one seed.
pub fn init_models<T: Real>(
    decoder: DecoderConfig,
    encoder: EncoderConfig,
    seed: u64,
) -> Result<(DecoderModel<T>, EncoderBank<T>)> {
    let dec = DecoderModel::init(decoder, seed)?;
    let bank = EncoderBank::init(encoder, &dec.config, seed)?;
    Ok((dec, bank))
}
