use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::block::{init_matrix, Block, BlockShape};
use super::config::{DecoderConfig, EncoderConfig};
use super::decoder::DecoderModel;
use crate::counters::Scope;
use crate::rng;
use crate::{Error, Graph, Real, Result, Tensor, Var};

/// One knowledge encoder: frozen decoder embeddings, a down-projection into
/// the encoder width, a stack of blocks, a final norm and an up-projection
/// back into the decoder's hidden space.
#[derive(Clone, Debug)]
pub struct Encoder<T: Real> {
    pub layer: usize,
    pub down: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub norm: Tensor<T>,
    pub up: Tensor<T>,
    pub(crate) shape: EncoderShape,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct EncoderShape {
    pub n_heads: usize,
    pub rope_base: f64,
    pub causal: bool,
}

impl<T: Real> Encoder<T> {
    /// Seeded by `(seed, layer)` only, so an encoder comes out the same
    /// whichever other layers share its bank. The up-projection starts at
    /// zero, making a fresh encoder a no-op.
    pub fn init(cfg: &EncoderConfig, dec: &DecoderConfig, layer: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "encoder", layer as u64);
        let down = init_matrix(&mut r, dec.d_model, cfg.d_enc);
        let blocks = (0..cfg.n_blocks).map(|_| Block::init(&mut r, cfg.d_enc, cfg.mlp_width())).collect();
        let mut enc = Encoder {
            layer,
            down,
            blocks,
            norm: Tensor::full(&[cfg.d_enc], T::one()),
            up: Tensor::zeros(&[cfg.d_enc, dec.d_model]),
            shape: EncoderShape { n_heads: cfg.n_heads, rope_base: dec.rope_base, causal: cfg.causal },
        };
        for (_, p) in enc.named_params_mut() {
            p.set_requires_grad(true);
        }
        enc
    }

    /// Encodes `tokens` (knowledge run) into a `[tokens, d_model]` delta.
    pub fn forward(&self, g: &Graph<T>, decoder: &DecoderModel<T>, tokens: &[u32]) -> Result<Var<T>> {
        let _s = g.enter(Scope::Encoder(self.layer));
        let shape = BlockShape { n_heads: self.shape.n_heads, rope_base: self.shape.rope_base, causal: self.shape.causal };
        let x = g.embedding(&g.param(&decoder.embed), tokens)?;
        let mut h = g.matmul(&x, &g.param(&self.down))?;
        for b in &self.blocks {
            h = b.forward(g, &h, shape)?;
        }
        let h = g.rms_norm(&h, &g.param(&self.norm))?;
        g.matmul(&h, &g.param(&self.up))
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let p = format!("enc.{}", self.layer);
        let mut out = Vec::new();
        out.push((format!("{p}.down"), &self.down));
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("{p}.blocks.{i}")));
        }
        out.push((format!("{p}.norm"), &self.norm));
        out.push((format!("{p}.up"), &self.up));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let p = format!("enc.{}", self.layer);
        let mut out = Vec::new();
        out.push((format!("{p}.down"), &mut self.down));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut(&format!("{p}.blocks.{i}")));
        }
        out.push((format!("{p}.norm"), &mut self.norm));
        out.push((format!("{p}.up"), &mut self.up));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// The trainable encoders, one per decoder layer in the configured subset.
#[derive(Clone, Debug)]
pub struct EncoderBank<T: Real> {
    pub config: EncoderConfig,
    encoders: BTreeMap<usize, Encoder<T>>,
}

impl<T: Real> EncoderBank<T> {
    pub fn init(cfg: EncoderConfig, dec: &DecoderConfig, seed: u64) -> Result<Self> {
        cfg.validate(dec)?;
        let encoders = cfg.layer_subset.iter().map(|&l| (l, Encoder::init(&cfg, dec, l, seed))).collect();
        Ok(EncoderBank { config: cfg, encoders })
    }

    pub fn from_encoders(config: EncoderConfig, encoders: Vec<Encoder<T>>) -> Result<Self> {
        let encoders: BTreeMap<usize, Encoder<T>> = encoders.into_iter().map(|e| (e.layer, e)).collect();
        if encoders.keys().copied().ne(config.layer_subset.iter().copied()) {
            return Err(Error::SubsetMismatch {
                requested: config.layer_subset.iter().copied().collect(),
                available: encoders.keys().copied().collect(),
            });
        }
        Ok(EncoderBank { config, encoders })
    }

    pub fn layers(&self) -> Vec<usize> {
        self.encoders.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    pub fn get(&self, layer: usize) -> Result<&Encoder<T>> {
        self.encoders.get(&layer).ok_or(Error::NoEncoder(layer))
    }

    pub fn get_mut(&mut self, layer: usize) -> Result<&mut Encoder<T>> {
        self.encoders.get_mut(&layer).ok_or(Error::NoEncoder(layer))
    }

    pub fn encoders(&self) -> impl Iterator<Item = &Encoder<T>> {
        self.encoders.values()
    }

    pub fn encoders_mut(&mut self) -> impl Iterator<Item = &mut Encoder<T>> {
        self.encoders.values_mut()
    }

    /// Moves the encoders out, e.g. to train them on separate workers.
    pub fn into_encoders(self) -> (EncoderConfig, Vec<Encoder<T>>) {
        (self.config, self.encoders.into_values().collect())
    }

    /// `E_l(K, x)` over the rendered knowledge run.
    pub fn forward(&self, g: &Graph<T>, decoder: &DecoderModel<T>, layer: usize, tokens: &[u32]) -> Result<Var<T>> {
        self.get(layer)?.forward(g, decoder, tokens)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.encoders.values().flat_map(|e| e.named_params()).collect()
    }

    /// Parameters of the encoders in `layers` only.
    pub fn named_params_mut_for(&mut self, layers: &[usize]) -> Result<Vec<(String, &mut Tensor<T>)>> {
        for l in layers {
            self.get(*l)?;
        }
        Ok(self
            .encoders
            .iter_mut()
            .filter(|(l, _)| layers.contains(l))
            .flat_map(|(_, e)| e.named_params_mut())
            .collect())
    }

    /// Checks `requested` against the layers this bank has encoders for.
    pub fn check_subset(&self, requested: &[usize]) -> Result<()> {
        if requested.iter().all(|l| self.encoders.contains_key(l)) {
            Ok(())
        } else {
            Err(Error::SubsetMismatch { requested: requested.to_vec(), available: self.layers() })
        }
    }
}
