use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use super::block::{init_matrix, Block, BlockShape};
use super::config::DecoderConfig;
use crate::counters::Scope;
use crate::rng;
use crate::{Error, Graph, Real, Result, Tensor, Var};

/// The decoder-only language model whose weights stay frozen in every
/// encoder training mode. The output head is tied to the embedding table.
#[derive(Clone, Debug)]
pub struct DecoderModel<T: Real> {
    pub config: DecoderConfig,
    pub embed: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub final_norm: Tensor<T>,
}

pub struct ForwardOutput<T: Real> {
    /// `[tokens, vocab]`
    pub logits: Var<T>,
    /// Residual output of every block when captured, otherwise empty.
    pub hidden: Vec<Var<T>>,
}

impl<T: Real> DecoderModel<T> {
    /// Deterministic initialisation; the returned model is frozen.
    pub fn init(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut r = rng::stream(seed, "decoder.embed", 0);
        let embed = init_matrix(&mut r, config.vocab_size, d);
        let blocks = (0..config.n_layers)
            .map(|l| Block::init(&mut rng::stream(seed, "decoder.block", l as u64), d, config.d_mlp))
            .collect();
        let mut model = DecoderModel { embed, blocks, final_norm: Tensor::full(&[d], T::one()), config };
        model.set_trainable(false);
        Ok(model)
    }

    fn block_shape(&self) -> BlockShape {
        BlockShape { n_heads: self.config.n_heads, rope_base: self.config.rope_base, causal: true }
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.config.max_context {
            return Err(Error::Overlong { len: tokens.len(), max: self.config.max_context });
        }
        if let Some(&id) = tokens.iter().find(|t| **t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab: self.config.vocab_size });
        }
        if tokens.is_empty() {
            return Err(Error::Invalid("decoder forward on an empty sequence".into()));
        }
        Ok(())
    }

    pub fn forward(&self, g: &Graph<T>, tokens: &[u32], capture: bool) -> Result<ForwardOutput<T>> {
        self.forward_with(g, tokens, capture, |_, h| Ok(h))
    }

    /// Forward pass calling `hook(l, h)` on the residual output of every
    /// block `l`; whatever the hook returns is what block `l+1` consumes and
    /// what gets captured as `o_l`.
    pub fn forward_with(
        &self,
        g: &Graph<T>,
        tokens: &[u32],
        capture: bool,
        mut hook: impl FnMut(usize, Var<T>) -> Result<Var<T>>,
    ) -> Result<ForwardOutput<T>> {
        self.check_tokens(tokens)?;
        let mut hidden = Vec::new();
        let embed = {
            let _s = g.enter(Scope::Decoder(None));
            g.param(&self.embed)
        };
        let mut h = {
            let _s = g.enter(Scope::Decoder(None));
            g.embedding(&embed, tokens)?
        };
        for (l, block) in self.blocks.iter().enumerate() {
            h = {
                let _s = g.enter(Scope::Decoder(Some(l)));
                block.forward(g, &h, self.block_shape())?
            };
            h = hook(l, h)?;
            if capture {
                hidden.push(h.clone());
            }
        }
        let _s = g.enter(Scope::Decoder(None));
        let h = g.rms_norm(&h, &g.param(&self.final_norm))?;
        let logits = g.matmul_nt(&h, &embed)?;
        Ok(ForwardOutput { logits, hidden })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        out.push((String::from("embed"), &self.embed));
        for (l, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("blocks.{l}")));
        }
        out.push((String::from("final_norm"), &self.final_norm));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        out.push((String::from("embed"), &mut self.embed));
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut(&format!("blocks.{l}")));
        }
        out.push((String::from("final_norm"), &mut self.final_norm));
        out
    }

    /// Only the desk-scale language-model pretraining turns this on.
    pub fn set_trainable(&mut self, trainable: bool) {
        for (_, p) in self.named_params_mut() {
            p.set_requires_grad(trainable);
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.named_params().iter().all(|(_, p)| !p.requires_grad() && p.grad().is_none())
    }

    /// SHA-256 over the config, parameter names, shapes and little-endian
    /// values, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let c = &self.config;
        for v in [c.n_layers, c.d_model, c.n_heads, c.d_mlp, c.vocab_size, c.max_context] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(c.rope_base.to_le_bytes());
        h.update(T::NAME.as_bytes());
        let mut buf = Vec::new();
        for (name, p) in self.named_params() {
            h.update(name.as_bytes());
            for s in p.shape() {
                h.update((*s as u64).to_le_bytes());
            }
            buf.clear();
            for v in p.data() {
                v.put_le(&mut buf);
            }
            h.update(&buf);
        }
        to_hex(&h.finalize())
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 15) as usize] as char);
    }
    s
}
