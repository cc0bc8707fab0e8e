use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::truncated_normal;
use crate::{Graph, Real, Result, Tensor, Var};

pub(crate) const INIT_STD: f64 = 0.02;

pub(crate) fn init_matrix<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<T> {
    Tensor::from_fn(&[rows, cols], |_| T::lit(truncated_normal(rng, INIT_STD)))
}

/// Pre-norm transformer block: rotary multi-head attention and a SiLU-gated
/// MLP, each added back onto the residual stream. Projections are stored
/// `[in, out]`.
#[derive(Clone, Debug)]
pub struct Block<T: Real> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w_gate: Tensor<T>,
    pub w_up: Tensor<T>,
    pub w_down: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockShape {
    pub n_heads: usize,
    pub rope_base: f64,
    pub causal: bool,
}

impl<T: Real> Block<T> {
    pub(crate) fn init(rng: &mut impl Rng, d: usize, d_mlp: usize) -> Self {
        Block {
            attn_norm: Tensor::full(&[d], T::one()),
            wq: init_matrix(rng, d, d),
            wk: init_matrix(rng, d, d),
            wv: init_matrix(rng, d, d),
            wo: init_matrix(rng, d, d),
            mlp_norm: Tensor::full(&[d], T::one()),
            w_gate: init_matrix(rng, d, d_mlp),
            w_up: init_matrix(rng, d, d_mlp),
            w_down: init_matrix(rng, d_mlp, d),
        }
    }

    pub(crate) fn forward(&self, g: &Graph<T>, x: &Var<T>, shape: BlockShape) -> Result<Var<T>> {
        let h = g.rms_norm(x, &g.param(&self.attn_norm))?;
        let q = g.rope(&g.matmul(&h, &g.param(&self.wq))?, shape.n_heads, shape.rope_base, 0)?;
        let k = g.rope(&g.matmul(&h, &g.param(&self.wk))?, shape.n_heads, shape.rope_base, 0)?;
        let v = g.matmul(&h, &g.param(&self.wv))?;
        let a = g.attention(&q, &k, &v, shape.n_heads, shape.causal)?;
        let x = g.add(x, &g.matmul(&a, &g.param(&self.wo))?)?;

        let h = g.rms_norm(&x, &g.param(&self.mlp_norm))?;
        let gate = g.matmul(&h, &g.param(&self.w_gate))?;
        let up = g.matmul(&h, &g.param(&self.w_up))?;
        let m = g.matmul(&g.swiglu(&gate, &up)?, &g.param(&self.w_down))?;
        g.add(&x, &m)
    }

    pub(crate) fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        [
            ("attn_norm", &self.attn_norm),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("mlp_norm", &self.mlp_norm),
            ("w_gate", &self.w_gate),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
    }

    pub(crate) fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        [
            ("attn_norm", &mut self.attn_norm),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("mlp_norm", &mut self.mlp_norm),
            ("w_gate", &mut self.w_gate),
            ("w_up", &mut self.w_up),
            ("w_down", &mut self.w_down),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
    }
}
