//! Central finite-difference checks of reverse-mode gradients.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::Rng;

use crate::injection::injected_forward;
use crate::model::{init_models, DecoderConfig, DecoderModel, EncoderBank, EncoderConfig};
use crate::rng;
use crate::{Error, Graph, Result, Tensor, Var};

/// One checked gradient component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Below this magnitude both gradients count as zero and the error is
/// measured absolutely.
pub const REL_FLOOR: f64 = 1e-6;

impl GradCheck {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(REL_FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares the backward-pass gradient of `loss` with respect to the tensor
/// selected by `param` against `(f(p + h) - f(p - h)) / 2h` at `indices`.
/// The selected tensor must require gradients.
pub fn check<S>(
    state: &mut S,
    loss: impl Fn(&Graph<f64>, &S) -> Result<Var<f64>>,
    param: impl Fn(&mut S) -> &mut Tensor<f64>,
    indices: &[usize],
    h: f64,
) -> Result<Vec<GradCheck>> {
    let g = Graph::new();
    let l = loss(&g, state)?;
    let grads = g.backward(&l)?;
    let id = param(state).id();
    let analytic = grads.get(id).map(<[f64]>::to_vec);
    drop(grads);
    drop(l);
    let value = |state: &S| -> Result<f64> { Ok(loss(&Graph::new(), state)?.item()) };
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let t = param(state);
        if i >= t.numel() {
            return Err(Error::Invalid(alloc::format!("index {i} outside a tensor of {} elements", t.numel())));
        }
        let x = t.data()[i];
        param(state).data_mut()[i] = x + h;
        let up = value(state)?;
        param(state).data_mut()[i] = x - h;
        let down = value(state)?;
        param(state).data_mut()[i] = x;
        let analytic = analytic.as_ref().map_or(0.0, |a| a[i]);
        out.push(GradCheck { index: i, analytic, numeric: (up - down) / (2.0 * h) });
    }
    Ok(out)
}

fn random(seed: u64, label: &str, shape: &[usize], std: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, label, 0);
    Tensor::from_fn(shape, |_| rng::normal(&mut r) * std)
}

/// Reduces `y` to a scalar through fixed random weights so that no output
/// component's gradient can cancel another's.
fn readout(g: &Graph<f64>, y: Var<f64>, seed: u64) -> Result<Var<f64>> {
    if y.numel() == 1 {
        return Ok(y);
    }
    let w = random(seed, "readout", y.shape(), 1.0);
    Ok(g.sum(&g.mul(&y, &g.constant(&w))?))
}

type KernelFn = fn(&Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>;

struct Kernel {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    f: KernelFn,
    /// Trailing inputs treated as constants.
    constants: usize,
}

fn kernels() -> Vec<Kernel> {
    vec![
        Kernel { name: "matmul", shapes: &[&[3, 4], &[4, 5]], f: |g, v| g.matmul(&v[0], &v[1]), constants: 0 },
        Kernel { name: "matmul-nt", shapes: &[&[3, 4], &[5, 4]], f: |g, v| g.matmul_nt(&v[0], &v[1]), constants: 0 },
        Kernel { name: "add", shapes: &[&[3, 4], &[3, 4]], f: |g, v| g.add(&v[0], &v[1]), constants: 0 },
        Kernel { name: "elementwise-multiply", shapes: &[&[3, 4], &[3, 4]], f: |g, v| g.mul(&v[0], &v[1]), constants: 0 },
        Kernel { name: "scale", shapes: &[&[2, 3]], f: |g, v| Ok(g.scale(&v[0], -1.7)), constants: 0 },
        Kernel { name: "rms-norm", shapes: &[&[3, 6], &[6]], f: |g, v| g.rms_norm(&v[0], &v[1]), constants: 0 },
        Kernel { name: "softmax", shapes: &[&[3, 5]], f: |g, v| g.softmax(&v[0]), constants: 0 },
        Kernel { name: "silu-gated-mlp", shapes: &[&[3, 4], &[3, 4]], f: |g, v| g.swiglu(&v[0], &v[1]), constants: 0 },
        Kernel { name: "rotary", shapes: &[&[4, 8]], f: |g, v| g.rope(&v[0], 2, 10000.0, 1), constants: 0 },
        Kernel {
            name: "causal-self-attention",
            shapes: &[&[4, 8], &[4, 8], &[4, 8]],
            f: |g, v| g.attention(&v[0], &v[1], &v[2], 2, true),
            constants: 0,
        },
        Kernel { name: "embedding", shapes: &[&[10, 4]], f: |g, v| g.embedding(&v[0], &[3, 7, 3, 0]), constants: 0 },
        Kernel { name: "slice-rows", shapes: &[&[5, 4]], f: |g, v| g.slice_rows(&v[0], 1, 3), constants: 0 },
        Kernel { name: "add-rows", shapes: &[&[4, 3], &[2, 3]], f: |g, v| g.add_rows(&v[0], &v[1], 1), constants: 0 },
        Kernel {
            name: "masked-mse",
            shapes: &[&[4, 3], &[4, 3]],
            f: |g, v| g.masked_mse(&v[0], &v[1], &[true, false, true, true]),
            constants: 1,
        },
        Kernel {
            name: "masked-cross-entropy",
            shapes: &[&[4, 7]],
            f: |g, v| g.masked_cross_entropy(&v[0], &[1, 6, 0, 3], &[true, true, false, true]),
            constants: 0,
        },
        Kernel {
            name: "composite",
            shapes: &[&[3, 4], &[4, 4], &[4], &[4, 5], &[5, 3]],
            f: |g, v| {
                let h = g.rms_norm(&g.matmul(&v[0], &v[1])?, &v[2])?;
                g.matmul(&g.softmax(&g.matmul(&h, &v[3])?)?, &v[4])
            },
            constants: 0,
        },
    ]
}

fn pick(r: &mut impl Rng, numel: usize, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..n.min(numel)).map(|_| r.gen_range(0..numel)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Checks every kernel and the path through a two-layer decoder into the
/// encoder parameters, `per_param` randomly chosen components per checked
/// tensor. Returns `(label, check)` pairs.
pub fn suite(seed: u64, per_param: usize, h: f64) -> Result<Vec<(String, GradCheck)>> {
    let mut out = Vec::new();
    for (k, kernel) in kernels().into_iter().enumerate() {
        let mut tensors: Vec<Tensor<f64>> = kernel
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| random(seed, &format!("{}.{i}", kernel.name), s, 1.0))
            .collect();
        let checked = tensors.len() - kernel.constants;
        for t in &mut tensors[..checked] {
            t.set_requires_grad(true);
        }
        let f = kernel.f;
        let rs = seed ^ k as u64;
        for i in 0..checked {
            let idx = pick(&mut rng::stream(seed, kernel.name, i as u64), tensors[i].numel(), per_param);
            let loss = |g: &Graph<f64>, ts: &Vec<Tensor<f64>>| {
                let vars: Vec<Var<f64>> = ts.iter().map(|t| g.param(t)).collect();
                readout(g, f(g, &vars)?, rs)
            };
            for c in check(&mut tensors, loss, |ts| &mut ts[i], &idx, h)? {
                out.push((format!("{}[{i}]", kernel.name), c));
            }
        }
    }
    out.extend(through_decoder(seed, per_param, h)?);
    Ok(out)
}

type State = (DecoderModel<f64>, EncoderBank<f64>);

fn encoder_param(s: &mut State, layer: usize, i: usize) -> &mut Tensor<f64> {
    s.1.get_mut(layer).expect("encoder present").named_params_mut().swap_remove(i).1
}

/// Target cross-entropy of a two-layer decoder with encoders on both
/// layers, differentiated with respect to encoder parameters.
fn through_decoder(seed: u64, per_param: usize, h: f64) -> Result<Vec<(String, GradCheck)>> {
    let dc = DecoderConfig { n_layers: 2, d_model: 8, n_heads: 2, d_mlp: 16, max_context: 32, ..DecoderConfig::default() };
    let ec = EncoderConfig {
        n_blocks: 1,
        d_enc: 4,
        n_heads: 1,
        layer_subset: BTreeSet::from([0, 1]),
        ..EncoderConfig::default()
    };
    let (mut dec, mut bank) = init_models::<f64>(dc, ec, seed)?;
    // Larger weights than the initialisation so every path carries signal.
    let mut r = rng::stream(seed, "gradcheck.weights", 0);
    for (_, t) in dec.named_params_mut() {
        for v in t.data_mut() {
            *v = if *v == 1.0 { 1.0 + 0.2 * rng::normal(&mut r) } else { 0.4 * rng::normal(&mut r) };
        }
    }
    for e in bank.encoders_mut() {
        for (_, t) in e.named_params_mut() {
            for v in t.data_mut() {
                *v = if *v == 1.0 { 1.0 + 0.2 * rng::normal(&mut r) } else { 0.4 * rng::normal(&mut r) };
            }
        }
    }
    let knowledge = [65, 66, 67];
    let input = [70, 71, 72, 73];
    let targets = [71, 72, 73, 74, 0];
    let mask = [false, true, true, true, true];
    let mut state = (dec, bank);
    let loss = |g: &Graph<f64>, s: &State| {
        let out = injected_forward(g, &s.0, &s.1, &[0, 1], &knowledge, &input, false)?;
        g.masked_cross_entropy(&out.logits, &targets, &mask)
    };
    let mut out = Vec::new();
    for layer in [0usize, 1] {
        let names: Vec<String> = state.1.get(layer)?.named_params().into_iter().map(|(n, _)| n).collect();
        for (pi, name) in names.iter().enumerate() {
            let numel = state.1.get(layer)?.named_params()[pi].1.numel();
            let idx = pick(&mut rng::stream(seed, name, 0), numel, per_param);
            for c in check(&mut state, loss, |s| encoder_param(s, layer, pi), &idx, h)? {
                out.push((format!("decoder->{name}"), c));
            }
        }
    }
    Ok(out)
}
