//! Shift alignment between the knowledge run and the plain run, the
//! injected decoder forward pass and construction of regression targets.
//!
//! With `k` knowledge tokens and an input of `n` tokens the knowledge run is
//! `[BOS] K x` (`1 + k + n` rows) and the plain run is `[BOS] x` (`1 + n`
//! rows). Row `i + k` of the knowledge run lines up with row `i` of the plain
//! run. The plain `[BOS]` lands on the last knowledge token, so that slot is
//! never injected and never scored.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::tokenizer::BOS;
use crate::model::{DecoderModel, EncoderBank, ForwardOutput};
use crate::{Error, Graph, Real, Result, Tensor, Var};

/// Drops the first `b` rows of a row-major sequence of `width` columns.
pub fn shift_left<T: Copy>(seq: &[T], width: usize, b: usize) -> Result<Vec<T>> {
    let rows = seq.len() / width.max(1);
    if b > rows {
        return Err(Error::ShiftOutOfRange { shift: b, len: rows });
    }
    Ok(seq[b * width..].to_vec())
}

/// Prepends `b` invalid rows (zero-filled). Returns the sequence and its
/// validity mask.
pub fn shift_right<T: Copy + Default>(seq: &[T], width: usize, b: usize) -> (Vec<T>, Vec<bool>) {
    let rows = seq.len() / width.max(1);
    let mut out = vec![T::default(); b * width];
    out.extend_from_slice(seq);
    let mut mask = vec![false; b];
    mask.extend(core::iter::repeat_n(true, rows));
    (out, mask)
}

/// `knowledge - shift_right(plain, b)` with invalid rows left at zero.
pub fn difference<T: Real>(knowledge: &[T], plain: &[T], width: usize, b: usize) -> Result<(Vec<T>, Vec<bool>)> {
    let (shifted, mask) = shift_right(plain, width, b);
    if shifted.len() != knowledge.len() {
        return Err(Error::Alignment { got: knowledge.len() / width.max(1), expected: mask.len() });
    }
    let mut out = vec![T::zero(); knowledge.len()];
    for (r, valid) in mask.iter().enumerate() {
        if *valid {
            for c in r * width..(r + 1) * width {
                out[c] = knowledge[c] - shifted[c];
            }
        }
    }
    Ok((out, mask))
}

/// Per-layer regression targets for one sample.
///
/// Only the valid rows are stored: rows `k_len + 1 .. rows` of the
/// knowledge run, one per non-`[BOS]` input token.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedTarget<T: Real> {
    pub k_len: usize,
    /// Length of the knowledge run.
    pub rows: usize,
    pub d_model: usize,
    pub layers: BTreeMap<usize, Vec<T>>,
}

impl<T: Real> AlignedTarget<T> {
    pub fn valid_from(&self) -> usize {
        self.k_len + 1
    }

    pub fn valid_rows(&self) -> usize {
        self.rows - self.valid_from()
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.rows).map(|r| r >= self.valid_from()).collect()
    }

    pub fn layer(&self, l: usize) -> Result<&[T]> {
        self.layers.get(&l).map(Vec::as_slice).ok_or(Error::MissingLayer(l))
    }

    /// Target over the whole knowledge run, zero at invalid rows.
    pub fn full(&self, l: usize) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.valid_from() * self.d_model];
        out.extend_from_slice(self.layer(l)?);
        Ok(out)
    }

    /// Mean squared norm per element over valid rows, i.e. the loss of the
    /// all-zero predictor.
    pub fn zero_predictor_loss(&self, l: usize) -> Result<f64> {
        let t = self.layer(l)?;
        if t.is_empty() {
            return Err(Error::EmptyLossSupport { op: "masked-mse" });
        }
        Ok(t.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / t.len() as f64)
    }
}

/// Builds the targets of the listed layers from per-layer captures of the
/// plain run (`1 + n` rows) and the knowledge run (`1 + k_len + n` rows).
pub fn build_pretrain_targets<T: Real>(
    plain: &[Tensor<T>],
    knowledge: &[Tensor<T>],
    k_len: usize,
    layers: &[usize],
) -> Result<AlignedTarget<T>> {
    if plain.len() != knowledge.len() {
        return Err(Error::CaptureMismatch(format!(
            "{} plain layers vs {} knowledge layers",
            plain.len(),
            knowledge.len()
        )));
    }
    let first = plain.first().ok_or_else(|| Error::CaptureMismatch("no captured layers".into()))?;
    let d = first.shape()[1];
    let p_rows = first.shape()[0];
    let rows = p_rows + k_len;
    let mut out = BTreeMap::new();
    for &l in layers {
        let (p, k) = match (plain.get(l), knowledge.get(l)) {
            (Some(p), Some(k)) => (p, k),
            _ => return Err(Error::MissingLayer(l)),
        };
        if p.shape() != [p_rows, d] || k.shape() != [rows, d] {
            return Err(Error::CaptureMismatch(format!(
                "layer {}: plain {:?} and knowledge {:?} do not differ by {} rows",
                l,
                p.shape(),
                k.shape(),
                k_len
            )));
        }
        let (diff, _) = difference(k.data(), p.data(), d, k_len)?;
        out.insert(l, diff[(k_len + 1) * d..].to_vec());
    }
    Ok(AlignedTarget { k_len, rows, d_model: d, layers: out })
}

/// Anything that can produce a per-layer correction over the knowledge run.
pub trait DeltaSource<T: Real> {
    fn layers(&self) -> Vec<usize>;

    /// Rows must match `tokens` one to one.
    fn delta(&self, g: &Graph<T>, decoder: &DecoderModel<T>, layer: usize, tokens: &[u32]) -> Result<Var<T>>;
}

impl<T: Real> DeltaSource<T> for EncoderBank<T> {
    fn layers(&self) -> Vec<usize> {
        EncoderBank::layers(self)
    }

    fn delta(&self, g: &Graph<T>, decoder: &DecoderModel<T>, layer: usize, tokens: &[u32]) -> Result<Var<T>> {
        self.forward(g, decoder, layer, tokens)
    }
}

/// Fixed corrections, e.g. captured differences. `rows` are laid out over
/// the knowledge run.
pub struct FixedDelta<T: Real> {
    pub deltas: BTreeMap<usize, Tensor<T>>,
}

impl<T: Real> DeltaSource<T> for FixedDelta<T> {
    fn layers(&self) -> Vec<usize> {
        self.deltas.keys().copied().collect()
    }

    fn delta(&self, g: &Graph<T>, _: &DecoderModel<T>, layer: usize, _: &[u32]) -> Result<Var<T>> {
        self.deltas.get(&layer).map(|t| g.constant(t)).ok_or(Error::NoEncoder(layer))
    }
}

pub fn knowledge_run(knowledge: &[u32], input: &[u32]) -> Vec<u32> {
    let mut run = Vec::with_capacity(1 + knowledge.len() + input.len());
    run.push(BOS);
    run.extend_from_slice(knowledge);
    run.extend_from_slice(input);
    run
}

pub fn plain_run(input: &[u32]) -> Vec<u32> {
    knowledge_run(&[], input)
}

pub fn check_subset(available: &[usize], subset: &[usize]) -> Result<()> {
    if subset.iter().any(|l| !available.contains(l)) {
        return Err(Error::SubsetMismatch { requested: subset.to_vec(), available: available.to_vec() });
    }
    Ok(())
}

/// Runs the decoder on `[BOS] x` while adding, after block `l` for each `l`
/// in `subset`, the source's correction computed over `[BOS] K x` and
/// shifted left by `|K|`. `knowledge` and `input` exclude `[BOS]`.
pub fn injected_forward<T: Real, S: DeltaSource<T> + ?Sized>(
    g: &Graph<T>,
    decoder: &DecoderModel<T>,
    source: &S,
    subset: &[usize],
    knowledge: &[u32],
    input: &[u32],
    capture: bool,
) -> Result<ForwardOutput<T>> {
    check_subset(&source.layers(), subset)?;
    let k = knowledge.len();
    let n = input.len();
    let kx = knowledge_run(knowledge, input);
    let mut shifted = BTreeMap::new();
    for &l in subset {
        let delta = source.delta(g, decoder, l, &kx)?;
        if delta.rows() != kx.len() {
            return Err(Error::Alignment { got: delta.rows(), expected: kx.len() });
        }
        if n > 0 {
            shifted.insert(l, g.slice_rows(&delta, k + 1, n)?);
        }
    }
    decoder.forward_with(g, &plain_run(input), capture, |l, h| match shifted.get(&l) {
        Some(delta) => g.add_rows(&h, delta, 1),
        None => Ok(h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_models, DecoderConfig, EncoderConfig};
    use alloc::vec;

    #[test]
    fn shift_examples() {
        let s = [1, 2, 3, 4, 5, 6];
        assert_eq!(shift_left(&s, 2, 0).unwrap(), s);
        assert_eq!(shift_left(&s, 2, 2).unwrap(), vec![5, 6]);
        assert_eq!(shift_left(&s, 2, 4).unwrap_err(), Error::ShiftOutOfRange { shift: 4, len: 3 });
        assert_eq!(shift_right(&s, 2, 0), (s.to_vec(), vec![true; 3]));
        let (r, m) = shift_right(&[7, 8], 1, 2);
        assert_eq!((r, m), (vec![0, 0, 7, 8], vec![false, false, true, true]));
        let (r, _) = shift_right(&s, 2, 3);
        assert_eq!(shift_left(&r, 2, 3).unwrap(), s);
    }

    #[test]
    fn scalar_difference() {
        let (d, m) = difference(&[9.0, 8.0, 7.0, 6.0, 5.0], &[1.0f64, 2.0, 3.0], 1, 2).unwrap();
        assert_eq!(m, vec![false, false, true, true, true]);
        assert_eq!(&d[2..], &[6.0, 4.0, 2.0]);
    }

    fn small() -> (DecoderModel<f64>, EncoderBank<f64>) {
        let dc = DecoderConfig { n_layers: 3, d_model: 8, n_heads: 2, d_mlp: 16, ..DecoderConfig::default() };
        let ec = EncoderConfig {
            n_blocks: 1,
            d_enc: 4,
            n_heads: 1,
            layer_subset: [1, 2].into_iter().collect(),
            ..EncoderConfig::default()
        };
        init_models(dc, ec, 5).unwrap()
    }

    #[test]
    fn identical_runs_give_zero_targets() {
        let (dec, _) = small();
        let g = Graph::new();
        let run = [BOS, 40, 41, 42];
        let h: Vec<Tensor<f64>> = dec.forward(&g, &run, true).unwrap().hidden.iter().map(Var::to_tensor).collect();
        let t = build_pretrain_targets(&h, &h, 0, &[0, 1, 2]).unwrap();
        assert_eq!(t.mask().iter().filter(|m| **m).count(), run.len() - 1);
        assert!(t.layers.values().all(|v| v.iter().all(|x| *x == 0.0)));
        assert_eq!(t.zero_predictor_loss(1).unwrap(), 0.0);
        assert!(matches!(build_pretrain_targets(&h, &h, 1, &[0]), Err(Error::CaptureMismatch(_))));
    }

    #[test]
    fn fresh_bank_is_a_no_op_and_context_stays_input_length() {
        let (dec, bank) = small();
        let k = [50, 51, 52, 53, 54];
        let x = [60, 61, 62];
        let g = Graph::new();
        let plain = dec.forward(&g, &plain_run(&x), false).unwrap().logits;
        let g2 = Graph::new();
        let inj = injected_forward(&g2, &dec, &bank, &[1, 2], &k, &x, false).unwrap().logits;
        assert_eq!(plain.data(), inj.data());
        for (scope, len) in g2.attention_trace() {
            let expected = if scope.is_decoder() { 1 + x.len() } else { 1 + k.len() + x.len() };
            assert_eq!(len, expected, "{scope:?}");
        }
        assert!(matches!(
            injected_forward(&g2, &dec, &bank, &[0], &k, &x, false),
            Err(Error::SubsetMismatch { .. })
        ));
    }

    #[test]
    fn wrong_delta_length_is_an_alignment_error() {
        let (dec, _) = small();
        let src = FixedDelta { deltas: [(1, Tensor::<f64>::zeros(&[3, 8]))].into_iter().collect() };
        let g = Graph::new();
        let err = injected_forward(&g, &dec, &src, &[1], &[50], &[60, 61], false).err().unwrap();
        assert_eq!(err, Error::Alignment { got: 3, expected: 4 });
    }

    #[test]
    fn lower_layers_untouched_by_injection_above() {
        let (dec, _) = small();
        let delta = Tensor::from_fn(&[5, 8], |i| (i as f64 * 0.37).sin());
        let src = FixedDelta { deltas: [(1, delta)].into_iter().collect() };
        let g = Graph::new();
        let inj = injected_forward(&g, &dec, &src, &[1], &[50, 51], &[60, 61], true).unwrap();
        let plain = dec.forward(&g, &plain_run(&[60, 61]), true).unwrap();
        assert_eq!(inj.hidden[0].data(), plain.hidden[0].data());
        assert_ne!(inj.hidden[1].data(), plain.hidden[1].data());
        // The [BOS] row is never injected.
        assert_eq!(&inj.hidden[1].data()[..8], &plain.hidden[1].data()[..8]);
    }
}
