//! FLOP and gradient-memory profiles of the three decoding modes and the
//! two training objectives. Wall-clock timing lives in the std crate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::counters::Scope;
use crate::data::Rendered;
use crate::eval::EvalMode;
use crate::injection::{build_pretrain_targets, injected_forward};
use crate::model::{DecoderModel, EncoderBank};
use crate::train::{injected_loss, pretrain_loss, CaptureRecord};
use crate::{Error, Graph, Real, Result, Tensor, Var};

/// Deterministic filler: printable bytes cycling through the alphabet.
pub fn filler_tokens(len: usize, salt: u32) -> Vec<u32> {
    (0..len as u32).map(|i| b'a' as u32 + (i * 7 + salt) % 26).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopRow {
    pub mode: EvalMode,
    pub k_len: usize,
    pub x_len: usize,
    /// Set when the sequence the decoder would see exceeds its context.
    pub out_of_context: bool,
    pub decoder_flops: u64,
    pub encoder_flops: u64,
    pub total_flops: u64,
    /// Longest attention span inside the decoder.
    pub decoder_context: usize,
}

/// One forward per `(mode, |K|)` with a frozen bank, counting FLOPs.
pub fn flop_profile<T: Real>(
    decoder: &DecoderModel<T>,
    bank: &EncoderBank<T>,
    subset: &[usize],
    modes: &[EvalMode],
    k_lens: &[usize],
    x_len: usize,
) -> Result<Vec<FlopRow>> {
    let mut frozen = bank.clone();
    for e in frozen.encoders_mut() {
        for (_, p) in e.named_params_mut() {
            p.set_requires_grad(false);
        }
    }
    let x = filler_tokens(x_len, 3);
    let mut rows = Vec::new();
    for &mode in modes {
        for &k_len in k_lens {
            let k = filler_tokens(k_len, 11);
            let decoder_len = 1 + x_len + if mode == EvalMode::Concat { k_len } else { 0 };
            let mut row = FlopRow {
                mode,
                k_len,
                x_len,
                out_of_context: decoder_len > decoder.config.max_context,
                decoder_flops: 0,
                encoder_flops: 0,
                total_flops: 0,
                decoder_context: 0,
            };
            if !row.out_of_context {
                let g = Graph::<T>::new();
                match mode {
                    EvalMode::Plain => {
                        decoder.forward(&g, &crate::injection::plain_run(&x), false)?;
                    }
                    EvalMode::Concat => {
                        decoder.forward(&g, &crate::injection::knowledge_run(&k, &x), false)?;
                    }
                    EvalMode::Injected => {
                        injected_forward(&g, decoder, &frozen, subset, &k, &x, false)?;
                    }
                }
                let c = g.counters();
                row.decoder_flops = c.decoder_flops;
                row.encoder_flops = c.encoder_flops;
                row.total_flops = c.flops;
                row.decoder_context =
                    g.attention_trace().iter().filter(|(s, _)| s.is_decoder()).map(|(_, t)| *t).max().unwrap_or(0);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn flop_table(rows: &[FlopRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<9} {:>5} {:>5} {:>14} {:>14} {:>14}", "mode", "|K|", "|x|", "decoder", "encoder", "total");
    for r in rows {
        if r.out_of_context {
            let _ = writeln!(out, "{:<9} {:>5} {:>5} {:>14} {:>14} {:>14}", r.mode.name(), r.k_len, r.x_len, "OOC", "OOC", "OOC");
        } else {
            let _ = writeln!(
                out,
                "{:<9} {:>5} {:>5} {:>14} {:>14} {:>14}",
                r.mode.name(),
                r.k_len,
                r.x_len,
                r.decoder_flops,
                r.encoder_flops,
                r.total_flops
            );
        }
    }
    out
}

pub fn flop_csv(rows: &[FlopRow]) -> String {
    let mut out = String::from("mode,k_len,x_len,out_of_context,decoder_flops,encoder_flops,total_flops\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.mode.name(),
            r.k_len,
            r.x_len,
            r.out_of_context,
            r.decoder_flops,
            r.encoder_flops,
            r.total_flops
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradMemoryRow {
    /// `pretrain` or `finetune`.
    pub objective: String,
    pub peak_live_bytes: u64,
    pub grad_bytes: u64,
    pub decoder_grad_bytes: u64,
    pub encoder_grad_bytes: u64,
    /// Recorded graph nodes inside each decoder block; only blocks above
    /// the lowest injection point are on the gradient path.
    pub decoder_nodes_per_layer: BTreeMap<usize, u64>,
}

fn grad_row<T: Real>(objective: &str, g: &Graph<T>) -> GradMemoryRow {
    let c = g.counters();
    let nodes = g
        .recorded_nodes()
        .into_iter()
        .filter_map(|(s, n)| match s {
            Scope::Decoder(Some(l)) => Some((l, n)),
            _ => None,
        })
        .collect();
    GradMemoryRow {
        objective: objective.into(),
        peak_live_bytes: c.peak_live_bytes,
        grad_bytes: c.grad_bytes,
        decoder_grad_bytes: c.decoder_grad_bytes,
        encoder_grad_bytes: c.encoder_grad_bytes,
        decoder_nodes_per_layer: nodes,
    }
}

/// One training step of each objective on the same sample and encoders:
/// regression onto captured differences versus cross-entropy through the
/// decoder. No parameters are updated.
pub fn grad_memory_profile<T: Real>(
    decoder: &DecoderModel<T>,
    bank: &EncoderBank<T>,
    subset: &[usize],
    sample: &Rendered,
) -> Result<Vec<GradMemoryRow>> {
    bank.check_subset(subset)?;
    if sample.k_len == 0 {
        return Err(Error::Invalid("the profile sample needs knowledge".into()));
    }
    let record = {
        let g = Graph::<T>::new();
        let hk: Vec<Tensor<T>> = decoder.forward(&g, &sample.ids, true)?.hidden.iter().map(Var::to_tensor).collect();
        let hp: Vec<Tensor<T>> = decoder.forward(&g, &sample.plain_run(), true)?.hidden.iter().map(Var::to_tensor).collect();
        CaptureRecord { id: 0, tokens: sample.ids.clone(), target: build_pretrain_targets(&hp, &hk, sample.k_len, subset)? }
    };
    let g = Graph::<T>::new();
    let mut total: Option<Var<T>> = None;
    for &l in subset {
        let loss = pretrain_loss(&g, bank.get(l)?, decoder, &[&record])?;
        total = Some(match total {
            None => loss,
            Some(t) => g.add(&t, &loss)?,
        });
    }
    let total = total.ok_or_else(|| Error::Invalid(format!("empty subset {subset:?}")))?;
    g.backward(&total)?;
    let pretrain = grad_row("pretrain", &g);

    let g = Graph::<T>::new();
    let (loss, _) = injected_loss(&g, decoder, bank, subset, sample)?;
    g.backward(&loss)?;
    let finetune = grad_row("finetune", &g);
    Ok(alloc::vec![pretrain, finetune])
}

pub fn grad_memory_table(rows: &[GradMemoryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<9} {:>14} {:>12} {:>12} {:>12} {:>15}", "objective", "peak bytes", "grad bytes", "decoder", "encoder", "decoder layers");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<9} {:>14} {:>12} {:>12} {:>12} {:>15}",
            r.objective,
            r.peak_live_bytes,
            r.grad_bytes,
            r.decoder_grad_bytes,
            r.encoder_grad_bytes,
            r.decoder_nodes_per_layer.values().filter(|n| **n > 0).count()
        );
    }
    out
}
