use std::collections::BTreeSet;

use diffinject_core::data::tokenizer::BOS;
use diffinject_core::data::{gen_kv_dataset, render, KnowledgeSample};
use diffinject_core::injection::{injected_forward, knowledge_run, plain_run, FixedDelta};
use diffinject_core::kernels::flops;
use diffinject_core::model::{init_models, DecoderConfig, DecoderModel, EncoderBank, EncoderConfig};
use diffinject_core::train::{capture_pass, finetune, pretrain_bank, pretrain_encoder, render_all, Mode, TrainConfig};
use diffinject_core::{Graph, Tensor, Var};
use proptest::prelude::*;

fn tiny(layers: &[usize]) -> (DecoderModel<f32>, EncoderBank<f32>) {
    let dc = DecoderConfig { n_layers: 4, d_model: 16, n_heads: 2, d_mlp: 32, ..DecoderConfig::default() };
    let ec = EncoderConfig {
        n_blocks: 1,
        d_enc: 8,
        n_heads: 2,
        layer_subset: layers.iter().copied().collect::<BTreeSet<_>>(),
        ..EncoderConfig::default()
    };
    init_models(dc, ec, 21).unwrap()
}

fn samples(n: usize) -> Vec<KnowledgeSample> {
    let (train, _, _) = gen_kv_dataset(n, 0, 4).unwrap();
    train
}

fn cfg(mode: Mode, layers: &[usize], steps: u64, lr: f64) -> TrainConfig {
    TrainConfig {
        mode,
        layers: layers.to_vec(),
        lr_start: lr / 10.0,
        lr_peak: lr,
        lr_end: lr / 10.0,
        warmup_steps: 2,
        max_steps: steps,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn decoder_forward_flops_equal_the_sum_of_kernel_counts() {
    let (dec, _) = tiny(&[2]);
    let c = &dec.config;
    let tokens: Vec<u32> = (0..7).map(|i| 65 + i).collect();
    let t = tokens.len();
    let (d, m) = (c.d_model, c.d_mlp);
    let block = flops::rms_norm(t, d)
        + 4 * flops::matmul(t, d, d)
        + 2 * flops::rope(t * d)
        + flops::attention(t, d, c.n_heads, true)
        + flops::elementwise(t * d)
        + flops::rms_norm(t, d)
        + 2 * flops::matmul(t, d, m)
        + flops::swiglu(t * m)
        + flops::matmul(t, m, d)
        + flops::elementwise(t * d);
    let expected = c.n_layers as u64 * block + flops::rms_norm(t, d) + flops::matmul(t, d, c.vocab_size);
    let g = Graph::new();
    dec.forward(&g, &tokens, false).unwrap();
    let counters = g.counters();
    assert_eq!(counters.flops, expected);
    assert_eq!(counters.decoder_flops, expected);
    assert_eq!(counters.encoder_flops, 0);
}

#[test]
fn counters_never_decrease_within_a_region_and_reset() {
    let (dec, _) = tiny(&[2]);
    let g = Graph::new();
    let mut last = g.counters();
    for n in 1..5 {
        dec.forward(&g, &vec![70; n], false).unwrap();
        let now = g.counters();
        assert!(now.flops > last.flops && now.allocations >= last.allocations);
        assert!(now.peak_live_bytes >= last.peak_live_bytes);
        last = now;
    }
    g.reset_counters();
    assert_eq!(g.counters().flops, 0);
}

#[test]
fn no_grad_forward_allocates_no_gradient_storage() {
    let (dec, bank) = tiny(&[1, 2]);
    let mut frozen = bank.clone();
    for e in frozen.encoders_mut() {
        for (_, p) in e.named_params_mut() {
            p.set_requires_grad(false);
        }
    }
    let g = Graph::new();
    injected_forward(&g, &dec, &frozen, &[1, 2], &[80, 81], &[82, 83], true).unwrap();
    assert_eq!(g.counters().grad_allocations, 0);
    assert_eq!(g.counters().grad_bytes, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_out_rows_do_not_affect_losses(
        pred in proptest::collection::vec(-3.0f32..3.0, 12),
        noise in proptest::collection::vec(-5.0f32..5.0, 12),
        mask in proptest::collection::vec(any::<bool>(), 4),
        targets in proptest::collection::vec(0u32..3, 4),
    ) {
        prop_assume!(mask.iter().any(|m| *m));
        let target = vec![0.5f32; 12];
        let perturbed: Vec<f32> = pred
            .iter()
            .zip(&noise)
            .enumerate()
            .map(|(i, (p, n))| if mask[i / 3] { *p } else { p + n })
            .collect();
        let g = Graph::<f32>::new();
        let t = g.value(&[4, 3], target).unwrap();
        let a = g.value(&[4, 3], pred).unwrap();
        let b = g.value(&[4, 3], perturbed).unwrap();
        let mse = |p: &Var<f32>| g.masked_mse(p, &t, &mask).unwrap().item();
        let ce = |p: &Var<f32>| g.masked_cross_entropy(p, &targets, &mask).unwrap().item();
        prop_assert_eq!(mse(&a).to_bits(), mse(&b).to_bits());
        prop_assert_eq!(ce(&a).to_bits(), ce(&b).to_bits());
    }

    #[test]
    fn future_tokens_never_change_past_logits(
        prefix in proptest::collection::vec(0u32..256, 1..8),
        a in proptest::collection::vec(0u32..256, 1..5),
        b in proptest::collection::vec(0u32..256, 1..5),
    ) {
        let (dec, _) = tiny(&[2]);
        let run = |tail: &[u32]| {
            let mut t = prefix.clone();
            t.extend_from_slice(tail);
            let g = Graph::new();
            dec.forward(&g, &t, false).unwrap().logits.data()[..prefix.len() * 261].to_vec()
        };
        prop_assert_eq!(run(&a), run(&b));
    }
}

#[test]
fn initialisation_is_deterministic() {
    let (d1, b1) = tiny(&[1, 3]);
    let (d2, b2) = tiny(&[1, 3]);
    assert_eq!(d1.hash(), d2.hash());
    for (x, y) in b1.named_params().iter().zip(b2.named_params()) {
        assert_eq!(x.1.data(), y.1.data());
    }
    let other = DecoderModel::<f32>::init(d1.config.clone(), 22).unwrap();
    assert_ne!(other.hash(), d1.hash());
}

#[test]
fn capture_flag_does_not_change_logits() {
    let (dec, _) = tiny(&[2]);
    let tokens = [BOS, 72, 105, 33, 72];
    let g = Graph::new();
    let with = dec.forward(&g, &tokens, true).unwrap();
    let without = dec.forward(&g, &tokens, false).unwrap();
    assert_eq!(with.logits.data(), without.logits.data());
    assert_eq!(with.hidden.len(), dec.config.n_layers);
    assert!(without.hidden.is_empty());
}

#[test]
fn capture_is_deterministic() {
    let (dec, _) = tiny(&[2]);
    let data = samples(20);
    let a = capture_pass(&dec, &data, &[1, 2]).unwrap();
    let b = capture_pass(&dec, &data, &[1, 2]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), data.len());
}

#[test]
fn injecting_the_captured_difference_reproduces_the_knowledge_run() {
    let (dec, _) = tiny(&[2]);
    for s in samples(10).iter().take(8) {
        let r = render(s).unwrap();
        let (k, x) = (r.knowledge_tokens(), r.input_tokens());
        let g = Graph::new();
        let hk = dec.forward(&g, &knowledge_run(k, x), true).unwrap().hidden;
        let hp = dec.forward(&g, &plain_run(x), true).unwrap().hidden;
        for layer in 0..dec.config.n_layers {
            let d = dec.config.d_model;
            let kx = knowledge_run(k, x).len();
            let mut delta = vec![0.0f32; kx * d];
            for row in 1..=x.len() {
                for c in 0..d {
                    let src = (k.len() + row) * d + c;
                    delta[src] = hk[layer].data()[src] - hp[layer].data()[row * d + c];
                }
            }
            let src = FixedDelta { deltas: [(layer, Tensor::new(vec![kx, d], delta).unwrap())].into_iter().collect() };
            let out = injected_forward(&g, &dec, &src, &[layer], k, x, true).unwrap();
            let got = &out.hidden[layer].data()[d..];
            let want = &hk[layer].data()[(k.len() + 1) * d..];
            let err = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(err < 1e-5, "layer {layer}: {err}");
        }
    }
}

#[test]
fn encoders_train_independently_of_their_neighbours() {
    let (dec, bank) = tiny(&[1, 2]);
    let cache = capture_pass(&dec, &samples(30), &[1, 2]).unwrap();
    let c = cfg(Mode::Pretrain, &[1, 2], 12, 5e-3);

    let mut alone = bank.get(1).unwrap().clone();
    pretrain_encoder(&mut alone, &dec, &cache, &c).unwrap();
    let mut joint = bank.clone();
    let logs = pretrain_bank(&mut joint, &dec, &cache, &c).unwrap();

    for ((na, a), (nb, b)) in alone.named_params().iter().zip(joint.get(1).unwrap().named_params()) {
        assert_eq!(na, &nb);
        assert_eq!(a.data(), b.data(), "{na}");
    }
    for log in logs.values() {
        assert!(log.steps.iter().all(|s| s.counters.decoder_grad_bytes == 0));
    }
}

#[test]
fn training_is_reproducible_and_leaves_the_decoder_alone() {
    let (dec, bank) = tiny(&[2, 3]);
    let before = dec.hash();
    let data = render_all(&samples(16), dec.config.max_context).unwrap();
    let c = cfg(Mode::Finetune, &[2, 3], 6, 1e-2);
    let mut a = bank.clone();
    let mut b = bank.clone();
    let la = finetune(&dec, &mut a, &[2, 3], &data, None, &c).unwrap();
    let lb = finetune(&dec, &mut b, &[2, 3], &data, None, &c).unwrap();
    assert_eq!(la, lb);
    for (x, y) in a.named_params().iter().zip(b.named_params()) {
        assert_eq!(x.1.data(), y.1.data());
    }
    assert_eq!(dec.hash(), before);
    assert!(dec.is_frozen());
    assert!(dec.named_params().iter().all(|(_, t)| t.grad().is_none()));
    assert!(la.steps.iter().all(|s| s.counters.encoder_grad_bytes > 0));
}

#[test]
fn fine_tuning_overfits_a_single_sample() {
    let (mut dec, mut bank) = tiny(&[1, 2, 3]);
    // At initialisation scale the tied head cannot express a confident
    // prediction whatever the residual stream holds.
    for v in dec.embed.data_mut() {
        *v *= 25.0;
    }
    let sample = KnowledgeSample::new(vec!["KEY is abc".into()], "What is KEY?", "abc");
    let data = render_all(&[sample], dec.config.max_context).unwrap();
    let c = TrainConfig { batch_size: 1, ..cfg(Mode::Finetune, &[1, 2, 3], 150, 3e-2) };
    let log = finetune(&dec, &mut bank, &[1, 2, 3], &data, None, &c).unwrap();
    let first = log.steps[0].loss;
    let last = log.tail_loss(5).unwrap();
    assert!(last < 0.1 * first, "{first} -> {last}");
}
