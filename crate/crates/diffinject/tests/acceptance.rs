//! Acceptance suite. Runs the full desk-scale pipeline once in a temporary
//! directory and checks each criterion against it, printing one PASS/FAIL
//! line per criterion. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use diffinject::cache::load_cache;
use diffinject::checkpoint::load_decoder;
use diffinject::config::PipelineConfig;
use diffinject::manifest::Manifest;
use diffinject::pipeline::{self, BenchReport, EvalInputs, F};
use diffinject::Result;
use diffinject_core::eval::{EvalMode, MetricsReport};
use diffinject_core::gradcheck;
use diffinject_core::injection::{injected_forward, knowledge_run, plain_run, FixedDelta};
use diffinject_core::model::{DecoderModel, EncoderBank, EncoderConfig};
use diffinject_core::train::{capture_pass, pretrain_bank, pretrain_encoder, CaptureCache, TrainConfig, TrainLog};
use diffinject_core::{Graph, Real, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Fixture {
    cfg: PipelineConfig,
    root: tempfile::TempDir,
    layers: Vec<usize>,
    decoder_hash: String,
    pretrain: pipeline::PretrainSummary,
    pretrain_time: Duration,
    finetuned: TrainLog,
    scratch: TrainLog,
    finetune_time: Duration,
    scratch_time: Duration,
    edit: pipeline::EditReport,
    edit_time: Duration,
    metrics: MetricsReport,
    eval_time: Duration,
}

impl Fixture {
    fn path(&self, p: &str) -> PathBuf {
        self.root.path().join(p)
    }

    fn decoder(&self) -> DecoderModel<F> {
        load_decoder(&self.path("decoder").join(pipeline::DECODER_FILE)).unwrap()
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed()))
}

fn build() -> Result<Fixture> {
    let cfg = PipelineConfig::default();
    let root = tempfile::tempdir().expect("temporary directory");
    let p = |s: &str| root.path().join(s);
    let layers = pipeline::resolve_layers(&cfg.layers, cfg.decoder.n_layers, None)?;

    eprintln!("fixture: generating data and training the decoder");
    pipeline::gen_data(&cfg, &p("data"))?;
    let (decoder, _, _) = pipeline::pretrain_decoder(&cfg, &p("data"), &p("decoder"))?;
    let decoder_hash = decoder.hash();
    let dec_path = p("decoder").join(pipeline::DECODER_FILE);
    let train = p("data").join(pipeline::KV_TRAIN);
    let val = p("data").join(pipeline::KV_VAL);

    eprintln!("fixture: capture and encoder pretraining");
    pipeline::capture(&cfg, &dec_path, &train, &layers, &p("cache"))?;
    let (pre, pretrain_time) = timed(|| pipeline::pretrain(&cfg, &dec_path, &p("cache"), &layers, 1, &p("pretrain")))?;
    let bank_path = p("pretrain").join(pipeline::BANK_FILE);

    eprintln!("fixture: fine-tuning both arms");
    let (ft, finetune_time) =
        timed(|| pipeline::finetune(&cfg, &dec_path, Some(&bank_path), &train, Some(&val), &layers, &p("finetune")))?;
    let (scratch, scratch_time) =
        timed(|| pipeline::finetune(&cfg, &dec_path, None, &train, Some(&val), &layers, &p("scratch")))?;

    eprintln!("fixture: editing and evaluation");
    let edits = p("data").join(pipeline::COUNTERFACT);
    let (ed, edit_time) = timed(|| pipeline::edit(&cfg, &dec_path, Some(&bank_path), &edits, &layers, &p("edit")))?;
    let inputs = EvalInputs {
        datasets: vec![("kv_test".into(), p("data").join(pipeline::KV_TEST))],
        edits: None,
        modes: vec![EvalMode::Plain, EvalMode::Concat, EvalMode::Injected],
    };
    let ft_bank = p("finetune").join(pipeline::BANK_FILE);
    let ((metrics, _), eval_time) = timed(|| pipeline::eval(&cfg, &dec_path, Some(&ft_bank), &inputs, &layers, &p("eval")))?;

    Ok(Fixture {
        cfg,
        layers,
        decoder_hash,
        pretrain: pre.summary,
        pretrain_time,
        finetuned: ft.log,
        scratch: scratch.log,
        finetune_time,
        scratch_time,
        edit: ed.report,
        edit_time,
        metrics,
        eval_time,
        root,
    })
}

fn max_abs(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Fresh encoders leave the decoder's logits untouched.
fn zero_injection(fx: &Fixture) -> Result<Outcome> {
    let dec = fx.decoder();
    let ec = EncoderConfig { layer_subset: fx.layers.iter().copied().collect(), ..fx.cfg.encoder.clone() };
    let bank = EncoderBank::<F>::init(ec, &dec.config, fx.cfg.seed)?;
    let data = diffinject::jsonl::load_samples(&fx.path("data").join(pipeline::KV_TEST))?;
    let mut worst = 0.0f32;
    for s in data.iter().take(10) {
        let r = diffinject_core::data::render(s)?;
        let g = Graph::new();
        let plain = dec.forward(&g, &plain_run(r.input_tokens()), false)?.logits;
        let inj = injected_forward(&g, &dec, &bank, &fx.layers, r.knowledge_tokens(), r.input_tokens(), false)?.logits;
        worst = worst.max(max_abs(plain.data(), inj.data()));
    }
    Ok(outcome(worst < 1e-5, format!("max |logit diff| {worst:.2e} over 10 samples")))
}

fn gradient_oracle() -> Result<Outcome> {
    let checks = gradcheck::suite(2024, 4, 1e-5)?;
    let (worst_name, worst) = checks
        .iter()
        .map(|(n, c)| (n.as_str(), c.rel_err()))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let through = checks.iter().filter(|(n, _)| n.starts_with("decoder->")).count();
    Ok(outcome(
        checks.len() >= 100 && worst < 1e-4 && through > 0,
        format!("{} checks ({through} through the decoder), worst rel err {worst:.2e} ({worst_name})", checks.len()),
    ))
}

fn oracle_worst<T: Real>(dec: &DecoderModel<T>, cache: &CaptureCache<T>, layers: &[usize], n: usize) -> Result<f64> {
    let d = dec.config.d_model;
    let mut worst = 0.0f64;
    for (i, rec) in cache.records.iter().take(n).enumerate() {
        let layer = layers[i % layers.len()];
        let k = rec.k_len();
        let knowledge = &rec.tokens[1..1 + k];
        let input = &rec.tokens[1 + k..];
        let delta = Tensor::new(vec![rec.tokens.len(), d], rec.target.full(layer)?)?;
        let src = FixedDelta { deltas: BTreeMap::from([(layer, delta)]) };
        let g = Graph::new();
        let inj = injected_forward(&g, dec, &src, &[layer], knowledge, input, true)?;
        let reference = dec.forward(&g, &knowledge_run(knowledge, input), true)?;
        let got = &inj.hidden[layer].data()[d..];
        let want = &reference.hidden[layer].data()[(k + 1) * d..];
        for (a, b) in got.iter().zip(want) {
            worst = worst.max((a.as_f64() - b.as_f64()).abs());
        }
    }
    Ok(worst)
}

/// Injecting the exact captured difference at one layer reproduces that
/// layer's knowledge-run output at the input positions. Gated on a 64-bit
/// copy of the frozen decoder: in 32 bits `hp + (hk - hp)` is off by up to
/// an ulp of the residual stream, which exceeds the tolerance once trained
/// activations pass 64 in magnitude.
fn oracle_injection(fx: &Fixture) -> Result<Outcome> {
    let n = 24;
    let dec = fx.decoder();
    let (cache, _) = load_cache::<F>(&fx.path("cache"), None)?;
    let single = oracle_worst(&dec, &cache, &fx.layers, n)?;

    let mut wide = DecoderModel::<f64>::init(dec.config.clone(), 0)?;
    for ((_, w), (_, t)) in wide.named_params_mut().into_iter().zip(dec.named_params()) {
        for (dst, src) in w.data_mut().iter_mut().zip(t.data()) {
            *dst = src.as_f64();
        }
    }
    let samples = diffinject::jsonl::load_samples(&fx.path("data").join(pipeline::KV_TRAIN))?;
    let wide_cache = capture_pass(&wide, &samples[..n], &fx.layers)?;
    let double = oracle_worst(&wide, &wide_cache, &fx.layers, n)?;
    Ok(outcome(
        double < 1e-5 && wide_cache.records.len() >= 20,
        format!("max |h diff| {double:.2e} (64-bit), {single:.2e} (32-bit pipeline cache) over {n} samples, one layer each"),
    ))
}

/// No decoder gradients during regression, and an encoder trained alone
/// matches the same encoder trained next to another.
fn backprop_free(fx: &Fixture) -> Result<Outcome> {
    let decoder_bytes: u64 =
        fx.pretrain.logs.values().flat_map(|l| &l.steps).map(|s| s.counters.decoder_grad_bytes).sum();
    let dec = fx.decoder();
    let pair = [3usize, 4];
    let (cache, _) = load_cache::<F>(&fx.path("cache"), Some(&pair))?;
    let tc = TrainConfig { max_steps: 300, ..fx.cfg.stage(&fx.cfg.pretrain, &pair) };
    let ec = EncoderConfig { layer_subset: pair.into_iter().collect(), ..fx.cfg.encoder.clone() };
    let fresh = EncoderBank::<F>::init(ec, &dec.config, fx.cfg.seed)?;
    let mut alone = fresh.get(3)?.clone();
    let alone_log = pretrain_encoder(&mut alone, &dec, &cache, &TrainConfig { layers: vec![3], ..tc.clone() })?;
    let mut joint = fresh.clone();
    let joint_logs = pretrain_bank(&mut joint, &dec, &cache, &tc)?;
    let identical = alone
        .named_params()
        .iter()
        .zip(joint.get(3)?.named_params())
        .all(|((_, a), (_, b))| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let joint_bytes: u64 = joint_logs.values().flat_map(|l| &l.steps).map(|s| s.counters.decoder_grad_bytes).sum();
    let alone_bytes: u64 = alone_log.steps.iter().map(|s| s.counters.decoder_grad_bytes).sum();
    let zero = decoder_bytes == 0 && joint_bytes == 0 && alone_bytes == 0;
    Ok(outcome(
        zero && identical,
        format!(
            "decoder grad bytes {decoder_bytes} (pipeline), {alone_bytes}/{joint_bytes} (alone/joint); layer 3 alone vs {{3,4}} bit-identical: {identical} ({} steps)",
            tc.max_steps
        ),
    ))
}

fn convergence(fx: &Fixture) -> Outcome {
    let mut pass = fx.pretrain_time < Duration::from_secs(600);
    let mut parts = Vec::new();
    for (layer, log) in &fx.pretrain.logs {
        let base = log.baseline.unwrap_or(f64::NAN);
        let best = log.best_smoothed(20).unwrap_or(f64::INFINITY);
        let ratio = best / base;
        pass &= ratio <= 0.1 && log.steps.len() <= 2000;
        parts.push(format!("L{layer} {ratio:.3}"));
    }
    pass &= fx.pretrain.logs.len() == fx.layers.len();
    outcome(pass, format!("best 20-step loss / baseline: {}; {:.0}s", parts.join(", "), fx.pretrain_time.as_secs_f64()))
}

fn ordering(fx: &Fixture) -> Outcome {
    let ppl = |m| fx.metrics.perplexity.get(&MetricsReport::key("kv_test", m)).map_or(f64::NAN, |p| p.perplexity);
    let (plain, concat, injected) = (ppl(EvalMode::Plain), ppl(EvalMode::Concat), ppl(EvalMode::Injected));
    let runtime = fx.finetune_time + fx.eval_time;
    let pass = plain >= 10.0 * concat && injected * 2.0 <= plain && runtime < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "held-out perplexity plain {plain:.2}, concat {concat:.2}, injected {injected:.2}; {:.0}s",
            runtime.as_secs_f64()
        ),
    )
}

fn editing(fx: &Fixture) -> Outcome {
    let r = &fx.edit;
    let pass = r.post.es > r.pre.es && r.train_ce < 0.05 && fx.edit_time < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "{} edits: ES {:.3} -> {:.3}, PS {:.3} -> {:.3}, NS {:.3} -> {:.3}, CE {:.4} after {} steps; {:.0}s",
            r.pre.edits,
            r.pre.es,
            r.post.es,
            r.pre.ps,
            r.post.ps,
            r.pre.ns,
            r.post.ns,
            r.train_ce,
            r.steps,
            fx.edit_time.as_secs_f64()
        ),
    )
}

fn efficiency(fx: &Fixture) -> Result<Outcome> {
    let dec_path = fx.path("decoder").join(pipeline::DECODER_FILE);
    let bank = fx.path("pretrain").join(pipeline::BANK_FILE);
    let run = |out: &str| -> Result<BenchReport> {
        Ok(pipeline::bench(&fx.cfg, &dec_path, Some(&bank), &fx.layers, false, &fx.path(out))?.0)
    };
    let a = run("bench")?;
    let b = run("bench_again")?;
    let row = |m: EvalMode, k: usize| a.flops.iter().find(|r| r.mode == m && r.k_len == k);
    let mut pass = a == b;
    let mut parts = Vec::new();
    let inj0 = row(EvalMode::Injected, 0).map(|r| r.decoder_flops);
    for k in [64, 128, 256] {
        match (row(EvalMode::Injected, k), row(EvalMode::Concat, k)) {
            (Some(i), Some(c)) => {
                pass &= Some(i.decoder_flops) == inj0 && !c.out_of_context && c.decoder_flops > i.decoder_flops;
                parts.push(format!("K={k} concat/injected {:.2}", c.decoder_flops as f64 / i.decoder_flops as f64));
            }
            _ => pass = false,
        }
    }
    let peak = |o: &str| a.grad_memory.iter().find(|r| r.objective == o).map_or(0, |r| r.peak_live_bytes);
    let (pre, ft) = (peak("pretrain"), peak("finetune"));
    pass &= pre > 0 && pre < ft;
    Ok(outcome(
        pass,
        format!("injected decoder FLOPs flat in |K|; {}; peak bytes pretrain {pre} < finetune {ft}", parts.join(", ")),
    ))
}

fn frozen_audit(fx: &Fixture) -> Result<Outcome> {
    let mut pass = fx.decoder().hash() == fx.decoder_hash;
    let mut checked = Vec::new();
    for stage in ["decoder", "cache", "pretrain", "finetune", "scratch", "edit"] {
        let m = Manifest::load(&fx.path(stage))?;
        let after = m.decoder_hash_after.as_deref();
        let before = if stage == "decoder" { after } else { m.decoder_hash_before.as_deref() };
        pass &= before == Some(fx.decoder_hash.as_str()) && after == Some(fx.decoder_hash.as_str());
        checked.push(stage);
    }
    Ok(outcome(pass, format!("decoder {} unchanged across {}", &fx.decoder_hash[..12], checked.join(", "))))
}

fn ablation(fx: &Fixture) -> Outcome {
    let target = fx.scratch.evals.last().map_or(f64::NAN, |e| e.loss);
    let scratch_steps = fx.scratch.steps_to_reach(target);
    let pretrained_steps = fx.finetuned.steps_to_reach(target);
    let runtime = fx.finetune_time + fx.scratch_time;
    let pass = matches!((pretrained_steps, scratch_steps), (Some(p), Some(s)) if p < s)
        && runtime < Duration::from_secs(900);
    outcome(
        pass,
        format!(
            "scratch final val loss {target:.4} at step {scratch_steps:?}; pretrained reaches it at step {pretrained_steps:?} (starts {:.4}); {:.0}s",
            fx.finetuned.evals.first().map_or(f64::NAN, |e| e.loss),
            runtime.as_secs_f64()
        ),
    )
}

/// `limit` bounds the time spent since `started`; stages run inside the
/// fixture are bounded by the criterion itself.
fn report(n: usize, name: &str, limit: Option<u64>, started: Instant, result: Result<Outcome>, failures: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    let mut o = result.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    if let Some(limit) = limit {
        o.pass &= secs < limit as f64;
    }
    if !o.pass {
        *failures += 1;
    }
    println!("criterion {n:>2} {name:<28} {} ({secs:.1}s)  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    let mut failures = 0;
    let t = Instant::now();
    report(2, "gradient oracle", Some(120), t, gradient_oracle(), &mut failures);

    let t = Instant::now();
    let fx = match build() {
        Ok(fx) => fx,
        Err(e) => {
            println!("fixture FAIL: {e}");
            std::process::exit(1);
        }
    };
    eprintln!("fixture built in {:.0}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    report(1, "zero-injection equivalence", Some(1), t, zero_injection(&fx), &mut failures);
    let t = Instant::now();
    report(3, "single-layer oracle", Some(60), t, oracle_injection(&fx), &mut failures);
    let t = Instant::now();
    report(4, "backprop-free pretraining", None, t, backprop_free(&fx), &mut failures);
    let t = Instant::now();
    report(5, "convergence smoke", None, t, Ok(convergence(&fx)), &mut failures);
    let t = Instant::now();
    report(6, "perplexity ordering", None, t, Ok(ordering(&fx)), &mut failures);
    let t = Instant::now();
    report(7, "editing", None, t, Ok(editing(&fx)), &mut failures);
    let t = Instant::now();
    report(8, "efficiency", Some(60), t, efficiency(&fx), &mut failures);
    let t = Instant::now();
    report(9, "frozen-decoder audit", None, t, frozen_audit(&fx), &mut failures);
    let t = Instant::now();
    report(10, "pretrain vs scratch", None, t, Ok(ablation(&fx)), &mut failures);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
