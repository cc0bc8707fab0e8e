//! The pipeline stages behind the CLI subcommands. Each stage reads its
//! inputs from disk, writes its artifacts and a manifest into `out`, and
//! returns what it produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffinject_core::bench::{
    filler_tokens, flop_csv, flop_profile, flop_table, grad_memory_profile, grad_memory_table, FlopRow,
    GradMemoryRow,
};
use diffinject_core::data::{
    gen_counterfact_dataset, gen_kv_dataset, gen_rules_dataset, render, seed_manifest, EditSample, KnowledgeSample,
    LABELS,
};
use diffinject_core::eval::{edit_metrics, icr_accuracy, perplexity, EditMetrics, EvalMode, MetricsReport, ModelScorer};
use diffinject_core::injection::{injected_forward, knowledge_run, plain_run};
use diffinject_core::model::{DecoderModel, Encoder, EncoderBank, EncoderConfig, LayerSpec};
use diffinject_core::train::{
    capture_pass, edit as edit_encoders, finetune as finetune_encoders, injected_eval_loss, pretrain_decoder as train_decoder,
    pretrain_encoders, render_all, CaptureCache, LmSequence, TrainLog,
};
use diffinject_core::Graph;
use serde::{Deserialize, Serialize};

use crate::cache::{load_cache, load_index, save_cache};
use crate::checkpoint::{load_bank, load_decoder, save_bank, save_decoder};
use crate::config::PipelineConfig;
use crate::events::write_events;
use crate::jsonl::{load_edits, load_samples, write_jsonl};
use crate::manifest::Manifest;
use crate::timing::{time_task, timing_table, Fingerprint, TimingReport};
use crate::{Error, Result};

/// Training and evaluation run in 32-bit floats.
pub type F = f32;

pub const KV_TRAIN: &str = "kv_train.jsonl";
pub const KV_VAL: &str = "kv_val.jsonl";
pub const KV_TEST: &str = "kv_test.jsonl";
pub const RULES_TRAIN: &str = "rules_train.jsonl";
pub const RULES_VAL: &str = "rules_val.jsonl";
pub const COUNTERFACT: &str = "counterfact.jsonl";
pub const SEEDS: &str = "seeds.txt";
pub const DECODER_FILE: &str = "decoder.ckpt";
pub const BANK_FILE: &str = "bank.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.json";

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(Error::io(out))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    std::fs::write(path, bytes).map_err(Error::io(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io(path))
}

fn check_unchanged(decoder: &DecoderModel<F>, before: &str) -> Result<String> {
    let after = decoder.hash();
    if after != before {
        return Err(diffinject_core::Error::FrozenDecoderViolated { expected: before.into(), found: after }.into());
    }
    Ok(after)
}

/// Layers trained by a pretraining run and those flagged divergent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub layers: Vec<usize>,
    pub diverged: Vec<usize>,
    pub logs: BTreeMap<usize, TrainLog>,
}

impl PretrainSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Resolves a `--layers` value; `conv` reads the pretraining summary.
pub fn resolve_layers(spec: &str, n_layers: usize, pretrain_log: Option<&Path>) -> Result<Vec<usize>> {
    let spec = LayerSpec::parse(spec)?;
    let summary = match (&spec, pretrain_log) {
        (LayerSpec::Converged, Some(p)) => Some(PretrainSummary::load(p)?),
        _ => None,
    };
    Ok(spec.resolve(n_layers, summary.as_ref().map(|s| (s.layers.as_slice(), s.diverged.as_slice())))?)
}

// ---------------------------------------------------------------- gen-data

pub struct Datasets {
    pub kv_train: Vec<KnowledgeSample>,
    pub kv_val: Vec<KnowledgeSample>,
    pub kv_test: Vec<KnowledgeSample>,
    pub rules_train: Vec<KnowledgeSample>,
    pub rules_val: Vec<KnowledgeSample>,
    pub counterfact: Vec<EditSample>,
}

/// Per-generator seeds derived from the pipeline seed.
pub fn data_seeds(seed: u64) -> [(&'static str, u64); 3] {
    [("kv", seed), ("counterfact", seed.wrapping_add(1)), ("rules", seed.wrapping_add(2))]
}

pub fn generate(cfg: &PipelineConfig) -> Result<Datasets> {
    let [(_, kv), (_, cf), (_, rules)] = data_seeds(cfg.seed);
    let d = &cfg.data;
    let (kv_train, kv_val, kv_test) = gen_kv_dataset(d.kv_entities, d.kv_distractors, kv)?;
    let mut rules_train = gen_rules_dataset(d.rules, rules)?;
    let rules_val = rules_train.split_off(d.rules * 4 / 5);
    Ok(Datasets { kv_train, kv_val, kv_test, rules_train, rules_val, counterfact: gen_counterfact_dataset(d.counterfacts, cf)? })
}

pub fn gen_data(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    create_dir(out)?;
    let d = generate(cfg)?;
    write_jsonl(&out.join(KV_TRAIN), &d.kv_train)?;
    write_jsonl(&out.join(KV_VAL), &d.kv_val)?;
    write_jsonl(&out.join(KV_TEST), &d.kv_test)?;
    write_jsonl(&out.join(RULES_TRAIN), &d.rules_train)?;
    write_jsonl(&out.join(RULES_VAL), &d.rules_val)?;
    write_jsonl(&out.join(COUNTERFACT), &d.counterfact)?;
    let mut entries: Vec<(&str, String)> = vec![("seed", cfg.seed.to_string())];
    for (k, v) in data_seeds(cfg.seed) {
        entries.push((k, v.to_string()));
    }
    let dc = &cfg.data;
    entries.extend([
        ("kv_entities", dc.kv_entities.to_string()),
        ("kv_distractors", dc.kv_distractors.to_string()),
        ("counterfacts", dc.counterfacts.to_string()),
        ("rules", dc.rules.to_string()),
    ]);
    write_text(&out.join(SEEDS), &seed_manifest(&entries))?;
    let mut m = Manifest::new("gen-data", cfg.seed, &[], &cfg.data);
    m.finish(out)?;
    Ok(m)
}

// -------------------------------------------------------- pretrain-decoder

/// Knowledge-conditioned kv and rule answers, and plain counterfact
/// statements, each scored on target tokens only.
pub fn decoder_corpus(cfg: &PipelineConfig, data: &Path) -> Result<(Vec<LmSequence>, Vec<LmSequence>)> {
    let max = cfg.decoder.max_context;
    let mut corpus = Vec::new();
    for s in render_all(&load_samples(&data.join(KV_TRAIN))?, max)? {
        corpus.push(LmSequence::targets_only(&s, true));
    }
    for s in render_all(&load_samples(&data.join(RULES_TRAIN))?, max)? {
        corpus.push(LmSequence::targets_only(&s, true));
    }
    let facts: Vec<KnowledgeSample> = load_edits(&data.join(COUNTERFACT))?.iter().flat_map(EditSample::true_facts).collect();
    for _ in 0..cfg.data.fact_repeats {
        for s in render_all(&facts, max)? {
            corpus.push(LmSequence::targets_only(&s, false));
        }
    }
    let val = render_all(&load_samples(&data.join(KV_VAL))?, max)?.iter().map(|s| LmSequence::targets_only(s, true)).collect();
    Ok((corpus, val))
}

pub fn pretrain_decoder(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<(DecoderModel<F>, TrainLog, Manifest)> {
    create_dir(out)?;
    let (corpus, val) = decoder_corpus(cfg, data)?;
    let mut decoder = DecoderModel::<F>::init(cfg.decoder.clone(), cfg.seed)?;
    let tc = cfg.stage(&cfg.pretrain_decoder, &[]);
    let log = train_decoder(&mut decoder, &corpus, Some(&val), &tc)?;
    save_decoder(&out.join(DECODER_FILE), &decoder)?;
    write_events(&out.join("events.jsonl"), "pretrain-decoder", [&log])?;
    let mut m = Manifest::new("pretrain-decoder", cfg.seed, &[], cfg);
    m.input("data", data)?;
    m.decoder_hash_after = Some(decoder.hash());
    m.finish(out)?;
    Ok((decoder, log, m))
}

// ------------------------------------------------------------------ capture

pub fn capture(
    cfg: &PipelineConfig,
    decoder_path: &Path,
    samples_path: &Path,
    layers: &[usize],
    out: &Path,
) -> Result<(CaptureCache<F>, Manifest)> {
    let decoder: DecoderModel<F> = load_decoder(decoder_path)?;
    let before = decoder.hash();
    let samples = load_samples(samples_path)?;
    let cache = capture_pass(&decoder, &samples, layers)?;
    let after = check_unchanged(&decoder, &before)?;
    save_cache(out, &cache, &before)?;
    let mut m = Manifest::new("capture", cfg.seed, layers, cfg);
    m.input("decoder", decoder_path)?.input("samples", samples_path)?;
    m.arg("skipped", cache.skipped);
    m.decoder_hash_before = Some(before);
    m.decoder_hash_after = Some(after);
    m.finish(out)?;
    Ok((cache, m))
}

// ----------------------------------------------------------------- pretrain

pub struct PretrainOutcome {
    pub bank: EncoderBank<F>,
    pub summary: PretrainSummary,
    pub manifest: Manifest,
}

fn fresh_bank(cfg: &PipelineConfig, decoder: &DecoderModel<F>, layers: &[usize]) -> Result<EncoderBank<F>> {
    let ec = EncoderConfig { layer_subset: layers.iter().copied().collect(), ..cfg.encoder.clone() };
    Ok(EncoderBank::init(ec, &decoder.config, cfg.seed)?)
}

/// Trains the encoders of `layers` on the capture cache in `jobs` worker
/// threads. Each worker loads only its own layers' target files; results
/// do not depend on `jobs`.
pub fn pretrain(
    cfg: &PipelineConfig,
    decoder_path: &Path,
    cache_dir: &Path,
    layers: &[usize],
    jobs: usize,
    out: &Path,
) -> Result<PretrainOutcome> {
    create_dir(out)?;
    let decoder: DecoderModel<F> = load_decoder(decoder_path)?;
    let before = decoder.hash();
    let index = load_index(cache_dir)?;
    if index.decoder_hash != before {
        return Err(diffinject_core::Error::FrozenDecoderViolated { expected: index.decoder_hash, found: before }.into());
    }
    let bank = fresh_bank(cfg, &decoder, layers)?;
    let tc = cfg.stage(&cfg.pretrain, layers);
    let (ec, encoders) = bank.into_encoders();
    let jobs = jobs.clamp(1, encoders.len().max(1));
    let mut groups: Vec<Vec<Encoder<F>>> = (0..jobs).map(|_| Vec::new()).collect();
    for (i, e) in encoders.into_iter().enumerate() {
        groups[i % jobs].push(e);
    }
    let results: Vec<Result<(Vec<Encoder<F>>, BTreeMap<usize, TrainLog>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = groups
            .into_iter()
            .map(|mut group| {
                let decoder = &decoder;
                let tc = &tc;
                s.spawn(move || -> Result<_> {
                    let mine: Vec<usize> = group.iter().map(|e| e.layer).collect();
                    let (cache, _) = load_cache::<F>(cache_dir, Some(&mine))?;
                    let mut refs: Vec<&mut Encoder<F>> = group.iter_mut().collect();
                    let logs = pretrain_encoders(&mut refs, decoder, &cache, tc)?;
                    Ok((group, logs))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("pretraining worker panicked")).collect()
    });
    let mut encoders = Vec::new();
    let mut logs = BTreeMap::new();
    for r in results {
        let (group, l) = r?;
        encoders.extend(group);
        logs.extend(l);
    }
    let bank = EncoderBank::from_encoders(ec, encoders)?;
    let after = check_unchanged(&decoder, &before)?;
    let diverged: Vec<usize> = logs.iter().filter(|(_, l)| l.diverged).map(|(k, _)| *k).collect();
    let summary = PretrainSummary { layers: layers.to_vec(), diverged: diverged.clone(), logs };
    let meta = BTreeMap::from([
        ("stage".to_string(), serde_json::json!("pretrain")),
        ("diverged".to_string(), serde_json::json!(diverged)),
    ]);
    save_bank(&out.join(BANK_FILE), &bank, &decoder, meta)?;
    write_json(&out.join(PRETRAIN_LOG), &summary)?;
    write_events(&out.join("events.jsonl"), "pretrain", summary.logs.values())?;
    let mut m = Manifest::new("pretrain", cfg.seed, layers, cfg);
    m.input("decoder", decoder_path)?.input("cache", cache_dir)?;
    m.arg("jobs", jobs);
    m.decoder_hash_before = Some(before);
    m.decoder_hash_after = Some(after);
    m.finish(out)?;
    Ok(PretrainOutcome { bank, summary, manifest: m })
}

// ------------------------------------------------------- finetune and edit

/// Loads a bank and checks it covers `layers`, or builds a fresh one.
pub fn bank_or_fresh(
    cfg: &PipelineConfig,
    decoder: &DecoderModel<F>,
    bank: Option<&Path>,
    layers: &[usize],
) -> Result<EncoderBank<F>> {
    match bank {
        Some(p) => {
            let (b, _) = load_bank::<F>(p, decoder)?;
            b.check_subset(layers)?;
            Ok(b)
        }
        None => fresh_bank(cfg, decoder, layers),
    }
}

pub struct FinetuneOutcome {
    pub bank: EncoderBank<F>,
    pub log: TrainLog,
    pub manifest: Manifest,
}

/// Cross-entropy training of the encoders. Without `bank` the encoders
/// start fresh (the no-pretraining arm).
pub fn finetune(
    cfg: &PipelineConfig,
    decoder_path: &Path,
    bank_path: Option<&Path>,
    train_path: &Path,
    val_path: Option<&Path>,
    layers: &[usize],
    out: &Path,
) -> Result<FinetuneOutcome> {
    create_dir(out)?;
    let decoder: DecoderModel<F> = load_decoder(decoder_path)?;
    let before = decoder.hash();
    let mut bank = bank_or_fresh(cfg, &decoder, bank_path, layers)?;
    let max = decoder.config.max_context;
    let train = render_all(&load_samples(train_path)?, max)?;
    let val = match val_path {
        Some(p) => Some(render_all(&load_samples(p)?, max)?),
        None => None,
    };
    let tc = cfg.stage(&cfg.finetune, layers);
    let log = finetune_encoders(&decoder, &mut bank, layers, &train, val.as_deref(), &tc)?;
    let after = check_unchanged(&decoder, &before)?;
    let meta = BTreeMap::from([
        ("stage".to_string(), serde_json::json!("finetune")),
        ("pretrained".to_string(), serde_json::json!(bank_path.is_some())),
    ]);
    save_bank(&out.join(BANK_FILE), &bank, &decoder, meta)?;
    write_json(&out.join("log.json"), &log)?;
    write_events(&out.join("events.jsonl"), "finetune", [&log])?;
    let mut m = Manifest::new("finetune", cfg.seed, layers, cfg);
    m.input("decoder", decoder_path)?.input("train", train_path)?;
    if let Some(p) = bank_path {
        m.input("bank", p)?;
    }
    if let Some(p) = val_path {
        m.input("val", p)?;
    }
    m.arg("no_pretrain", bank_path.is_none());
    m.decoder_hash_before = Some(before);
    m.decoder_hash_after = Some(after);
    m.finish(out)?;
    Ok(FinetuneOutcome { bank, log, manifest: m })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub pre: EditMetrics,
    pub post: EditMetrics,
    /// Target cross-entropy on the edit prompts after training.
    pub train_ce: f64,
    pub steps: usize,
}

pub struct EditOutcome {
    pub bank: EncoderBank<F>,
    pub log: TrainLog,
    pub report: EditReport,
    pub manifest: Manifest,
}

pub fn edit(
    cfg: &PipelineConfig,
    decoder_path: &Path,
    bank_path: Option<&Path>,
    edits_path: &Path,
    layers: &[usize],
    out: &Path,
) -> Result<EditOutcome> {
    create_dir(out)?;
    let decoder: DecoderModel<F> = load_decoder(decoder_path)?;
    let before = decoder.hash();
    let mut bank = bank_or_fresh(cfg, &decoder, bank_path, layers)?;
    let edits = load_edits(edits_path)?;
    let pre = edit_metrics(&ModelScorer::new(&decoder, Some(&bank), layers)?, &edits, EvalMode::Injected)?;
    let tc = cfg.stage(&cfg.edit, layers);
    let log = edit_encoders(&decoder, &mut bank, layers, &edits, &tc)?;
    let post = edit_metrics(&ModelScorer::new(&decoder, Some(&bank), layers)?, &edits, EvalMode::Injected)?;
    let prompts: Vec<KnowledgeSample> = edits.iter().map(EditSample::edit_sample).collect();
    let train_ce = injected_eval_loss(&decoder, &bank, layers, &render_all(&prompts, decoder.config.max_context)?)?;
    let after = check_unchanged(&decoder, &before)?;
    let report = EditReport { pre, post, train_ce, steps: log.steps.len() };
    let meta = BTreeMap::from([("stage".to_string(), serde_json::json!("edit"))]);
    save_bank(&out.join(BANK_FILE), &bank, &decoder, meta)?;
    write_json(&out.join("edit_metrics.json"), &report)?;
    write_events(&out.join("events.jsonl"), "edit", [&log])?;
    let mut m = Manifest::new("edit", cfg.seed, layers, cfg);
    m.input("decoder", decoder_path)?.input("edits", edits_path)?;
    if let Some(p) = bank_path {
        m.input("bank", p)?;
    }
    m.decoder_hash_before = Some(before);
    m.decoder_hash_after = Some(after);
    m.finish(out)?;
    Ok(EditOutcome { bank, log, report, manifest: m })
}

// --------------------------------------------------------------------- eval

pub struct EvalInputs<'a> {
    /// `(name, path)` of knowledge-sample datasets.
    pub datasets: Vec<(String, PathBuf)>,
    pub edits: Option<&'a Path>,
    pub modes: Vec<EvalMode>,
}

/// Perplexity for every dataset and mode, label accuracy where every
/// target is a label, and edit metrics when an edit file is given.
pub fn eval(
    cfg: &PipelineConfig,
    decoder_path: &Path,
    bank_path: Option<&Path>,
    inputs: &EvalInputs<'_>,
    layers: &[usize],
    out: &Path,
) -> Result<(MetricsReport, Manifest)> {
    create_dir(out)?;
    let decoder: DecoderModel<F> = load_decoder(decoder_path)?;
    let bank = match bank_path {
        Some(p) => {
            let (b, _) = load_bank::<F>(p, &decoder)?;
            b.check_subset(layers)?;
            Some(b)
        }
        None => None,
    };
    if bank.is_none() && inputs.modes.contains(&EvalMode::Injected) {
        return Err(Error::Usage("injected mode needs --bank".into()));
    }
    let scorer = ModelScorer::new(&decoder, bank.as_ref(), layers)?;
    let mut report = MetricsReport { fingerprint: decoder.hash(), ..MetricsReport::default() };
    let mut m = Manifest::new("eval", cfg.seed, layers, cfg);
    m.input("decoder", decoder_path)?;
    if let Some(p) = bank_path {
        m.input("bank", p)?;
    }
    for (name, path) in &inputs.datasets {
        let data = load_samples(path)?;
        m.input(&format!("data.{name}"), path)?;
        let labelled = !data.is_empty() && data.iter().all(|s| LABELS.contains(&s.target.as_str()));
        for &mode in &inputs.modes {
            let key = MetricsReport::key(name, mode);
            report.perplexity.insert(key.clone(), perplexity(&scorer, &data, mode)?);
            if labelled {
                report.accuracy.insert(key, icr_accuracy(&scorer, &data, mode)?);
            }
        }
    }
    if let Some(p) = inputs.edits {
        let edits = load_edits(p)?;
        m.input("edits", p)?;
        for &mode in inputs.modes.iter().filter(|m| **m != EvalMode::Concat) {
            report.edits.insert(MetricsReport::key("counterfact", mode), edit_metrics(&scorer, &edits, mode)?);
        }
    }
    write_json(&out.join("metrics.json"), &report)?;
    write_text(&out.join("metrics.txt"), &report.to_table())?;
    m.arg("modes", inputs.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
    m.finish(out)?;
    Ok((report, m))
}

// -------------------------------------------------------------------- bench

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub flops: Vec<FlopRow>,
    pub grad_memory: Vec<GradMemoryRow>,
}

/// Wall-clock files; they differ run to run and stay out of the manifest.
pub const TIMING_FILES: [&str; 2] = ["timing.json", "timing.txt"];

/// FLOP and gradient-memory profiles, plus wall-clock inference timings
/// when `timing` is set.
pub fn bench(
    cfg: &PipelineConfig,
    decoder_path: &Path,
    bank_path: Option<&Path>,
    layers: &[usize],
    timing: bool,
    out: &Path,
) -> Result<(BenchReport, Option<TimingReport>, Manifest)> {
    create_dir(out)?;
    let decoder: DecoderModel<F> = load_decoder(decoder_path)?;
    let bank = bank_or_fresh(cfg, &decoder, bank_path, layers)?;
    let b = &cfg.bench;
    let modes = [EvalMode::Plain, EvalMode::Concat, EvalMode::Injected];
    let flops = flop_profile(&decoder, &bank, layers, &modes, &b.k_lens, b.x_len)?;
    let sample = render(&KnowledgeSample::new(vec!["KEY is val".into(), "ABC is xyz".into()], "what is KEY?", "val"))?;
    let grad_memory = grad_memory_profile(&decoder, &bank, layers, &sample)?;
    let report = BenchReport { flops, grad_memory };
    write_json(&out.join("bench.json"), &report)?;
    write_text(&out.join("flops.csv"), &flop_csv(&report.flops))?;
    let mut text = flop_table(&report.flops);
    text.push('\n');
    text.push_str(&grad_memory_table(&report.grad_memory));
    write_text(&out.join("bench.txt"), &text)?;
    let timing = if timing { Some(time_inference(cfg, &decoder, &bank, layers)?) } else { None };
    if let Some(t) = &timing {
        write_json(&out.join(TIMING_FILES[0]), t)?;
        write_text(&out.join(TIMING_FILES[1]), &timing_table(t))?;
    }
    let mut m = Manifest::new("bench", cfg.seed, layers, cfg);
    m.input("decoder", decoder_path)?;
    if let Some(p) = bank_path {
        m.input("bank", p)?;
    }
    m.arg("timing", timing.is_some());
    m.finish_excluding(out, &TIMING_FILES)?;
    Ok((report, timing, m))
}

/// Median forward wall-clock of the three modes at one knowledge length.
pub fn time_inference(
    cfg: &PipelineConfig,
    decoder: &DecoderModel<F>,
    bank: &EncoderBank<F>,
    layers: &[usize],
) -> Result<TimingReport> {
    let b = &cfg.bench;
    let mut frozen = bank.clone();
    for e in frozen.encoders_mut() {
        for (_, p) in e.named_params_mut() {
            p.set_requires_grad(false);
        }
    }
    let x = filler_tokens(b.x_len, 3);
    let k = filler_tokens(b.timing_k_len, 11);
    let tag = |m: &str| format!("{m} |K|={} |x|={}", b.timing_k_len, b.x_len);
    let rows = vec![
        time_task(&tag("plain"), b.reps, || {
            decoder.forward(&Graph::new(), &plain_run(&x), false)?;
            Ok(())
        })?,
        time_task(&tag("concat"), b.reps, || {
            decoder.forward(&Graph::new(), &knowledge_run(&k, &x), false)?;
            Ok(())
        })?,
        time_task(&tag("injected"), b.reps, || {
            injected_forward(&Graph::new(), decoder, &frozen, layers, &k, &x, false)?;
            Ok(())
        })?,
    ];
    Ok(TimingReport { fingerprint: Fingerprint::current(), rows })
}
