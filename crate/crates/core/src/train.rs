//! Capture pass, hidden-state regression of the encoders, fine-tuning and
//! editing through the frozen decoder, and the desk-scale language-model
//! pretraining that produces the decoder in the first place.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{render_within, EditSample, KnowledgeSample, Rendered};
use crate::injection::{build_pretrain_targets, injected_forward, AlignedTarget};
use crate::model::{DecoderModel, Encoder, EncoderBank};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::{Error, Graph, OpCounters, Real, Result, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Finetune,
    Edit,
    /// Next-token training of the decoder itself, before it is frozen.
    Language,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub layers: Vec<usize>,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Steps after which an encoder still at or above its zero-predictor
    /// baseline is flagged as divergent.
    pub patience: u64,
    /// Evaluate every this many steps (0 disables).
    pub eval_every: u64,
    /// Pretraining stops once the smoothed loss falls to this fraction of
    /// the baseline.
    pub stop_ratio: Option<f64>,
    /// Fine-tuning stops once the evaluated training loss falls below this.
    pub stop_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Pretrain,
            layers: crate::model::MEMIT_LAYERS.to_vec(),
            lr_start: 1e-5,
            lr_peak: 1e-4,
            lr_end: 1e-5,
            warmup_steps: 100,
            max_steps: 2000,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig::default(),
            patience: 500,
            eval_every: 0,
            stop_ratio: None,
            stop_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_peak >= self.lr_start && self.lr_peak >= self.lr_end) {
            return Err(Error::Config(format!(
                "peak rate {} below start {} or end {}",
                self.lr_peak, self.lr_start, self.lr_end
            )));
        }
        if self.max_steps <= self.warmup_steps {
            return Err(Error::Config(format!(
                "max_steps {} must exceed warmup_steps {}",
                self.max_steps, self.warmup_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warmup from `lr_start` to `lr_peak`, then cosine decay to `lr_end`
/// at `max_steps`; constant afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if step < cfg.warmup_steps {
        let f = step as f64 / cfg.warmup_steps as f64;
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * f;
    }
    let span = cfg.max_steps.saturating_sub(cfg.warmup_steps).max(1);
    let f = (step.min(cfg.max_steps) - cfg.warmup_steps) as f64 / span as f64;
    cfg.lr_end + (cfg.lr_peak - cfg.lr_end) * 0.5 * (1.0 + Float::cos(core::f64::consts::PI * f))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub counters: OpCounters,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Optimizer steps taken before the evaluation.
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: Mode,
    pub layer: Option<usize>,
    /// Zero-predictor loss over the whole cache (pretraining only).
    pub baseline: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub diverged: bool,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn new(mode: Mode, layer: Option<usize>) -> Self {
        TrainLog { mode, layer, baseline: None, steps: Vec::new(), evals: Vec::new(), diverged: false, stopped_early: false }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    /// Mean of the last `n` step losses.
    pub fn tail_loss(&self, n: usize) -> Option<f64> {
        let k = n.min(self.steps.len());
        (k > 0).then(|| self.steps[self.steps.len() - k..].iter().map(|s| s.loss).sum::<f64>() / k as f64)
    }

    /// Lowest mean over `n` consecutive step losses.
    pub fn best_smoothed(&self, n: usize) -> Option<f64> {
        let l = self.losses();
        let n = n.min(l.len()).max(1);
        l.windows(n).map(|w| w.iter().sum::<f64>() / n as f64).reduce(f64::min)
    }

    /// First evaluation at or below `loss`.
    pub fn steps_to_reach(&self, loss: f64) -> Option<u64> {
        self.evals.iter().find(|e| e.loss <= loss).map(|e| e.step)
    }
}

/// Seeded epoch-wise shuffling, independent of which layers are trained.
pub struct BatchOrder {
    seed: u64,
    n: usize,
    batch: usize,
    epoch: u64,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    pub fn new(seed: u64, n: usize, batch: usize) -> Self {
        BatchOrder { seed, n, batch: batch.min(n).max(1), epoch: 0, perm: Vec::new(), pos: n }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos >= self.n {
                self.perm = (0..self.n).collect();
                self.perm.shuffle(&mut rng::stream(self.seed, "batch-order", self.epoch));
                self.epoch += 1;
                self.pos = 0;
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Difference targets for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureRecord<T: Real> {
    pub id: u64,
    /// The knowledge run `[BOS] K x`.
    pub tokens: Vec<u32>,
    pub target: AlignedTarget<T>,
}

impl<T: Real> CaptureRecord<T> {
    pub fn k_len(&self) -> usize {
        self.target.k_len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureCache<T: Real> {
    pub d_model: usize,
    pub layers: Vec<usize>,
    pub records: Vec<CaptureRecord<T>>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl<T: Real> CaptureCache<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_layer(&self, l: usize) -> bool {
        self.layers.contains(&l)
    }

    /// Token-weighted zero-predictor loss of layer `l` over all records.
    pub fn baseline(&self, l: usize) -> Result<f64> {
        let (mut sq, mut n) = (0.0, 0usize);
        for r in &self.records {
            let t = r.target.layer(l)?;
            sq += t.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            n += t.len();
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(sq / n as f64)
    }

    /// Keeps only layer `l`.
    pub fn layer_only(&self, l: usize) -> Result<CaptureCache<T>> {
        if !self.has_layer(l) {
            return Err(Error::MissingLayer(l));
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut target = r.target.clone();
                target.layers.retain(|k, _| *k == l);
                CaptureRecord { id: r.id, tokens: r.tokens.clone(), target }
            })
            .collect();
        Ok(CaptureCache { d_model: self.d_model, layers: alloc::vec![l], records, skipped: self.skipped, warnings: Vec::new() })
    }
}

/// Runs the frozen decoder twice per sample (knowledge run and plain run)
/// and stores the aligned differences of `layers`. Overlong samples are
/// skipped with a warning.
pub fn capture_pass<T: Real>(
    decoder: &DecoderModel<T>,
    samples: &[KnowledgeSample],
    layers: &[usize],
) -> Result<CaptureCache<T>> {
    if !decoder.is_frozen() {
        return Err(Error::Invalid("capture requires a frozen decoder".into()));
    }
    if let Some(bad) = layers.iter().find(|l| **l >= decoder.config.n_layers) {
        return Err(Error::MissingLayer(*bad));
    }
    let mut cache = CaptureCache {
        d_model: decoder.config.d_model,
        layers: layers.to_vec(),
        records: Vec::with_capacity(samples.len()),
        skipped: 0,
        warnings: Vec::new(),
    };
    for (i, s) in samples.iter().enumerate() {
        let r = match render_within(s, decoder.config.max_context) {
            Ok(r) => r,
            Err(e @ Error::Overlong { .. }) => {
                cache.skipped += 1;
                cache.warnings.push(format!("sample {i}: {e}"));
                continue;
            }
            Err(e) => return Err(Error::Sample { index: i, reason: format!("{e}") }),
        };
        let g = Graph::new();
        let hk: Vec<Tensor<T>> = decoder.forward(&g, r.knowledge_run(), true)?.hidden.iter().map(Var::to_tensor).collect();
        let hp: Vec<Tensor<T>> = decoder.forward(&g, &r.plain_run(), true)?.hidden.iter().map(Var::to_tensor).collect();
        let target = build_pretrain_targets(&hp, &hk, r.k_len, layers)?;
        let c = g.counters();
        if c.grad_allocations != 0 {
            return Err(Error::Invalid(format!("capture allocated {} gradient buffers", c.grad_allocations)));
        }
        cache.records.push(CaptureRecord { id: i as u64, tokens: r.ids, target });
    }
    Ok(cache)
}

/// Renders samples, rejecting overlong ones and ones without target tokens.
pub fn render_all(samples: &[KnowledgeSample], max_context: usize) -> Result<Vec<Rendered>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| render_within(s, max_context).map_err(|e| Error::Sample { index: i, reason: format!("{e}") }))
        .collect()
}

fn weighted_sum<T: Real>(g: &Graph<T>, parts: Vec<(Var<T>, usize)>) -> Result<Var<T>> {
    let total: usize = parts.iter().map(|(_, n)| *n).sum();
    let mut acc: Option<Var<T>> = None;
    for (loss, n) in parts {
        let term = g.scale(&loss, T::lit(n as f64 / total as f64));
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(&a, &term)?,
        });
    }
    acc.ok_or(Error::EmptyDataset)
}

/// Regression loss of one encoder on a batch of records, averaged over
/// valid rows and hidden units.
pub fn pretrain_loss<T: Real>(
    g: &Graph<T>,
    encoder: &Encoder<T>,
    decoder: &DecoderModel<T>,
    records: &[&CaptureRecord<T>],
) -> Result<Var<T>> {
    let mut parts = Vec::with_capacity(records.len());
    for r in records {
        let out = encoder.forward(g, decoder, &r.tokens)?;
        let t = &r.target;
        let rows = t.valid_rows();
        let pred = g.slice_rows(&out, t.valid_from(), rows)?;
        let target = g.value(&[rows, t.d_model], t.layer(encoder.layer)?.to_vec())?;
        parts.push((g.masked_mse(&pred, &target, &alloc::vec![true; rows])?, rows));
    }
    weighted_sum(g, parts)
}

const SMOOTHING: usize = 20;

/// Trains the given encoders in lockstep on one shared batch sequence, each
/// with its own optimizer, by summing their regression losses into one
/// graph. An encoder's trajectory does not depend on which others are
/// present.
pub fn pretrain_encoders<T: Real>(
    encoders: &mut [&mut Encoder<T>],
    decoder: &DecoderModel<T>,
    cache: &CaptureCache<T>,
    cfg: &TrainConfig,
) -> Result<BTreeMap<usize, TrainLog>> {
    cfg.validate()?;
    if cache.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut logs = BTreeMap::new();
    let mut opts = BTreeMap::new();
    for e in encoders.iter() {
        if !cache.has_layer(e.layer) {
            return Err(Error::MissingLayer(e.layer));
        }
        let mut log = TrainLog::new(Mode::Pretrain, Some(e.layer));
        log.baseline = Some(cache.baseline(e.layer)?);
        logs.insert(e.layer, log);
        opts.insert(e.layer, Adam::<T>::new(cfg.adam));
    }
    let mut active: BTreeSet<usize> = logs.keys().copied().collect();
    let mut order = BatchOrder::new(cfg.seed, cache.len(), cfg.batch_size);
    for step in 0..cfg.max_steps {
        if active.is_empty() {
            break;
        }
        let batch: Vec<&CaptureRecord<T>> = order.next_batch().into_iter().map(|i| &cache.records[i]).collect();
        let lr = lr_at(step, cfg);
        let g = Graph::new();
        let mut losses = Vec::new();
        for e in encoders.iter().filter(|e| active.contains(&e.layer)) {
            losses.push((e.layer, pretrain_loss(&g, e, decoder, &batch)?));
        }
        let mut total = losses[0].1.clone();
        for (_, l) in &losses[1..] {
            total = g.add(&total, l)?;
        }
        let mut grads = g.backward(&total)?;
        let counters = g.counters();
        for e in encoders.iter_mut().filter(|e| active.contains(&e.layer)) {
            let layer = e.layer;
            let mut params = e.named_params_mut();
            for (_, p) in params.iter_mut() {
                grads.store_into(p);
            }
            opts.get_mut(&layer).unwrap().step(params, lr)?;
        }
        for (layer, loss) in losses {
            let log = logs.get_mut(&layer).unwrap();
            log.steps.push(StepRecord { step, loss: loss.item().as_f64(), lr, counters });
            let baseline = log.baseline.unwrap_or(0.0);
            let smoothed = log.tail_loss(SMOOTHING).unwrap_or(f64::INFINITY);
            if step + 1 >= cfg.patience && !log.diverged && smoothed >= baseline {
                log.diverged = true;
            }
            if let Some(ratio) = cfg.stop_ratio {
                if log.steps.len() >= SMOOTHING && smoothed <= ratio * baseline {
                    log.stopped_early = true;
                    active.remove(&layer);
                }
            }
        }
    }
    Ok(logs)
}

/// Regression pretraining of a single encoder.
pub fn pretrain_encoder<T: Real>(
    encoder: &mut Encoder<T>,
    decoder: &DecoderModel<T>,
    cache: &CaptureCache<T>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let layer = encoder.layer;
    let mut logs = pretrain_encoders(&mut [encoder], decoder, cache, cfg)?;
    Ok(logs.remove(&layer).unwrap())
}

/// Pretrains every encoder of `cfg.layers` jointly.
pub fn pretrain_bank<T: Real>(
    bank: &mut EncoderBank<T>,
    decoder: &DecoderModel<T>,
    cache: &CaptureCache<T>,
    cfg: &TrainConfig,
) -> Result<BTreeMap<usize, TrainLog>> {
    bank.check_subset(&cfg.layers)?;
    let mut encs: Vec<&mut Encoder<T>> = bank.encoders_mut().filter(|e| cfg.layers.contains(&e.layer)).collect();
    pretrain_encoders(&mut encs, decoder, cache, cfg)
}

/// Target-token cross-entropy of the injected decoder on one rendered
/// sample, with the token count it averages over.
pub fn injected_loss<T: Real>(
    g: &Graph<T>,
    decoder: &DecoderModel<T>,
    bank: &EncoderBank<T>,
    subset: &[usize],
    r: &Rendered,
) -> Result<(Var<T>, usize)> {
    let out = injected_forward(g, decoder, bank, subset, r.knowledge_tokens(), r.input_tokens(), false)?;
    let lt = r.loss_targets(false);
    Ok((g.masked_cross_entropy(&out.logits, &lt.targets, &lt.mask)?, lt.count()))
}

/// Token-weighted mean target cross-entropy over a dataset, no gradients.
pub fn injected_eval_loss<T: Real>(
    decoder: &DecoderModel<T>,
    bank: &EncoderBank<T>,
    subset: &[usize],
    data: &[Rendered],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut frozen = bank.clone();
    for e in frozen.encoders_mut() {
        for (_, p) in e.named_params_mut() {
            p.set_requires_grad(false);
        }
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for r in data {
        let g = Graph::new();
        let (loss, count) = injected_loss(&g, decoder, &frozen, subset, r)?;
        sum += loss.item().as_f64() * count as f64;
        n += count;
    }
    Ok(sum / n as f64)
}

/// Cross-entropy fine-tuning of the encoders in `subset` through the frozen
/// decoder. `val` is evaluated every `eval_every` steps (and at the start
/// and end); with `stop_loss` set, training stops once the loss on `train`
/// falls below it at an evaluation point.
pub fn finetune<T: Real>(
    decoder: &DecoderModel<T>,
    bank: &mut EncoderBank<T>,
    subset: &[usize],
    train: &[Rendered],
    val: Option<&[Rendered]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    bank.check_subset(subset)?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !decoder.is_frozen() {
        return Err(Error::Invalid("fine-tuning requires a frozen decoder".into()));
    }
    let mut log = TrainLog::new(cfg.mode, None);
    let mut opt = Adam::<T>::new(cfg.adam);
    let mut order = BatchOrder::new(cfg.seed, train.len(), cfg.batch_size);
    let eval = |bank: &EncoderBank<T>, log: &mut TrainLog, step: u64| -> Result<bool> {
        if let Some(v) = val {
            log.evals.push(EvalRecord { step, loss: injected_eval_loss(decoder, bank, subset, v)? });
        }
        match cfg.stop_loss {
            Some(stop) => Ok(injected_eval_loss(decoder, bank, subset, train)? < stop),
            None => Ok(false),
        }
    };
    if cfg.eval_every > 0 && eval(bank, &mut log, 0)? {
        log.stopped_early = true;
        return Ok(log);
    }
    for step in 0..cfg.max_steps {
        let lr = lr_at(step, cfg);
        let g = Graph::new();
        let mut parts = Vec::new();
        for i in order.next_batch() {
            parts.push(injected_loss(&g, decoder, bank, subset, &train[i])?);
        }
        let loss = weighted_sum(&g, parts)?;
        let mut grads = g.backward(&loss)?;
        let counters = g.counters();
        let mut params = bank.named_params_mut_for(subset)?;
        for (_, p) in params.iter_mut() {
            grads.store_into(p);
        }
        opt.step(params, lr)?;
        log.steps.push(StepRecord { step, loss: loss.item().as_f64(), lr, counters });
        let done = step + 1 == cfg.max_steps;
        if cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || done) && eval(bank, &mut log, step + 1)? {
            log.stopped_early = !done;
            break;
        }
    }
    Ok(log)
}

/// Editing: fine-tuning on `(prompt, counter object)` pairs with no
/// knowledge given to either the decoder or the encoders.
pub fn edit<T: Real>(
    decoder: &DecoderModel<T>,
    bank: &mut EncoderBank<T>,
    subset: &[usize],
    edits: &[EditSample],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let samples: Vec<KnowledgeSample> = edits.iter().map(EditSample::edit_sample).collect();
    let rendered = render_all(&samples, decoder.config.max_context)?;
    if let Some(i) = rendered.iter().position(|r| r.k_len != 0) {
        return Err(Error::Sample { index: i, reason: "edit samples carry no knowledge".into() });
    }
    let mut log = finetune(decoder, bank, subset, &rendered, None, &TrainConfig { mode: Mode::Edit, ..cfg.clone() })?;
    log.mode = Mode::Edit;
    Ok(log)
}

/// One language-model training sequence: tokens and the positions whose
/// next token is scored.
#[derive(Clone, Debug, PartialEq)]
pub struct LmSequence {
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl LmSequence {
    /// Every next token of the run is scored.
    pub fn full(tokens: Vec<u32>) -> Self {
        let n = tokens.len();
        let mut targets: Vec<u32> = tokens[1..].to_vec();
        targets.push(0);
        let mut mask = alloc::vec![true; n];
        mask[n - 1] = false;
        LmSequence { tokens, targets, mask }
    }

    /// Only target tokens are scored.
    pub fn targets_only(r: &Rendered, with_knowledge: bool) -> Self {
        let lt = r.loss_targets(with_knowledge);
        let tokens = if with_knowledge { r.ids.clone() } else { r.plain_run() };
        LmSequence { tokens, targets: lt.targets, mask: lt.mask }
    }
}

/// Trains all decoder parameters with next-token cross-entropy, then
/// freezes the decoder again.
pub fn pretrain_decoder<T: Real>(
    decoder: &mut DecoderModel<T>,
    corpus: &[LmSequence],
    val: Option<&[LmSequence]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    decoder.set_trainable(true);
    let result = (|| {
        let mut log = TrainLog::new(Mode::Language, None);
        let mut opt = Adam::<T>::new(cfg.adam);
        let mut order = BatchOrder::new(cfg.seed, corpus.len(), cfg.batch_size);
        for step in 0..cfg.max_steps {
            let lr = lr_at(step, cfg);
            let g = Graph::new();
            let mut parts = Vec::new();
            for i in order.next_batch() {
                let s = &corpus[i];
                let logits = decoder.forward(&g, &s.tokens, false)?.logits;
                let n = s.mask.iter().filter(|m| **m).count();
                parts.push((g.masked_cross_entropy(&logits, &s.targets, &s.mask)?, n));
            }
            let loss = weighted_sum(&g, parts)?;
            let mut grads = g.backward(&loss)?;
            let counters = g.counters();
            let mut params = decoder.named_params_mut();
            for (_, p) in params.iter_mut() {
                grads.store_into(p);
            }
            opt.step(params, lr)?;
            log.steps.push(StepRecord { step, loss: loss.item().as_f64(), lr, counters });
            if let (Some(v), true) = (val, cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
                log.evals.push(EvalRecord { step: step + 1, loss: lm_eval_loss(decoder, v)? });
            }
        }
        Ok(log)
    })();
    decoder.set_trainable(false);
    result
}

/// Token-weighted cross-entropy of the decoder on `data`, no gradients.
pub fn lm_eval_loss<T: Real>(decoder: &DecoderModel<T>, data: &[LmSequence]) -> Result<f64> {
    let mut frozen = decoder.clone();
    frozen.set_trainable(false);
    let (mut sum, mut n) = (0.0, 0usize);
    for s in data {
        let g = Graph::new();
        let logits = frozen.forward(&g, &s.tokens, false)?.logits;
        let count = s.mask.iter().filter(|m| **m).count();
        sum += g.masked_cross_entropy(&logits, &s.targets, &s.mask)?.item().as_f64() * count as f64;
        n += count;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / n as f64)
}
