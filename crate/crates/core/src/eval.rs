//! Perplexity over target tokens, counterfactual edit success rates and
//! label-scoring accuracy for rule reasoning.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{render_within, EditSample, KnowledgeSample, Rendered, LABELS};
use crate::injection::injected_forward;
use crate::kernels::token_log_probs;
use crate::model::{DecoderModel, EncoderBank};
use crate::{Error, Graph, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Decoder on `[BOS] x`.
    Plain,
    /// Decoder on `[BOS] K x`.
    Concat,
    /// Decoder on `[BOS] x` with encoder corrections.
    Injected,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Plain => "plain",
            EvalMode::Concat => "concat",
            EvalMode::Injected => "injected",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(EvalMode::Plain),
            "concat" => Ok(EvalMode::Concat),
            "injected" => Ok(EvalMode::Injected),
            other => Err(Error::Invalid(format!("unknown mode {other:?}; expected plain, concat or injected"))),
        }
    }
}

/// Log-probabilities of the target tokens of a rendered sample.
pub trait Scorer {
    fn max_context(&self) -> usize;

    fn target_log_probs(&self, sample: &Rendered, mode: EvalMode) -> Result<Vec<f64>>;
}

/// Scores with the decoder, optionally injecting from a bank.
pub struct ModelScorer<'a, T: Real> {
    decoder: &'a DecoderModel<T>,
    bank: Option<EncoderBank<T>>,
    subset: Vec<usize>,
}

impl<'a, T: Real> ModelScorer<'a, T> {
    /// The bank is copied with gradients switched off.
    pub fn new(decoder: &'a DecoderModel<T>, bank: Option<&EncoderBank<T>>, subset: &[usize]) -> Result<Self> {
        let bank = match bank {
            Some(b) => {
                b.check_subset(subset)?;
                let mut b = b.clone();
                for e in b.encoders_mut() {
                    for (_, p) in e.named_params_mut() {
                        p.set_requires_grad(false);
                    }
                }
                Some(b)
            }
            None => None,
        };
        Ok(ModelScorer { decoder, bank, subset: subset.to_vec() })
    }
}

impl<T: Real> Scorer for ModelScorer<'_, T> {
    fn max_context(&self) -> usize {
        self.decoder.config.max_context
    }

    fn target_log_probs(&self, r: &Rendered, mode: EvalMode) -> Result<Vec<f64>> {
        let g = Graph::<T>::new();
        let (logits, lt) = match mode {
            EvalMode::Plain => (self.decoder.forward(&g, &r.plain_run(), false)?.logits, r.loss_targets(false)),
            EvalMode::Concat => (self.decoder.forward(&g, &r.ids, false)?.logits, r.loss_targets(true)),
            EvalMode::Injected => {
                let bank = self.bank.as_ref().ok_or_else(|| Error::Invalid("injected mode needs an encoder bank".into()))?;
                let out =
                    injected_forward(&g, self.decoder, bank, &self.subset, r.knowledge_tokens(), r.input_tokens(), false)?;
                (out.logits, r.loss_targets(false))
            }
        };
        let rows: Vec<(usize, u32)> =
            lt.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| (i, lt.targets[i])).collect();
        Ok(token_log_probs(logits.data(), logits.cols(), &rows).into_iter().map(Real::as_f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub perplexity: f64,
    pub mean_nll: f64,
    pub tokens: usize,
    pub samples: usize,
}

/// `exp` of the mean negative log-likelihood over all target tokens.
pub fn perplexity(scorer: &dyn Scorer, data: &[KnowledgeSample], mode: EvalMode) -> Result<PerplexityResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut nll, mut tokens) = (0.0, 0usize);
    for (i, s) in data.iter().enumerate() {
        let r = render_within(s, scorer.max_context()).map_err(|e| Error::Sample { index: i, reason: e.to_string() })?;
        let lp = scorer.target_log_probs(&r, mode)?;
        nll -= lp.iter().sum::<f64>();
        tokens += lp.len();
    }
    let mean_nll = nll / tokens as f64;
    Ok(PerplexityResult { perplexity: Float::exp(mean_nll), mean_nll, tokens, samples: data.len() })
}

/// Mean per-token log-probability of `object` after `prompt`, no knowledge.
pub fn object_score(scorer: &dyn Scorer, prompt: &str, object: &str, mode: EvalMode) -> Result<f64> {
    let r = render_within(&KnowledgeSample::new(Vec::new(), prompt, object), scorer.max_context())?;
    let lp = scorer.target_log_probs(&r, mode)?;
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditMetrics {
    /// Fraction of edits whose counter object outscores the true object on
    /// the edit prompt.
    pub es: f64,
    /// Same over all paraphrase prompts.
    pub ps: f64,
    /// Fraction of neighbourhood prompts where the true object still wins.
    pub ns: f64,
    /// Per-edit means of the paraphrase and neighbourhood success rates.
    pub ps_per_edit: f64,
    pub ns_per_edit: f64,
    pub edits: usize,
    pub es_hits: usize,
    pub paraphrase_prompts: usize,
    pub ps_hits: usize,
    pub neighborhood_prompts: usize,
    pub ns_hits: usize,
}

/// Ties count against ES and PS and for NS.
pub fn edit_metrics(scorer: &dyn Scorer, edits: &[EditSample], mode: EvalMode) -> Result<EditMetrics> {
    if edits.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut m = EditMetrics { edits: edits.len(), ..EditMetrics::default() };
    let (mut ps_sum, mut ns_sum) = (0.0, 0.0);
    for (i, e) in edits.iter().enumerate() {
        if e.paraphrases.is_empty() || e.neighborhood.is_empty() {
            return Err(Error::Sample { index: i, reason: format!("edit for {} has an empty prompt list", e.subject) });
        }
        let flips = |p: &str| -> Result<bool> {
            Ok(object_score(scorer, p, &e.counter_object, mode)? > object_score(scorer, p, &e.true_object, mode)?)
        };
        m.es_hits += flips(&e.prompt)? as usize;
        let mut hits = 0;
        for p in &e.paraphrases {
            hits += flips(p)? as usize;
        }
        m.ps_hits += hits;
        m.paraphrase_prompts += e.paraphrases.len();
        ps_sum += hits as f64 / e.paraphrases.len() as f64;
        let mut kept = 0;
        for p in &e.neighborhood {
            kept += !flips(p)? as usize;
        }
        m.ns_hits += kept;
        m.neighborhood_prompts += e.neighborhood.len();
        ns_sum += kept as f64 / e.neighborhood.len() as f64;
    }
    m.es = m.es_hits as f64 / m.edits as f64;
    m.ps = m.ps_hits as f64 / m.paraphrase_prompts as f64;
    m.ns = m.ns_hits as f64 / m.neighborhood_prompts as f64;
    m.ps_per_edit = ps_sum / m.edits as f64;
    m.ns_per_edit = ns_sum / m.edits as f64;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub accuracy: f64,
    pub correct: usize,
    pub samples: usize,
}

/// Predicts the label with the highest mean per-token log-probability;
/// ties go to the earlier label.
pub fn icr_accuracy(scorer: &dyn Scorer, data: &[KnowledgeSample], mode: EvalMode) -> Result<AccuracyResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    for (i, s) in data.iter().enumerate() {
        if !LABELS.contains(&s.target.as_str()) {
            return Err(Error::Sample { index: i, reason: format!("target {:?} is not a label", s.target) });
        }
        let mut best = (f64::NEG_INFINITY, "");
        for label in LABELS {
            let cand = KnowledgeSample::new(s.knowledge.clone(), s.source.clone(), label);
            let r = render_within(&cand, scorer.max_context()).map_err(|e| Error::Sample { index: i, reason: e.to_string() })?;
            let lp = scorer.target_log_probs(&r, mode)?;
            let score = lp.iter().sum::<f64>() / lp.len() as f64;
            if score > best.0 {
                best = (score, label);
            }
        }
        correct += (best.1 == s.target) as usize;
    }
    Ok(AccuracyResult { accuracy: correct as f64 / data.len() as f64, correct, samples: data.len() })
}

/// Everything eval reports, keyed `dataset/mode` with sorted keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fingerprint: String,
    pub perplexity: BTreeMap<String, PerplexityResult>,
    pub accuracy: BTreeMap<String, AccuracyResult>,
    pub edits: BTreeMap<String, EditMetrics>,
}

impl MetricsReport {
    pub fn key(dataset: &str, mode: EvalMode) -> String {
        format!("{dataset}/{}", mode.name())
    }

    /// Aligned plain-text table, one row per entry.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<[String; 3]> = Vec::new();
        for (k, v) in &self.perplexity {
            rows.push([k.clone(), "perplexity".into(), format!("{:.4} ({} tokens)", v.perplexity, v.tokens)]);
        }
        for (k, v) in &self.accuracy {
            rows.push([k.clone(), "accuracy".into(), format!("{:.4} ({}/{})", v.accuracy, v.correct, v.samples)]);
        }
        for (k, v) in &self.edits {
            rows.push([k.clone(), "ES".into(), format!("{:.4} ({}/{})", v.es, v.es_hits, v.edits)]);
            rows.push([k.clone(), "PS".into(), format!("{:.4} ({}/{})", v.ps, v.ps_hits, v.paraphrase_prompts)]);
            rows.push([k.clone(), "NS".into(), format!("{:.4} ({}/{})", v.ns, v.ns_hits, v.neighborhood_prompts)]);
        }
        let w0 = rows.iter().map(|r| r[0].len()).max().unwrap_or(0).max(7);
        let w1 = rows.iter().map(|r| r[1].len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w0$}  {:<w1$}  value", "dataset", "metric");
        for r in rows {
            let _ = writeln!(out, "{:<w0$}  {:<w1$}  {}", r[0], r[1], r[2]);
        }
        out
    }
}
