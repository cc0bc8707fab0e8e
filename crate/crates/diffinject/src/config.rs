//! Pipeline configuration, read from TOML. Command-line flags override the
//! file.

use std::path::Path;

use diffinject_core::model::{DecoderConfig, EncoderConfig};
use diffinject_core::train::{Mode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kv_entities: usize,
    pub kv_distractors: usize,
    pub counterfacts: usize,
    pub rules: usize,
    /// Copies of the true counterfact statements in the decoder corpus.
    pub fact_repeats: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { kv_entities: 1000, kv_distractors: 0, counterfacts: 20, rules: 300, fact_repeats: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub k_lens: Vec<usize>,
    pub x_len: usize,
    pub reps: usize,
    /// Knowledge length of the timed inference comparison.
    pub timing_k_len: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { k_lens: vec![0, 64, 128, 256], x_len: 32, reps: 5, timing_k_len: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Layer selection, e.g. `3-8`, `all` or `conv`.
    pub layers: String,
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
    pub data: DataConfig,
    pub pretrain_decoder: TrainConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub edit: TrainConfig,
    pub bench: BenchConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn stage(mode: Mode, lr_peak: f64, warmup_steps: u64, max_steps: u64) -> TrainConfig {
    TrainConfig {
        mode,
        lr_start: lr_peak / 10.0,
        lr_peak,
        lr_end: lr_peak / 10.0,
        warmup_steps,
        max_steps,
        ..TrainConfig::default()
    }
}

impl Default for PipelineConfig {
    /// Desk-scale settings: peak rates are raised well above the 1e-4 of
    /// the large-model schedule so the small models converge in minutes.
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            layers: "3-8".into(),
            decoder: DecoderConfig::default(),
            encoder: EncoderConfig::default(),
            data: DataConfig::default(),
            pretrain_decoder: stage(Mode::Language, 6e-3, 50, 3000),
            pretrain: TrainConfig { batch_size: 16, ..stage(Mode::Pretrain, 5e-3, 50, 2000) },
            finetune: TrainConfig { eval_every: 50, ..stage(Mode::Finetune, 1e-3, 20, 400) },
            edit: TrainConfig { eval_every: 25, stop_loss: Some(0.05), ..stage(Mode::Edit, 1e-2, 20, 1500) },
            bench: BenchConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Keys missing from `text` keep the pipeline defaults, including
    /// keys missing from a section that is present.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let file: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut merged = toml::Table::try_from(PipelineConfig::default()).map_err(|e| e.to_string())?;
        merge(&mut merged, file);
        merged.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => PipelineConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(Error::io(p))?;
                PipelineConfig::parse(&text).map_err(|m| Error::format(p, m))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        for t in [&self.pretrain_decoder, &self.pretrain, &self.finetune, &self.edit] {
            t.validate()?;
        }
        if self.bench.reps < 3 {
            return Err(Error::Usage(format!("bench.reps must be at least 3, got {}", self.bench.reps)));
        }
        Ok(())
    }

    /// A stage's training settings with the pipeline seed and layers.
    pub fn stage(&self, base: &TrainConfig, layers: &[usize]) -> TrainConfig {
        TrainConfig { seed: self.seed, layers: layers.to_vec(), ..base.clone() }
    }
}
