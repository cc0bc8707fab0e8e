//! Tokenization, prompt rendering and synthetic dataset generators.

pub mod generate;
pub mod render;
pub mod tokenizer;

pub use generate::{gen_counterfact_dataset, gen_kv_dataset, gen_rules_dataset, seed_manifest, EditSample, LABELS};
pub use render::{render, render_within, KnowledgeSample, LossTargets, Rendered, Role};
