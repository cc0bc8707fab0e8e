use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tokenizer::{tokenize, BOS, SEP, SYS, USR};
use crate::{Error, Result};

/// Prefix and suffix wrapped around the knowledge.
pub const KNOWLEDGE_OPEN: &str = "Imagine that { ";
pub const KNOWLEDGE_CLOSE: &str = " }";

/// `(knowledge, source, target)` triple. Knowledge may be empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSample {
    pub knowledge: Vec<String>,
    pub source: String,
    pub target: String,
}

impl KnowledgeSample {
    pub fn new(knowledge: Vec<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        KnowledgeSample { knowledge, source: source.into(), target: target.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Bos,
    Know,
    Usr,
    Sys,
}

/// A rendered knowledge run:
/// `[BOS] knowledge-wrapper [USR] source [SYS] target`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rendered {
    pub ids: Vec<u32>,
    pub roles: Vec<Role>,
    /// Number of knowledge tokens, wrapper included.
    pub k_len: usize,
}

/// Next-token targets and loss mask for one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LossTargets {
    /// `targets[t]` is the token at `t + 1`; the last entry is padding.
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl LossTargets {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

impl Rendered {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The full sequence `[BOS] K x`, fed to the encoders and to the
    /// decoder in concat mode.
    pub fn knowledge_run(&self) -> &[u32] {
        &self.ids
    }

    pub fn knowledge_tokens(&self) -> &[u32] {
        &self.ids[1..1 + self.k_len]
    }

    /// `x` without the leading `[BOS]`.
    pub fn input_tokens(&self) -> &[u32] {
        &self.ids[1 + self.k_len..]
    }

    /// `[BOS] x`, what the decoder sees in plain and injected mode.
    pub fn plain_run(&self) -> Vec<u32> {
        let mut v = Vec::with_capacity(self.ids.len() - self.k_len);
        v.push(BOS);
        v.extend_from_slice(self.input_tokens());
        v
    }

    fn input_roles(&self) -> &[Role] {
        &self.roles[1 + self.k_len..]
    }

    /// Loss over the tokens after `[SYS]` for a run that ends with the
    /// input: the plain run when `with_knowledge` is false, otherwise the
    /// knowledge run.
    pub fn loss_targets(&self, with_knowledge: bool) -> LossTargets {
        let run: Vec<u32> = if with_knowledge { self.ids.clone() } else { self.plain_run() };
        let lead = run.len() - self.input_tokens().len();
        let roles = self.input_roles();
        let ids = self.input_tokens();
        let n = run.len();
        let mut targets = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for t in 0..n {
            let next = t + 1;
            if next < n {
                targets.push(run[next]);
                let i = next.checked_sub(lead);
                mask.push(i.is_some_and(|i| roles[i] == Role::Sys && ids[i] != SYS));
            } else {
                targets.push(0);
                mask.push(false);
            }
        }
        LossTargets { targets, mask }
    }
}

/// Renders a sample. Empty knowledge emits no wrapper and gives `k_len = 0`.
pub fn render(sample: &KnowledgeSample) -> Result<Rendered> {
    if sample.target.is_empty() {
        return Err(Error::Invalid("sample has no target tokens".into()));
    }
    let mut ids = Vec::new();
    let mut roles = Vec::new();
    let push = |tokens: &[u32], role: Role, ids: &mut Vec<u32>, roles: &mut Vec<Role>| {
        ids.extend_from_slice(tokens);
        roles.extend(core::iter::repeat_n(role, tokens.len()));
    };
    push(&[BOS], Role::Bos, &mut ids, &mut roles);
    if !sample.knowledge.is_empty() {
        push(&tokenize(KNOWLEDGE_OPEN), Role::Know, &mut ids, &mut roles);
        for (i, k) in sample.knowledge.iter().enumerate() {
            if i > 0 {
                push(&[b' ' as u32, SEP, b' ' as u32], Role::Know, &mut ids, &mut roles);
            }
            push(&tokenize(k), Role::Know, &mut ids, &mut roles);
        }
        push(&tokenize(KNOWLEDGE_CLOSE), Role::Know, &mut ids, &mut roles);
    }
    let k_len = ids.len() - 1;
    push(&[USR], Role::Usr, &mut ids, &mut roles);
    push(&tokenize(&sample.source), Role::Usr, &mut ids, &mut roles);
    push(&[SYS], Role::Sys, &mut ids, &mut roles);
    push(&tokenize(&sample.target), Role::Sys, &mut ids, &mut roles);
    Ok(Rendered { ids, roles, k_len })
}

/// Renders and rejects sequences longer than `max_context`.
pub fn render_within(sample: &KnowledgeSample, max_context: usize) -> Result<Rendered> {
    let r = render(sample)?;
    if r.len() > max_context {
        return Err(Error::Overlong { len: r.len(), max: max_context });
    }
    Ok(r)
}
