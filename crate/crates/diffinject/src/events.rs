//! Line-delimited JSON training events.

use std::path::Path;

use diffinject_core::train::TrainLog;
use serde_json::json;

use crate::{Error, Result};

/// One `step` event per optimizer step, one `eval` per evaluation and a
/// closing `end` per log.
pub fn events(stage: &str, log: &TrainLog) -> Vec<serde_json::Value> {
    let mut out = Vec::with_capacity(log.steps.len() + log.evals.len() + 1);
    for s in &log.steps {
        out.push(json!({
            "event": "step", "stage": stage, "layer": log.layer,
            "step": s.step, "loss": s.loss, "lr": s.lr, "counters": s.counters,
        }));
    }
    for e in &log.evals {
        out.push(json!({ "event": "eval", "stage": stage, "layer": log.layer, "step": e.step, "loss": e.loss }));
    }
    out.push(json!({
        "event": "end", "stage": stage, "layer": log.layer, "steps": log.steps.len(),
        "baseline": log.baseline, "diverged": log.diverged, "stopped_early": log.stopped_early,
    }));
    out
}

pub fn write_events<'a>(path: &Path, stage: &str, logs: impl IntoIterator<Item = &'a TrainLog>) -> Result<()> {
    let mut text = String::new();
    for log in logs {
        for e in events(stage, log) {
            text.push_str(&e.to_string());
            text.push('\n');
        }
    }
    std::fs::write(path, text).map_err(Error::io(path))
}
