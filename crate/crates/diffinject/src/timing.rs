//! Wall-clock measurements. Reported, never gated: timings on a shared
//! machine are noisy.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub optimized: bool,
    pub fma: bool,
    pub avx2: bool,
    pub version: String,
}

impl Fingerprint {
    pub fn current() -> Self {
        Fingerprint {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            optimized: !cfg!(debug_assertions),
            fma: cfg!(target_feature = "fma"),
            avx2: cfg!(target_feature = "avx2"),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub task: String,
    pub reps: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// `(max - min) / median`.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub fingerprint: Fingerprint,
    pub rows: Vec<TimingRow>,
}

/// Runs `f` `reps` times after one untimed warm-up call.
pub fn time_task(task: &str, reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<TimingRow> {
    if reps < 3 {
        return Err(Error::Usage(format!("timing needs at least 3 repetitions, got {reps}")));
    }
    f()?;
    let mut t = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        t.push(start.elapsed().as_secs_f64());
    }
    t.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 { t[reps / 2] } else { 0.5 * (t[reps / 2 - 1] + t[reps / 2]) };
    Ok(TimingRow {
        task: task.into(),
        reps,
        median_s: median,
        min_s: t[0],
        max_s: t[reps - 1],
        spread: if median > 0.0 { (t[reps - 1] - t[0]) / median } else { 0.0 },
    })
}

pub fn timing_table(report: &TimingReport) -> String {
    let f = &report.fingerprint;
    let mut out = format!(
        "{} {} cpus={} optimized={} fma={} avx2={}\n{:<28} {:>5} {:>12} {:>12} {:>12} {:>8}\n",
        f.os, f.arch, f.cpus, f.optimized, f.fma, f.avx2, "task", "reps", "median s", "min s", "max s", "spread"
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{:<28} {:>5} {:>12.6} {:>12.6} {:>12.6} {:>8.3}\n",
            r.task, r.reps, r.median_s, r.min_s, r.max_s, r.spread
        ));
    }
    out
}
