//! Command-line driver. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use diffinject_core::eval::EvalMode;

use crate::config::PipelineConfig;
use crate::pipeline::{self, EvalInputs, PRETRAIN_LOG};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "diffinject", version, about = "Train and evaluate knowledge encoders for a frozen decoder")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Shared {
    /// TOML configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `3-8`, `3,5,7`, `all` or `conv`.
    #[arg(long, global = true)]
    pub layers: Option<String>,
    /// Output directory; defaults to `out/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic datasets as JSONL.
    GenData,
    /// Train the small decoder, then freeze it.
    PretrainDecoder {
        #[arg(long)]
        data: PathBuf,
    },
    /// Record hidden-state differences of the frozen decoder.
    Capture {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Regress encoders onto the captured differences.
    Pretrain {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Worker threads; each trains a disjoint set of encoders.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Cross-entropy training of the encoders through the frozen decoder.
    Finetune {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, conflicts_with = "no_pretrain")]
        bank: Option<PathBuf>,
        /// Start from fresh encoders.
        #[arg(long)]
        no_pretrain: bool,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Pretraining summary used by `--layers conv`.
        #[arg(long)]
        pretrain_log: Option<PathBuf>,
    },
    /// Teach the encoders new (prompt, object) pairs without knowledge.
    Edit {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        edits: PathBuf,
        #[arg(long)]
        pretrain_log: Option<PathBuf>,
    },
    /// Perplexity, label accuracy and edit success.
    Eval {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Knowledge-sample datasets; repeatable.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        #[arg(long)]
        edits: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "plain,concat,injected")]
        mode: Vec<String>,
        #[arg(long)]
        pretrain_log: Option<PathBuf>,
    },
    /// FLOP, gradient-memory and wall-clock profiles.
    Bench {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        pretrain_log: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::PretrainDecoder { .. } => "pretrain-decoder",
            Command::Capture { .. } => "capture",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Edit { .. } => "edit",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
        }
    }
}

/// `--pretrain-log`, else the summary next to the bank checkpoint.
fn summary_path(explicit: &Option<PathBuf>, bank: Option<&Path>) -> Option<PathBuf> {
    explicit.clone().or_else(|| {
        bank.and_then(Path::parent).map(|d| d.join(PRETRAIN_LOG)).filter(|p| p.exists())
    })
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

/// Runs a parsed command and returns a short report for stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    let mut cfg = PipelineConfig::load(cli.shared.config.as_deref())?;
    if let Some(seed) = cli.shared.seed {
        cfg.seed = seed;
    }
    if let Some(layers) = &cli.shared.layers {
        cfg.layers = layers.clone();
    }
    let out = cli.shared.out.clone().unwrap_or_else(|| Path::new("out").join(cli.command.name()));
    let n_layers = cfg.decoder.n_layers;
    let layers = |log: Option<PathBuf>| pipeline::resolve_layers(&cfg.layers, n_layers, log.as_deref());
    let report = match &cli.command {
        Command::GenData => {
            pipeline::gen_data(&cfg, &out)?;
            format!("datasets written to {}", out.display())
        }
        Command::PretrainDecoder { data } => {
            let (dec, log, _) = pipeline::pretrain_decoder(&cfg, data, &out)?;
            format!("decoder {} trained {} steps, final loss {:.4}", dec.hash(), log.steps.len(), log.tail_loss(20).unwrap_or(f64::NAN))
        }
        Command::Capture { decoder, samples } => {
            let l = layers(None)?;
            let (cache, _) = pipeline::capture(&cfg, decoder, samples, &l, &out)?;
            for w in &cache.warnings {
                eprintln!("warning: {w}");
            }
            format!("captured {} records for layers {:?} ({} skipped)", cache.len(), l, cache.skipped)
        }
        Command::Pretrain { decoder, cache, jobs } => {
            let l = layers(None)?;
            let o = pipeline::pretrain(&cfg, decoder, cache, &l, *jobs, &out)?;
            let mut s = String::new();
            for (layer, log) in &o.summary.logs {
                let base = log.baseline.unwrap_or(f64::NAN);
                s.push_str(&format!(
                    "layer {layer}: baseline {base:.4}, final {:.4}{}\n",
                    log.tail_loss(20).unwrap_or(f64::NAN),
                    if log.diverged { " (diverged)" } else { "" }
                ));
            }
            s
        }
        Command::Finetune { decoder, bank, no_pretrain, train, val, pretrain_log } => {
            if bank.is_none() && !no_pretrain {
                return Err(Error::Usage("finetune needs --bank or --no-pretrain".into()));
            }
            let l = layers(summary_path(pretrain_log, bank.as_deref()))?;
            let o = pipeline::finetune(&cfg, decoder, bank.as_deref(), train, val.as_deref(), &l, &out)?;
            let last = o.log.evals.last().map(|e| format!(", validation loss {:.4}", e.loss)).unwrap_or_default();
            format!("fine-tuned {} steps, final loss {:.4}{last}", o.log.steps.len(), o.log.tail_loss(20).unwrap_or(f64::NAN))
        }
        Command::Edit { decoder, bank, edits, pretrain_log } => {
            let l = layers(summary_path(pretrain_log, bank.as_deref()))?;
            let o = pipeline::edit(&cfg, decoder, bank.as_deref(), edits, &l, &out)?;
            let (a, b) = (&o.report.pre, &o.report.post);
            format!(
                "edited in {} steps, training CE {:.4}\nES {:.3} -> {:.3}  PS {:.3} -> {:.3}  NS {:.3} -> {:.3}",
                o.report.steps, o.report.train_ce, a.es, b.es, a.ps, b.ps, a.ns, b.ns
            )
        }
        Command::Eval { decoder, bank, data, edits, mode, pretrain_log } => {
            let modes = mode.iter().map(|m| EvalMode::parse(m)).collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Usage(e.to_string()))?;
            if data.is_empty() && edits.is_none() {
                return Err(Error::Usage("eval needs --data or --edits".into()));
            }
            let l = layers(summary_path(pretrain_log, bank.as_deref()))?;
            let inputs = EvalInputs {
                datasets: data.iter().map(|p| (dataset_name(p), p.clone())).collect(),
                edits: edits.as_deref(),
                modes,
            };
            let (report, _) = pipeline::eval(&cfg, decoder, bank.as_deref(), &inputs, &l, &out)?;
            report.to_table()
        }
        Command::Bench { decoder, bank, no_timing, pretrain_log } => {
            let l = layers(summary_path(pretrain_log, bank.as_deref()))?;
            pipeline::bench(&cfg, decoder, bank.as_deref(), &l, !no_timing, &out)?;
            std::fs::read_to_string(out.join("bench.txt")).map_err(Error::io(out.join("bench.txt")))?
        }
    };
    Ok(report)
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(report) => {
            println!("{}", report.trim_end());
            0
        }
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(dispatch(["diffinject", "gen-data", "--bogus"]), 1);
        assert_eq!(dispatch(["diffinject", "nope"]), 1);
        assert_eq!(dispatch(["diffinject", "--help"]), 0);
    }

    #[test]
    fn shared_flags_parse_anywhere() {
        let cli = Cli::try_parse_from(["diffinject", "--seed", "4", "eval", "--decoder", "d", "--layers", "3-8", "--mode", "plain,injected"]).unwrap();
        assert_eq!(cli.shared.seed, Some(4));
        assert_eq!(cli.shared.layers.as_deref(), Some("3-8"));
        match cli.command {
            Command::Eval { mode, .. } => assert_eq!(mode, vec!["plain", "injected"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bank_and_no_pretrain_conflict() {
        let r = Cli::try_parse_from(["diffinject", "finetune", "--decoder", "d", "--train", "t", "--bank", "b", "--no-pretrain"]);
        assert!(r.is_err());
    }
}
