//! Drives the binary end to end on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffinject::manifest::Manifest;

const TINY: &str = r#"
seed = 7
layers = "2-3"

[decoder]
n_layers = 4
d_model = 16
n_heads = 2
d_mlp = 32

[encoder]
n_blocks = 1
d_enc = 8
n_heads = 2

[data]
kv_entities = 40
counterfacts = 4
rules = 30
fact_repeats = 1

[pretrain_decoder]
max_steps = 20
warmup_steps = 5

[pretrain]
max_steps = 20
warmup_steps = 5

[finetune]
max_steps = 12
warmup_steps = 2
eval_every = 6

[edit]
max_steps = 12
warmup_steps = 2

[bench]
k_lens = [0, 8, 16]
x_len = 8
reps = 3
timing_k_len = 16
"#;

struct Run {
    root: tempfile::TempDir,
    config: PathBuf,
}

impl Run {
    fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        let config = root.path().join("tiny.toml");
        std::fs::write(&config, TINY).unwrap();
        Run { root, config }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_diffinject"))
            .args(args)
            .arg("--config")
            .arg(&self.config)
            .current_dir(self.root.path())
            .output()
            .unwrap();
        out
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn manifest(dir: &Path) -> Manifest {
    Manifest::load(dir).unwrap()
}

#[test]
fn full_pipeline_through_the_binary() {
    let r = Run::new();
    r.ok(&["gen-data", "--out", "data"]);
    for f in ["kv_train.jsonl", "kv_val.jsonl", "kv_test.jsonl", "counterfact.jsonl", "rules_train.jsonl", "seeds.txt"] {
        assert!(r.path("data").join(f).exists(), "{f}");
    }
    assert!(std::fs::read_to_string(r.path("data/seeds.txt")).unwrap().contains("seed=7\n"));

    r.ok(&["pretrain-decoder", "--data", "data", "--out", "dec"]);
    let dec_hash = manifest(&r.path("dec")).decoder_hash_after.unwrap();

    r.ok(&["capture", "--decoder", "dec/decoder.ckpt", "--samples", "data/kv_train.jsonl", "--out", "cache"]);
    assert!(r.path("cache/layer_2.bin").exists() && r.path("cache/layer_3.bin").exists());

    r.ok(&["pretrain", "--decoder", "dec/decoder.ckpt", "--cache", "cache", "--out", "pre", "--jobs", "2"]);
    r.ok(&["pretrain", "--decoder", "dec/decoder.ckpt", "--cache", "cache", "--out", "pre1"]);
    // Encoders train independently, so the worker split does not matter.
    assert_eq!(std::fs::read(r.path("pre/bank.ckpt")).unwrap(), std::fs::read(r.path("pre1/bank.ckpt")).unwrap());

    let ft = &["finetune", "--decoder", "dec/decoder.ckpt", "--bank", "pre/bank.ckpt", "--train", "data/kv_train.jsonl", "--val", "data/kv_val.jsonl"];
    r.ok(&[ft.as_slice(), &["--out", "ft"]].concat());
    r.ok(&["finetune", "--decoder", "dec/decoder.ckpt", "--no-pretrain", "--train", "data/kv_train.jsonl", "--out", "scratch"]);
    assert_eq!(manifest(&r.path("scratch")).args["no_pretrain"], "true");

    let out = r.ok(&["edit", "--decoder", "dec/decoder.ckpt", "--bank", "ft/bank.ckpt", "--edits", "data/counterfact.jsonl", "--out", "edit"]);
    assert!(out.contains("ES "), "{out}");

    let out = r.ok(&[
        "eval", "--decoder", "dec/decoder.ckpt", "--bank", "ft/bank.ckpt", "--data", "data/kv_test.jsonl",
        "--data", "data/rules_val.jsonl", "--edits", "data/counterfact.jsonl", "--out", "eval",
    ]);
    assert!(out.contains("kv_test/injected") && out.contains("accuracy"), "{out}");

    let out = r.ok(&["bench", "--decoder", "dec/decoder.ckpt", "--bank", "pre/bank.ckpt", "--out", "bench"]);
    assert!(out.contains("concat") && r.path("bench/flops.csv").exists() && r.path("bench/timing.json").exists());

    for stage in ["cache", "pre", "ft", "scratch", "edit"] {
        let m = manifest(&r.path(stage));
        assert_eq!(m.decoder_hash_before.as_deref(), Some(dec_hash.as_str()), "{stage}");
        assert_eq!(m.decoder_hash_after.as_deref(), Some(dec_hash.as_str()), "{stage}");
        assert_eq!(m.layers, vec![2, 3]);
    }

    // Same command and seed: same manifest and outputs.
    r.ok(&[ft.as_slice(), &["--out", "ft2"]].concat());
    assert_eq!(manifest(&r.path("ft")), manifest(&r.path("ft2")));
    r.ok(&["bench", "--decoder", "dec/decoder.ckpt", "--bank", "pre/bank.ckpt", "--out", "bench2"]);
    assert_eq!(manifest(&r.path("bench")), manifest(&r.path("bench2")));

    // A bank for layers 2-3 cannot serve every layer.
    let out = r.run(&["eval", "--decoder", "dec/decoder.ckpt", "--bank", "ft/bank.ckpt", "--data", "data/kv_test.jsonl", "--layers", "all", "--out", "bad"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[0, 1, 2, 3]") && err.contains("[2, 3]"), "{err}");

    // `conv` picks up the summary written next to the pretrained bank.
    r.ok(&["eval", "--decoder", "dec/decoder.ckpt", "--bank", "pre/bank.ckpt", "--data", "data/kv_test.jsonl", "--layers", "conv", "--mode", "injected", "--out", "conv"]);
}

#[test]
fn usage_errors_exit_one() {
    let r = Run::new();
    let out = r.run(&["gen-data", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));
    assert_eq!(r.run(&["finetune", "--decoder", "d", "--train", "t"]).status.code(), Some(1));
    assert_eq!(r.run(&["capture", "--decoder", "d", "--samples", "s", "--layers", "8-3"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_are_runtime_failures() {
    let r = Run::new();
    let out = r.run(&["capture", "--decoder", "nope.ckpt", "--samples", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
}
