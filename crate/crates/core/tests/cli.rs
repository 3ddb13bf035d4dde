//! Drives the `fsat` binary: exit codes, outputs, seed precedence, resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsat::cli::{EFFECTIVE_CONFIG, MODEL_CHECKPOINT};
use fsat::config::RunConfig;
use fsat::eval::read_reports;
use fsat::train::{self, LoadOptions, TrainConfig, TrainState};

fn fsat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsat"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const TINY_SYNTH: &str = "[synth]\nn_real = 10\nn_fake = 10\nclip_seconds = 0.25\n";

/// A tiny corpus under `dir/data` plus an untrained checkpoint at
/// `dir/<name>.ckpt` for each seed.
fn setup(dir: &Path, seeds: &[(&str, u64)]) {
    fs::write(dir.join("gen.toml"), TINY_SYNTH).unwrap();
    let out = fsat(dir, &["gen-data", "--config", "gen.toml", "--out", "data"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for &(name, seed) in seeds {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        train::save_checkpoint(&TrainState::fresh(&cfg), &dir.join(format!("{name}.ckpt")))
            .unwrap();
    }
}

fn eval_config(extra: &str) -> String {
    format!("{TINY_SYNTH}[data]\nmanifest = \"data/manifest.tsv\"\n[eval]\ncheckpoint = \"a.ckpt\"\n{extra}")
}

#[test]
fn gen_data_prints_manifest_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gen.toml"), TINY_SYNTH).unwrap();
    let out = fsat(dir, &["gen-data", "--config", "gen.toml", "--out", "data"]);
    assert_eq!(code(&out), 0);
    let printed = String::from_utf8(out.stdout).unwrap();
    let manifest = PathBuf::from(printed.trim());
    assert!(dir.join(&manifest).is_file());
    let echoed = RunConfig::load(&dir.join("data").join(EFFECTIVE_CONFIG)).unwrap();
    assert_eq!(echoed.synth.n_real, 10);
    // defaults are spelled out in the echo
    let text = fs::read_to_string(dir.join("data").join(EFFECTIVE_CONFIG)).unwrap();
    assert!(text.contains("artifact_level_db"));
}

#[test]
fn seed_flag_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gen.toml"), format!("seed = 5\n{TINY_SYNTH}")).unwrap();
    for (out, extra) in [("a", None), ("b", Some("9")), ("c", Some("5"))] {
        let mut args = vec!["gen-data", "--config", "gen.toml", "--out", out];
        if let Some(s) = extra {
            args.extend(["--seed", s]);
        }
        assert_eq!(code(&fsat(dir, &args)), 0);
    }
    let echoed = RunConfig::load(&dir.join("b").join(EFFECTIVE_CONFIG)).unwrap();
    assert_eq!(
        (echoed.seed, echoed.synth.seed, echoed.train.seed),
        (9, 9, 9)
    );
    let wav = "wav/real_00000.wav";
    let read = |d: &str| fs::read(dir.join(d).join(wav)).unwrap();
    assert_ne!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, &[]);

    fs::write(
        dir.join("bad.toml"),
        "[train]\ngamma = -0.1\n[data]\nmanifest = \"data/manifest.tsv\"\n",
    )
    .unwrap();
    assert_eq!(
        code(&fsat(dir, &["train", "--config", "bad.toml", "--out", "o"])),
        2
    );

    fs::write(dir.join("typo.toml"), "[synth]\nn_reel = 3\n").unwrap();
    let out = fsat(dir, &["gen-data", "--config", "typo.toml", "--out", "o"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo.toml:2"));

    fs::write(dir.join("eval.toml"), eval_config("")).unwrap();
    assert_eq!(
        code(&fsat(dir, &["eval", "--config", "eval.toml", "--out", "o"])),
        2,
        "missing checkpoint"
    );

    // the output directory cannot be created below a regular file
    fs::write(dir.join("blocker"), b"").unwrap();
    assert_eq!(
        code(&fsat(
            dir,
            &["gen-data", "--config", "gen.toml", "--out", "blocker/sub"]
        )),
        1
    );

    assert_eq!(
        code(&fsat(dir, &["gen-data", "--config", "absent.toml"])),
        1
    );
    assert_eq!(code(&fsat(dir, &["no-such-command"])), 2);
}

#[test]
fn baseline_training_writes_checkpoint_history_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, &[]);
    let cfg = |epochs: usize| {
        format!(
            "{TINY_SYNTH}[data]\nmanifest = \"data/manifest.tsv\"\n[train]\nepochs = {epochs}\nbatch_size = 4\ncheckpoint_every = 1\n"
        )
    };
    fs::write(dir.join("two.toml"), cfg(2)).unwrap();
    fs::write(dir.join("three.toml"), cfg(3)).unwrap();
    let run = |config: &str, out: &str, resume: bool| {
        let mut args = vec!["train", "--config", config, "--out", out, "--threads", "1"];
        if resume {
            args.push("--resume");
        }
        let o = fsat(dir, &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("three.toml", "straight", false);
    run("two.toml", "resumed", false);
    run("three.toml", "resumed", true);

    let straight = dir.join("straight");
    for f in [
        MODEL_CHECKPOINT,
        "history.jsonl",
        "timing.jsonl",
        "epoch_0001.ckpt",
        "epoch_0003.ckpt",
    ] {
        assert!(straight.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(straight.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.contains("\"gamma\":0.0"));

    let a =
        train::load_checkpoint(&straight.join(MODEL_CHECKPOINT), LoadOptions::default()).unwrap();
    let b = train::load_checkpoint(
        &dir.join("resumed").join(MODEL_CHECKPOINT),
        LoadOptions::default(),
    )
    .unwrap();
    assert_eq!(b.epochs_done(), 3);
    assert_eq!(a.params, b.params);
    assert_eq!(a.velocity, b.velocity);
}

#[test]
fn eval_commands_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, &[("a", 1), ("a2", 2), ("b", 3)]);
    let extra = r#"
[attack]
table5 = true
[attack.sources]
"A'" = "a2.ckpt"
B = "b.ckpt"
[[corrupt.ops]]
kind = "gain"
magnitude = 3.0
[[corrupt.ops]]
kind = "aliasing"
magnitude = 2.0
[highpass]
cutoffs_hz = [0.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0, 7000.0]
"#;
    fs::write(dir.join("run.toml"), eval_config(extra)).unwrap();
    for cmd in ["eval", "attack", "corrupt", "sweep-highpass"] {
        let o = fsat(dir, &[cmd, "--config", "run.toml", "--out", "reports"]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let reports = dir.join("reports");
    let rows = |stem: &str| {
        let doc = read_reports(&reports.join(format!("{stem}.json"))).unwrap();
        let lines = fs::read_to_string(reports.join(format!("{stem}.jsonl"))).unwrap();
        assert_eq!(lines.lines().count(), doc.len());
        doc
    };
    assert_eq!(rows("eval").len(), 1);
    let attack = rows("attack");
    assert_eq!(attack.len(), 45);
    for src in ["A", "A'", "B"] {
        let n = attack
            .iter()
            .filter(|r| r.condition.ends_with(&format!("src={src}")))
            .count();
        assert_eq!(n, 15, "{src}");
    }
    assert_eq!(rows("highpass").len(), 8);
    assert_eq!(rows("corrupt").len(), 2);

    let test_clips = 4;
    for sub in ["gain_3", "aliasing_2"] {
        let wavs = fs::read_dir(reports.join("corrupted").join(sub))
            .unwrap()
            .count();
        assert_eq!(wavs, test_clips, "{sub}");
    }
}
