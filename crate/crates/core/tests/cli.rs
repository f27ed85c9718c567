use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aai_core::aai::Checkpoint;
use aai_core::cli::ExperimentResult;

fn aai(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aai"))
        .current_dir(dir)
        .env_remove("AAI_DATA_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const TRAIN: &[&str] = &["--config", "run.toml", "train", "--prior-steps", "12", "--batch-size", "16"];

fn trained(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("run.toml"), "[model]\nval_every = 4\n").unwrap();
    ok(aai(dir, &["synth", "--n", "10", "--duration", "0.5"]));
    let mut args = TRAIN.to_vec();
    args.extend(["--aai-steps", "8"]);
    ok(aai(dir, &args));
    dir.join("out/checkpoint.json")
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&aai(dir.path(), &["--help"])), 0);
    assert_eq!(code(&aai(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&aai(dir.path(), &["train", "--k", "zero"])), 2);
    std::fs::write(dir.path().join("bad.toml"), "seed = \"x\"").unwrap();
    assert_eq!(code(&aai(dir.path(), &["--config", "bad.toml", "synth"])), 2);
    assert_eq!(code(&aai(dir.path(), &["train", "--k", "0"])), 2);
}

#[test]
fn empty_corpus_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(aai(dir.path(), &["synth", "--n", "0"]));
    let manifest = PathBuf::from(out.trim());
    let text = std::fs::read_to_string(dir.path().join(&manifest)).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("file"), "x").unwrap();
    assert_eq!(code(&aai(dir.path(), &["synth", "--n", "1", "--out", "file/sub"])), 3);
    assert_eq!(code(&aai(dir.path(), &["train", "--data-dir", "nowhere"])), 3);
    let o = aai(dir.path(), &["infer", "--checkpoint", "missing.json", "--speech", "a.wav", "--out", "b.wav"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn train_infer_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let ckpt = trained(dir);
    for f in ["checkpoint.json", "train_log.csv", "prior_log.csv"] {
        assert!(dir.join("out").join(f).exists(), "{f}");
    }

    // Inference is deterministic.
    let speech = "data/speech/syn0009.wav";
    let c = ckpt.to_str().unwrap();
    ok(aai(dir, &["infer", "--checkpoint", c, "--speech", speech, "--out", "a.wav"]));
    ok(aai(dir, &["infer", "--checkpoint", c, "--speech", speech, "--out", "b.wav"]));
    assert_eq!(std::fs::read(dir.join("a.wav")).unwrap(), std::fs::read(dir.join("b.wav")).unwrap());

    // Speech shorter than one window.
    let short = aai_core::Waveform::new(vec![0.1; 50], 16000.0, aai_core::ChannelRole::Speech).unwrap();
    aai_core::signal_io::save_waveform(&short, &dir.join("short.wav"), aai_core::signal_io::BitDepth::Float32).unwrap();
    let o = aai(dir, &["infer", "--checkpoint", c, "--speech", "short.wav", "--out", "c.wav"]);
    assert_ne!(code(&o), 0);

    // A foreign schema is refused.
    std::fs::write(dir.join("old.json"), r#"{"schema":"aai-checkpoint/0"}"#).unwrap();
    let o = aai(dir, &["infer", "--checkpoint", "old.json", "--speech", speech, "--out", "d.wav"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));

    // No noise conditions: exactly one clean report.
    ok(aai(dir, &["eval", "--clean-only", "--out-dir", "clean", "--checkpoint", c]));
    let r = ExperimentResult::load(&dir.join("clean/results.json")).unwrap();
    assert_eq!(r.conditions, vec!["clean".to_string()]);
    assert_eq!(r.reports.len(), 1);

    ok(aai(dir, &["eval", "--self-test", "--clean-only", "--out-dir", "self"]));
    let s = ExperimentResult::load(&dir.join("self/results.json")).unwrap();
    let clean = &s.reports["clean"].report;
    assert_eq!((clean.gci.idr, clean.goi.idr), (100.0, 100.0));

    ok(aai(dir, &["eval", "--white", "10", "--babble", "--out-dir", "noisy", "--checkpoint", c]));
    let n = ExperimentResult::load(&dir.join("noisy/results.json")).unwrap();
    assert_eq!(n.conditions, vec!["clean".to_string(), "white@10dB".to_string()]);

    let text = ok(aai(
        dir,
        &["report", "--results", "clean/results.json", "noisy/results.json", "--out-dir", "rep"],
    ));
    assert!(!text.is_empty());
    assert!(dir.join("rep/summary.txt").exists());
}

#[test]
fn resumed_training_matches_a_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    std::fs::rename(dir.join("out"), dir.join("half")).unwrap();

    let mut full = TRAIN.to_vec();
    full.extend(["--aai-steps", "16", "--out-dir", "full"]);
    ok(aai(dir, &full));
    let mut resumed = TRAIN.to_vec();
    resumed.extend(["--aai-steps", "16", "--out-dir", "resumed", "--resume", "half/checkpoint.json"]);
    ok(aai(dir, &resumed));
    let a = std::fs::read(dir.join("full/train_log.csv")).unwrap();
    let b = std::fs::read(dir.join("resumed/train_log.csv")).unwrap();
    assert_eq!(String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap());
    let load = |d: &str| Checkpoint::load(&dir.join(d).join("checkpoint.json")).unwrap();
    let (f, r) = (load("full"), load("resumed"));
    assert_eq!(f.model(), r.model());
    assert_eq!(f.trainer.step(), 16);
    assert_eq!(r.trainer.step(), 16);

    // Anything besides the step budget must match the checkpoint.
    let mut changed = TRAIN.to_vec();
    changed.extend(["--aai-steps", "16", "--lr", "0.001", "--out-dir", "x", "--resume", "half/checkpoint.json"]);
    assert_eq!(code(&aai(dir, &changed)), 2);
}
