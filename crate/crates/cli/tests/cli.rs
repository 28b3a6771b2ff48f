use pfgn::checkpoint::Checkpoint;
use pfgn::pointnet::{build_with, count_parameters, Architecture, ModelKind};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "seed": 11,
  "data_seed": 5,
  "dataset": { "n_geometries": 12, "n_points": 64, "n_surface": 16 },
  "model": { "width_divisor": 16 },
  "train": { "batch_size": 4, "max_steps": 3 },
  "sampler": { "flow_steps": 4, "diffusion_steps": 8 },
  "eval": { "samples": 2 }
}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.json"), SMALL).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with_env(args, &[])
    }

    fn run_with_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_pfgn"));
        cmd.arg("--config").arg(self.path("run.json")).args(args).env_remove("PFGN_THREADS");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn train(&self, model: &str) -> PathBuf {
        let out = self.path(&format!("train_{model}"));
        self.ok(&["train", "--model", model, "--out", out.to_str().unwrap()]);
        out
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process ended by a signal")
}

#[test]
fn trained_checkpoint_reloads_with_the_same_parameter_count() {
    let ws = Workspace::new();
    let dir = ws.train("fm");
    let ckpt = Checkpoint::load(&dir.join("model.ckpt")).unwrap();
    let fresh = build_with(&Architecture::default().with_width_divisor(16), ModelKind::FlowMatching, 2, 32, 3, 0).unwrap();
    assert_eq!(count_parameters(&ckpt.params), count_parameters(&fresh));
    let run = read_json(&dir.join("run.json"));
    assert_eq!(run["seed"], 11);
    assert_eq!(run["result"]["parameters"], count_parameters(&fresh));
    assert_eq!(run["result"]["steps"], 3);
    let log = fs::read_to_string(dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn training_twice_writes_identical_checkpoints() {
    let ws = Workspace::new();
    let a = ws.train("ddpm");
    let b = ws.path("again");
    ws.ok(&["train", "--model", "ddpm", "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn corrupted_checkpoint_is_an_io_failure() {
    let ws = Workspace::new();
    let dir = ws.train("baseline");
    let path = dir.join("model.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 10] ^= 0x01;
    fs::write(&path, bytes).unwrap();
    let out = ws.run(&["eval", "--checkpoint", path.to_str().unwrap(), "--out", ws.path("eval").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[io]"));
}

#[test]
fn sampling_twice_gives_identical_files() {
    let ws = Workspace::new();
    let ckpt = ws.train("fm").join("model.ckpt");
    let runs: Vec<PathBuf> = ["s1", "s2"].iter().map(|d| ws.path(d)).collect();
    for dir in &runs {
        ws.ok(&[
            "sample",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--samples",
            "3",
            "--seed",
            "42",
            "--geometry",
            "0,4",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    let mut names: Vec<String> = fs::read_dir(&runs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 12);
    for name in &names {
        let a = fs::read(runs[0].join(name)).unwrap();
        let b = fs::read(runs[1].join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
    assert_eq!(read_json(&runs[0].join("run.json"))["seed"], 42);
    let dump = fs::read_to_string(runs[0].join("g00004_s002.csv")).unwrap();
    assert_eq!(dump.lines().count(), 65);
}

#[test]
fn realizations_of_a_generative_model_differ() {
    let ws = Workspace::new();
    let ckpt = ws.train("fm").join("model.ckpt");
    let out = ws.path("s");
    ws.ok(&["sample", "--checkpoint", ckpt.to_str().unwrap(), "--samples", "2", "--out", out.to_str().unwrap()]);
    let run = read_json(&out.join("run.json"));
    let id = run["result"]["geometries"][0].as_u64().unwrap();
    let a = fs::read(out.join(format!("g{id:05}_s000.csv"))).unwrap();
    let b = fs::read(out.join(format!("g{id:05}_s001.csv"))).unwrap();
    assert_ne!(a, b);
}

#[test]
fn saved_dataset_drives_training_evaluation_and_robustness() {
    let ws = Workspace::new();
    let data = ws.path("data");
    ws.ok(&["gen-data", "--out", data.to_str().unwrap()]);
    assert!(data.join("manifest.json").exists());
    assert_eq!(read_json(&data.join("run.json"))["seed"], 5);

    let train = ws.path("train");
    ws.ok(&["train", "--model", "ddpm", "--dataset", data.to_str().unwrap(), "--out", train.to_str().unwrap()]);
    let ckpt = train.join("model.ckpt");

    let eval = ws.path("eval");
    ws.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", data.to_str().unwrap(), "--out", eval.to_str().unwrap()]);
    for f in ["metrics.csv", "histogram.csv", "forces.csv", "summary.csv"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let summary = read_json(&eval.join("run.json"));
    assert_eq!(summary["result"]["samples"], 2);
    assert!(summary["result"]["mean_relative_l2"]["p"].as_f64().unwrap().is_finite());

    let robust = ws.path("robust");
    ws.ok(&[
        "robust",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--fractions",
        "0.05,0.25",
        "--out",
        robust.to_str().unwrap(),
    ]);
    let rows = fs::read_to_string(robust.join("robustness.csv")).unwrap();
    let sizes: Vec<&str> = rows.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(sizes, ["61", "48"]);
}

#[test]
fn unknown_config_keys_abort_before_any_work() {
    let ws = Workspace::new();
    fs::write(ws.path("run.json"), r#"{ "train": { "learning_rte": 0.1 } }"#).unwrap();
    let out_dir = ws.path("never");
    let out = ws.run(&["train", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));
    assert!(!out_dir.exists());
}

#[test]
fn diffusion_sampling_rejects_a_different_step_count() {
    let ws = Workspace::new();
    let ckpt = ws.train("ddpm").join("model.ckpt");
    let out = ws.run(&["sample", "--checkpoint", ckpt.to_str().unwrap(), "--steps", "20", "--out", ws.path("s").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let out = ws.run(&["sample", "--checkpoint", ckpt.to_str().unwrap(), "--model", "fm", "--out", ws.path("s").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn missing_checkpoint_is_an_io_failure() {
    let ws = Workspace::new();
    let out = ws.run(&["eval", "--checkpoint", ws.path("absent.ckpt").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn thread_cap_must_be_positive() {
    let ws = Workspace::new();
    let out = ws.run_with_env(&["gen-data", "--out", ws.path("d").to_str().unwrap()], &[("PFGN_THREADS", "0")]);
    assert_eq!(exit_code(&out), 2);
    let out = ws.run_with_env(&["gen-data", "--out", ws.path("d").to_str().unwrap()], &[("PFGN_THREADS", "1")]);
    assert!(out.status.success());
}
