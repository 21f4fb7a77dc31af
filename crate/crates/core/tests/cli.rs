use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use beliefgraph::harness::{load_dataset, PlantedSpec};
use beliefgraph::trainer::read_checkpoint;
use beliefgraph::{ExpectationMode, ModelConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beliefgraph")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    run: PathBuf,
    cfg: ModelConfig,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let mut cfg = ModelConfig::with_survey_masks(3, 3, 8, 4);
    cfg.expectation_mode = ExpectationMode::Enumerate;
    let spec = PlantedSpec::new(cfg.clone(), 40, 3);
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    let run = root.join("run.json");
    let body = serde_json::json!({ "model": cfg, "train": { "epochs": 3, "batch_size": 8 } });
    std::fs::write(&run, body.to_string()).unwrap();
    let data = root.join("data");
    ok(&bin(&["synth", "--spec", &s(&spec_path), "--out", &s(&data)]));
    Fixture {
        _dir: dir,
        root,
        data,
        run,
        cfg,
    }
}

fn train_to(f: &Fixture, name: &str) -> (PathBuf, PathBuf) {
    let ckpt = f.root.join(format!("{name}.bgp"));
    let log = f.root.join(format!("{name}.csv"));
    ok(&bin(&[
        "train",
        "--config",
        &s(&f.run),
        "--data",
        &s(&f.data),
        "--out",
        &s(&ckpt),
        "--log",
        &s(&log),
    ]));
    (ckpt, log)
}

#[test]
fn synth_writes_a_loadable_dataset_and_table() {
    let f = fixture();
    for file in ["dataset.json", "table.bgt", "true_marginals.csv", "planted.bgp"] {
        assert!(f.data.join(file).exists(), "{file} missing");
    }
    let ds = load_dataset(&f.data).unwrap();
    assert_eq!(ds.agents.len(), 40);
    assert!(ds.agents.iter().all(|a| a.belief_ratings.is_some()));
    read_checkpoint(f.data.join("planted.bgp"), &f.cfg).unwrap();
}

#[test]
fn train_writes_checkpoint_and_diagnostics() {
    let f = fixture();
    let (ckpt, log) = train_to(&f, "model");
    read_checkpoint(&ckpt, &f.cfg).unwrap();
    let text = std::fs::read_to_string(log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,mean_L_act,mean_KL,train_acc,test_acc");
    assert_eq!(lines.len(), 1 + 4, "header plus epochs 0..=3");
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn eval_rollout_and_cluster_outputs() {
    let f = fixture();
    let (ckpt, _) = train_to(&f, "model");

    let metrics = f.root.join("metrics.csv");
    ok(&bin(&["eval", "--data", &s(&f.data), "--ckpt", &s(&ckpt), "--config", &s(&f.run), "--out", &s(&metrics)]));
    let m = std::fs::read_to_string(metrics).unwrap();
    assert!(m.lines().count() > 1);

    let roll = f.root.join("rollout.csv");
    let att = f.root.join("attention");
    let out = bin(&[
        "rollout",
        "--data",
        &s(&f.data),
        "--ckpt",
        &s(&ckpt),
        "--config",
        &s(&f.run),
        "--out",
        &s(&roll),
        "--attention",
        &s(&att),
    ]);
    ok(&out);
    let r = std::fs::read_to_string(roll).unwrap();
    let mut lines = r.lines();
    assert_eq!(lines.next().unwrap(), "agent,t,obs,action,m_0,m_1,m_2");
    assert_eq!(lines.count(), 40 * 3);
    assert!(std::fs::read_dir(&att).unwrap().count() > 0);

    let clusters = f.root.join("clusters.csv");
    ok(&bin(&["cluster", "--data", &s(&f.data), "--k", "3", "--out", &s(&clusters)]));
    let c = std::fs::read_to_string(clusters).unwrap();
    assert_eq!(c.lines().next().unwrap(), "belief,agent,cluster");
}

#[test]
fn ablate_reports_three_variants() {
    let f = fixture();
    let table = f.root.join("ablation.csv");
    ok(&bin(&["ablate", "--data", &s(&f.data), "--config", &s(&f.run), "--out", &s(&table)]));
    let text = std::fs::read_to_string(table).unwrap();
    let variants: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, vec!["full", "no_pairwise", "no_temporal"]);
}

#[test]
fn gradcheck_succeeds_and_rejects_teacher_forcing() {
    let f = fixture();
    let out = bin(&["gradcheck", "--config", &s(&f.run), "--agents", "2"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
    let out = bin(&["gradcheck", "--config", &s(&f.run), "--teacher-forcing"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(bin(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(bin(&[]).status.code(), Some(2));
    let out = bin(&["eval", "--data", "/nonexistent/dataset.json", "--ckpt", "/nonexistent.bgp"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn checkpoint_from_another_config_is_refused() {
    let f = fixture();
    let (ckpt, _) = train_to(&f, "model");
    let mut other = f.cfg.clone();
    other.tau = 2.5;
    assert!(read_checkpoint(&ckpt, &other).is_err());
}
