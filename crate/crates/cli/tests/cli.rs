use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gue_core::metric_model::ParamId;
use gue_core::{DatasetManifest, FeatureBank, Matrix, MetricModel};

fn gue(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gue"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gue(dir, args);
    assert!(out.status.success(), "gue {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> (PathBuf, PathBuf) {
    let bank = format!("{name}.guef");
    let mut args = vec!["synth", "--out", &bank];
    args.extend_from_slice(extra);
    ok(dir, &args);
    (dir.join(&bank), dir.join(format!("{name}.csv")))
}

const SMALL: &[&str] = &["--classes", "8", "--per-class", "10", "--dim", "16", "--seed", "1"];

#[test]
fn synth_outputs_load_and_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (b1, m1) = synth(dir.path(), "a", &["--classes", "20", "--per-class", "10", "--dim", "64", "--seed", "1"]);
    let (b2, m2) = synth(dir.path(), "b", &["--classes", "20", "--per-class", "10", "--dim", "64", "--seed", "1"]);
    let bank = FeatureBank::load(&b1).unwrap();
    assert_eq!((bank.len(), bank.dim()), (200, 64));
    assert_eq!(DatasetManifest::load(&m1).unwrap().len(), 200);
    assert_eq!(std::fs::read(&b1).unwrap(), std::fs::read(&b2).unwrap());
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert!(dir.path().join("a.guef.run.json").exists());
    assert!(dir.path().join("a.csv.run.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = gue(dir.path(), &["synth", "--classes", "1", "--out", "x.guef"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = gue(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    synth(dir.path(), "d", SMALL);
    let out = gue(dir.path(), &["reduce", "--bank", "d.guef", "--method", "pca", "--out-dim", "4", "--out", "r.guef"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = gue(dir.path(), &["embed", "--checkpoint", "missing.ckpt", "--bank", "missing.guef", "--out", "e.guef"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
    std::fs::write(dir.path().join("junk.guef"), b"GUEFjunk").unwrap();
    let out = gue(dir.path(), &["margins", "--manifest", "junk.guef"]);
    assert_eq!(out.status.code(), Some(1));
}

fn train_small(dir: &Path, extra: &[&str]) -> PathBuf {
    synth(dir, "d", &["--classes", "20", "--count-min", "10", "--count-max", "30", "--dim", "32", "--seed", "2"]);
    let mut args = vec![
        "train",
        "--bank",
        "d.guef",
        "--manifest",
        "d.csv",
        "--out",
        "m.ckpt",
        "--seed",
        "7",
        "--embedding-dim",
        "32",
        "--val-fraction",
        "0.3",
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join("m.ckpt")
}

#[test]
fn train_writes_checkpoint_log_and_validation_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_small(dir.path(), &[]);
    let model = MetricModel::load(&ckpt).unwrap();
    assert_eq!(model.embedding_dim(), 32);
    let log = std::fs::read_to_string(dir.path().join("m.ckpt.log")).unwrap();
    let lines: Vec<&str> = log.lines().skip(1).collect();
    assert_eq!(lines.len(), 9);
    let losses: Vec<f64> = lines.iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    assert_eq!(lines.iter().filter(|l| l.contains(",head,")).count(), 5);
    let val = DatasetManifest::load(dir.path().join("m.ckpt.val.csv")).unwrap();
    assert_eq!(val.classes().len(), 6);
    assert!(val.classes().iter().all(|c| !model.classes.contains(c)));
    for f in ["m.ckpt", "m.ckpt.log", "m.ckpt.val.csv"] {
        let run = std::fs::read_to_string(dir.path().join(format!("{f}.run.json"))).unwrap();
        assert!(run.contains("\"subcommand\": \"train\""));
        assert!(run.contains("\"d.guef\""));
    }
}

#[test]
fn head_only_schedule_keeps_adapter_at_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_small(dir.path(), &["--epochs-head", "2", "--epochs-joint", "0"]);
    let model = MetricModel::load(&ckpt).unwrap();
    let w = model.param(ParamId::AdapterWeight).unwrap();
    assert!(w.bitwise_eq(&Matrix::identity(32)));
    assert!(model.param(ParamId::AdapterBias).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn margins_table_spans_the_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("id,class,vertical\n");
    for i in 0..5 {
        csv.push_str(&format!("r{i},rare,v0\n"));
    }
    for i in 0..17 {
        csv.push_str(&format!("m{i},mid,v1\n"));
    }
    for i in 0..40 {
        csv.push_str(&format!("f{i},frequent,v1\n"));
    }
    std::fs::write(dir.path().join("m.csv"), csv).unwrap();
    let out = ok(dir.path(), &["margins", "--manifest", "m.csv"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "class,count,margin");
    assert_eq!(lines[1], "rare,5,0.45");
    assert!(lines[2].starts_with("mid,17,"));
    assert_eq!(lines[3], "frequent,40,0.005");
}

#[test]
fn avgpool_pipeline_and_report_consistency() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", &["--classes", "12", "--per-class", "8", "--dim", "32", "--seed", "3"]);
    ok(dir.path(), &["reduce", "--bank", "d.guef", "--method", "avgpool", "--out-dim", "8", "--out", "r.guef"]);
    assert_eq!(FeatureBank::load(dir.path().join("r.guef")).unwrap().dim(), 8);
    ok(
        dir.path(),
        &[
            "evaluate",
            "--bank",
            "r.guef",
            "--manifest",
            "d.csv",
            "--out",
            "rep.txt",
            "--per-query",
            "pq.csv",
            "--json",
            "rep.json",
        ],
    );
    let report = std::fs::read_to_string(dir.path().join("rep.txt")).unwrap();
    let map: f64 = report.lines().find_map(|l| l.strip_prefix("map,")).unwrap().parse().unwrap();
    let dump = std::fs::read_to_string(dir.path().join("pq.csv")).unwrap();
    let aps: Vec<f64> = dump.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(aps.len(), 96);
    assert!((aps.iter().sum::<f64>() / aps.len() as f64 - map).abs() <= 1e-12);
    assert_eq!(report.lines().filter(|l| l.starts_with("vertical,")).count(), 4);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(json["map"].as_f64().unwrap(), map);
    assert!(dir.path().join("rep.txt.run.json").exists());
}

#[test]
fn evaluate_prints_to_stdout_by_default() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", SMALL);
    let out = ok(dir.path(), &["evaluate", "--bank", "d.guef", "--manifest", "d.csv", "--k", "5"]);
    assert!(out.starts_with("queries,80\nskipped,0\nk,5\nmap,"));
}

#[test]
fn gradcheck_reports_every_tensor() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", SMALL);
    let out = ok(
        dir.path(),
        &["gradcheck", "--bank", "d.guef", "--manifest", "d.csv", "--embedding-dim", "8", "--coords", "10"],
    );
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    for r in rows {
        let err: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err <= 1e-4, "{r}");
    }
}
