use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_lhgnn");
const QUICK: &[&str] = &["--max-epochs", "1", "--num-paths", "4", "--hidden-dim", "8", "--semantic-dim", "4"];

fn lhgnn(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("LHGNN_OUT_DIR")
        .env_remove("LHGNN_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn prepared(root: &Path, nodes: usize) -> std::path::PathBuf {
    let dir = root.join("data");
    ok(&lhgnn(&dir, &["prepare", "--synthetic", &nodes.to_string(), "--seed", "3"]));
    dir
}

fn data_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prepare_reruns_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    for d in [&a, &b] {
        ok(&lhgnn(d, &["prepare", "--synthetic", "150", "--seed", "7", "--cache-paths"]));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for f in [
        "manifest.json",
        "nodes.tsv",
        "train.tsv",
        "val.tsv",
        "test.tsv",
        "features.bin",
        "labels.tsv",
        "val_queries.json",
        "test_queries.json",
        "paths-7.bin",
    ] {
        assert!(names.iter().any(|n| n == f), "missing {f}");
    }
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n:?} differs");
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["seed"], 7);
    let split = m["train_edges"].as_u64().unwrap() + m["val_edges"].as_u64().unwrap() + m["test_edges"].as_u64().unwrap();
    assert_eq!(split, m["edges"].as_u64().unwrap());
}

#[test]
fn malformed_ratios_are_usage_errors_naming_the_flag() {
    let root = tempfile::tempdir().unwrap();
    for bad in ["0.8,0.1", "0.8,0.1,x", "0.8,0.1,0.3"] {
        let out = lhgnn(root.path(), &["prepare", "--synthetic", "100", "--ratios", bad]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--ratios"), "{bad}");
    }
}

#[test]
fn missing_inputs_are_usage_errors_with_a_remedy() {
    let root = tempfile::tempdir().unwrap();
    let out = lhgnn(root.path(), &["prepare", "--edges", "/no/such/edges.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--edges") && err.contains("no such file"), "{err}");

    let out = lhgnn(root.path(), &["train", "--data", "/no/such/dir"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lhgnn prepare"));
}

#[test]
fn train_then_eval_emits_metrics_with_fingerprint() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared(root.path(), 200);
    let run = root.path().join("run");
    let mut args = vec!["train", "--data", data_arg(&data), "--seed", "1"];
    args.extend_from_slice(QUICK);
    let stdout = ok(&lhgnn(&run, &args));
    assert!(stdout.lines().any(|l| l.starts_with("epoch 1 loss ") && l.contains(" val_map ")));
    for f in ["config.toml", "best.ckpt", "train_report.json", "loss_curve.svg"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let report = json(&run.join("train_report.json"));
    assert_eq!(report["seed"], 1);
    assert_eq!(report["fingerprint"].as_str().unwrap().len(), 64);

    let ckpt = run.join("best.ckpt");
    let evals = root.path().join("eval");
    ok(&lhgnn(&evals, &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "test"]));
    let m = json(&evals.join("metrics_test.json"));
    assert_eq!(m["fingerprint"], report["fingerprint"]);
    assert_eq!(m["seed"], 1);
    assert_eq!(m["split"], "test");
    for k in ["map", "ndcg"] {
        let x = m[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{k} {x}");
    }

    // A different configuration must be refused, showing both fingerprints.
    let other = root.path().join("other.toml");
    let text = fs::read_to_string(run.join("config.toml")).unwrap();
    fs::write(&other, text.replace("margin = 0.2", "margin = 0.3")).unwrap();
    let out = lhgnn(
        &evals,
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", other.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(report["fingerprint"].as_str().unwrap()), "{err}");
    assert!(err.contains("refusing"), "{err}");
}

#[test]
fn flags_override_the_config_file() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared(root.path(), 120);
    let cfg = root.path().join("c.toml");
    fs::write(&cfg, "seed = 5\nmax_epochs = 1\n[paths]\nnum_paths = 3\n[model]\nhidden_dim = 6\n").unwrap();
    let run = root.path().join("run");
    ok(&lhgnn(
        &run,
        &["train", "--data", data_arg(&data), "--config", cfg.to_str().unwrap(), "--hidden-dim", "4"],
    ));
    let r = json(&run.join("train_report.json"));
    assert_eq!(r["seed"], 5);
    assert_eq!(r["config"]["paths"]["num_paths"], 3);
    assert_eq!(r["config"]["model"]["hidden_dim"], 4);

    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let out = lhgnn(&run, &["train", "--data", data_arg(&data), "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_reports_are_tagged_with_the_variant() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared(root.path(), 120);
    let out = root.path().join("ab");
    let mut args = vec!["ablate", "--data", data_arg(&data), "--variant", "no_personalization", "--seeds", "0,1"];
    args.extend_from_slice(QUICK);
    ok(&lhgnn(&out, &args));
    let r = json(&out.join("ablation-no_personalization.json"));
    assert_eq!(r["variant"], "no_personalization");
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|row| row["variant"] == "no_personalization"));
    assert_eq!(r["config"]["model"]["personalization"], true, "base config is unmodified");
    assert!(out.join("ablation-no_personalization.svg").is_file());
    assert!(out.join("ablate/no_personalization-seed1/best.ckpt").is_file());
}

#[test]
fn transe_baseline_names_follow_the_pseudo_type_count() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared(root.path(), 150);
    let out = root.path().join("bl");
    for (k, name) in [("1", "TransE"), ("3", "TransE-3")] {
        let stdout = ok(&lhgnn(
            &out,
            &["baseline", "transe", "--data", data_arg(&data), "--pseudo-k", k, "--dim", "8", "--max-epochs", "2"],
        ));
        assert!(stdout.contains(&format!("{name} test_map")), "{stdout}");
        let r = json(&out.join(format!("baseline-{name}.json")));
        assert_eq!(r["model"], name);
        assert_eq!(r["config"]["pseudo_k"].as_u64().unwrap().to_string(), k);
        assert_eq!(r["fingerprint"].as_str().unwrap().len(), 64);
    }
    let types = fs::read_to_string(out.join("pseudo_types_3.tsv")).unwrap();
    assert!(types.starts_with("# k\t3\n"));
}

#[test]
fn edge_lists_with_string_ids_support_the_probe() {
    let root = tempfile::tempdir().unwrap();
    let edges = root.path().join("edges.tsv");
    let labels = root.path().join("labels.tsv");
    let mut e = String::new();
    let mut l = String::new();
    // Papers link to one of two venues and to three of eight authors.
    for p in 0..40 {
        e += &format!("paper{p}\tvenue{}\n", p % 2);
        for k in 0..3 {
            e += &format!("paper{p}\tauthor{}\n", (p + 3 * k) % 8);
        }
        l += &format!("paper{p}\tpaper\n");
    }
    for a in 0..8 {
        l += &format!("author{a}\tauthor\n");
    }
    for v in 0..2 {
        l += &format!("venue{v}\tvenue\n");
    }
    fs::write(&edges, e).unwrap();
    fs::write(&labels, l).unwrap();
    let data = root.path().join("data");
    ok(&lhgnn(
        &data,
        &["prepare", "--edges", edges.to_str().unwrap(), "--labels", labels.to_str().unwrap()],
    ));
    let m = json(&data.join("manifest.json"));
    assert_eq!(m["nodes"], 50);
    assert_eq!(m["feature_dim"], Value::Null);

    let run = root.path().join("run");
    let mut args = vec!["train", "--data", data_arg(&data), "--entity-dim", "6"];
    args.extend_from_slice(QUICK);
    ok(&lhgnn(&run, &args));
    let probe = root.path().join("probe");
    ok(&lhgnn(&probe, &["probe", "--checkpoint", run.join("best.ckpt").to_str().unwrap()]));
    let r = json(&probe.join("probe.json"));
    assert_eq!(r["classes"].as_array().unwrap().len(), 3);
    assert!(r["accuracy"].as_f64().unwrap() >= 0.0);
    assert!(r["majority_macro_f"].as_f64().is_some());
}

#[test]
fn probe_without_labels_is_a_usage_error() {
    let root = tempfile::tempdir().unwrap();
    let edges = root.path().join("edges.tsv");
    let ring: String = (0..30).map(|i| format!("n{i}\tn{}\nn{i}\tn{}\n", (i + 1) % 30, (i + 7) % 30)).collect();
    fs::write(&edges, ring).unwrap();
    let data = root.path().join("data");
    ok(&lhgnn(&data, &["prepare", "--edges", edges.to_str().unwrap(), "--ratios", "0.6,0.2,0.2"]));
    let run = root.path().join("run");
    let mut args = vec!["train", "--data", data_arg(&data), "--entity-dim", "4"];
    args.extend_from_slice(QUICK);
    ok(&lhgnn(&run, &args));
    let out = lhgnn(&run, &["probe", "--checkpoint", run.join("best.ckpt").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn environment_sets_output_dir_and_workers() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared(root.path(), 150);
    let mut losses = Vec::new();
    for workers in ["1", "2"] {
        let run = root.path().join(format!("run{workers}"));
        let mut args = vec!["train", "--data", data_arg(&data)];
        args.extend_from_slice(QUICK);
        let out = Command::new(BIN)
            .args(&args)
            .env("LHGNN_OUT_DIR", &run)
            .env("LHGNN_WORKERS", workers)
            .output()
            .unwrap();
        ok(&out);
        let r = json(&run.join("train_report.json"));
        losses.push(r["steps"].clone());
    }
    assert_eq!(losses[0], losses[1], "parallel training reproduces the serial run");
}

#[test]
fn scaling_reports_rows_and_ratios() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("sc");
    let mut args = vec!["scaling", "--sizes", "60,120"];
    args.extend_from_slice(QUICK);
    ok(&lhgnn(&out, &args));
    let r = json(&out.join("scaling.json"));
    assert_eq!(r["rows"].as_array().unwrap().len(), 2);
    assert_eq!(r["ratios"][0]["from"], 60);
    assert!(out.join("scaling.svg").is_file());
}
