use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn unifake(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unifake")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = unifake(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic datasets plus `synthetic.conf` with `extra` appended.
fn fixture(docs: usize, extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let syn = dir.path().join("syn");
    ok(&["synth", "--out", p(&syn), "--docs", &docs.to_string()]);
    let conf = syn.join("test.conf");
    fs::write(&conf, fs::read_to_string(syn.join("synthetic.conf")).unwrap() + extra).unwrap();
    (dir, conf)
}

fn prep(dir: &TempDir, conf: &Path, name: &str) -> PathBuf {
    let out = dir.path().join(name);
    ok(&["prep", "--config", p(conf), "--out", p(&out)]);
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every file in `dir` except the manifest is listed in it.
fn assert_manifest_complete(dir: &Path) {
    let m = manifest(dir);
    let listed: BTreeSet<String> =
        m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    let present: BTreeSet<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    assert_eq!(listed, present);
}

#[test]
fn prep_is_deterministic_and_reports_lengths() {
    let (dir, conf) = fixture(60, "");
    let a = prep(&dir, &conf, "a");
    let b = prep(&dir, &conf, "b");
    for f in ["vocab.txt", "dataset1.train.enc", "combined.test.enc", "lengths.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let lengths = fs::read_to_string(a.join("lengths.csv")).unwrap();
    let mut lines = lengths.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let max = |n: &str| r[col(n)].parse::<usize>().unwrap();
        assert!(max("with.max") <= max("without.max"));
    }
    assert_manifest_complete(&a);
    let m = manifest(&a);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(m["config"]["encoder"], "tiny");
}

#[test]
fn missing_label_column_exits_2_naming_it() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("d.csv"), "text,verdict\nsome words here,1\nmore words there,0\n").unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(
        &conf,
        "dataset.d.path = d.csv\ndataset.d.text = text\ndataset.d.label = label\ndataset.d.fake = 1\ndataset.d.real = 0\n",
    )
    .unwrap();
    let out = unifake(&["prep", "--config", p(&conf), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("`label`") && err.contains("d.csv"), "{err}");
}

#[test]
fn bad_config_and_missing_files_exit_2() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "epoch = 3\n").unwrap();
    let out = unifake(&["prep", "--config", p(&conf), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
    let out = unifake(&["prep", "--config", p(&dir.path().join("absent.conf")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_is_seed_deterministic() {
    let (dir, conf) = fixture(60, "epochs = 3\n");
    let data = prep(&dir, &conf, "prep");
    let train = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train", "--config", p(&conf), "--data", p(&data), "--dataset", "dataset1", "--out", p(&out),
            "--seed", seed, "--batch-size", "32",
        ]);
        out
    };
    let a = train("1", "a");
    let b = train("1", "b");
    let c = train("2", "c");
    for f in ["best.ckpt", "last.ckpt", "report.json", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_manifest_complete(&a);
    for f in ["best.ckpt", "last.ckpt", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("report.json")).unwrap(), fs::read(c.join("report.json")).unwrap());
    let m = manifest(&a);
    assert_eq!(m["config"]["batch_size"], "32");
    assert_eq!(m["config"]["seed"], "1");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(m["config_hash"], report["meta"]["config_hash"]);
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    let (dir, conf) = fixture(60, "epochs = 4\n");
    let data = prep(&dir, &conf, "prep");
    let base = ["train", "--config", p(&conf), "--data", p(&data), "--dataset", "combined", "--out"];
    let full = dir.path().join("full");
    ok(&[&base[..], &[p(&full)]].concat());
    let part = dir.path().join("part");
    ok(&[&base[..], &[p(&part), "--stop-after", "2"]].concat());
    assert_eq!(manifest(&part)["outcome"], "stopped early; resume from last.ckpt");
    let resumed = dir.path().join("resumed");
    let ckpt = part.join("last.ckpt");
    ok(&[&base[..], &[p(&resumed), "--resume", p(&ckpt)]].concat());
    for f in ["best.ckpt", "last.ckpt", "report.json"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(resumed.join(f)).unwrap(), "{f}");
    }
    let other = dir.path().join("other");
    let out = unifake(&[&base[..], &[p(&other), "--resume", p(&ckpt), "--epochs", "9"]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config hash"));
}

#[test]
fn eval_reproduces_best_accuracy_and_guards_vocabulary() {
    let (dir, conf) = fixture(60, "epochs = 3\n");
    let data = prep(&dir, &conf, "prep");
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&conf), "--data", p(&data), "--dataset", "dataset2", "--out", p(&run)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let ev = dir.path().join("ev");
    let text = ok(&[
        "eval", "--checkpoint", p(&run.join("best.ckpt")), "--data", p(&data.join("dataset2.test.enc")), "--out", p(&ev),
    ]);
    assert!(text.starts_with("positive class: fake (label 1)"));
    let out: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(out["metrics"], report["best_val"]);
    assert_manifest_complete(&ev);

    let other_conf = conf.with_file_name("other.conf");
    fs::write(&other_conf, fs::read_to_string(&conf).unwrap() + "vocab_max_size = 20\n").unwrap();
    let other = prep(&dir, &other_conf, "other");
    let out = unifake(&["eval", "--checkpoint", p(&run.join("best.ckpt")), "--data", p(&other.join("dataset2.test.enc"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));
}

#[test]
fn unreachable_baselines_report_infeasibility_with_exit_0() {
    let (dir, conf) = fixture(40, "epochs = 1\nbatch_sizes = 16\nbaselines = uniform:1.0\n");
    let out_dir = dir.path().join("u");
    let text = ok(&["unify", "--config", p(&conf), "--out", p(&out_dir), "--threshold", "0.001"]);
    assert!(text.starts_with("infeasible"), "{text}");
    let report = fs::read_to_string(out_dir.join("infeasible.txt")).unwrap();
    for d in ["dataset1", "dataset2", "dataset3"] {
        assert!(report.contains(d));
    }
    assert!(!out_dir.join("joint.ckpt").exists());
    assert_eq!(manifest(&out_dir)["outcome"], "infeasible");
    assert_manifest_complete(&out_dir);
}

#[test]
fn unify_outputs_are_idempotent() {
    let (dir, conf) = fixture(40, "epochs = 2\nbatch_sizes = 16\ncompare_preprocessing = off\nbaselines = uniform:0.5\nthreshold = 0.6\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["unify", "--config", p(&conf), "--out", p(&a)]);
    ok(&["unify", "--config", p(&conf), "--out", p(&b)]);
    assert!(a.join("joint.ckpt").exists());
    assert_manifest_complete(&a);
    for e in fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name();
        if name != "manifest.json" {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
    }
    // The combined test split written by unify evaluates under the joint checkpoint.
    ok(&["eval", "--checkpoint", p(&a.join("joint.ckpt")), "--data", p(&a.join("combined.test.enc"))]);
}

#[test]
fn custom_ablation_grid_rows_in_order() {
    let (dir, conf) = fixture(40, "epochs = 1\nblocks_total = 12\nablation_subsets = 1,9;5\nablation_batch_sizes = 32,16\n");
    let out = dir.path().join("ab");
    ok(&["ablate", "--config", p(&conf), "--out", p(&out)]);
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let order: Vec<(String, u64)> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["subset"].to_string(), r["batch_size"].as_u64().unwrap()))
        .collect();
    let expected = [("[1,9]", 16), ("[1,9]", 32), ("[5]", 16), ("[5]", 32)].map(|(s, b)| (s.to_string(), b));
    assert_eq!(order, expected);
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap().lines().count(), 5);
    assert_manifest_complete(&out);
}
