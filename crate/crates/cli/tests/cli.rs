use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn signseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signseq"))
        .args(args)
        .env_remove("SIGNSEQ_THREADS")
        .output()
        .expect("run signseq")
}

fn ok(args: &[&str]) -> String {
    let out = signseq(args);
    assert!(
        out.status.success(),
        "signseq {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, classes: usize, samples: usize, seed: u64) -> PathBuf {
    ok(&[
        "gen",
        "--classes",
        &classes.to_string(),
        "--samples",
        &samples.to_string(),
        "--frames",
        "12",
        "--features",
        "6",
        "--seed",
        &seed.to_string(),
        "--out",
        s(dir),
    ]);
    dir.join("manifest.csv")
}

const TINY_LSTM: &[&str] = &["--set", "lstm_units=8", "--set", "head_hidden=8"];

fn train_tiny(manifest: &Path, out: &Path, epochs: usize) {
    let mut args = vec!["train", "--arch", "lstm", "--data", s(manifest), "--out", s(out), "--quiet"];
    let e = epochs.to_string();
    args.extend(["--epochs", &e]);
    args.extend(TINY_LSTM);
    ok(&args);
}

#[test]
fn gen_writes_one_file_per_sample_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = ok(&["gen", "--classes", "5", "--samples", "10", "--out", s(&a)]);
    assert!(out.contains("50 sequences"), "{out}");
    ok(&["gen", "--classes", "5", "--samples", "10", "--out", s(&b)]);
    let files: Vec<_> = fs::read_dir(a.join("sequences")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 50);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 51);
    for f in files {
        assert_eq!(fs::read(a.join("sequences").join(&f)).unwrap(), fs::read(b.join("sequences").join(&f)).unwrap());
    }
    assert_eq!(manifest, fs::read_to_string(b.join("manifest.csv")).unwrap());
    assert_eq!(fs::read(a.join("classes.txt")).unwrap(), fs::read(b.join("classes.txt")).unwrap());
}

#[test]
fn gen_reports_unwritable_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = signseq(&["gen", "--classes", "2", "--samples", "2", "--out", s(&blocker.join("sub"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn train_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(&dir.path().join("data"), 4, 6, 1);
    let run = dir.path().join("run");
    train_tiny(&manifest, &run, 2);
    for f in ["best.ckpt", "final.ckpt", "train_log.csv", "config.txt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");
    assert!(log.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,lr,wall_seconds"));

    let ckpt = run.join("final.ckpt");
    let text = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&manifest)]);
    assert!(text.contains("accuracy"));

    let json_path = dir.path().join("r.json");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&manifest), "--format", "json", "--out", s(&json_path)]);
    let csv_text = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&manifest), "--format", "csv"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    let acc = report["overall_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for (c, row) in rows.iter().enumerate() {
        assert_eq!(&row[0], report["class_names"][c].as_str().unwrap());
        for (col, key) in [(1, "precision"), (2, "recall"), (3, "f1")] {
            let from_csv: f64 = row[col].parse().unwrap();
            let from_json = report[key][c].as_f64().unwrap();
            assert!((from_csv - from_json).abs() <= 1e-12, "{key} class {c}");
        }
        assert_eq!(row[4].parse::<u64>().unwrap(), report["support"][c].as_u64().unwrap());
    }
}

#[test]
fn eval_rejects_mismatched_class_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(&dir.path().join("data"), 3, 4, 1);
    let other = gen(&dir.path().join("other"), 4, 4, 1);
    let run = dir.path().join("run");
    train_tiny(&manifest, &run, 1);
    let out = signseq(&["eval", "--checkpoint", s(&run.join("best.ckpt")), "--data", s(&other)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("class table mismatch"));
}

#[test]
fn config_precedence_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(&dir.path().join("data"), 3, 4, 2);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs=5\nbatch_size=4\nlstm_units=6\nhead_hidden=4\n").unwrap();
    let run = dir.path().join("run");
    ok(&[
        "train", "--arch", "lstm", "--data", s(&manifest), "--config", s(&cfg), "--out", s(&run), "--epochs", "1",
        "--quiet",
    ]);
    let echoed = fs::read_to_string(run.join("config.txt")).unwrap();
    let lines: Vec<&str> = echoed.lines().collect();
    for want in ["epochs=1", "batch_size=4", "lstm_units=6", "seq_len=12", "lr_start=0.00005", "decay_type=cosine"] {
        assert!(lines.contains(&want), "missing {want} in\n{echoed}");
    }
}

#[test]
fn invalid_config_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(&dir.path().join("data"), 3, 4, 2);
    let run = dir.path().join("run");
    let out = signseq(&["train", "--arch", "lstm", "--data", s(&manifest), "--out", s(&run), "--set", "bogus=1"]);
    assert!(!out.status.success());
    assert!(!run.join("config.txt").exists());
    let out = signseq(&["train", "--arch", "lstm", "--data", s(&manifest), "--out", s(&run), "--set", "epochs=0"]);
    assert!(!out.status.success());
}

#[test]
fn bench_json_and_minimum_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("bench.json");
    let text = ok(&[
        "bench", "--arch", "lstm", "--arch", "cnntrans", "--seq-len", "8", "--features", "6", "--classes", "3",
        "--warmup", "2", "--repeats", "30", "--out", s(&json_path),
    ]);
    assert!(text.contains("fps ordering:"), "{text}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    let runs = v.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for r in runs {
        assert!(r["latencies_seconds"].as_array().unwrap().len() >= 30);
        assert!(r["average_fps"].as_f64().unwrap() > 0.0);
    }
    let out = signseq(&["bench", "--arch", "lstm", "--seq-len", "4", "--features", "3", "--repeats", "29"]);
    assert!(!out.status.success());
}

#[test]
fn bench_accepts_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(&dir.path().join("data"), 3, 4, 3);
    let run = dir.path().join("run");
    train_tiny(&manifest, &run, 1);
    let text = ok(&[
        "bench", "--checkpoint", s(&run.join("best.ckpt")), "--checkpoint", s(&run.join("final.ckpt")), "--warmup",
        "1", "--repeats", "30",
    ]);
    assert!(text.contains("fps ordering:"));
}

#[test]
fn gradcheck_layers_pass_and_broken_fixture_fails() {
    let out = ok(&["gradcheck", "--scope", "layers"]);
    let rows: Vec<&str> = out.lines().filter(|l| l.ends_with("PASS") || l.ends_with("FAIL")).collect();
    assert!(rows.len() >= 15);
    assert!(rows.iter().all(|l| l.ends_with("PASS")));
    let ops: std::collections::HashSet<&str> = rows.iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(ops.len(), rows.len(), "one row per op");

    let bad = signseq(&["gradcheck", "--scope", "layers", "--inject-broken"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(&dir.path().join("data"), 3, 4, 4);
    let run = dir.path().join("run");
    train_tiny(&manifest, &run, 1);
    let ckpt = run.join("best.ckpt");
    let eval = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_signseq"))
            .args(["eval", "--checkpoint", s(&ckpt), "--data", s(&manifest), "--format", "json"])
            .env("SIGNSEQ_THREADS", threads)
            .output()
            .unwrap()
    };
    let bad = eval("zero");
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("SIGNSEQ_THREADS"));
    assert!(!eval("0").status.success());
    let one = eval("1");
    let three = eval("3");
    assert!(one.status.success() && three.status.success());
    assert_eq!(one.stdout, three.stdout);
}

#[test]
fn init_from_checkpoint_swaps_head() {
    let dir = tempfile::tempdir().unwrap();
    let big = gen(&dir.path().join("big"), 5, 4, 5);
    let small = gen(&dir.path().join("small"), 3, 4, 6);
    let pre = dir.path().join("pre");
    train_tiny(&big, &pre, 1);
    let fine = dir.path().join("fine");
    ok(&[
        "train", "--arch", "lstm", "--data", s(&small), "--out", s(&fine), "--epochs", "1", "--quiet", "--init",
        s(&pre.join("best.ckpt")),
    ]);
    let text = ok(&["eval", "--checkpoint", s(&fine.join("final.ckpt")), "--data", s(&small), "--format", "csv"]);
    assert_eq!(text.lines().count(), 4);
}
