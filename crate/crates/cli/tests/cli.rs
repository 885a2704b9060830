use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kgsym::data::synthetic::SymmetricFixture;
use kgsym::data::{load_dataset_dir, write_dataset_dir, TripleFormat};
use kgsym::models::Checkpoint;
use kgsym::training::{initial_params, TrainConfig};
use kgsym::{ModelKind, Norm, Triple};
use serde_json::Value;
use tempfile::TempDir;

fn kgsym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgsym"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kgsym(args);
    assert!(
        out.status.success(),
        "kgsym {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = kgsym(args);
    assert!(!out.status.success(), "kgsym {args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "), "{stderr}");
    stderr
}

fn toy(dir: &Path, train: &str, valid: &str, test: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("train.txt"), train).unwrap();
    fs::write(dir.join("valid.txt"), valid).unwrap();
    fs::write(dir.join("test.txt"), test).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_reports_tables_and_errors() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    toy(&data, "a\tr\tb\nb\tr\ta\na\ts\tb\n", "", "");
    let json = tmp.path().join("stats.json");
    let out = ok(&["stats", s(&data), "--json", s(&json)]);
    assert!(out.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["r", "2", "2", "1.000", "yes"]));
    let report: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["splits"][2]["all"], 0);

    let msg = err(&["stats", s(&tmp.path().join("missing"))]);
    assert!(msg.contains("train.txt"), "{msg}");

    fs::write(data.join("train.txt"), "a\tr\n").unwrap();
    let msg = err(&["stats", s(&data)]);
    assert!(msg.contains("train.txt:1"), "{msg}");
}

#[test]
fn complete_adds_reverse_and_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    toy(&data, "a\tr\tb\n", "", "");
    let once = tmp.path().join("once");
    let out = ok(&["complete", s(&data), s(&once), "--threshold", "0"]);
    assert!(out.contains("train added        1"), "{out}");
    let train = fs::read_to_string(once.join("train.txt")).unwrap();
    assert_eq!(train, "a\tr\tb\nb\tr\ta\n");

    let twice = tmp.path().join("twice");
    let out = ok(&["complete", s(&once), s(&twice), "--threshold", "0"]);
    assert!(out.contains("train added        0"), "{out}");
    assert_eq!(fs::read_to_string(twice.join("train.txt")).unwrap(), train);
}

#[test]
fn circle_gen_counts_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    toy(&data, "a\tr\tb\nb\tr\ta\nb\tq\tc\n", "", "");
    let full = tmp.path().join("full.txt");
    ok(&["circle-gen", s(&data), s(&full), "--seed", "4"]);
    let text = fs::read_to_string(&full).unwrap();
    assert_eq!(text.lines().count(), 10_000);
    assert!(text.lines().all(|l| {
        let f: Vec<&str> = l.split('\t').collect();
        f.len() == 3 && f[0] == f[2] && f[1] == "r"
    }));
    let again = tmp.path().join("again.txt");
    ok(&["circle-gen", s(&data), s(&again), "--seed", "4"]);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&again).unwrap());

    let one = tmp.path().join("one.txt");
    ok(&["circle-gen", s(&data), s(&one), "--n", "1"]);
    assert_eq!(fs::read_to_string(&one).unwrap().lines().count(), 1);
}

#[test]
fn zero_epochs_writes_the_initialisation() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    toy(&data, "a\tr\tb\nb\tr\ta\nb\tq\tc\n", "", "c\tq\ta\n");
    let run = tmp.path().join("run");
    ok(&[
        "train", s(&data), s(&run), "--model", "transh", "--sym", "--dim", "5", "--epochs", "0",
        "--seed", "11",
    ]);
    for name in ["checkpoint.kge", "history.tsv", "manifest.json", "eval.json"] {
        assert!(run.join(name).exists(), "{name}");
    }
    let store = load_dataset_dir(&data, TripleFormat::Names).unwrap();
    let config = TrainConfig {
        model_kind: ModelKind::TransH,
        sym_enabled: true,
        dim: 5,
        epochs: 0,
        seed: 11,
        ..Default::default()
    };
    let params = initial_params(&store, &config).unwrap();
    let expected = Checkpoint::new(params, Norm::L2, 11, 0).to_bytes();
    assert_eq!(fs::read(run.join("checkpoint.kge")).unwrap(), expected);
}

#[test]
fn deterministic_runs_match_and_config_file_yields_to_flags() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    let store = SymmetricFixture {
        left: 6,
        right: 6,
        pairs: 20,
        holdout: 0.2,
        seed: 3,
    }
    .build()
    .unwrap();
    write_dataset_dir(&store, &data).unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"model": "transd", "dim": 3, "epochs": 7, "batch": 8}"#).unwrap();

    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let run = tmp.path().join(name);
        ok(&[
            "train", s(&data), s(&run), "--config", s(&config), "--epochs", "5", "--seed", "2",
            "--deterministic",
        ]);
        let m: Value =
            serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
        manifests.push(m);
    }
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for name in ["checkpoint.kge", "history.tsv", "eval.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let digests = |m: &Value| {
        m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o["sha256"].clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(digests(&manifests[0]), digests(&manifests[1]));
    assert_eq!(manifests[0]["started"], Value::Null);
    let cfg = &manifests[0]["config"];
    assert_eq!(cfg["model_kind"], "transd");
    assert_eq!(cfg["dim"], 3);
    assert_eq!(cfg["epochs"], 5);
    assert_eq!(cfg["batch_size"], 8);
    assert_eq!(fs::read_to_string(a.join("history.tsv")).unwrap().lines().count(), 6);

    fs::write(&config, r#"{"modle": "transe"}"#).unwrap();
    err(&["train", s(&data), s(&tmp.path().join("c")), "--config", s(&config)]);
}

fn brute_force_ranks(ckpt: &Checkpoint, store: &kgsym::TripleStore) -> Vec<usize> {
    let norm = ckpt.manifest.norm;
    let f = |t: &Triple| ckpt.params.score(t, norm).unwrap().value;
    let mut ranks = Vec::new();
    for t in store.test() {
        for head_side in [true, false] {
            let target = f(t);
            let (mut better, mut ties) = (0usize, 0usize);
            for e in 0..store.entity_count() as u32 {
                let c = if head_side {
                    Triple::new(e, t.relation, t.tail)
                } else {
                    Triple::new(t.head, t.relation, e)
                };
                if c != *t && !store.contains_any(&c) {
                    let v = f(&c);
                    better += (v < target) as usize;
                    ties += (v == target) as usize;
                }
            }
            ranks.push(1 + better + ties.div_ceil(2));
        }
    }
    ranks
}

#[test]
fn eval_matches_oracle_and_rejects_mismatch() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    toy(
        &data,
        "a\tr\tb\nb\tr\tc\nc\tr\td\nd\tq\ta\n",
        "a\tq\tc\n",
        "a\tr\tc\nb\tq\td\n",
    );
    let run = tmp.path().join("run");
    ok(&["train", s(&data), s(&run), "--dim", "4", "--epochs", "30", "--no-eval"]);
    assert!(!run.join("eval.json").exists());
    let out_dir = tmp.path().join("ev");
    ok(&[
        "eval", s(&run.join("checkpoint.kge")), s(&data), "--mode", "both", "--workers", "2",
        "--out", s(&out_dir),
    ]);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("eval.json")).unwrap()).unwrap();
    assert!(out_dir.join("manifest.json").exists());
    let filtered = &report["link_prediction"][1];
    assert_eq!(filtered["mode"], "filtered");

    let store = load_dataset_dir(&data, TripleFormat::Names).unwrap();
    let ckpt = Checkpoint::load(&run.join("checkpoint.kge")).unwrap();
    let ranks = brute_force_ranks(&ckpt, &store);
    let n = ranks.len() as f64;
    let mr = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    assert_eq!(filtered["mr"].as_f64().unwrap(), mr);
    assert_eq!(filtered["mrr"].as_f64().unwrap(), mrr);

    let other = tmp.path().join("other");
    toy(&other, "a\tr\tb\n", "", "b\tr\ta\n");
    let msg = err(&["eval", s(&run.join("checkpoint.kge")), s(&other)]);
    assert!(msg.contains("does not match"), "{msg}");
}

#[test]
fn circle_eval_on_degenerate_baseline() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    write_dataset_dir(&SymmetricFixture::default().build().unwrap(), &data).unwrap();
    let run = tmp.path().join("run");
    ok(&[
        "train", s(&data), s(&run), "--model", "transe", "--norm", "l2", "--dim", "16",
        "--epochs", "500", "--batch", "100", "--seed", "7",
    ]);
    let circle = tmp.path().join("circle.txt");
    ok(&["circle-gen", s(&data), s(&circle), "--n", "500", "--seed", "1"]);
    let out_dir = tmp.path().join("ev");
    ok(&[
        "eval", s(&run.join("checkpoint.kge")), s(&data), "--circle", s(&circle), "--out",
        s(&out_dir),
    ]);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("eval.json")).unwrap()).unwrap();
    let frac = report["circle"]["fraction_rank1"].as_f64().unwrap();
    assert!(frac >= 0.95, "fraction ranked first {frac}");

    let history = fs::read_to_string(run.join("history.tsv")).unwrap();
    let last: Vec<f64> = history
        .lines()
        .last()
        .unwrap()
        .split('\t')
        .map(|x| x.parse().unwrap())
        .collect();
    // Symmetric-relation norm collapses well below its initial scale (about 3.5).
    assert!(last[3] < 0.5 * last[2], "{history:.200}");
}
