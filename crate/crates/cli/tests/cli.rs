use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use mmfuse_cli::{load_document, parse_args, CliError, Command, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK};
use serde_json::{json, Value};

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("mmfuse").chain(args.iter().copied()).map(String::from).collect()
}

fn mmfuse(args: &[&str]) -> Output {
    Process::new(env!("CARGO_BIN_EXE_mmfuse")).args(args).output().unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    path
}

#[test]
fn synth_command_binds_paths() {
    let cfg = parse_args(argv(&["synth", "--config", "s.json", "--out", "data/"])).unwrap();
    assert_eq!(cfg.command, Command::Synth);
    assert_eq!(cfg.config, Some(PathBuf::from("s.json")));
    assert_eq!(cfg.out, PathBuf::from("data/"));
    assert!(cfg.overrides.is_empty());
    assert!(!cfg.deterministic);
}

#[test]
fn flags_become_overrides_in_order() {
    let cfg = parse_args(argv(&[
        "train", "--out", "o", "--seed", "7", "--profile", "paper", "--set", "trainer.model=us", "-vv", "--deterministic",
    ]))
    .unwrap();
    assert_eq!(
        cfg.overrides,
        vec![("seed".into(), json!(7)), ("profile".into(), json!("paper")), ("trainer.model".into(), json!("us"))]
    );
    assert_eq!(cfg.verbosity, 2);
    assert!(cfg.deterministic);
}

#[test]
fn override_replaces_config_value() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_config(dir.path(), &json!({ "trainer": { "model": "us", "lr": 0.0001 } }));
    let file = file.to_str().unwrap();
    let base = parse_args(argv(&["train", "--config", file, "--out", "o"])).unwrap();
    assert_eq!(load_document(&base).unwrap()["trainer"]["lr"], json!(0.0001));
    let cfg = parse_args(argv(&["train", "--config", file, "--out", "o", "--set", "trainer.lr=0.001"])).unwrap();
    let doc = load_document(&cfg).unwrap();
    assert_eq!(doc["trainer"]["lr"], json!(0.001));
    // Untouched keys keep their file or default values.
    assert_eq!(doc["trainer"]["model"], json!("us"));
    assert_eq!(doc["trainer"]["batch_size"], json!(8));
}

#[test]
fn default_learning_rate_is_1e_4() {
    for model in ["mri", "us", "fusion"] {
        let cfg = parse_args(argv(&["train", "--out", "o", "--set", &format!("trainer.model={model}")])).unwrap();
        assert_eq!(load_document(&cfg).unwrap()["trainer"]["lr"], json!(0.0001), "{model}");
    }
}

#[test]
fn conflicting_duplicates_name_the_flag() {
    let err = parse_args(argv(&["synth", "--out", "o", "--seed", "1", "--set", "seed=2"])).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("--set") && err.to_string().contains("seed"), "{err}");
    let err = parse_args(argv(&["synth", "--out", "o", "--set", "synth.n_pairs=4", "--set", "synth.n_pairs=5"])).unwrap_err();
    assert!(err.to_string().contains("synth.n_pairs"), "{err}");
    // Repeating the same value is harmless.
    let cfg = parse_args(argv(&["synth", "--out", "o", "--seed", "1", "--set", "seed=1"])).unwrap();
    assert_eq!(cfg.overrides, vec![("seed".into(), json!(1))]);

    let err = parse_args(argv(&["synth", "--out", "a", "--out", "b"])).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    assert!(err.to_string().contains("--out"), "{err}");
}

#[test]
fn malformed_input_is_rejected() {
    for args in [&["synth", "--out", "o", "--bogus"][..], &["frobnicate", "--out", "o"], &["synth", "--out", "o", "--profile", "huge"]] {
        let err = parse_args(argv(args)).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{args:?}");
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }
    for bad in ["noequals", "=1", "a..b=1", ".a=1"] {
        assert!(matches!(parse_args(argv(&["synth", "--out", "o", "--set", bad])), Err(CliError::Config(_))), "{bad}");
    }
    assert!(matches!(parse_args(argv(&["synth"])), Err(CliError::Config(_))));

    let cfg = parse_args(argv(&["synth", "--out", "o", "--set", "synth.no_such_key=1"])).unwrap();
    assert!(load_document(&cfg).is_err());
    let cfg = parse_args(argv(&["synth", "--out", "o", "--config", "/nonexistent/config.json"])).unwrap();
    assert!(load_document(&cfg).is_err());
    let dir = tempfile::tempdir().unwrap();
    let file = write_config(dir.path(), &json!({ "synth": { "n_pairs": 4 }, "extra": 1 }));
    let cfg = parse_args(argv(&["synth", "--out", "o", "--config", file.to_str().unwrap()])).unwrap();
    assert!(load_document(&cfg).is_err());
}

#[test]
fn help_has_no_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = mmfuse(&["synth", "--help", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("--config") && text.contains("--set"), "{text}");
    assert!(!out.exists());
    let o = mmfuse(&["--help"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    for sub in ["synth", "preprocess", "train", "multirun", "compare", "eval", "explain", "stats"] {
        assert!(String::from_utf8_lossy(&o.stdout).contains(sub), "{sub}");
    }
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(mmfuse(&["synth", "--out", out, "--bogus"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(mmfuse(&["synth", "--out", out, "--config", "/nonexistent.json"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(mmfuse(&["train", "--out", out]).status.code(), Some(EXIT_CONFIG), "trainer.model missing");
    assert_eq!(
        mmfuse(&["eval", "--out", out, "--set", "eval.checkpoint=/nonexistent/best.ndc", "--set", "eval.manifest=/nonexistent/m.json"])
            .status
            .code(),
        Some(EXIT_DATA)
    );
    let file = write_config(dir.path(), &json!({ "stats": { "confusion": { "empty": { "tn": 0, "fp": 0, "fn": 0, "tp": 0 } } } }));
    assert_eq!(mmfuse(&["stats", "--out", out, "--config", file.to_str().unwrap()]).status.code(), Some(EXIT_NUMERIC));
}

#[test]
fn stats_reproduce_published_matrix_and_record_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_config(dir.path(), &json!({ "stats": { "confusion": { "mri": { "tn": 144, "fp": 27, "fn": 7, "tp": 49 } } } }));
    let mut records = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = mmfuse(&["stats", "--config", file.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
        let metrics: Value = serde_json::from_slice(&std::fs::read(out.join("confusion_metrics.json")).unwrap()).unwrap();
        let acc = metrics["mri"]["accuracy"].as_f64().unwrap();
        assert!((acc - 0.850).abs() < 0.001, "{acc}");
        let csv = std::fs::read_to_string(out.join("confusion_metrics.csv")).unwrap();
        assert!(csv.starts_with("name,tn,fp,fn,tp,accuracy"));
        records.push(std::fs::read(out.join("run.json")).unwrap());
    }
    // Output location is not part of the record, so reruns match byte for byte.
    assert_eq!(records[0], records[1]);
    let run: Value = serde_json::from_slice(&records[0]).unwrap();
    assert_eq!(run["command"], "stats");
    assert_eq!(run["config"]["seed"], 3);
    let hash = run["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.bytes().all(|b| b.is_ascii_hexdigit()));
    assert!(run["versions"]["mmfuse"].is_string());
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let o = mmfuse(args);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["synth", "--out", &p("data"), "--seed", "4", "--set", "synth.n_pairs=20", "--set", "synth.mode=redundant"]);
    let manifest = format!("{}/manifest.json", p("data"));
    assert!(Path::new(&manifest).exists());
    run(&[
        "train", "--out", &p("train"),
        "--set", "trainer.model=us",
        "--set", &format!("data.manifest={manifest}"),
        "--set", "trainer.epochs=1",
        "--set", "trainer.lr=0.001",
    ]);
    for f in ["best.ndc", "epochs.csv", "metrics.json", "split_manifest.json", "run.json"] {
        assert!(dir.path().join("train").join(f).exists(), "{f}");
    }
    run(&[
        "eval", "--out", &p("eval"),
        "--set", &format!("eval.checkpoint={}/best.ndc", p("train")),
        "--set", &format!("eval.manifest={}/split_manifest.json", p("train")),
    ]);
    // Evaluating the saved checkpoint reproduces the training run's test report.
    let trained: Value = serde_json::from_slice(&std::fs::read(dir.path().join("train/metrics.json")).unwrap()).unwrap();
    let evaluated: Value = serde_json::from_slice(&std::fs::read(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(trained["auc"], evaluated["auc"]);
    assert_eq!(trained["accuracy"], evaluated["accuracy"]);
    run(&[
        "explain", "--out", &p("explain"),
        "--set", &format!("explain.checkpoint={}/best.ndc", p("train")),
        "--set", &format!("explain.manifest={manifest}"),
        "--set", "explain.split=all",
        "--set", "explain.max_samples=1",
    ]);
    let index: Value = serde_json::from_slice(&std::fs::read(dir.path().join("explain/index.json")).unwrap()).unwrap();
    assert!(!index.as_array().unwrap().is_empty());
}
