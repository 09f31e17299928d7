use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn chiralnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chiralnet")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn generate(dir: &TempDir, name: &str, task: &str, graphs: &str) -> String {
    let data = path(dir, name);
    let out = chiralnet(&["generate", "--out", &data, "--task", task, "--n-graphs", graphs, "--conformers", "2", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_then_verify_passes() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.jsonl", "rs", "3");
    let meta = read_json(format!("{data}.meta.json"));
    assert_eq!(meta["task"], "rs");
    assert!(meta["splits"]["train"].is_array());

    let report = path(&dir, "v.jsonl");
    let cfg = path(&dir, "small.toml");
    std::fs::write(&cfg, "[model]\nhidden_dim = 8\nh0_dim = 8\ngat_layers = 1\ncmp_layers = 1\n").unwrap();
    let out = chiralnet(&["--config", &cfg, "verify", "--data", &data, "--out", &report, "--max-conformers", "3"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["passed"], true);
    let text = std::fs::read_to_string(&report).unwrap();
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["provenance"]["command"], "verify");
    assert!(text.lines().count() > 3);
    assert_eq!(read_json(format!("{report}.summary.json"))["summary"]["passed"], true);
}

#[test]
fn rotating_a_ring_bond_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let sdf = path(&dir, "ring.sdf");
    let lines = [
        "cyclopropane",
        "  test",
        "",
        "  3  3  0  0  0  0  0  0  0  0999 V2000",
        "    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0",
        "    1.5000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0",
        "    0.7500    1.3000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0",
        "  1  2  1  0",
        "  2  3  1  0",
        "  3  1  1  0",
        "M  END",
        "$$$$",
        "",
    ];
    std::fs::write(&sdf, lines.join("\n")).unwrap();
    let out = chiralnet(&["transform", "--data", &sdf, "--out", &path(&dir, "t.jsonl"), "--rotate-bond", "0,1,0.5"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("requires acyclic bond"), "{}", stderr(&out));
    assert!(!dir.path().join("t.jsonl").exists());

    let out = chiralnet(&["transform", "--data", &sdf, "--out", &path(&dir, "t.jsonl")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nothing to do"));
}

#[test]
fn transform_round_trips_through_inspect() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.jsonl", "contrastive", "2");
    let moved = path(&dir, "m.jsonl");
    let out = chiralnet(&["transform", "--data", &data, "--out", &moved, "--reflect", "--rigid-random", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_json(format!("{moved}.meta.json"))["transform"]["reflect"], true);
    let out = chiralnet(&["inspect", "--data", &moved, "--limit", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("conformer ").count(), 2);
    assert!(text.contains("coupled groups"));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "bad.toml");
    std::fs::write(&cfg, "[model]\ngat_laers = 2\n").unwrap();
    let out = chiralnet(&["--config", &cfg, "--print-config", "generate"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gat_laers"), "{}", stderr(&out));
}

#[test]
fn missing_path_names_the_key_and_flag() {
    let out = chiralnet(&["train"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("paths.data") && err.contains("--data"), "{err}");
}

#[test]
fn print_config_shows_task_defaults() {
    let out = chiralnet(&["--print-config", "train"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let c: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(c["train"]["lr"], 5.69e-4);
    assert_eq!(c["train"]["batch_size"], 16);
    assert_eq!(c["train"]["epochs"], 100);
    assert_eq!(c["model"]["head"], "classify2");

    let out = chiralnet(&["--threads", "2", "--print-config", "train", "--task", "rank_regress", "--epochs", "4"]);
    let c: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(c["train"]["lr"], 6.06e-4);
    assert_eq!(c["train"]["epochs"], 4);
    assert_eq!(c["train"]["threads"], 2);
    assert_eq!(c["model"]["head"], "regress");
}

#[test]
fn same_seed_trains_to_identical_files_then_evaluates() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.jsonl", "rs", "10");
    let cfg = path(&dir, "run.toml");
    std::fs::write(
        &cfg,
        "[model]\nhidden_dim = 8\nh0_dim = 8\ngat_layers = 1\ncmp_layers = 1\n[train]\nepochs = 2\nbatch_size = 4\n",
    )
    .unwrap();
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = path(&dir, name);
            let out = chiralnet(&["--config", &cfg, "train", "--data", &data, "--out", &out_dir, "--seed", "5"]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            out_dir
        })
        .collect();
    for file in ["metrics.json", "checkpoint.json"] {
        let a = std::fs::read(Path::new(&runs[0]).join(file)).unwrap();
        let b = std::fs::read(Path::new(&runs[1]).join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
    let metrics = read_json(Path::new(&runs[0]).join("metrics.json"));
    assert_eq!(metrics["run"]["config"]["train"]["seed"], 5);
    assert!(metrics["run"]["config"]["paths"]["out"].is_null());
    let log = std::fs::read_to_string(Path::new(&runs[0]).join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let ckpt = Path::new(&runs[0]).join("checkpoint.json");
    let out_file = path(&dir, "eval.json");
    let out = chiralnet(&["eval", "--data", &data, "--checkpoint", ckpt.to_str().unwrap(), "--out", &out_file]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&out_file);
    assert_eq!(report["task"], "rs");
    assert_eq!(report["split"], "test");
    assert!(report["metrics"]["records"].as_u64().unwrap() > 0);
    assert_eq!(report["metrics"], metrics["test"]);

    let out = chiralnet(&["eval", "--data", &data, "--checkpoint", ckpt.to_str().unwrap(), "--task", "rank_regress"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("head"), "{}", stderr(&out));
}
