use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const SMALL: &str = r#"{
  "seed": 7,
  "data": {
    "train": {"dialogues": 24, "candidates": 8, "feature_len": 12},
    "val": {"dialogues": 6, "candidates": 8, "feature_len": 12, "id_offset": 1000000},
    "test": {"dialogues": 6, "candidates": 8, "feature_len": 12, "id_offset": 2000000},
    "min_count": 1
  },
  "model": {"embed_dim": 8, "hidden": 12, "i_max": 2, "max_answer_len": 5},
  "train": {"epochs": 1, "batch_size": 16},
  "ablation": {"seeds": [1]}
}"#;

fn wledial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wledial")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup(dir: &Path) -> String {
    let config = dir.join("small.json");
    std::fs::write(&config, SMALL).unwrap();
    config.to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_writes_visdial_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("data");
    ok(&wledial(&["--config", &config, "--out", out.to_str().unwrap(), "gen-data"]));
    for f in ["train.json", "val.json", "test.json", "train_features.json", "vocab.txt", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let train = json(&out.join("train.json"));
    assert_eq!(train["data"]["dialogs"].as_array().unwrap().len(), 24);
}

#[test]
fn train_then_inspect_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    ok(&wledial(&["--config", &config, "--out", run_s, "train", "--weight-diagnostics"]));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# config_hash="));
    assert!(run.join("weights.csv").exists());
    let ckpt = run.join("best.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();

    let stdout = ok(&wledial(&["--out", run_s, "eval", "--checkpoint", ckpt_s, "--split", "val"]));
    assert!(stdout.contains("MRR"));
    let report = json(&run.join("eval_val.json"));
    assert_eq!(report["rounds"], 30);

    ok(&wledial(&["--out", run_s, "rank", "--checkpoint", ckpt_s, "--dialogue", "2000001"]));
    let ranked = json(&run.join("rank_d2000001.json"));
    let rounds = ranked.as_array().unwrap();
    assert_eq!(rounds.len(), 5);
    assert_eq!(rounds[0]["candidates"].as_array().unwrap().len(), 8);

    ok(&wledial(&["--out", run_s, "dump-attn", "--checkpoint", ckpt_s, "--dialogue", "3"]));
    let dump = json(&run.join("attention_d3.json"));
    for round in dump["rounds"].as_array().unwrap() {
        let steps = round["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 2);
        for step in steps {
            for key in ["image", "question", "history"] {
                let sum: f64 = step[key].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    let missing = wledial(&["dump-attn", "--checkpoint", ckpt_s, "--dialogue", "999"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("dialogue 999"));

    let mut chat = Command::new(env!("CARGO_BIN_EXE_wledial"))
        .args(["chat", "--checkpoint", ckpt_s, "--dialogue", "3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    chat.stdin
        .take()
        .unwrap()
        .write_all(b"\nhow many circles are there\n:what\n:reset\n:quit\n")
        .unwrap();
    let out = chat.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("unknown directive"));
    assert!(text.contains("(history cleared)"));
}

#[test]
fn ablate_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("ablate");
    let stdout = ok(&wledial(&["--config", &config, "--out", out.to_str().unwrap(), "ablate"]));
    assert!(stdout.contains("Improvement"));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("block,row,mrr,r1,r5,r10,mean_rank"));
    assert!(out.join("ablation.txt").exists());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&wledial(&["--seed", "3", "--out", dir.path().to_str().unwrap(), "gradcheck", "--seeds", "2"]));
    assert!(stdout.contains("passed"));
    let csv = std::fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("pipeline,")).count(), 2);
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"epochs": 1, "bogus": true}}"#).unwrap();
    let out = wledial(&["--config", path.to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
