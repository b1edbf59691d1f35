//! End-to-end tests of the `saft` binary: stage dependencies, standalone
//! transform/evaluate modes, exit codes, and run determinism.

use std::path::Path;
use std::process::{Command, Output};

fn saft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saft"))
        .args(args)
        .output()
        .expect("failed to run saft binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_dataset(path: &Path, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 200;
    let mut text = String::from("f0,f1,f2,y\n");
    for i in 0..n {
        let f0: f64 = rng.random_range(-1.0..1.0);
        let f1: f64 = rng.random_range(-1.0..1.0);
        let f2: f64 = rng.random_range(-1.0..1.0) + 3.0 * (i as f64 / n as f64);
        let y = f0 * f1 + 0.05 * rng.random_range(-1.0..1.0);
        text.push_str(&format!("{f0},{f1},{f2},{y}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn fast_config(data: &Path) -> String {
    serde_json::json!({
        "data": data.display().to_string(),
        "target": "y",
        "task": "regression",
        "collect": { "episodes": 4, "steps": 4, "cap": 50 },
        "train": {
            "epochs": 3000, "batch": 16, "embed_dim": 8, "enc_hidden": 5,
            "eval_hidden": 7, "dec_hidden": 16, "token_dim": 8
        },
        "generate": {
            "ascent": { "iterations": 20, "seeds": 4 },
            "max_len": 64
        }
    })
    .to_string()
}

#[test]
fn unknown_config_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{\"data\":\"x.csv\",\"bogus\":1}").unwrap();
    let out = saft(&[
        "split",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn missing_data_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({"data": dir.path().join("absent.csv").display().to_string(), "target": "y"})
            .to_string(),
    )
    .unwrap();
    let out = saft(&[
        "split",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn generate_without_checkpoint_names_train() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_dataset(&data, 0);
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, fast_config(&data)).unwrap();
    let run = dir.path().join("run");
    let out = saft(&[
        "generate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("train"), "{}", stderr(&out));
}

#[test]
fn standalone_transform_handwritten_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(
        &data,
        "f0,f1,target\n1.0,2.0,0.0\n3.0,4.0,1.0\n5.0,6.0,0.0\n",
    )
    .unwrap();
    let seq = dir.path().join("seq.txt");
    std::fs::write(&seq, "<sos> f0 f1 + <eos>\n").unwrap();
    let output = dir.path().join("out.csv");
    let out = saft(&[
        "transform",
        "--sequence",
        seq.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(summary["columns"], 1);
    let text = std::fs::read_to_string(&output).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.matches(',').count(), 1, "expected 1 feature column: {header}");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0].parse::<f64>().unwrap(), 3.0);
}

#[test]
fn no_holdout_evaluate_memorizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    // separable two-class data a deep tree memorizes exactly
    let mut text = String::from("f0,target\n");
    for i in 0..40 {
        let x = i as f64 / 10.0 - 2.0;
        let y = if x > 0.0 { 1 } else { 0 };
        text.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(&data, text).unwrap();
    let out = saft(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "classification",
        "--model",
        "decision-tree",
        "--max-depth",
        "16",
        "--no-holdout",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(summary["report"]["primary_score"], 1.0);
}

#[test]
fn staged_run_matches_single_pipeline_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_dataset(&data, 1);
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, fast_config(&data)).unwrap();

    let run_a = dir.path().join("a");
    let out = saft(&[
        "pipeline",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run_a.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!(summary["transformed_score"].is_number());

    // the same run assembled stage by stage is byte-identical
    let run_b = dir.path().join("b");
    for stage in ["split", "collect", "train", "generate", "transform", "evaluate"] {
        let out = saft(&[
            stage,
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            run_b.to_str().unwrap(),
            "--seed",
            "7",
        ]);
        assert_eq!(out.status.code(), Some(0), "stage {stage}: {}", stderr(&out));
        let line = stdout(&out);
        assert!(
            serde_json::from_str::<serde_json::Value>(line.trim()).is_ok(),
            "stage {stage} summary not JSON: {line}"
        );
    }
    let metrics_a = std::fs::read(run_a.join("evaluate/metrics.json")).unwrap();
    let metrics_b = std::fs::read(run_b.join("evaluate/metrics.json")).unwrap();
    assert_eq!(metrics_a, metrics_b);
}
