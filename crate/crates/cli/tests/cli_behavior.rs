//! Black-box checks of the binary: exit codes, error envelopes, the
//! quantize -> dedup -> segment round trip, and thread-count invariance.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use echoxkit_core::matrix::{write_matrix, Matrix, FRAME_MAGIC};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_echoxkit"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn write_frames(path: &Path, seed: u64, blobs: usize) {
    let mut rng = StdRng::seed_from_u64(seed);
    let centers = [[0.0, 0.0], [9.0, 0.0], [0.0, 9.0], [9.0, 9.0]];
    let mut rows = Vec::new();
    for _ in 0..blobs {
        let c = centers[rng.random_range(0..centers.len())];
        for _ in 0..rng.random_range(2..6) {
            rows.push(vec![
                c[0] + rng.random_range(-0.4..0.4),
                c[1] + rng.random_range(-0.4..0.4),
            ]);
        }
    }
    let m = Matrix::from_rows(&rows).unwrap();
    let mut f = fs::File::create(path).unwrap();
    write_matrix(&mut f, &m, FRAME_MAGIC).unwrap();
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_three_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.efx");
    fs::write(&bad, b"not a frame file").unwrap();
    let out = run_in(
        dir.path(),
        &["train-codebook", "--frames", "bad.efx", "--k", "2", "--output", "cb.ecb"],
    );
    assert_eq!(out.status.code(), Some(3));
    let envelope: serde_json::Value =
        serde_json::from_slice(&out.stderr).expect("stderr is an error JSON");
    assert_eq!(envelope["error"], "FormatError");
}

#[test]
fn missing_file_reports_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["dedup", "--input", "absent.jsonl", "--output", "o.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn quantize_dedup_segment_flatten_reproduces_units() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_frames(&d.join("frames.efx"), 11, 60);

    for args in [
        vec![
            "train-codebook", "--frames", "frames.efx", "--k", "4", "--max-iters", "50",
            "--seed", "1", "--output", "cb.ecb",
        ],
        vec!["quantize", "--codebook", "cb.ecb", "--output", "units.jsonl", "frames.efx"],
        vec!["dedup", "--input", "units.jsonl", "--output", "dedup.jsonl"],
        vec![
            "train-unitlm", "--input", "dedup.jsonl", "--max-span", "4", "--alpha", "1.0",
            "--output", "model.json",
        ],
        vec!["segment", "--input", "dedup.jsonl", "--model", "model.json", "--output", "seg.jsonl"],
    ] {
        let out = run_in(d, &args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }

    let dedup: serde_json::Value =
        serde_json::from_str(fs::read_to_string(d.join("dedup.jsonl")).unwrap().lines().next().unwrap())
            .unwrap();
    let seg: serde_json::Value =
        serde_json::from_str(fs::read_to_string(d.join("seg.jsonl")).unwrap().lines().next().unwrap())
            .unwrap();
    let units: Vec<i64> =
        dedup["units"].as_array().unwrap().iter().map(|v| v.as_i64().unwrap()).collect();
    let flattened: Vec<i64> = seg["tokens"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|t| t.as_array().unwrap().iter().map(|v| v.as_i64().unwrap()))
        .collect();
    assert_eq!(flattened, units);
}

#[test]
fn stream_sim_uses_paper_defaults_from_sparse_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Config with only the trigger vector: threshold and window must default.
    fs::write(d.join("trigger.json"), r#"{"trigger_vector":[1.0,0.0]}"#).unwrap();
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|t| {
            let angle = if (8..=12).contains(&t) { 0.2 } else { 1.3 };
            vec![f64::cos(angle), f64::sin(angle)]
        })
        .collect();
    let m = Matrix::from_rows(&rows).unwrap();
    let mut f = fs::File::create(d.join("hidden.efx")).unwrap();
    write_matrix(&mut f, &m, FRAME_MAGIC).unwrap();

    let out = run_in(
        d,
        &["stream-sim", "--hidden", "hidden.efx", "--config", "trigger.json", "--output", "dec.jsonl"],
    );
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["threshold"], 0.1);
    assert_eq!(summary["window"], 5);
    for line in fs::read_to_string(d.join("dec.jsonl")).unwrap().lines() {
        let dec: serde_json::Value = serde_json::from_str(line).unwrap();
        if dec["action"] == "WRITE" {
            assert!(dec["similarity"].as_f64().unwrap() > 0.1);
        }
    }
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_frames(&d.join("frames.efx"), 3, 40);
    run_in(d, &[
        "train-codebook", "--frames", "frames.efx", "--k", "3", "--seed", "9", "--output", "cb.ecb",
    ]);

    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = bin()
            .current_dir(d)
            .env("ECHOXKIT_THREADS", threads)
            .args(["quantize", "--codebook", "cb.ecb", "--output", "units.jsonl", "frames.efx"])
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(fs::read(d.join("units.jsonl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn pipeline_run_writes_losses_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run_in(d, &["pipeline-run", "--seed", "4", "--steps", "5", "--output", "losses.jsonl"]);
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["s2t", "t2c", "echo_decoder", "adapter"] {
        assert!(manifest[key].as_str().unwrap().len() == 64, "{key} is a sha-256 hex digest");
    }
    let text = fs::read_to_string(d.join("losses.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        let b: serde_json::Value = serde_json::from_str(line).unwrap();
        let total = b["total"].as_f64().unwrap();
        let expect = b["echo"].as_f64().unwrap()
            + b["lambda"].as_f64().unwrap() * b["denoising"].as_f64().unwrap()
            + b["s2t"].as_f64().unwrap();
        assert!((total - expect).abs() < 1e-12);
    }
}
