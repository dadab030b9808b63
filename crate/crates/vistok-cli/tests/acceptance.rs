//! CLI determinism criterion: identical argv + fixtures + seed produce
//! byte-identical stdout and output files across repeated runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vistok")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn vistok")
}

fn run_ok(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// Run a command twice against fresh copies of the same fixtures and demand
/// byte equality of stdout and all declared output files.
fn assert_golden(dir: &Path, args: &[&str], outputs: &[&str]) {
    let first = run_ok(args, dir);
    let first_files: Vec<Vec<u8>> = outputs
        .iter()
        .map(|name| fs::read(dir.join(name)).expect(name))
        .collect();
    for name in outputs {
        fs::remove_file(dir.join(name)).unwrap();
    }
    let second = run_ok(args, dir);
    assert_eq!(first, second, "stdout differs across runs for {args:?}");
    for (name, prev) in outputs.iter().zip(first_files) {
        let now = fs::read(dir.join(name)).expect(name);
        assert_eq!(prev, now, "{name} differs across runs for {args:?}");
    }
}

fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("cfg.json");
    fs::write(
        &path,
        r#"{
  "s2": {"tile_side": 32, "scale_factors": [1, 2], "max_tiles_largest_scale": 6, "min_tiles_largest_scale": 1, "feature_side": 8},
  "stc_k": 3,
  "encoder": {"channels": 4, "seed": 11}
}"#,
    )
    .unwrap();
    path
}

fn write_ppm(dir: &Path, name: &str, h: usize, w: usize) -> PathBuf {
    let path = dir.join(name);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    let mut state = 0x1234_5678u64;
    for _ in 0..h * w * 3 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        bytes.push((state >> 33) as u8);
    }
    fs::write(&path, bytes).unwrap();
    path
}

fn write_records(dir: &Path) -> PathBuf {
    let path = dir.join("records.jsonl");
    let mut lines = String::new();
    let mut state = 77u64;
    let mut unit = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..60 {
        let subset = if i % 3 == 0 { "charts" } else { "docs" };
        let n = 1 + i % 3;
        let small: Vec<f64> = (0..n).map(|_| -3.0 * unit() - 1e-6).collect();
        let large: Vec<f64> = (0..n).map(|_| -3.0 * unit() - 1e-6).collect();
        lines.push_str(
            &serde_json::json!({
                "id": format!("r{i:03}"),
                "subset": subset,
                "logp_small": small,
                "logp_large": large,
            })
            .to_string(),
        );
        lines.push('\n');
    }
    fs::write(&path, lines).unwrap();
    path
}

fn write_sequences(dir: &Path) -> PathBuf {
    let path = dir.join("seqs.jsonl");
    let mut lines = String::new();
    for (id, len) in [("a", 300usize), ("b", 500), ("c", 200)] {
        let tokens: Vec<i64> = (0..len as i64).collect();
        lines.push_str(&serde_json::json!({"id": id, "tokens": tokens}).to_string());
        lines.push('\n');
    }
    for i in 0..40 {
        lines.push_str(
            &serde_json::json!({"id": format!("x{i:02}"), "length": 37 + (i * 53) % 400})
                .to_string(),
        );
        lines.push('\n');
    }
    fs::write(&path, lines).unwrap();
    path
}

#[test]
fn c09_cli_golden_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_small_config(dir);
    write_ppm(dir, "img.ppm", 40, 50);
    write_records(dir);
    write_sequences(dir);

    // tile-plan: stable JSON and the documented 3x4 largest grid.
    let stdout = run_ok(&["tile-plan", "--height", "600", "--width", "800"], dir);
    let plan: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    let largest = plan["scales"].as_array().unwrap().last().unwrap();
    assert_eq!(largest["grid_rows"], 3);
    assert_eq!(largest["grid_cols"], 4);
    assert_golden(dir, &["tile-plan", "--height", "600", "--width", "800", "--output", "plan.json"], &["plan.json"]);

    // encode: feature file plus token-count summary.
    let stdout = run_ok(
        &["encode", "--image", "img.ppm", "--config", "cfg.json", "--output", "feats.nvt"],
        dir,
    );
    let summary: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(summary["tokens_per_tile"], 9);
    assert_eq!(
        summary["total_tokens"].as_u64().unwrap(),
        9 * summary["tiles"].as_u64().unwrap()
    );
    assert_golden(
        dir,
        &["encode", "--image", "img.ppm", "--config", "cfg.json", "--output", "feats.nvt"],
        &["feats.nvt"],
    );

    // compress: spatial block reshape with sidecar.
    assert_golden(
        dir,
        &["compress", "--input", "feats.nvt", "--mode", "stc", "--k", "2", "--output", "comp.nvt"],
        &["comp.nvt", "comp.nvt.json"],
    );

    // prune: deterministic for the score method and for seeded random.
    assert_golden(
        dir,
        &["prune", "--input", "records.jsonl", "--method", "deltaloss", "--ratio", "0.5", "--output", "kept_d.jsonl"],
        &["kept_d.jsonl"],
    );
    assert_golden(
        dir,
        &["prune", "--input", "records.jsonl", "--method", "random", "--ratio", "0.5", "--seed", "7", "--output", "kept_r.jsonl"],
        &["kept_r.jsonl"],
    );

    // pack: the three-sample fixture fits one context; goldens over both
    // policies.
    let stdout = run_ok(
        &["pack", "--input", "seqs.jsonl", "--capacity", "1024", "--policy", "first-fit", "--output", "packed.json"],
        dir,
    );
    let summary: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert!(summary["contexts"].as_u64().unwrap() >= 1);
    assert_golden(
        dir,
        &["pack", "--input", "seqs.jsonl", "--capacity", "1024", "--policy", "first-fit", "--output", "packed.json"],
        &["packed.json", "packed.payload"],
    );
    assert_golden(
        dir,
        &["pack", "--input", "seqs.jsonl", "--capacity", "1024", "--policy", "ffd:8", "--output", "packed_ffd.json"],
        &["packed_ffd.json", "packed_ffd.payload"],
    );

    // quant: code payload and error report are stable.
    assert_golden(
        dir,
        &["quant", "--input", "feats.nvt", "--format", "int4", "--granularity", "per-group", "--group", "16", "--output", "feats.qt"],
        &["feats.qt"],
    );

    // cost: stable report, and the compressed-vs-uncompressed attention
    // ratio prints as 4.48 at two decimals.
    let stdout = run_ok(&["cost", "--tokens", "3072", "--compare-tokens", "1452"], dir);
    let report: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    let ratio = report["attention_flop_ratio"].as_f64().unwrap();
    assert_eq!((ratio * 100.0).round() / 100.0, 4.48);
    let again = run_ok(&["cost", "--tokens", "3072", "--compare-tokens", "1452"], dir);
    assert_eq!(stdout, again);

    println!("[PASS] c9 CLI golden determinism: repeated runs are byte-identical across all subcommands");
}

#[test]
fn pack_three_sample_fixture_single_context() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut lines = String::new();
    for (id, len) in [("a", 300usize), ("b", 500), ("c", 200)] {
        lines.push_str(&serde_json::json!({"id": id, "length": len}).to_string());
        lines.push('\n');
    }
    fs::write(dir.join("three.jsonl"), lines).unwrap();
    let stdout = run_ok(
        &["pack", "--input", "three.jsonl", "--capacity", "1024", "--policy", "first-fit", "--output", "three.json"],
        dir,
    );
    let summary: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(summary["contexts"], 1);
    assert_eq!(summary["packed_tokens"], 1000);
}
