//! End-to-end CLI checks: exit codes, file contracts, determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ga-radiance"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ga_radiance_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_scene(dir: &Path) -> PathBuf {
    let scene = ga_radiance::pipeline::experiments::room1(2.4e9);
    let path = dir.join("scene.json");
    scene.save(&path).unwrap();
    path
}

fn write_run_config(dir: &Path, scene: &Path, dataset: &Path, steps: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "schema_version": 1,
        "scene": scene,
        "dataset": dataset,
        "model": {
            "channels": 2, "depth": 1, "f_pos": 2, "f_dir": 1,
            "rays": 3, "samples_per_ray": 4,
            "atten_layers": 2, "atten_width": 6, "d_f": 4, "film_hidden": 4,
            "signal_layers": 1, "signal_width": 5, "d_s": 8
        },
        "train": { "steps": steps, "batch_size": 8, "seed": 7 }
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn simulate(dir: &Path, scene: &Path, out: &str) -> PathBuf {
    let ds = dir.join(out);
    let status = bin()
        .args(["simulate", "--scene"])
        .arg(scene)
        .args(["--grid", "6x6", "--seed", "5", "--shadowing", "0.5", "--out"])
        .arg(&ds)
        .status()
        .unwrap();
    assert!(status.success());
    ds
}

#[test]
fn simulate_counts_and_determinism() {
    let dir = workdir("simulate");
    let scene = write_scene(&dir);
    let a = simulate(&dir, &scene, "a.jsonl");
    let b = simulate(&dir, &scene, "b.jsonl");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let records = ga_radiance::sim::read_dataset(&a).unwrap();
    assert_eq!(records.len(), 36);
}

#[test]
fn simulate_missing_scene_exits_2() {
    let dir = workdir("missing");
    let out = bin()
        .args(["simulate", "--scene"])
        .arg(dir.join("ghost.json"))
        .args(["--grid", "4x4", "--out"])
        .arg(dir.join("out.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not found"), "stderr: {stderr}");
}

#[test]
fn train_checkpoint_deterministic_and_eval_round_trip() {
    let dir = workdir("train");
    let scene = write_scene(&dir);
    let ds = simulate(&dir, &scene, "ds.jsonl");
    let run = write_run_config(&dir, &scene, &ds, 12);

    let ck1 = dir.join("ck1.bin");
    let ck2 = dir.join("ck2.bin");
    for ck in [&ck1, &ck2] {
        let status = bin()
            .args(["train", "--config"])
            .arg(&run)
            .arg("--out")
            .arg(ck)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        std::fs::read(&ck1).unwrap(),
        std::fs::read(&ck2).unwrap(),
        "same config and seed must give byte-identical checkpoints"
    );

    let metrics = dir.join("metrics.json");
    let status = bin()
        .args(["eval", "--config"])
        .arg(&run)
        .arg("--ckpt")
        .arg(&ck1)
        .arg("--out")
        .arg(&metrics)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&metrics).unwrap();
    let reports: Vec<ga_radiance::pipeline::MetricsReport> = serde_json::from_str(&text).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].mae_mean_db.is_finite());
}

#[test]
fn eval_config_mismatch_exits_4() {
    let dir = workdir("mismatch");
    let scene = write_scene(&dir);
    let ds = simulate(&dir, &scene, "ds.jsonl");
    let run = write_run_config(&dir, &scene, &ds, 5);
    let ck = dir.join("ck.bin");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&run)
        .arg("--out")
        .arg(&ck)
        .status()
        .unwrap()
        .success());

    // evaluating under a different variant changes the expected hash
    let out = bin()
        .args(["eval", "--config"])
        .arg(&run)
        .arg("--ckpt")
        .arg(&ck)
        .arg("--out")
        .arg(dir.join("m.json"))
        .env("GA_RADIANCE_SEED", "7")
        .arg("--split")
        .arg("test")
        .output()
        .unwrap();
    assert!(out.status.success());

    let bad_run = {
        let text = std::fs::read_to_string(&run).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["variant"] = serde_json::json!("no_tokenizer");
        let p = dir.join("bad_run.json");
        std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
        p
    };
    let out = bin()
        .args(["eval", "--config"])
        .arg(&bad_run)
        .arg("--ckpt")
        .arg(&ck)
        .arg("--out")
        .arg(dir.join("m2.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hash"), "stderr: {stderr}");
}

#[test]
fn train_steps_zero_and_variant_flag() {
    let dir = workdir("steps0");
    let scene = write_scene(&dir);
    let ds = simulate(&dir, &scene, "ds.jsonl");
    let run = write_run_config(&dir, &scene, &ds, 40);
    let full = dir.join("full.bin");
    let ablated = dir.join("ablated.bin");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&run)
        .args(["--steps", "0", "--out"])
        .arg(&full)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["train", "--config"])
        .arg(&run)
        .args(["--steps", "0", "--variant", "no-tokenizer", "--out"])
        .arg(&ablated)
        .status()
        .unwrap()
        .success());
    let (p_full, _) = ga_radiance::pipeline::read_checkpoint(&full).unwrap();
    let (p_abl, _) = ga_radiance::pipeline::read_checkpoint(&ablated).unwrap();
    assert!(p_abl.len() < p_full.len(), "ablated checkpoint must be smaller");
    assert!(p_abl.segments.len() < p_full.segments.len());
}

#[test]
fn plot_outputs_deterministic_svg() {
    let dir = workdir("plot");
    let cdf = dir.join("curve.csv");
    std::fs::write(&cdf, "snr_db,cumulative_fraction\n1.0,0.25\n2.0,0.5\n4.0,1.0\n").unwrap();
    let svg1 = dir.join("a.svg");
    let svg2 = dir.join("b.svg");
    for out in [&svg1, &svg2] {
        let status = bin()
            .args(["plot", "--cdf"])
            .arg(&cdf)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&svg1).unwrap(), std::fs::read(&svg2).unwrap());
    let text = std::fs::read_to_string(&svg1).unwrap();
    assert!(text.starts_with("<svg") && text.contains("polyline"));

    // heatmap of a free-space-like dataset decreases away from tx
    let scene_path = write_scene(&dir);
    let ds = simulate(&dir, &scene_path, "ds.jsonl");
    let heat = dir.join("heat.svg");
    assert!(bin()
        .args(["plot", "--heatmap"])
        .arg(&ds)
        .arg("--out")
        .arg(&heat)
        .status()
        .unwrap()
        .success());
    assert!(std::fs::read_to_string(&heat).unwrap().contains("<rect"));

    // empty input: exit 2
    let empty = dir.join("empty.csv");
    std::fs::write(&empty, "snr_db,cumulative_fraction\n").unwrap();
    let out = bin()
        .args(["plot", "--cdf"])
        .arg(&empty)
        .arg("--out")
        .arg(dir.join("no.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_command_passes() {
    let out = bin().args(["gradcheck", "--tolerance", "1e-4"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"passed\": true"), "{stdout}");
}

#[test]
fn seed_env_override_is_logged() {
    let dir = workdir("seedenv");
    let scene = write_scene(&dir);
    let ds = simulate(&dir, &scene, "ds.jsonl");
    let run = write_run_config(&dir, &scene, &ds, 3);
    let out = bin()
        .args(["train", "--config"])
        .arg(&run)
        .arg("--out")
        .arg(dir.join("ck.bin"))
        .env("GA_RADIANCE_SEED", "1234")
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("GA_RADIANCE_SEED=1234"), "{stderr}");
}

#[test]
fn eval_generalization_edits() {
    let dir = workdir("edits");
    let scene = write_scene(&dir);
    let ds = simulate(&dir, &scene, "ds.jsonl");
    let run = write_run_config(&dir, &scene, &ds, 6);
    let ck = dir.join("ck.bin");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&run)
        .arg("--out")
        .arg(&ck)
        .status()
        .unwrap()
        .success());
    let edits = dir.join("edits.json");
    std::fs::write(
        &edits,
        r#"[{"label":"removal","op":"remove","name":"laptop"}]"#,
    )
    .unwrap();
    let metrics = dir.join("metrics.json");
    assert!(bin()
        .args(["eval", "--config"])
        .arg(&run)
        .arg("--ckpt")
        .arg(&ck)
        .arg("--edits")
        .arg(&edits)
        .arg("--out")
        .arg(&metrics)
        .status()
        .unwrap()
        .success());
    let reports: Vec<ga_radiance::pipeline::MetricsReport> =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(reports.len(), 2, "base eval + one edit");
    assert!(reports.iter().all(|r| r.mae_mean_db.is_finite()));
}
