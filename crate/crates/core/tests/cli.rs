mod common;

use action_images::io::{load_trajectory, read_json, FramesManifest};
use action_images::packing::{read_shard, Strategy};
use common::{cli, data_dir, median};
use std::path::Path;
use std::process::Command;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_action-images"))
}

fn small_sample(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let out = dir.join("sample");
    assert_eq!(cli(&["--seed", "4", "sample", "--out", s(&out), "--steps", "6", "--size", "128"]), 0);
    (out.join("trajectory.json"), out.join("rig.json"))
}

#[test]
fn raw_roundtrip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, rig) = small_sample(dir.path());
    let frames = dir.path().join("frames");
    let decoded = dir.path().join("decoded.json");
    assert_eq!(cli(&["encode", "--traj", s(&traj), "--rig", s(&rig), "--out", s(&frames), "--format", "raw_f32"]), 0);
    let manifest: FramesManifest = read_json(&frames.join("frames.json")).unwrap();
    assert_eq!((manifest.width, manifest.height, manifest.frames), (128, 128, 6));
    assert_eq!(
        cli(&["decode", "--frames", s(&frames), "--rig", s(&rig), "--out", s(&decoded), "--orientation-format", "matrix"]),
        0
    );
    let truth = load_trajectory(&traj).unwrap();
    let got = load_trajectory(&decoded).unwrap();
    assert_eq!(got.len(), truth.len());
    let err: Vec<f64> = truth.iter().zip(&got).map(|(a, b)| (a.position - b.position).norm()).collect();
    // 128² is four times coarser than the reference setting
    assert!(median(&err) < 1e-2, "median {}", median(&err));
    for (a, b) in truth.iter().zip(&got) {
        assert_eq!(a.gripper, b.gripper);
    }
}

#[test]
fn workspace_bounds_and_confidence_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, rig) = small_sample(dir.path());
    let frames = dir.path().join("frames");
    let conf = dir.path().join("conf.json");
    assert_eq!(cli(&["encode", "--traj", s(&traj), "--rig", s(&rig), "--out", s(&frames)]), 0);
    let code = cli(&[
        "decode", "--frames", s(&frames), "--rig", s(&rig), "--out", s(&dir.path().join("d.json")),
        "--workspace", "0.3,-0.2,0.1,0.7,0.2,0.5", "--k", "128", "--confidence", s(&conf),
    ]);
    assert_eq!(code, 0);
    let records: Vec<serde_json::Value> = read_json(&conf).unwrap();
    assert_eq!(records.len(), 6);
    for r in &records {
        assert!(r["error"].is_null());
        let idx = r["depth_index"].as_array().unwrap();
        assert!(idx.iter().all(|v| (1..=128).contains(&v.as_u64().unwrap())));
    }
}

#[test]
fn eval_writes_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, rig) = small_sample(dir.path());
    let run = |out: &Path| {
        cli(&[
            "--seed", "9", "eval", "--traj", s(&traj), "--rig", s(&rig), "--out", s(out),
            "--noise-sigma", "0.01", "--quantize-bits", "8", "--occlude", "0:0,0,10,10", "--plots",
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a), 0);
    assert_eq!(run(&b), 0);
    for f in ["report.json", "steps.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("strip_left.png").exists());
    let csv = std::fs::read_to_string(a.join("steps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn sweep_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    std::fs::write(&cfg, r#"{"actions": 8, "seed": 1, "resolutions": [64, 128], "ks": [32, 128]}"#).unwrap();
    let out = dir.path().join("out");
    assert_eq!(cli(&["sweep", "--config", s(&cfg), "--out", s(&out), "--plots"]), 0);
    let report: serde_json::Value = read_json(&out.join("sweep.json")).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 4);
    assert_eq!(report["monotonicity"]["pairs"], 4);
    assert!(out.join("error_vs_resolution.png").exists());
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 5);
}

#[test]
fn pack_writes_a_readable_shard() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("pack.json");
    let data = data_dir();
    std::fs::write(
        &manifest,
        serde_json::json!({
            "trajectory": data.join("trajectory.json"),
            "rig": data.join("rig.json"),
            "output": "shard.aipk",
            "latent": { "time": 3, "height": 2, "width": 2, "channels": 16 },
            "samples": 200,
            "seed": 3
        })
        .to_string(),
    )
    .unwrap();
    assert_eq!(cli(&["pack", "--manifest", s(&manifest)]), 0);
    let shard = read_shard(std::fs::File::open(dir.path().join("shard.aipk")).unwrap()).unwrap();
    assert_eq!(shard.seed, 3);
    assert_eq!(shard.masks.len(), 200);
    assert_eq!(shard.layout.total_tokens(), 2 * 2 * 3 * 4);
    let joint = shard.masks.iter().filter(|m| m.strategy == Strategy::JointGen).count();
    assert!(joint > 140, "{joint} joint-generation samples of 200");

    // --seed overrides the manifest seed
    assert_eq!(cli(&["--seed", "8", "pack", "--manifest", s(&manifest)]), 0);
    let shard = read_shard(std::fs::File::open(dir.path().join("shard.aipk")).unwrap()).unwrap();
    assert_eq!(shard.seed, 8);
}

#[test]
fn pack_rejects_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("pack.json");
    std::fs::write(
        &manifest,
        r#"{"trajectory": "nope.json", "rig": "nope.json", "output": "x.aipk", "latent": {"height": 1, "width": 1, "channels": 1}}"#,
    )
    .unwrap();
    assert_eq!(cli(&["pack", "--manifest", s(&manifest)]), 1);
    assert!(!dir.path().join("x.aipk").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli(&["encode"]), 2);
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn json_errors_on_stderr() {
    let out = bin()
        .args(["--json-errors", "decode", "--frames", "/nonexistent", "--rig", "/nonexistent.json", "--out", "/tmp/x.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("nonexistent"));
}

#[test]
fn help_shows_defaults() {
    let out = bin().args(["decode", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for d in ["[default: 512]", "[default: 0.1]", "[default: 2]", "[default: 0.05]", "[default: 0.25]"] {
        assert!(text.contains(d), "missing {d} in\n{text}");
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .env("ACTION_IMAGES_OUT", dir.path())
        .args(["sample", "--steps", "2", "--size", "64"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("sample/trajectory.json").exists());
    assert!(dir.path().join("sample/rig.json").exists());
}

#[test]
fn decode_reports_frames_that_do_not_match_the_rig() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, rig) = small_sample(dir.path());
    let frames = dir.path().join("frames");
    assert_eq!(cli(&["encode", "--traj", s(&traj), "--rig", s(&rig), "--out", s(&frames), "--format", "raw_f32"]), 0);
    let other = dir.path().join("other");
    assert_eq!(cli(&["sample", "--out", s(&other), "--steps", "2", "--size", "64"]), 0);
    let mut rig_json: serde_json::Value = read_json(&other.join("rig.json")).unwrap();
    rig_json["views"][0]["view_id"] = "elsewhere".into();
    std::fs::write(other.join("rig.json"), rig_json.to_string()).unwrap();
    let code = cli(&["decode", "--frames", s(&frames), "--rig", s(&other.join("rig.json")), "--out", s(&dir.path().join("d.json"))]);
    assert_eq!(code, 1);
}
