#![allow(dead_code)]

use std::path::PathBuf;

/// Median 3D position error of the clean 512², k=512 roundtrip over 1000
/// random actions (seed 0). Observed 0.914 mm, frozen at ×1.5.
pub const ROUNDTRIP_POS_BOUND_M: f64 = 1.4e-3;
/// Same run, median angular error. Observed 0.643°, frozen at ×1.5.
pub const ROUNDTRIP_ANGLE_BOUND_DEG: f64 = 0.97;
/// Ceilings the frozen bounds must sit under.
pub const ROUNDTRIP_POS_CEILING_M: f64 = 2e-3;
pub const ROUNDTRIP_ANGLE_CEILING_DEG: f64 = 2.0;
/// Model-level 3D error of the joint-generation model, meters.
pub const MODEL_3D_ERR_M: f64 = 12.2e-3;
/// With one of three views occluded, errors may grow to this multiple of the clean bound.
pub const ROBUSTNESS_FACTOR: f64 = 3.0;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn cli(args: &[&str]) -> i32 {
    let argv = std::iter::once("action-images").chain(args.iter().copied());
    action_images::cli::run_cli(argv)
}
