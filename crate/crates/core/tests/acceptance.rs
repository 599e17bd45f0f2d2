//! Acceptance suite. One line per criterion; exits non-zero if any fails.
//!
//! Run with `cargo test --test acceptance`. Bounds marked "frozen" in
//! `common` come from a measured pre-run.

mod common;

use action_images::decoder::{decode_gripper, DecoderParams};
use action_images::encoder::{encode_frame, encode_video, Action7, EncoderParams};
use action_images::geometry::{
    euler_to_matrix, matrix_to_euler, plucker_map, project, unproject_ray, CameraView, Rotation3,
};
use action_images::harness::{
    default_rig, default_workspace, discretization_sweep, perturb_frame, random_actions, random_rotation,
    roundtrip_eval, roundtrip_eval_with_noise, three_view_rig, NoiseSpec, Occlusion,
};
use action_images::io::{load_frames, load_trajectory, save_frames, FrameFormat};
use action_images::packing::{
    draw_strategy, flow_target, pack_sequence, sample_mask, unpack_sequence, Flag, Strategy, StrategyMix, Stream,
    TokenLayout,
};
use common::*;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn roundtrip_bound() -> Outcome {
    let traj = random_actions(0, 1000, &default_workspace()).unwrap();
    let rig = default_rig(512).unwrap();
    let r = roundtrip_eval(&traj, &rig, &EncoderParams::default(), &DecoderParams::default()).unwrap();
    let (Some(pos), Some(ang), Some(grip)) = (r.position_m, r.angle_deg, r.gripper) else {
        return outcome(false, "no successful decodes");
    };
    let binary = traj.iter().all(|a| a.gripper == 0.0 || a.gripper == 1.0);
    let both = traj.iter().any(|a| a.gripper == 0.0) && traj.iter().any(|a| a.gripper == 1.0);
    let frozen_ok = ROUNDTRIP_POS_BOUND_M <= ROUNDTRIP_POS_CEILING_M && ROUNDTRIP_ANGLE_BOUND_DEG <= ROUNDTRIP_ANGLE_CEILING_DEG;
    let pass = r.failures == 0
        && frozen_ok
        && pos.median <= ROUNDTRIP_POS_BOUND_M
        && ang.median <= ROUNDTRIP_ANGLE_BOUND_DEG
        && binary
        && both
        && grip.max <= 1e-6;
    outcome(
        pass,
        format!(
            "median pos {:.3e} m (≤ {ROUNDTRIP_POS_BOUND_M:.1e}), median angle {:.3}° (≤ {ROUNDTRIP_ANGLE_BOUND_DEG}), max gripper err {:.1e}, failures {}",
            pos.median, ang.median, grip.max, r.failures
        ),
    )
}

fn consistency() -> Outcome {
    // the frozen bound is the codec-level error the representation can guarantee
    let pass = ROUNDTRIP_POS_BOUND_M < MODEL_3D_ERR_M;
    outcome(
        pass,
        format!(
            "frozen codec median {ROUNDTRIP_POS_BOUND_M:.1e} m vs model-level {MODEL_3D_ERR_M:.1e} m (ratio {:.2})",
            ROUNDTRIP_POS_BOUND_M / MODEL_3D_ERR_M
        ),
    )
}

fn monotonicity() -> Outcome {
    let traj = random_actions(0, 200, &default_workspace()).unwrap();
    let rig = default_rig(512).unwrap();
    let enc = EncoderParams::default();
    let dec = DecoderParams::default();
    let sweep = discretization_sweep(&traj, &rig, &[128, 256, 512], &[64, 256, 1024], &enc, &dec).unwrap();
    let grid: Vec<String> = sweep
        .median_grid()
        .iter()
        .map(|row| row.iter().map(|m| m.map_or("n/a".into(), |v| format!("{:.2}", v * 1e3))).collect::<Vec<_>>().join("/"))
        .collect();
    let m = sweep.monotonicity;
    let mono_ok = m.fraction >= 0.9;

    let floor = (dec.far - dec.near) / 2.0;
    let k2 = discretization_sweep(&traj, &rig, &[512], &[2], &enc, &dec).unwrap();
    let k2_report = &k2.cell(0, 0).report;
    let k2_median = k2_report.median_position();
    let k2_ok = k2_median.is_some_and(|v| v >= 0.5 * floor && v <= 2.0 * floor);

    outcome(
        mono_ok && k2_ok,
        format!(
            "non-increasing pairs {}/{} ({:.1}%, need ≥ 90%), medians mm by res [{}]; k=2: median {} vs floor {floor:.3} m, {} of {} decodes failed",
            m.non_increasing,
            m.pairs,
            100.0 * m.fraction,
            grid.join(" | "),
            k2_median.map_or("n/a".into(), |v| format!("{v:.3} m")),
            k2_report.failures,
            k2_report.steps.len()
        ),
    )
}

fn gripper_channel() -> Outcome {
    let rig = default_rig(512).unwrap();
    let cams = rig.cameras_at(0).unwrap();
    let params = EncoderParams::default();
    let base = random_actions(3, 1, &default_workspace()).unwrap()[0];
    let dir = tempfile::tempdir().unwrap();
    let (mut worst_float, mut worst_png) = (0.0f64, 0.0f64);
    for (n, g) in [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
        let a = Action7::new(base.position, base.orientation, g).unwrap();
        let frames: Vec<_> = cams.iter().map(|c| encode_frame(&a, c, &params).unwrap()).collect();
        let refs: Vec<_> = frames.iter().collect();
        let g_float = decode_gripper(&refs, params.threshold, 0.0).unwrap();
        worst_float = worst_float.max((g_float - g).abs());

        let videos: Vec<_> = frames.iter().map(|f| vec![f.clone()]).collect();
        let ids: Vec<String> = cams.iter().map(|c| c.view_id.clone()).collect();
        let sub = dir.path().join(format!("g{n}"));
        save_frames(&videos, &ids, &sub, FrameFormat::Png16).unwrap();
        let (manifest, loaded) = load_frames(&sub).unwrap();
        let refs: Vec<_> = loaded.iter().map(|v| &v[0]).collect();
        let g_png = decode_gripper(&refs, params.threshold, manifest.format.roundtrip_bound()).unwrap();
        worst_png = worst_png.max((g_png - g).abs());
    }
    let png_tol = 2.0 / 65535.0;
    outcome(
        worst_float <= 1e-6 && worst_png <= png_tol,
        format!("max |ĝ − g| float {worst_float:.1e} (≤ 1e-6), png16 {worst_png:.2e} (≤ {png_tol:.2e})"),
    )
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraView {
    loop {
        let (w, h) = (rng.random_range(16..96), rng.random_range(16..96));
        let intr = [
            rng.random_range(20.0..200.0),
            rng.random_range(20.0..200.0),
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        ];
        let target = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if dir.norm() < 0.1 {
            continue;
        }
        let eye = target + dir.normalize() * rng.random_range(0.5..3.0);
        if let Ok(cam) = CameraView::look_at("rand", w, h, intr, eye, target, Vector3::z()) {
            return cam;
        }
    }
}

/// Pinhole projection written out by hand, independent of the library.
fn pinhole(cam: &CameraView, x: &Vector3<f64>) -> [f64; 2] {
    let r = cam.rotation.matrix();
    let xc = r * x + cam.translation;
    [cam.fx * xc.x / xc.z + cam.cx, cam.fy * xc.y / xc.z + cam.cy]
}

fn geometry_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // rotations: uniform samples through Euler angles and back
    let mut rot_err = 0.0f64;
    let mut euler_err = 0.0f64;
    for _ in 0..10_000 {
        let q = random_rotation(&mut rng);
        let m: Matrix3<f64> = q.to_rotation_matrix().into_inner();
        let r = Rotation3::from_matrix(m).unwrap();
        let back = euler_to_matrix(matrix_to_euler(&r)).unwrap();
        rot_err = rot_err.max((back.matrix() - m).abs().max());

        let angles = [
            rng.random_range(-3.1..3.1),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.1..3.1),
        ];
        let (sr, cr) = f64::sin_cos(angles[0]);
        let (sp, cp) = f64::sin_cos(angles[1]);
        let (sy, cy) = f64::sin_cos(angles[2]);
        // Rz(yaw)·Ry(pitch)·Rx(roll), expanded
        let oracle = Matrix3::new(
            cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
            sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
            -sp, cp * sr, cp * cr,
        );
        let r = euler_to_matrix(angles).unwrap();
        rot_err = rot_err.max((r.matrix() - oracle).abs().max());
        let e = matrix_to_euler(&r);
        euler_err = euler_err.max((0..3).map(|i| (e[i] - angles[i]).abs()).fold(0.0, f64::max));
    }

    // projection ↔ unprojection on random cameras
    let mut proj_err = 0.0f64;
    let mut oracle_err = 0.0f64;
    for _ in 0..2000 {
        let cam = random_camera(&mut rng);
        let u = [rng.random_range(0.0..cam.width as f64), rng.random_range(0.0..cam.height as f64)];
        let ray = unproject_ray(&cam, u).unwrap();
        let x = ray.at(rng.random_range(0.1..10.0));
        let p = project(&cam, &x).unwrap();
        proj_err = proj_err.max((p[0] - u[0]).hypot(p[1] - u[1]));
        let o = pinhole(&cam, &x);
        oracle_err = oracle_err.max((p[0] - o[0]).hypot(p[1] - o[1]));
    }

    // Plücker identities
    let mut dm = 0.0f64;
    let mut unit = 0.0f64;
    let mut through = 0.0f64;
    let mut center_err = 0.0f64;
    for _ in 0..50 {
        let cam = random_camera(&mut rng);
        let map = plucker_map(&cam);
        let c = cam.center();
        for j in 0..cam.height {
            for i in 0..cam.width {
                let v = map.at(i, j);
                let d = Vector3::new(v[0], v[1], v[2]);
                let m = Vector3::new(v[3], v[4], v[5]);
                dm = dm.max(d.dot(&m).abs());
                unit = unit.max((d.norm() - 1.0).abs());
                // any point on the line satisfies x × d = m
                let x = c + d * 1.7;
                through = through.max((x.cross(&d) - m).abs().max());
                let px = pinhole(&cam, &x);
                center_err = center_err.max((px[0] - i as f64 - 0.5).hypot(px[1] - j as f64 - 0.5));
            }
        }
    }
    let pass = rot_err <= 1e-6 && euler_err <= 1e-6 && proj_err <= 1e-6 && oracle_err <= 1e-6 && dm <= 1e-9 && unit <= 1e-9 && through <= 1e-9 && center_err <= 1e-6;
    outcome(
        pass,
        format!(
            "rotation {rot_err:.1e}, euler {euler_err:.1e}, reprojection {proj_err:.1e} px, vs oracle {oracle_err:.1e} px, |d·m| {dm:.1e}, ||d|−1| {unit:.1e}, line {through:.1e}, pixel center {center_err:.1e} px"
        ),
    )
}

/// Flags for a T'=2 layout, written out by hand: `[stream][t]`.
fn enumerated_t2(strategy: Strategy) -> [[Option<Flag>; 2]; 2] {
    use Flag::{Predicted as P, Visible as V};
    match strategy {
        Strategy::JointGen => [[Some(V), Some(P)], [Some(P), Some(P)]],
        Strategy::ActionCondVideo => [[Some(V), Some(P)], [Some(V), Some(V)]],
        Strategy::VideoToAction => [[Some(V), Some(V)], [Some(P), Some(P)]],
        Strategy::VideoOnly => [[Some(V), Some(P)], [None, None]],
    }
}

fn mask_suite() -> Outcome {
    let mut problems = Vec::new();
    let mut layouts = 0;
    for views in [1, 2, 4] {
        for time in [1, 2, 8] {
            let layout = TokenLayout::new(views, time, 2, 3, 4).unwrap();
            layouts += 1;
            for strategy in Strategy::ALL {
                let mask = sample_mask(strategy, &layout);
                let tag = format!("{strategy:?} V={views} T'={time}");
                if mask.flags.len() != layout.total_tokens() {
                    problems.push(format!("{tag}: mask length"));
                }
                let included = mask.flags.iter().filter(|f| f.is_some()).count();
                let expected = if strategy == Strategy::VideoOnly { layout.total_tokens() / 2 } else { layout.total_tokens() };
                if mask.count(Flag::Visible) + mask.count(Flag::Predicted) != included || included != expected {
                    problems.push(format!("{tag}: partition"));
                }
                for p in 0..layout.total_tokens() {
                    let c = layout.coord(p);
                    let f = mask.flags[p];
                    if c.stream == Stream::Video && c.t == 0 && f != Some(Flag::Visible) {
                        problems.push(format!("{tag}: first frame of view {} not visible", c.view));
                    }
                    if strategy == Strategy::VideoOnly && c.stream == Stream::Action && f.is_some() {
                        problems.push(format!("{tag}: action token present"));
                    }
                    if time == 2 {
                        let s = if c.stream == Stream::Video { 0 } else { 1 };
                        if f != enumerated_t2(strategy)[s][c.t] {
                            problems.push(format!("{tag}: token {p} differs from enumeration"));
                        }
                    }
                }
            }
        }
    }
    let mix = StrategyMix::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[draw_strategy(&mix, &mut rng) as usize] += 1;
    }
    let freqs: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
    let worst = freqs.iter().zip(mix.weights()).map(|(f, w)| (f - w).abs()).fold(0.0, f64::max);
    if worst > 0.01 {
        problems.push(format!("mixture deviation {worst:.4}"));
    }
    problems.dedup();
    outcome(
        problems.is_empty(),
        format!(
            "{layouts} layouts × 4 strategies; frequencies {:.4?} (max dev {worst:.4}); {}",
            freqs,
            if problems.is_empty() { "no violations".to_string() } else { problems[..problems.len().min(3)].join("; ") }
        ),
    )
}

fn flow_and_packing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut flow_bad = 0usize;
    let mut pack_bad = 0usize;
    let mut values = 0usize;
    for _ in 0..50 {
        let layout = TokenLayout::new(
            rng.random_range(1..=4),
            rng.random_range(1..=16),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=3),
        )
        .unwrap();
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-4.0f32..4.0)).collect() };
        let video = draw(layout.stream_len());
        let action = draw(layout.stream_len());
        let eps = draw(2 * layout.stream_len());
        let (packed, index) = pack_sequence(&video, &action, &layout).unwrap();
        let (v2, a2) = unpack_sequence(&packed).unwrap();
        if v2 != video || a2 != action {
            pack_bad += 1;
        }
        // every coordinate lands on its own slot and carries its own payload
        let mut seen = vec![false; layout.total_tokens()];
        for (p, c) in index.coords.iter().enumerate() {
            let q = index.position(c).unwrap();
            if q != p || seen[q] {
                pack_bad += 1;
            }
            seen[q] = true;
            let src = if c.stream == Stream::Video { &video } else { &action };
            let off = (((c.view * layout.time + c.t) * layout.height + c.y) * layout.width + c.x) * layout.channels;
            if packed.token(p) != &src[off..off + layout.channels] {
                pack_bad += 1;
            }
        }
        let v = flow_target(&packed, &eps).unwrap();
        for i in 0..eps.len() {
            values += 1;
            if v[i] + packed.data[i] as f64 != eps[i] as f64 {
                flow_bad += 1;
            }
        }
    }
    outcome(
        flow_bad == 0 && pack_bad == 0,
        format!("{values} values: {flow_bad} with v + x ≠ ε; 50 layouts: {pack_bad} pack/unpack mismatches"),
    )
}

fn robustness() -> Outcome {
    let traj = random_actions(0, 500, &default_workspace()).unwrap();
    let rig = three_view_rig(512).unwrap();
    let enc = EncoderParams::default();
    let dec = DecoderParams::default();
    let pos_limit = ROBUSTNESS_FACTOR * ROUNDTRIP_POS_BOUND_M;
    let ang_limit = ROBUSTNESS_FACTOR * ROUNDTRIP_ANGLE_BOUND_DEG;
    let mut pass = true;
    let mut parts = Vec::new();
    for view in 0..3 {
        let spec = NoiseSpec { occlusion: vec![Occlusion::Blob { view, level: 1e-3 }], ..Default::default() };
        // the occluder must actually remove the blobs
        let cam = rig.camera(view, 0).unwrap();
        let frame = encode_frame(&traj[0], &cam, &enc).unwrap();
        let hidden = perturb_frame(&frame, view, 0, &spec, 0).unwrap();
        let peak = hidden.channels[0].max().max(hidden.channels[1].max());
        let r = roundtrip_eval_with_noise(&traj, &rig, &enc, &dec, &spec, 0).unwrap();
        let pos = r.position_m.map_or(f64::INFINITY, |s| s.median);
        let ang = r.angle_deg.map_or(f64::INFINITY, |s| s.median);
        pass &= r.failures == 0 && pos <= pos_limit && ang <= ang_limit && peak < 1e-3;
        parts.push(format!("{}: {:.3e} m / {:.3}° (peak left {:.0e}, failures {})", cam.view_id, pos, ang, peak, r.failures));
    }
    outcome(pass, format!("limit {pos_limit:.1e} m / {ang_limit:.2}°; {}", parts.join(", ")))
}

fn cli_smoke() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    let traj_path = data.join("trajectory.json");
    let rig_path = data.join("rig.json");
    let p = |s: &std::path::Path| s.to_str().unwrap().to_string();
    let frames = dir.path().join("frames");
    let raw = dir.path().join("raw");
    let decoded = dir.path().join("decoded.json");
    let conf = dir.path().join("confidence.json");
    let codes = [
        cli(&["encode", "--traj", &p(&traj_path), "--rig", &p(&rig_path), "--out", &p(&frames)]),
        cli(&["decode", "--frames", &p(&frames), "--rig", &p(&rig_path), "--out", &p(&decoded), "--confidence", &p(&conf)]),
        cli(&["encode", "--traj", &p(&traj_path), "--rig", &p(&rig_path), "--out", &p(&raw), "--format", "raw_f32"]),
    ];
    if codes.iter().any(|c| *c != 0) {
        return outcome(false, format!("exit codes {codes:?}"));
    }
    let truth = load_trajectory(&traj_path).unwrap();
    let got = load_trajectory(&decoded).unwrap();
    if truth.len() != 41 || got.len() != truth.len() {
        return outcome(false, format!("{} steps decoded of {}", got.len(), truth.len()));
    }
    let pos: Vec<f64> = truth.iter().zip(&got).map(|(a, b)| (a.position - b.position).norm()).collect();
    let ang: Vec<f64> = truth.iter().zip(&got).map(|(a, b)| a.orientation.angle_to(&b.orientation).to_degrees()).collect();
    let grip = truth.iter().zip(&got).map(|(a, b)| (a.gripper - b.gripper).abs()).fold(0.0, f64::max);
    let (mp, ma) = (median(&pos), median(&ang));

    // formats against the in-memory encoding
    let rig: action_images::Rig = action_images::io::read_json(&rig_path).unwrap();
    let videos = encode_video(&truth, &rig, &EncoderParams::default()).unwrap();
    let (_, raw_loaded) = load_frames(&raw).unwrap();
    let raw_exact = raw_loaded == videos;
    let (m, png_loaded) = load_frames(&frames).unwrap();
    let mut png_err = 0.0f64;
    for (a, b) in videos.iter().flatten().zip(png_loaded.iter().flatten()) {
        for c in 0..3 {
            for (x, y) in a.channels[c].data.iter().zip(&b.channels[c].data) {
                png_err = png_err.max((*x as f64 - *y as f64).abs());
            }
        }
    }
    // one f32 ulp of slack on top of the rounding bound
    let png_ok = png_err <= m.format.roundtrip_bound() + 1e-7;
    let conf_ok = conf.exists();
    outcome(
        mp <= ROUNDTRIP_POS_BOUND_M && ma <= ROUNDTRIP_ANGLE_BOUND_DEG && grip <= 2.0 / 65535.0 && raw_exact && png_ok && conf_ok,
        format!(
            "41 steps: median pos {mp:.3e} m, median angle {ma:.3}°, max gripper err {grip:.1e}; raw_f32 bit-exact {raw_exact}; png16 max err {png_err:.2e} (≤ {:.2e})",
            m.format.roundtrip_bound()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("roundtrip bound", roundtrip_bound),
        ("consistency with model error", consistency),
        ("discretization monotonicity", monotonicity),
        ("gripper channel", gripper_channel),
        ("geometry suite", geometry_suite),
        ("mask suite", mask_suite),
        ("flow target and packing", flow_and_packing),
        ("robustness to occlusion", robustness),
        ("cli end-to-end", cli_smoke),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
