//! Synthetic data, perturbations and roundtrip evaluation.
//!
//! Reported metrics:
//! - 3D error: `‖p − p̂‖` in meters.
//! - angular error: geodesic angle between `R` and `R̂`, degrees.
//! - 2D error: pixel distance between the projections of `p` and `p̂`,
//!   per view (position point only).
//!
//! Medians are the headline numbers; means and 95th percentiles are
//! reported alongside. Failed steps are counted and left out of the
//! aggregates.

use crate::decoder::{decode_frame, DecodeError, DecoderParams};
use crate::encoder::{encode_frame, Action7, ActionFrame, EncodeError, EncoderParams, DEFAULT_THRESHOLD};
use crate::geometry::{project, Aabb, CameraView, GeometryError, Rotation3};
use crate::rig::{Rig, RigError};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Workspace used by the default evaluation setup: a 24 cm cube centred
/// half a meter in front of the robot base.
pub fn default_workspace() -> Aabb {
    Aabb { min: [0.38, -0.12, 0.18], max: [0.62, 0.12, 0.42] }
}

/// Focal length of the default cameras as a fraction of image width.
pub const DEFAULT_FOCAL_REL: f64 = 0.75;

/// Camera on a sphere of `radius` around `target`, at the given azimuth and
/// elevation (radians), looking at the target with `+z` up.
pub fn orbit_camera(
    view_id: &str,
    size: usize,
    target: Vector3<f64>,
    radius: f64,
    azimuth: f64,
    elevation: f64,
) -> Result<CameraView, GeometryError> {
    let s = size as f64;
    let dir = Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin());
    CameraView::look_at(
        view_id,
        size,
        size,
        [DEFAULT_FOCAL_REL * s, DEFAULT_FOCAL_REL * s, s / 2.0, s / 2.0],
        target + dir * radius,
        target,
        Vector3::z(),
    )
}

/// Two cameras at ±30° azimuth, 1 m from the workspace centre, 20° above it.
pub fn default_rig(size: usize) -> Result<Rig, HarnessError> {
    let c = default_workspace().center();
    let el = 20f64.to_radians();
    Ok(Rig::from_cameras(&[
        orbit_camera("left", size, c, 1.0, 30f64.to_radians(), el)?,
        orbit_camera("right", size, c, 1.0, -30f64.to_radians(), el)?,
    ]))
}

/// The default pair plus a steep overhead view.
pub fn three_view_rig(size: usize) -> Result<Rig, HarnessError> {
    let c = default_workspace().center();
    let mut rig = default_rig(size)?;
    let top = orbit_camera("top", size, c, 1.0, 0.0, 60f64.to_radians())?;
    rig.views.extend(Rig::from_cameras(&[top]).views);
    Ok(rig)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStyle {
    /// Cubic B-spline positions, slerped orientations, occasional gripper toggles.
    #[default]
    Smooth,
    /// Independent uniform samples per step.
    Random,
}

/// Uniformly distributed rotation (Shoemake's method).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q)
}

fn to_rotation(q: &UnitQuaternion<f64>) -> Rotation3 {
    Rotation3::nearest(q.to_rotation_matrix().matrix()).expect("unit quaternion gives a finite matrix")
}

fn random_point<R: Rng + ?Sized>(rng: &mut R, b: &Aabb) -> Vector3<f64> {
    Vector3::from_fn(|i, _| b.min[i] + (b.max[i] - b.min[i]) * rng.random::<f64>())
}

/// Uniform cubic B-spline; stays inside the convex hull of `ctrl`.
fn bspline(ctrl: &[Vector3<f64>], u: f64) -> Vector3<f64> {
    let segments = ctrl.len() - 3;
    let u = u.clamp(0.0, segments as f64);
    let seg = (u.floor() as usize).min(segments - 1);
    let s = u - seg as f64;
    let (s2, s3) = (s * s, s * s * s);
    let b0 = (1.0 - s).powi(3) / 6.0;
    let b1 = (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0;
    let b2 = (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0;
    let b3 = s3 / 6.0;
    ctrl[seg] * b0 + ctrl[seg + 1] * b1 + ctrl[seg + 2] * b2 + ctrl[seg + 3] * b3
}

pub fn gen_trajectory(seed: u64, steps: usize, workspace: &Aabb, style: TrajectoryStyle) -> Result<Vec<Action7>, HarnessError> {
    if steps == 0 {
        return Err(HarnessError::InvalidArgument("trajectory needs at least one step".into()));
    }
    let workspace = Aabb::new(workspace.min, workspace.max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_action = |rng: &mut ChaCha8Rng| Action7 {
        position: random_point(rng, &workspace),
        orientation: to_rotation(&random_rotation(rng)),
        gripper: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
    };
    if steps == 1 || style == TrajectoryStyle::Random {
        return Ok((0..steps).map(|_| random_action(&mut rng)).collect());
    }

    // roughly one key every ten steps
    let keys = steps / 10 + 2;
    let ctrl: Vec<Vector3<f64>> = (0..keys + 2).map(|_| random_point(&mut rng, &workspace)).collect();
    let mut key_rots: Vec<UnitQuaternion<f64>> = (0..keys).map(|_| random_rotation(&mut rng)).collect();
    for n in 1..keys {
        // shortest-arc slerp
        if key_rots[n].coords.dot(&key_rots[n - 1].coords) < 0.0 {
            key_rots[n] = UnitQuaternion::new_unchecked(-key_rots[n].into_inner());
        }
    }
    let mut gripper = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let frac = t as f64 / (steps - 1) as f64;
        let position = bspline(&ctrl, frac * (ctrl.len() - 3) as f64);
        let ku = frac * (keys - 1) as f64;
        let k0 = (ku.floor() as usize).min(keys - 2);
        let q = key_rots[k0].slerp(&key_rots[k0 + 1], ku - k0 as f64);
        if t > 0 && rng.random_bool(0.05) {
            gripper = 1.0 - gripper;
        }
        out.push(Action7 { position, orientation: to_rotation(&q), gripper });
    }
    Ok(out)
}

/// `n` independent random actions inside `workspace`.
pub fn random_actions(seed: u64, n: usize, workspace: &Aabb) -> Result<Vec<Action7>, HarnessError> {
    gen_trajectory(seed, n, workspace, TrajectoryStyle::Random)
}

/// Region of a view to zero out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Occlusion {
    /// Fixed pixel rectangle `[x0, x1) × [y0, y1)`.
    Rect { view: usize, x0: usize, y0: usize, x1: usize, y1: usize },
    /// Bounding box of the rendered blobs in each frame: pixels above
    /// `level` in the first two channels or above the gripper background in
    /// the third.
    Blob { view: usize, level: f32 },
}

impl Occlusion {
    fn view(&self) -> usize {
        match self {
            Occlusion::Rect { view, .. } | Occlusion::Blob { view, .. } => *view,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseSpec {
    /// Standard deviation of additive value noise.
    #[serde(default)]
    pub gaussian_sigma: f64,
    /// Storage bit depth, e.g. 8 or 16; `None` keeps floats.
    #[serde(default)]
    pub quantize_bits: Option<u32>,
    #[serde(default)]
    pub occlusion: Vec<Occlusion>,
    /// Probability that a view is missing at a step.
    #[serde(default)]
    pub dropout: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma >= 0.0) {
            return Err(HarnessError::InvalidArgument(format!("gaussian_sigma = {}", self.gaussian_sigma)));
        }
        if let Some(b) = self.quantize_bits {
            if !(1..=24).contains(&b) {
                return Err(HarnessError::InvalidArgument(format!("quantize_bits = {b} outside 1..=24")));
            }
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(HarnessError::InvalidArgument(format!("dropout = {} outside [0, 1]", self.dropout)));
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.quantize_bits.is_none() && self.occlusion.is_empty() && self.dropout == 0.0
    }

    /// Decoder settings adjusted so quantized gripper backgrounds are still
    /// recognised as background.
    pub fn adjust_decoder(&self, params: &DecoderParams) -> DecoderParams {
        let mut p = params.clone();
        if let Some(bits) = self.quantize_bits {
            let half_step = 0.5 / ((1u64 << bits) - 1) as f64;
            p.background_tolerance = p.background_tolerance.max(half_step);
        }
        p
    }
}

/// Rounds to `2^bits − 1` levels and back.
pub fn quantize(x: f32, bits: u32) -> f32 {
    let levels = ((1u64 << bits) - 1) as f64;
    ((x as f64 * levels).round() / levels) as f32
}

fn blob_box(frame: &ActionFrame, level: f32) -> Option<(usize, usize, usize, usize)> {
    let background = DEFAULT_THRESHOLD as f32;
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for j in 0..frame.height {
        for i in 0..frame.width {
            let hit = frame.channels[0].get(i, j) > level
                || frame.channels[1].get(i, j) > level
                || frame.channels[2].get(i, j) > background.max(level);
            if hit {
                bbox = Some(match bbox {
                    None => (i, j, i + 1, j + 1),
                    Some((x0, y0, x1, y1)) => (x0.min(i), y0.min(j), x1.max(i + 1), y1.max(j + 1)),
                });
            }
        }
    }
    bbox
}

fn zero_rect(frame: &mut ActionFrame, (x0, y0, x1, y1): (usize, usize, usize, usize)) {
    let (x1, y1) = (x1.min(frame.width), y1.min(frame.height));
    for ch in frame.channels.iter_mut() {
        for j in y0..y1 {
            for i in x0..x1.max(x0) {
                ch.set(i, j, 0.0);
            }
        }
    }
}

/// Perturbs the frame of `view` at step `t`. The random stream depends only
/// on `(seed, view, t)`, so steps can be processed in any order.
pub fn perturb_frame(frame: &ActionFrame, view: usize, t: usize, spec: &NoiseSpec, seed: u64) -> Option<ActionFrame> {
    if spec.is_clean() {
        return Some(frame.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((view as u64) << 32) | t as u64);
    if spec.dropout > 0.0 && rng.random_bool(spec.dropout) {
        return None;
    }
    let mut out = frame.clone();
    for occ in spec.occlusion.iter().filter(|o| o.view() == view) {
        match *occ {
            Occlusion::Rect { x0, y0, x1, y1, .. } => zero_rect(&mut out, (x0, y0, x1, y1)),
            Occlusion::Blob { level, .. } => {
                if let Some(b) = blob_box(&out, level) {
                    zero_rect(&mut out, b);
                }
            }
        }
    }
    if spec.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.gaussian_sigma).expect("validated sigma");
        for ch in out.channels.iter_mut() {
            for v in ch.data.iter_mut() {
                *v += normal.sample(&mut rng) as f32;
            }
        }
    }
    for ch in out.channels.iter_mut() {
        for v in ch.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
            if let Some(bits) = spec.quantize_bits {
                *v = quantize(*v, bits);
            }
        }
    }
    Some(out)
}

/// Applies noise, quantization, occlusion and dropout to `videos[v][t]`.
/// Dropped frames come back as `None`.
pub fn perturb(videos: &[Vec<ActionFrame>], spec: &NoiseSpec, seed: u64) -> Result<Vec<Vec<Option<ActionFrame>>>, HarnessError> {
    spec.validate()?;
    Ok(videos
        .iter()
        .enumerate()
        .map(|(v, vid)| {
            vid.par_iter()
                .enumerate()
                .map(|(t, f)| perturb_frame(f, v, t, spec, seed))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let p95 = v[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(Self { mean: v.iter().sum::<f64>() / n as f64, median, p95, max: v[n - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub error: Option<String>,
    pub pos_err_m: Option<f64>,
    pub ang_err_deg: Option<f64>,
    pub gripper_err: Option<f64>,
    /// Per view; `None` where either point failed to project.
    pub err2d_px: Vec<Option<f64>>,
    pub residual: Option<[f64; 3]>,
    pub depth_index: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub near: f64,
    pub far: f64,
    pub sigma_rel: f64,
    pub ell: f64,
    pub threshold: f64,
    pub views: Vec<String>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub config: ReportConfig,
    pub steps: Vec<StepRecord>,
    pub failures: usize,
    pub position_m: Option<Summary>,
    pub angle_deg: Option<Summary>,
    pub gripper: Option<Summary>,
    /// Mean 2D position error per view, pixels.
    pub err2d_px_per_view: Vec<Option<f64>>,
    /// Mean 2D position error over all views and steps, pixels.
    pub err2d_px: Option<f64>,
    /// Mean 3D position error, meters.
    pub err3d_m: Option<f64>,
}

impl RoundtripReport {
    pub fn median_position(&self) -> Option<f64> {
        self.position_m.map(|s| s.median)
    }
}

fn eval_step(
    t: usize,
    a: &Action7,
    cams: &[CameraView],
    enc: &EncoderParams,
    dec: &DecoderParams,
    noise: &NoiseSpec,
    seed: u64,
) -> StepRecord {
    let failed = |msg: String| StepRecord {
        t,
        error: Some(msg),
        pos_err_m: None,
        ang_err_deg: None,
        gripper_err: None,
        err2d_px: vec![None; cams.len()],
        residual: None,
        depth_index: None,
    };
    let mut frames = Vec::with_capacity(cams.len());
    let mut present = Vec::with_capacity(cams.len());
    for (v, cam) in cams.iter().enumerate() {
        match encode_frame(a, cam, enc) {
            Ok(f) => {
                if let Some(f) = perturb_frame(&f, v, t, noise, seed) {
                    frames.push(f);
                    present.push(cam);
                }
            }
            Err(e) => return failed(format!("encode view {v}: {e}")),
        }
    }
    let frame_refs: Vec<&ActionFrame> = frames.iter().collect();
    let decoded = match decode_frame(&frame_refs, &present, dec) {
        Ok(d) => d,
        Err(e) => return failed(e.to_string()),
    };
    let p_hat = decoded.action.position;
    let err2d_px = cams
        .iter()
        .map(|c| match (project(c, &a.position), project(c, &p_hat)) {
            (Ok(u), Ok(v)) => Some((u[0] - v[0]).hypot(u[1] - v[1])),
            _ => None,
        })
        .collect();
    StepRecord {
        t,
        error: None,
        pos_err_m: Some((p_hat - a.position).norm()),
        ang_err_deg: Some(a.orientation.angle_to(&decoded.action.orientation).to_degrees()),
        gripper_err: Some((decoded.action.gripper - a.gripper).abs()),
        err2d_px,
        residual: Some(decoded.residual),
        depth_index: Some(decoded.depth_index),
    }
}

fn summarize(config: ReportConfig, steps: Vec<StepRecord>, n_views: usize) -> RoundtripReport {
    let collect = |f: fn(&StepRecord) -> Option<f64>| steps.iter().filter_map(f).collect::<Vec<f64>>();
    let pos = collect(|s| s.pos_err_m);
    let per_view: Vec<Vec<f64>> = (0..n_views)
        .map(|v| steps.iter().filter_map(|s| s.err2d_px.get(v).copied().flatten()).collect())
        .collect();
    let all2d: Vec<f64> = per_view.iter().flatten().copied().collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    RoundtripReport {
        config,
        failures: steps.iter().filter(|s| s.error.is_some()).count(),
        position_m: Summary::of(&pos),
        angle_deg: Summary::of(&collect(|s| s.ang_err_deg)),
        gripper: Summary::of(&collect(|s| s.gripper_err)),
        err2d_px_per_view: per_view.iter().map(|v| mean(v)).collect(),
        err2d_px: mean(&all2d),
        err3d_m: mean(&pos),
        steps,
    }
}

/// Encode → (perturb) → decode for every step, with per-step errors.
///
/// Steps are processed independently so memory stays bounded by one step's
/// frames regardless of trajectory length.
pub fn roundtrip_eval_with_noise(
    traj: &[Action7],
    rig: &Rig,
    enc: &EncoderParams,
    dec: &DecoderParams,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<RoundtripReport, HarnessError> {
    enc.validate()?;
    dec.validate()?;
    noise.validate()?;
    rig.validate()?;
    if rig.num_views() < 2 {
        return Err(HarnessError::Decode(DecodeError::InsufficientViews(rig.num_views())));
    }
    let dec = noise.adjust_decoder(dec);
    let steps: Vec<StepRecord> = traj
        .par_iter()
        .enumerate()
        .map(|(t, a)| match rig.cameras_at(t) {
            Ok(cams) => eval_step(t, a, &cams, enc, &dec, noise, seed),
            Err(e) => StepRecord {
                t,
                error: Some(e.to_string()),
                pos_err_m: None,
                ang_err_deg: None,
                gripper_err: None,
                err2d_px: vec![None; rig.num_views()],
                residual: None,
                depth_index: None,
            },
        })
        .collect();
    let first = &rig.views[0];
    let config = ReportConfig {
        width: first.width,
        height: first.height,
        k: dec.k,
        near: dec.near,
        far: dec.far,
        sigma_rel: enc.sigma_rel,
        ell: enc.ell,
        threshold: enc.threshold,
        views: rig.views.iter().map(|v| v.view_id.clone()).collect(),
        noise: noise.clone(),
        seed,
    };
    Ok(summarize(config, steps, rig.num_views()))
}

pub fn roundtrip_eval(traj: &[Action7], rig: &Rig, enc: &EncoderParams, dec: &DecoderParams) -> Result<RoundtripReport, HarnessError> {
    roundtrip_eval_with_noise(traj, rig, enc, dec, &NoiseSpec::default(), 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub resolution: usize,
    pub k: usize,
    pub report: RoundtripReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    /// Adjacent cell pairs along either axis.
    pub pairs: usize,
    /// Pairs where the finer cell's median 3D error is ≤ the coarser one's.
    pub non_increasing: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub resolutions: Vec<usize>,
    pub ks: Vec<usize>,
    /// Resolution-major: `cells[r * ks.len() + k]`.
    pub cells: Vec<SweepCell>,
    pub monotonicity: Monotonicity,
}

impl SweepReport {
    pub fn cell(&self, r: usize, k: usize) -> &SweepCell {
        &self.cells[r * self.ks.len() + k]
    }

    pub fn median_grid(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.resolutions.len())
            .map(|r| (0..self.ks.len()).map(|k| self.cell(r, k).report.median_position()).collect())
            .collect()
    }
}

fn monotonicity(grid: &[Vec<Option<f64>>]) -> Monotonicity {
    let mut pairs = 0;
    let mut good = 0;
    let mut check = |a: Option<f64>, b: Option<f64>| {
        pairs += 1;
        if let (Some(a), Some(b)) = (a, b) {
            if b <= a {
                good += 1;
            }
        }
    };
    for r in 0..grid.len() {
        for k in 0..grid[r].len() {
            if r + 1 < grid.len() {
                check(grid[r][k], grid[r + 1][k]);
            }
            if k + 1 < grid[r].len() {
                check(grid[r][k], grid[r][k + 1]);
            }
        }
    }
    Monotonicity { pairs, non_increasing: good, fraction: if pairs == 0 { 1.0 } else { good as f64 / pairs as f64 } }
}

/// Roundtrip reports over a resolution × ray-sample grid. The rig is
/// rescaled to square `resolution × resolution` images.
pub fn discretization_sweep(
    traj: &[Action7],
    rig: &Rig,
    resolutions: &[usize],
    ks: &[usize],
    enc: &EncoderParams,
    dec: &DecoderParams,
) -> Result<SweepReport, HarnessError> {
    let ascending = |v: &[usize]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
    if !ascending(resolutions) || !ascending(ks) {
        return Err(HarnessError::InvalidArgument("sweep axes must be non-empty and strictly ascending".into()));
    }
    let mut cells = Vec::with_capacity(resolutions.len() * ks.len());
    for &res in resolutions {
        let cell_rig = rig.rescaled(res, res);
        for &k in ks {
            let params = DecoderParams { k, ..dec.clone() };
            let report = roundtrip_eval(traj, &cell_rig, enc, &params)?;
            cells.push(SweepCell { resolution: res, k, report });
        }
    }
    let mut out = SweepReport { resolutions: resolutions.to_vec(), ks: ks.to_vec(), cells, monotonicity: Monotonicity { pairs: 0, non_increasing: 0, fraction: 1.0 } };
    out.monotonicity = monotonicity(&out.median_grid());
    Ok(out)
}

/// One CSV row per step.
pub fn write_steps_csv<W: std::io::Write>(report: &RoundtripReport, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "pos_err_m".into(), "ang_err_deg".into(), "gripper_err".into()];
    header.extend(report.config.views.iter().map(|v| format!("err2d_px_{v}")));
    header.push("error".into());
    out.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for s in &report.steps {
        let mut row = vec![s.t.to_string(), opt(s.pos_err_m), opt(s.ang_err_deg), opt(s.gripper_err)];
        row.extend(s.err2d_px.iter().map(|v| opt(*v)));
        row.push(s.error.clone().unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// One CSV row per sweep cell.
pub fn write_sweep_csv<W: std::io::Write>(sweep: &SweepReport, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "resolution", "k", "median_pos_m", "mean_pos_m", "p95_pos_m", "median_ang_deg", "err2d_px", "failures",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for c in &sweep.cells {
        let r = &c.report;
        out.write_record([
            c.resolution.to_string(),
            c.k.to_string(),
            opt(r.position_m.map(|s| s.median)),
            opt(r.position_m.map(|s| s.mean)),
            opt(r.position_m.map(|s| s.p95)),
            opt(r.angle_deg.map(|s| s.median)),
            opt(r.err2d_px),
            r.failures.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
