//! Action images → actions.
//!
//! Gripper openness is read from the background of the up channel. Each
//! semantic point is then lifted to 3D independently: the heatmap centroid
//! in a main view defines a ray, candidates are sampled along it between
//! the near and far planes, and the candidate whose projection collects the
//! most side-view response wins. Orientation follows from the three points.

use crate::encoder::{Action7, ActionFrame, Heatmap, SemanticPoint, SemanticPoints, DEFAULT_ELL, DEFAULT_THRESHOLD};
use crate::geometry::{project, ray_depths, unproject_ray, Aabb, CameraView, GeometryError, Point3, Rotation3};
use crate::rig::Rig;
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 2.0;
pub const DEFAULT_K: usize = 512;

/// Scores closer than this count as a tie; the nearer candidate wins.
const SCORE_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub near: f64,
    pub far: f64,
    /// Number of depth candidates per ray.
    pub k: usize,
    pub threshold: f64,
    /// Extra slack above `threshold` for background pixels, to absorb
    /// storage quantization (half a quantization step is enough).
    pub background_tolerance: f64,
    /// Offset between the position point and the other two points, meters.
    /// Only used to detect collapsed decodes.
    pub ell: f64,
    /// Views that contribute to the gripper estimate; `None` means all.
    pub gripper_views: Option<Vec<usize>>,
    /// When set, near/far are taken per ray from the box corners instead of
    /// the fixed planes.
    pub workspace: Option<Aabb>,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            background_tolerance: 0.0,
            ell: DEFAULT_ELL,
            gripper_views: None,
            workspace: None,
        }
    }
}

impl DecoderParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: String| Err(DecodeError::InvalidParams(m));
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return bad(format!("need 0 < near < far, got near = {}, far = {}", self.near, self.far));
        }
        if self.k < 2 {
            return bad(format!("need k ≥ 2, got {}", self.k));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        if !(self.background_tolerance >= 0.0 && self.background_tolerance < 1.0 - self.threshold) {
            return bad(format!("background tolerance {} out of range", self.background_tolerance));
        }
        if !(self.ell > 0.0) {
            return bad(format!("ell must be > 0, got {}", self.ell));
        }
        Ok(())
    }

    /// Depth spacing between adjacent candidates for fixed planes.
    pub fn depth_step(&self) -> f64 {
        (self.far - self.near) / (self.k - 1) as f64
    }

    /// Pixels at or below this value are background in the up channel.
    pub fn background_cutoff(&self) -> f32 {
        (self.threshold + self.background_tolerance) as f32
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("invalid decoder parameters: {0}")]
    InvalidParams(String),
    #[error("no low-response pixels to read the gripper from")]
    NoBackground,
    #[error("heatmap has no mass")]
    EmptyHeatmap,
    #[error("no depth candidate projects onto side-view response")]
    NoCorrespondence,
    #[error("decoding needs at least 2 views, got {0}")]
    InsufficientViews(usize),
    #[error("decoded points collapsed: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("{point} point: {source}")]
    Point {
        point: SemanticPoint,
        #[source]
        source: Box<DecodeError>,
    },
    #[error("step {t}: {source}")]
    Step {
        t: usize,
        #[source]
        source: Box<DecodeError>,
    },
}

/// Mean of the background pixels, rescaled by `1 / threshold` and clamped to `[0, 1]`.
pub fn decode_gripper(frames: &[&ActionFrame], threshold: f64, tolerance: f64) -> Result<f64, DecodeError> {
    let cutoff = (threshold + tolerance) as f32;
    let (sum, count) = frames
        .iter()
        .flat_map(|f| f.channels[2].data.iter())
        .filter(|&&v| v <= cutoff)
        .fold((0.0f64, 0usize), |(s, n), &v| (s + v as f64, n + 1));
    if count == 0 {
        return Err(DecodeError::NoBackground);
    }
    Ok((sum / count as f64 / threshold).clamp(0.0, 1.0))
}

/// Copy of the up channel with the gripper background zeroed.
pub fn strip_background(up: &Heatmap, cutoff: f32) -> Heatmap {
    Heatmap {
        width: up.width,
        height: up.height,
        data: up.data.iter().map(|&v| if v <= cutoff { 0.0 } else { v }).collect(),
    }
}

/// Intensity-weighted mean of pixel centers.
pub fn heatmap_centroid(h: &Heatmap) -> Result<[f64; 2], DecodeError> {
    let (mut total, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    for (j, row) in h.data.chunks_exact(h.width).enumerate() {
        let mut row_total = 0.0f64;
        let mut row_x = 0.0f64;
        for (i, &v) in row.iter().enumerate() {
            let v = v as f64;
            row_total += v;
            row_x += v * (i as f64 + 0.5);
        }
        total += row_total;
        sx += row_x;
        sy += row_total * (j as f64 + 0.5);
    }
    if !(total > 0.0) {
        return Err(DecodeError::EmptyHeatmap);
    }
    Ok([sx / total, sy / total])
}

/// A lifted 3D point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lifted {
    pub point: Point3,
    /// Side-view response at the winning candidate, in `[0, 1]`.
    pub residual: f64,
    /// 1-based index of the winning candidate along the ray.
    pub depth_index: usize,
    pub main_view: usize,
}

fn side_score(x: &Point3, sides: &[(&CameraView, &Heatmap)]) -> f64 {
    let total: f64 = sides
        .iter()
        .map(|(cam, h)| match project(cam, x) {
            Ok(u) => h.sample_bilinear(u),
            Err(_) => 0.0,
        })
        .sum();
    total / sides.len() as f64
}

fn lift_with_main(views: &[(&CameraView, &Heatmap)], main: usize, params: &DecoderParams) -> Result<Lifted, DecodeError> {
    let (main_cam, main_heat) = views[main];
    let anchor = heatmap_centroid(main_heat)?;
    let ray = unproject_ray(main_cam, anchor)?;
    let (near, far) = match params.workspace.as_ref().and_then(|b| b.depth_range(&ray)) {
        Some(range) => range,
        None => (params.near, params.far),
    };
    let sides: Vec<_> = views
        .iter()
        .enumerate()
        .filter(|(v, _)| *v != main)
        .map(|(_, view)| *view)
        .collect();
    let mut best: Option<(usize, f64, Point3)> = None;
    for (n, s) in ray_depths(near, far, params.k)?.into_iter().enumerate() {
        let x = ray.at(s);
        let score = side_score(&x, &sides);
        if best.is_none_or(|(_, b, _)| score > b + SCORE_TIE_EPS) {
            best = Some((n, score, x));
        }
    }
    match best {
        Some((n, score, point)) if score > 0.0 => Ok(Lifted {
            point,
            residual: score.clamp(0.0, 1.0),
            depth_index: n + 1,
            main_view: main,
        }),
        _ => Err(DecodeError::NoCorrespondence),
    }
}

/// Two-view lift with an explicit main view.
pub fn lift_point(
    main: (&CameraView, &Heatmap),
    side: (&CameraView, &Heatmap),
    params: &DecoderParams,
) -> Result<Lifted, DecodeError> {
    params.validate()?;
    lift_with_main(&[main, side], 0, params)
}

/// Lift with any number of views. The view with the highest heatmap peak
/// anchors the ray (lowest index on ties) and all others score candidates
/// by mean response.
pub fn lift_point_multi(views: &[(&CameraView, &Heatmap)], params: &DecoderParams) -> Result<Lifted, DecodeError> {
    params.validate()?;
    if views.len() < 2 {
        return Err(DecodeError::InsufficientViews(views.len()));
    }
    let mut main = 0;
    let mut peak = views[0].1.max();
    for (v, (_, h)) in views.iter().enumerate().skip(1) {
        let p = h.max();
        if p > peak {
            main = v;
            peak = p;
        }
    }
    if !(peak > 0.0) {
        return Err(DecodeError::EmptyHeatmap);
    }
    lift_with_main(views, main, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAction {
    pub action: Action7,
    pub points: SemanticPoints,
    /// Per semantic point (position, normal, up).
    pub residual: [f64; 3],
    pub depth_index: [usize; 3],
    pub main_view: [usize; 3],
}

/// Orientation from decoded points: `eₓ = norm(up − pos)`, `e_z = norm(pos − normal)`,
/// `e_y = e_z × eₓ`, projected onto SO(3).
pub fn orientation_from_points(pts: &SemanticPoints, ell: f64) -> Result<Rotation3, DecodeError> {
    let ex = pts.up - pts.pos;
    let ez = pts.pos - pts.normal;
    let min_len = 0.1 * ell;
    if ex.norm() < min_len {
        return Err(DecodeError::Degenerate(format!("|up − pos| = {:.3e} m", ex.norm())));
    }
    if ez.norm() < min_len {
        return Err(DecodeError::Degenerate(format!("|pos − normal| = {:.3e} m", ez.norm())));
    }
    let ex = ex.normalize();
    let ez = ez.normalize();
    let ey = ez.cross(&ex);
    let raw = Matrix3::from_columns(&[ex, ey, ez]);
    Ok(Rotation3::nearest(&raw)?)
}

/// Decodes one time step from every available view.
pub fn decode_frame(frames: &[&ActionFrame], cams: &[&CameraView], params: &DecoderParams) -> Result<DecodedAction, DecodeError> {
    params.validate()?;
    if frames.len() != cams.len() {
        return Err(DecodeError::Shape(format!("{} frames for {} cameras", frames.len(), cams.len())));
    }
    if frames.len() < 2 {
        return Err(DecodeError::InsufficientViews(frames.len()));
    }
    for (f, c) in frames.iter().zip(cams) {
        if f.width != c.width || f.height != c.height {
            return Err(DecodeError::Shape(format!(
                "frame {}×{} does not match camera {} ({}×{})",
                f.width, f.height, c.view_id, c.width, c.height
            )));
        }
    }

    let gripper_frames: Vec<&ActionFrame> = match &params.gripper_views {
        None => frames.to_vec(),
        Some(sel) => sel
            .iter()
            .map(|&v| frames.get(v).copied().ok_or_else(|| DecodeError::Shape(format!("gripper view {v} not present"))))
            .collect::<Result<_, _>>()?,
    };
    let gripper = decode_gripper(&gripper_frames, params.threshold, params.background_tolerance)?;

    let cutoff = params.background_cutoff();
    let up_clean: Vec<Heatmap> = frames.iter().map(|f| strip_background(&f.channels[2], cutoff)).collect();

    let mut lifted = [None; 3];
    for point in SemanticPoint::ALL {
        let views: Vec<(&CameraView, &Heatmap)> = cams
            .iter()
            .zip(frames)
            .enumerate()
            .map(|(v, (c, f))| {
                let h = match point {
                    SemanticPoint::Up => &up_clean[v],
                    _ => f.channel(point),
                };
                (*c, h)
            })
            .collect();
        let l = lift_point_multi(&views, params).map_err(|e| DecodeError::Point { point, source: Box::new(e) })?;
        lifted[point.channel()] = Some(l);
    }
    let [pos, normal, up] = lifted.map(|l| l.expect("every point lifted"));
    let points = SemanticPoints { pos: pos.point, normal: normal.point, up: up.point };
    let orientation = orientation_from_points(&points, params.ell)?;
    Ok(DecodedAction {
        action: Action7 { position: points.pos, orientation, gripper },
        points,
        residual: [pos.residual, normal.residual, up.residual],
        depth_index: [pos.depth_index, normal.depth_index, up.depth_index],
        main_view: [pos.main_view, normal.main_view, up.main_view],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    /// Stop at the first failing step.
    #[default]
    FailFast,
    /// Decode every step and report failures per step.
    Collect,
}

pub type StepResult = Result<DecodedAction, DecodeError>;

fn check_lengths<T>(videos: &[Vec<T>], rig: &Rig) -> Result<usize, DecodeError> {
    if videos.len() != rig.num_views() {
        return Err(DecodeError::Shape(format!("{} videos for a {}-view rig", videos.len(), rig.num_views())));
    }
    let t = videos.first().map_or(0, Vec::len);
    if let Some((v, bad)) = videos.iter().enumerate().find(|(_, vid)| vid.len() != t) {
        return Err(DecodeError::Shape(format!("view {v} has {} frames, view 0 has {t}", bad.len())));
    }
    Ok(t)
}

fn finish(results: Vec<StepResult>, policy: ErrorPolicy) -> Result<Vec<StepResult>, DecodeError> {
    if policy == ErrorPolicy::FailFast {
        if let Some((t, Err(e))) = results.iter().enumerate().find(|(_, r)| r.is_err()) {
            return Err(DecodeError::Step { t, source: Box::new(e.clone()) });
        }
    }
    Ok(results)
}

fn decode_step(frames: Vec<&ActionFrame>, views: &[usize], rig: &Rig, t: usize, params: &DecoderParams) -> StepResult {
    let cams = views
        .iter()
        .map(|&v| rig.camera(v, t).map_err(|e| DecodeError::Shape(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let cam_refs: Vec<&CameraView> = cams.iter().collect();
    decode_frame(&frames, &cam_refs, params)
}

/// `videos[v][t]`; all views must have the same length.
pub fn decode_video(
    videos: &[Vec<ActionFrame>],
    rig: &Rig,
    params: &DecoderParams,
    policy: ErrorPolicy,
) -> Result<Vec<StepResult>, DecodeError> {
    params.validate()?;
    let len = check_lengths(videos, rig)?;
    let views: Vec<usize> = (0..videos.len()).collect();
    let results = (0..len)
        .into_par_iter()
        .map(|t| {
            let frames = videos.iter().map(|vid| &vid[t]).collect();
            decode_step(frames, &views, rig, t, params)
        })
        .collect();
    finish(results, policy)
}

/// Like [`decode_video`] but tolerates missing frames; each step is
/// decoded from the views present at that step.
pub fn decode_video_sparse(
    videos: &[Vec<Option<ActionFrame>>],
    rig: &Rig,
    params: &DecoderParams,
    policy: ErrorPolicy,
) -> Result<Vec<StepResult>, DecodeError> {
    params.validate()?;
    let len = check_lengths(videos, rig)?;
    let results = (0..len)
        .into_par_iter()
        .map(|t| {
            let (views, frames): (Vec<usize>, Vec<&ActionFrame>) = videos
                .iter()
                .enumerate()
                .filter_map(|(v, vid)| vid[t].as_ref().map(|f| (v, f)))
                .unzip();
            if gripper_views_missing(params, &views) {
                return Err(DecodeError::Shape("a gripper view is missing".into()));
            }
            let mut params = params.clone();
            // gripper view indices refer to the full rig; remap onto present views
            if let Some(sel) = &params.gripper_views {
                params.gripper_views = Some(sel.iter().filter_map(|g| views.iter().position(|v| v == g)).collect());
            }
            decode_step(frames, &views, rig, t, &params)
        })
        .collect();
    finish(results, policy)
}

fn gripper_views_missing(params: &DecoderParams, present: &[usize]) -> bool {
    params
        .gripper_views
        .as_ref()
        .is_some_and(|sel| sel.iter().all(|g| !present.contains(g)))
}
