//! Actions → action images.
//!
//! Each 7-DoF action becomes three world points (position, normal, up),
//! which are projected into every view and splatted as amplitude-1
//! Gaussians: channel 0 holds the position point, channel 1 the normal
//! point and channel 2 the up point. Gripper openness is written into the
//! low-response background of channel 2 as `threshold · g`.

use crate::geometry::{project, CameraView, GeometryError, Point3, Rotation3};
use crate::rig::{Rig, RigError};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const DEFAULT_ELL: f64 = 0.1;
pub const DEFAULT_SIGMA_REL: f64 = 0.05;
pub const DEFAULT_THRESHOLD: f64 = 0.25;

/// One control step: end-effector position, orientation and gripper openness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action7 {
    pub position: Point3,
    pub orientation: Rotation3,
    pub gripper: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("position must be finite")]
    NonFinitePosition,
    #[error("gripper openness {0} outside [0, 1]")]
    GripperRange(f64),
}

impl Action7 {
    pub fn new(position: Point3, orientation: Rotation3, gripper: f64) -> Result<Self, ActionError> {
        if position.iter().any(|v| !v.is_finite()) {
            return Err(ActionError::NonFinitePosition);
        }
        if !(0.0..=1.0).contains(&gripper) {
            return Err(ActionError::GripperRange(gripper));
        }
        Ok(Self { position, orientation, gripper })
    }
}

/// Which of the three encoded points a channel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticPoint {
    Position,
    Normal,
    Up,
}

impl SemanticPoint {
    pub const ALL: [SemanticPoint; 3] = [SemanticPoint::Position, SemanticPoint::Normal, SemanticPoint::Up];

    pub fn channel(self) -> usize {
        match self {
            SemanticPoint::Position => 0,
            SemanticPoint::Normal => 1,
            SemanticPoint::Up => 2,
        }
    }
}

impl fmt::Display for SemanticPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SemanticPoint::Position => "position",
            SemanticPoint::Normal => "normal",
            SemanticPoint::Up => "up",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticPoints {
    pub pos: Point3,
    pub normal: Point3,
    pub up: Point3,
}

impl SemanticPoints {
    pub fn get(&self, which: SemanticPoint) -> &Point3 {
        match which {
            SemanticPoint::Position => &self.pos,
            SemanticPoint::Normal => &self.normal,
            SemanticPoint::Up => &self.up,
        }
    }
}

/// `up = p + ℓ·R·eₓ`, `normal = p − ℓ·R·e_z`.
pub fn semantic_points(a: &Action7, ell: f64) -> SemanticPoints {
    let r = a.orientation.matrix();
    SemanticPoints {
        pos: a.position,
        up: a.position + r * Vector3::x() * ell,
        normal: a.position - r * Vector3::z() * ell,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Distance from the position point to the normal and up points, meters.
    pub ell: f64,
    /// Gaussian σ as a fraction of `min(width, height)`.
    pub sigma_rel: f64,
    /// Background cutoff of the up channel; also the gripper scale.
    pub threshold: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self { ell: DEFAULT_ELL, sigma_rel: DEFAULT_SIGMA_REL, threshold: DEFAULT_THRESHOLD }
    }
}

impl EncoderParams {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if !(self.ell.is_finite() && self.ell > 0.0) {
            return Err(EncodeError::InvalidParams(format!("ell must be > 0, got {}", self.ell)));
        }
        if !(self.sigma_rel > 0.0 && self.sigma_rel < 1.0) {
            return Err(EncodeError::InvalidParams(format!("sigma_rel must be in (0, 1), got {}", self.sigma_rel)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(EncodeError::InvalidParams(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn sigma_px(&self, width: usize, height: usize) -> f64 {
        self.sigma_rel * width.min(height) as f64
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("invalid encoder parameters: {0}")]
    InvalidParams(String),
    #[error("{point} point is behind camera {view_id} (z = {depth})")]
    BehindCamera { point: SemanticPoint, view_id: String, depth: f64 },
    #[error("projecting {point} point into {view_id}: {source}")]
    Projection {
        point: SemanticPoint,
        view_id: String,
        #[source]
        source: GeometryError,
    },
    #[error("view {view}, step {t}: {source}")]
    Frame {
        view: usize,
        t: usize,
        #[source]
        source: Box<EncodeError>,
    },
    #[error("rig: {0}")]
    Rig(String),
}

impl From<RigError> for EncodeError {
    fn from(e: RigError) -> Self {
        EncodeError::Rig(e.to_string())
    }
}

/// One image plane, row-major: `data[j * width + i]` is pixel column `i`, row `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[j * self.width + i] = v;
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Integer pixel `(i, j)` of the largest value; first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (n, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = n;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Bilinear sample at a continuous coordinate (pixel centers at `+0.5`).
    /// Coordinates outside the image rectangle return 0; within the outer
    /// half-pixel border the edge value is held.
    pub fn sample_bilinear(&self, u: [f64; 2]) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u[0] >= 0.0 && u[1] >= 0.0 && u[0] < w && u[1] < h) {
            return 0.0;
        }
        let x = (u[0] - 0.5).clamp(0.0, w - 1.0);
        let y = (u[1] - 0.5).clamp(0.0, h - 1.0);
        let (i0, j0) = (x.floor() as usize, y.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(self.width - 1), (j0 + 1).min(self.height - 1));
        let (fx, fy) = (x - i0 as f64, y - j0 as f64);
        let v = |i, j| self.get(i, j) as f64;
        let top = v(i0, j0) * (1.0 - fx) + v(i1, j0) * fx;
        let bottom = v(i0, j1) * (1.0 - fx) + v(i1, j1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Three-channel action image.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionFrame {
    pub width: usize,
    pub height: usize,
    pub channels: [Heatmap; 3],
}

impl ActionFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: std::array::from_fn(|_| Heatmap::zeros(width, height)),
        }
    }

    pub fn channel(&self, which: SemanticPoint) -> &Heatmap {
        &self.channels[which.channel()]
    }
}

/// Amplitude-1 Gaussian centered at continuous pixel `u`, sampled at pixel centers.
pub fn render_gaussian(u: [f64; 2], sigma_px: f64, width: usize, height: usize) -> Heatmap {
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    let gx: Vec<f64> = (0..width)
        .map(|i| {
            let d = i as f64 + 0.5 - u[0];
            (-d * d * inv).exp()
        })
        .collect();
    let gy: Vec<f64> = (0..height)
        .map(|j| {
            let d = j as f64 + 0.5 - u[1];
            (-d * d * inv).exp()
        })
        .collect();
    let mut data = Vec::with_capacity(width * height);
    for y in &gy {
        data.extend(gx.iter().map(|x| (x * y) as f32));
    }
    Heatmap { width, height, data }
}

fn project_point(cam: &CameraView, x: &Point3, point: SemanticPoint) -> Result<[f64; 2], EncodeError> {
    project(cam, x).map_err(|e| match e {
        GeometryError::BehindCamera { depth } => {
            EncodeError::BehindCamera { point, view_id: cam.view_id.clone(), depth }
        }
        source => EncodeError::Projection { point, view_id: cam.view_id.clone(), source },
    })
}

/// Continuous pixel coordinates of the three points in `cam`.
pub fn project_points(pts: &SemanticPoints, cam: &CameraView) -> Result<[[f64; 2]; 3], EncodeError> {
    Ok([
        project_point(cam, &pts.pos, SemanticPoint::Position)?,
        project_point(cam, &pts.normal, SemanticPoint::Normal)?,
        project_point(cam, &pts.up, SemanticPoint::Up)?,
    ])
}

/// Writes `threshold · g` into every pixel at or below `threshold`.
pub fn inject_gripper(up: &mut Heatmap, gripper: f64, threshold: f64) {
    let background = (threshold * gripper) as f32;
    let cutoff = threshold as f32;
    for v in up.data.iter_mut() {
        if *v <= cutoff {
            *v = background;
        }
    }
}

pub fn encode_frame(a: &Action7, cam: &CameraView, params: &EncoderParams) -> Result<ActionFrame, EncodeError> {
    params.validate()?;
    let pts = semantic_points(a, params.ell);
    let [u_pos, u_normal, u_up] = project_points(&pts, cam)?;
    let sigma = params.sigma_px(cam.width, cam.height);
    let (w, h) = (cam.width, cam.height);
    let mut up = render_gaussian(u_up, sigma, w, h);
    inject_gripper(&mut up, a.gripper, params.threshold);
    Ok(ActionFrame {
        width: w,
        height: h,
        channels: [render_gaussian(u_pos, sigma, w, h), render_gaussian(u_normal, sigma, w, h), up],
    })
}

/// `out[v][t]` is the frame for view `v` at step `t`.
pub fn encode_video(traj: &[Action7], rig: &Rig, params: &EncoderParams) -> Result<Vec<Vec<ActionFrame>>, EncodeError> {
    params.validate()?;
    (0..rig.num_views())
        .map(|v| {
            traj.par_iter()
                .enumerate()
                .map(|(t, a)| {
                    let cam = rig.camera(v, t)?;
                    encode_frame(a, &cam, params)
                        .map_err(|e| EncodeError::Frame { view: v, t, source: Box::new(e) })
                })
                .collect()
        })
        .collect()
}
