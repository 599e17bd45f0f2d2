//! Multi-view camera rigs and their JSON file format.
//!
//! ```json
//! { "views": [ { "view_id": "front", "width": 512, "height": 512,
//!                "fx": 410.0, "fy": 410.0, "cx": 256.0, "cy": 256.0,
//!                "frames": [ { "time": 0,
//!                              "rotation": [r00, r01, r02, r10, r11, r12, r20, r21, r22],
//!                              "translation": [tx, ty, tz] } ] } ] }
//! ```
//!
//! Rotations are row-major world→camera matrices. A view with a single
//! frame is static and serves every time step.

use crate::geometry::{CameraView, GeometryError, Rotation3};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("rig has no views")]
    Empty,
    #[error("view {view_id}: {source}")]
    Camera {
        view_id: String,
        #[source]
        source: GeometryError,
    },
    #[error("view {view_id}: no frames")]
    NoFrames { view_id: String },
    #[error("view {view_id}: duplicate frame time {time}")]
    DuplicateTime { view_id: String, time: usize },
    #[error("view {view_id}: no extrinsics for time step {time}")]
    MissingTime { view_id: String, time: usize },
    #[error("view index {0} out of range")]
    NoSuchView(usize),
    #[error("duplicate view id {0}")]
    DuplicateView(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigFrame {
    pub time: usize,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTrack {
    pub view_id: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub frames: Vec<RigFrame>,
}

impl CameraTrack {
    pub fn is_static(&self) -> bool {
        self.frames.len() == 1
    }

    fn camera_from(&self, frame: &RigFrame, time_index: Option<usize>) -> Result<CameraView, RigError> {
        let wrap = |source| RigError::Camera { view_id: self.view_id.clone(), source };
        let rotation = Rotation3::from_row_major(&frame.rotation).map_err(wrap)?;
        CameraView::new(
            self.view_id.clone(),
            self.width,
            self.height,
            [self.fx, self.fy, self.cx, self.cy],
            rotation,
            Vector3::from(frame.translation),
            time_index,
        )
        .map_err(wrap)
    }

    pub fn camera(&self, t: usize) -> Result<CameraView, RigError> {
        if self.is_static() {
            return self.camera_from(&self.frames[0], Some(t));
        }
        let frame = self
            .frames
            .iter()
            .find(|f| f.time == t)
            .ok_or_else(|| RigError::MissingTime { view_id: self.view_id.clone(), time: t })?;
        self.camera_from(frame, Some(t))
    }
}

/// Camera tracks, one per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub views: Vec<CameraTrack>,
}

impl Rig {
    /// Static rig from one camera per view.
    pub fn from_cameras(cams: &[CameraView]) -> Self {
        let views = cams
            .iter()
            .map(|c| CameraTrack {
                view_id: c.view_id.clone(),
                width: c.width,
                height: c.height,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                frames: vec![RigFrame {
                    time: 0,
                    rotation: c.rotation.row_major(),
                    translation: [c.translation.x, c.translation.y, c.translation.z],
                }],
            })
            .collect();
        Self { views }
    }

    /// Checks every frame of every view.
    pub fn validate(&self) -> Result<(), RigError> {
        if self.views.is_empty() {
            return Err(RigError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for track in &self.views {
            if !seen.insert(track.view_id.as_str()) {
                return Err(RigError::DuplicateView(track.view_id.clone()));
            }
            if track.frames.is_empty() {
                return Err(RigError::NoFrames { view_id: track.view_id.clone() });
            }
            let mut times = std::collections::HashSet::new();
            for f in &track.frames {
                if !times.insert(f.time) {
                    return Err(RigError::DuplicateTime { view_id: track.view_id.clone(), time: f.time });
                }
                track.camera_from(f, Some(f.time))?;
            }
        }
        Ok(())
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn camera(&self, view: usize, t: usize) -> Result<CameraView, RigError> {
        self.views.get(view).ok_or(RigError::NoSuchView(view))?.camera(t)
    }

    /// All views at time `t`.
    pub fn cameras_at(&self, t: usize) -> Result<Vec<CameraView>, RigError> {
        (0..self.views.len()).map(|v| self.camera(v, t)).collect()
    }

    /// Same poses at a different image size; intrinsics scale with the image.
    pub fn rescaled(&self, width: usize, height: usize) -> Rig {
        let views = self
            .views
            .iter()
            .map(|tr| {
                let sx = width as f64 / tr.width as f64;
                let sy = height as f64 / tr.height as f64;
                CameraTrack {
                    width,
                    height,
                    fx: tr.fx * sx,
                    cx: tr.cx * sx,
                    fy: tr.fy * sy,
                    cy: tr.cy * sy,
                    ..tr.clone()
                }
            })
            .collect();
        Rig { views }
    }

    /// Keeps only the listed views, in the given order.
    pub fn subset(&self, views: &[usize]) -> Result<Rig, RigError> {
        let views = views
            .iter()
            .map(|&v| self.views.get(v).cloned().ok_or(RigError::NoSuchView(v)))
            .collect::<Result<_, _>>()?;
        Ok(Rig { views })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::euler_to_matrix;

    fn cam(id: &str) -> CameraView {
        CameraView::new(
            id, 64, 48, [60.0, 60.0, 32.0, 24.0],
            euler_to_matrix([0.1, -0.2, 0.3]).unwrap(),
            Vector3::new(0.0, 0.0, 1.0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn static_rig_serves_any_time() {
        let rig = Rig::from_cameras(&[cam("a"), cam("b")]);
        rig.validate().unwrap();
        let c = rig.camera(1, 17).unwrap();
        assert_eq!(c.view_id, "b");
        assert_eq!(c.time_index, Some(17));
        assert!((c.rotation.matrix() - cam("b").rotation.matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn moving_rig_requires_each_time() {
        let mut rig = Rig::from_cameras(&[cam("a")]);
        let mut f = rig.views[0].frames[0].clone();
        f.time = 1;
        f.translation[0] = 0.5;
        rig.views[0].frames.push(f);
        rig.validate().unwrap();
        assert_eq!(rig.camera(0, 1).unwrap().translation.x, 0.5);
        assert!(matches!(rig.camera(0, 2), Err(RigError::MissingTime { time: 2, .. })));
    }

    #[test]
    fn rejects_non_rotation() {
        let mut rig = Rig::from_cameras(&[cam("a")]);
        rig.views[0].frames[0].rotation = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        assert!(matches!(rig.validate(), Err(RigError::Camera { .. })));
    }

    #[test]
    fn json_shape() {
        let rig = Rig::from_cameras(&[cam("a")]);
        let v: serde_json::Value = serde_json::to_value(&rig).unwrap();
        assert_eq!(v["views"][0]["frames"][0]["rotation"].as_array().unwrap().len(), 9);
        let back: Rig = serde_json::from_value(v).unwrap();
        assert_eq!(back, rig);
    }
}
