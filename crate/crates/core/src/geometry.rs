//! Camera geometry shared by the encoder and decoder.
//!
//! Conventions used throughout the crate:
//!
//! * World→camera extrinsics: `Xc = R·Xw + t`, camera looks down `+z`,
//!   image `x` grows to the right and `y` grows downward.
//! * Integer pixel `(i, j)` (column, row) covers the continuous square
//!   `[i, i+1) × [j, j+1)`; its center is `(i + 0.5, j + 0.5)`.
//! * Euler angles are `(roll, pitch, yaw)` composed as
//!   `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Depth (camera `z`, meters) at or below which a point counts as behind the camera.
pub const Z_MIN: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

pub type Point3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point is behind the camera (z = {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("matrix is not a proper rotation: {0}")]
    NotARotation(String),
}

/// A proper rotation in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and a positive determinant to within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NotARotation("non-finite entry".into()));
        }
        let err = (m * m.transpose() - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL {
            return Err(GeometryError::NotARotation(format!(
                "R·Rᵀ deviates from identity by {err:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::NotARotation(format!("det = {det}")));
        }
        Ok(Self(m))
    }

    /// Builds a rotation from nine row-major entries.
    pub fn from_row_major(rows: &[f64]) -> Result<Self, GeometryError> {
        if rows.len() != 9 {
            return Err(GeometryError::InvalidArgument(format!(
                "rotation needs 9 entries, got {}",
                rows.len()
            )));
        }
        Self::from_matrix(Matrix3::from_row_slice(rows))
    }

    /// Nearest rotation (Frobenius sense) to an arbitrary 3×3 matrix.
    ///
    /// Uses the polar factor from an SVD and flips the weakest singular
    /// direction when needed so the result is right-handed.
    pub fn nearest(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument("non-finite matrix".into()));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::InvalidArgument("SVD failed".into())),
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // singular values are sorted descending; the last column is the weakest
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Ok(Self(r))
    }

    /// Rotation about a unit axis by `angle` radians (Rodrigues).
    pub fn from_axis_angle(axis_angle: [f64; 3]) -> Result<Self, GeometryError> {
        if axis_angle.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument("non-finite axis-angle".into()));
        }
        let w = Vector3::from(axis_angle);
        let theta = w.norm();
        if theta < 1e-15 {
            return Ok(Self::identity());
        }
        let k = w / theta;
        let kx = k.cross_matrix();
        let m = Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos());
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Self(self.0 * other.0)
    }

    /// Geodesic distance to `other`, in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        let rel = self.0.transpose() * other.0;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `(roll, pitch, yaw)` → `Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn euler_to_matrix(angles: [f64; 3]) -> Result<Rotation3, GeometryError> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(GeometryError::InvalidArgument(format!(
            "euler angles must be finite, got {angles:?}"
        )));
    }
    let [roll, pitch, yaw] = angles;
    Ok(Rotation3(rot_z(yaw) * rot_y(pitch) * rot_x(roll)))
}

/// Inverse of [`euler_to_matrix`].
///
/// Roll and yaw land in `(-π, π]`, pitch in `[-π/2, π/2]`. At gimbal lock
/// (`|pitch| = π/2`) roll is pinned to zero and the remaining freedom is
/// folded into yaw.
pub fn matrix_to_euler(r: &Rotation3) -> [f64; 3] {
    let m = r.matrix();
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let cos_pitch = m[(0, 0)].hypot(m[(1, 0)]);
    let (roll, yaw) = if cos_pitch < 1e-9 {
        (0.0, (-m[(0, 1)]).atan2(m[(1, 1)]))
    } else {
        (m[(2, 1)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(0, 0)]))
    };
    [canonical_angle(roll), pitch, canonical_angle(yaw)]
}

/// Wraps an angle into `(-π, π]`.
fn canonical_angle(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Pinhole camera for one view at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub view_id: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World→camera rotation.
    pub rotation: Rotation3,
    /// World→camera translation, meters.
    pub translation: Vector3<f64>,
    pub time_index: Option<usize>,
}

impl CameraView {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        view_id: impl Into<String>,
        width: usize,
        height: usize,
        [fx, fy, cx, cy]: [f64; 4],
        rotation: Rotation3,
        translation: Vector3<f64>,
        time_index: Option<usize>,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            view_id: view_id.into(),
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            time_index,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera placed at `eye`, looking at `target`, with image-up roughly
    /// along `up` in the world frame.
    pub fn look_at(
        view_id: impl Into<String>,
        width: usize,
        height: usize,
        intrinsics: [f64; 4],
        eye: Point3,
        target: Point3,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::InvalidArgument("eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidArgument("up is parallel to the viewing direction".into()));
        }
        let x = x.normalize();
        // image y points down
        let y = z.cross(&x);
        let r_cw = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Rotation3::nearest(&r_cw)?;
        let translation = -(rotation.apply(&eye));
        Self::new(view_id, width, height, intrinsics, rotation, translation, None)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidCamera(format!("view {}: {msg}", self.view_id)));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}×{} is empty", self.width, self.height));
        }
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx = {} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy = {} outside [0, {})", self.cy, self.height));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return bad("non-finite translation".into());
        }
        Rotation3::from_matrix(*self.rotation.matrix()).map_err(|e| {
            GeometryError::InvalidCamera(format!("view {}: {e}", self.view_id))
        })?;
        Ok(())
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Point3 {
        -(self.rotation.matrix().transpose() * self.translation)
    }

    pub fn to_camera(&self, x: &Point3) -> Vector3<f64> {
        self.rotation.apply(x) + self.translation
    }

    /// Same pose with the image resampled to `width × height`; intrinsics
    /// scale with the image so continuous coordinates scale exactly.
    pub fn rescaled(&self, width: usize, height: usize) -> Result<Self, GeometryError> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let mut cam = self.clone();
        cam.width = width;
        cam.height = height;
        cam.fx *= sx;
        cam.cx *= sx;
        cam.fy *= sy;
        cam.cy *= sy;
        cam.validate()?;
        Ok(cam)
    }

    pub fn contains(&self, u: [f64; 2]) -> bool {
        u[0] >= 0.0 && u[1] >= 0.0 && u[0] < self.width as f64 && u[1] < self.height as f64
    }
}

/// World point → continuous pixel coordinates. The result may fall outside
/// the image rectangle.
pub fn project(cam: &CameraView, x: &Point3) -> Result<[f64; 2], GeometryError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidArgument("point must be finite".into()));
    }
    let pc = cam.to_camera(x);
    if pc.z <= Z_MIN {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    Ok([cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy])
}

/// A half-line in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3, direction: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) || origin.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument("ray needs a finite origin and non-zero direction".into()));
        }
        Ok(Self { origin, direction: direction / n })
    }

    /// Unit direction.
    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn at(&self, s: f64) -> Point3 {
        self.origin + self.direction * s
    }
}

/// Back-projects a continuous pixel into a world-frame ray from the camera center.
pub fn unproject_ray(cam: &CameraView, u: [f64; 2]) -> Result<Ray, GeometryError> {
    if !(u[0].is_finite() && u[1].is_finite()) {
        return Err(GeometryError::InvalidArgument("pixel must be finite".into()));
    }
    let dir_cam = Vector3::new((u[0] - cam.cx) / cam.fx, (u[1] - cam.cy) / cam.fy, 1.0);
    let dir_world = cam.rotation.matrix().transpose() * dir_cam;
    Ray::new(cam.center(), dir_world)
}

/// Depths `s_i` for `k` samples spaced uniformly on `[near, far]`, endpoints included.
pub fn ray_depths(near: f64, far: f64, k: usize) -> Result<Vec<f64>, GeometryError> {
    if !(near.is_finite() && far.is_finite() && near > 0.0 && near < far) {
        return Err(GeometryError::InvalidArgument(format!(
            "need 0 < near < far, got near = {near}, far = {far}"
        )));
    }
    if k < 2 {
        return Err(GeometryError::InvalidArgument(format!("need k ≥ 2 samples, got {k}")));
    }
    let step = (far - near) / (k - 1) as f64;
    Ok((0..k)
        .map(|i| if i == k - 1 { far } else { near + step * i as f64 })
        .collect())
}

/// `k` candidate points along `ray` between the near and far planes.
pub fn sample_ray(ray: &Ray, near: f64, far: f64, k: usize) -> Result<Vec<Point3>, GeometryError> {
    Ok(ray_depths(near, far, k)?.into_iter().map(|s| ray.at(s)).collect())
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, GeometryError> {
        let ok = (0..3).all(|i| min[i].is_finite() && max[i].is_finite() && min[i] < max[i]);
        if !ok {
            return Err(GeometryError::InvalidArgument(format!(
                "degenerate box min = {min:?}, max = {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn center(&self) -> Point3 {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Box grown by `margin` on every side.
    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            min: self.min.map(|v| v - margin),
            max: self.max.map(|v| v + margin),
        }
    }

    pub fn corners(&self) -> [Point3; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (n, c) in out.iter_mut().enumerate() {
            for axis in 0..3 {
                c[axis] = if n >> axis & 1 == 0 { self.min[axis] } else { self.max[axis] };
            }
        }
        out
    }

    /// Depth interval along `ray` spanned by the box corners, clipped to
    /// start at [`Z_MIN`]. `None` if the whole box lies behind the origin.
    pub fn depth_range(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (lo, hi) = self
            .corners()
            .iter()
            .map(|c| (c - ray.origin).dot(ray.direction()))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
        let lo = lo.max(Z_MIN);
        (hi > lo).then_some((lo, hi))
    }
}

/// Per-pixel Plücker coordinates `(d, m = c × d)` of a camera's pixel rays.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, one 6-vector `[dx, dy, dz, mx, my, mz]` per pixel.
    pub data: Vec<[f64; 6]>,
}

impl PluckerMap {
    pub fn at(&self, i: usize, j: usize) -> [f64; 6] {
        self.data[j * self.width + i]
    }
}

pub fn plucker_map(cam: &CameraView) -> PluckerMap {
    let c = cam.center();
    let r_t = cam.rotation.matrix().transpose();
    let mut data = Vec::with_capacity(cam.width * cam.height);
    for j in 0..cam.height {
        for i in 0..cam.width {
            let dc = Vector3::new(
                (i as f64 + 0.5 - cam.cx) / cam.fx,
                (j as f64 + 0.5 - cam.cy) / cam.fy,
                1.0,
            );
            let d = (r_t * dc).normalize();
            let m = c.cross(&d);
            data.push([d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    PluckerMap { width: cam.width, height: cam.height, data }
}
