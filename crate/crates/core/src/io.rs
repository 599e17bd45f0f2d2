//! File formats.
//!
//! # Trajectory (JSON)
//!
//! ```json
//! { "orientation_format": "euler_xyz",
//!   "steps": [ { "t": 0, "position": [x, y, z], "orientation": [roll, pitch, yaw], "gripper": 1.0 } ] }
//! ```
//!
//! `orientation_format` is one of
//! - `euler_xyz`: `[roll, pitch, yaw]` radians, `R = Rz(yaw)·Ry(pitch)·Rx(roll)`
//! - `matrix`: 9 row-major entries of `R`
//! - `axis_angle`: rotation vector (axis × angle, radians)
//!
//! Steps are sorted by `t` on load. Gripper openness must lie in `[0, 1]`.
//!
//! # Frames
//!
//! A frames directory holds `frames.json` plus the image data:
//!
//! - `png16`: `<view_id>/frame_<t:05>.png`, 16-bit RGB, one file per step;
//!   R/G/B carry channels 0/1/2 as `round(x · 65535)`.
//! - `raw_f32`: one `<view_id>.airf` container per view:
//!
//! ```text
//! magic     4  b"AIRF"
//! version   4  u32 LE = 1
//! width     4  u32 LE
//! height    4  u32 LE
//! channels  4  u32 LE = 3
//! frames    4  u32 LE (T)
//! data      T · channels · height · width × f32 LE, ordered [t][channel][row][column]
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use crate::decoder::DecodedAction;
use crate::encoder::{Action7, ActionError, ActionFrame, Heatmap};
use crate::geometry::{euler_to_matrix, matrix_to_euler, GeometryError, Rotation3};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{self, BufReader, BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: step {index} (t = {t}): {message}")]
    Step { path: PathBuf, index: usize, t: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("unknown frame format {0:?} (expected png16 or raw_f32)")]
    UnknownFormat(String),
    #[error("{path}: png: {message}")]
    Png { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), IoError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        w.write_all(b"\n")
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrientationFormat {
    #[default]
    EulerXyz,
    Matrix,
    AxisAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub position: [f64; 3],
    pub orientation: Vec<f64>,
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub orientation_format: OrientationFormat,
    pub steps: Vec<TrajectoryStep>,
}

fn step_rotation(format: OrientationFormat, o: &[f64]) -> Result<Rotation3, String> {
    let need = match format {
        OrientationFormat::Matrix => 9,
        _ => 3,
    };
    if o.len() != need {
        return Err(format!("orientation needs {need} values for {format:?}, got {}", o.len()));
    }
    if o.iter().any(|v| !v.is_finite()) {
        return Err("orientation has non-finite values".into());
    }
    let r: Result<Rotation3, GeometryError> = match format {
        OrientationFormat::EulerXyz => euler_to_matrix([o[0], o[1], o[2]]),
        OrientationFormat::Matrix => Rotation3::from_row_major(o),
        OrientationFormat::AxisAngle => Rotation3::from_axis_angle([o[0], o[1], o[2]]),
    };
    r.map_err(|e| e.to_string())
}

impl TrajectoryFile {
    /// Validates every step and returns actions ordered by `t`.
    pub fn to_actions(&self, path: &Path) -> Result<Vec<Action7>, IoError> {
        let mut order: Vec<usize> = (0..self.steps.len()).collect();
        order.sort_by_key(|&i| self.steps[i].t);
        if let Some(w) = order.windows(2).find(|w| self.steps[w[0]].t == self.steps[w[1]].t) {
            let s = &self.steps[w[1]];
            return Err(IoError::Step { path: path.into(), index: w[1], t: s.t, message: "duplicate t".into() });
        }
        order
            .into_iter()
            .map(|i| {
                let s = &self.steps[i];
                let fail = |message: String| IoError::Step { path: path.into(), index: i, t: s.t, message };
                let rotation = step_rotation(self.orientation_format, &s.orientation).map_err(fail)?;
                Action7::new(Vector3::from(s.position), rotation, s.gripper).map_err(|e: ActionError| fail(e.to_string()))
            })
            .collect()
    }

    pub fn from_actions(actions: &[Action7], format: OrientationFormat) -> Self {
        let steps = actions
            .iter()
            .enumerate()
            .map(|(t, a)| TrajectoryStep {
                t,
                position: [a.position.x, a.position.y, a.position.z],
                orientation: match format {
                    OrientationFormat::EulerXyz => matrix_to_euler(&a.orientation).to_vec(),
                    OrientationFormat::Matrix => a.orientation.row_major().to_vec(),
                    OrientationFormat::AxisAngle => {
                        let q = nalgebra::Rotation3::from_matrix_unchecked(*a.orientation.matrix());
                        q.scaled_axis().as_slice().to_vec()
                    }
                },
                gripper: a.gripper,
            })
            .collect();
        Self { orientation_format: format, steps }
    }
}

pub fn load_trajectory(path: &Path) -> Result<Vec<Action7>, IoError> {
    let file: TrajectoryFile = read_json(path)?;
    file.to_actions(path)
}

pub fn save_trajectory(path: &Path, actions: &[Action7], format: OrientationFormat) -> Result<(), IoError> {
    write_json(path, &TrajectoryFile::from_actions(actions, format))
}

/// Per-step decode diagnostics written next to a decoded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub t: usize,
    pub error: Option<String>,
    /// Side-view response at the chosen depth for position, normal and up.
    pub residual: Option<[f64; 3]>,
    pub depth_index: Option<[usize; 3]>,
    pub main_view: Option<[usize; 3]>,
}

impl ConfidenceRecord {
    pub fn from_decoded(t: usize, d: &DecodedAction) -> Self {
        Self { t, error: None, residual: Some(d.residual), depth_index: Some(d.depth_index), main_view: Some(d.main_view) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FrameFormat {
    #[default]
    #[serde(rename = "png16")]
    Png16,
    #[serde(rename = "raw_f32")]
    RawF32,
}

impl FrameFormat {
    /// Largest absolute difference a save/load cycle may introduce.
    pub fn roundtrip_bound(self) -> f64 {
        match self {
            FrameFormat::Png16 => 0.5 / 65535.0,
            FrameFormat::RawF32 => 0.0,
        }
    }
}

impl FromStr for FrameFormat {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "png16" => Ok(FrameFormat::Png16),
            "raw_f32" => Ok(FrameFormat::RawF32),
            other => Err(IoError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for FrameFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameFormat::Png16 => "png16",
            FrameFormat::RawF32 => "raw_f32",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFiles {
    pub view_id: String,
    /// Relative to the frames directory.
    pub files: Vec<String>,
}

/// Contents of `frames.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesManifest {
    pub format: FrameFormat,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub views: Vec<ViewFiles>,
}

pub const FRAMES_MANIFEST: &str = "frames.json";
const RAW_MAGIC: &[u8; 4] = b"AIRF";
const RAW_VERSION: u32 = 1;

pub fn to_u16(x: f32) -> u16 {
    (x.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

pub fn from_u16(v: u16) -> f32 {
    (v as f64 / 65535.0) as f32
}

fn encode_png16(frame: &ActionFrame) -> Result<Vec<u8>, png::EncodingError> {
    let mut buf = Vec::new();
    let mut enc = png::Encoder::new(&mut buf, frame.width as u32, frame.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut data = Vec::with_capacity(frame.width * frame.height * 6);
    for p in 0..frame.width * frame.height {
        for ch in &frame.channels {
            data.extend_from_slice(&to_u16(ch.data[p]).to_be_bytes());
        }
    }
    let mut writer = enc.write_header()?;
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(buf)
}

fn decode_png16(path: &Path) -> Result<ActionFrame, IoError> {
    let png_err = |e: png::DecodingError| IoError::Png { path: path.into(), message: e.to_string() };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(png_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Sixteen {
        return Err(IoError::Png {
            path: path.into(),
            message: format!("expected 16-bit RGB, got {:?} {:?}", info.color_type, info.bit_depth),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h * 6)];
    let out = reader.next_frame(&mut buf).map_err(png_err)?;
    let data = &buf[..out.buffer_size()];
    let mut frame = ActionFrame::zeros(w, h);
    for (p, px) in data.chunks_exact(6).enumerate() {
        for (c, ch) in frame.channels.iter_mut().enumerate() {
            ch.data[p] = from_u16(u16::from_be_bytes([px[2 * c], px[2 * c + 1]]));
        }
    }
    Ok(frame)
}

fn write_raw(w: &mut dyn Write, frames: &[ActionFrame], width: usize, height: usize) -> io::Result<()> {
    w.write_all(RAW_MAGIC)?;
    for v in [RAW_VERSION, width as u32, height as u32, 3, frames.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for f in frames {
        for ch in &f.channels {
            for v in &ch.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_raw(path: &Path) -> Result<Vec<ActionFrame>, IoError> {
    let invalid = |message: String| IoError::Invalid { path: path.into(), message };
    let mut r = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(io_err(path))?;
    if &head[..4] != RAW_MAGIC {
        return Err(invalid("not an AIRF container".into()));
    }
    let field = |n: usize| u32::from_le_bytes(head[4 + 4 * n..8 + 4 * n].try_into().unwrap()) as usize;
    let (version, width, height, channels, count) = (field(0), field(1), field(2), field(3), field(4));
    if version != RAW_VERSION as usize {
        return Err(invalid(format!("unsupported version {version}")));
    }
    if channels != 3 {
        return Err(invalid(format!("expected 3 channels, got {channels}")));
    }
    let plane = width * height;
    let mut bytes = vec![0u8; plane * 4];
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let mut frame = ActionFrame::zeros(width, height);
        for ch in frame.channels.iter_mut() {
            r.read_exact(&mut bytes).map_err(io_err(path))?;
            for (v, b) in ch.data.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        frames.push(frame);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(invalid("trailing bytes after last frame".into()));
    }
    Ok(frames)
}

/// Writes `videos[v][t]` under `dir` and returns the manifest (also written
/// as `frames.json`).
pub fn save_frames(videos: &[Vec<ActionFrame>], view_ids: &[String], dir: &Path, format: FrameFormat) -> Result<FramesManifest, IoError> {
    let invalid = |message: String| IoError::Invalid { path: dir.into(), message };
    if videos.len() != view_ids.len() {
        return Err(invalid(format!("{} videos but {} view ids", videos.len(), view_ids.len())));
    }
    let first = videos.first().and_then(|v| v.first()).ok_or_else(|| invalid("no frames to save".into()))?;
    let (width, height, count) = (first.width, first.height, videos[0].len());
    for vid in videos {
        if vid.len() != count || vid.iter().any(|f| f.width != width || f.height != height) {
            return Err(invalid("all views must have the same frame count and size".into()));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut views = Vec::with_capacity(videos.len());
    for (vid, id) in videos.iter().zip(view_ids) {
        let files = match format {
            FrameFormat::RawF32 => {
                let name = format!("{id}.airf");
                write_atomic(&dir.join(&name), |w| write_raw(w, vid, width, height))?;
                vec![name]
            }
            FrameFormat::Png16 => {
                use rayon::prelude::*;
                vid.par_iter()
                    .enumerate()
                    .map(|(t, f)| {
                        let name = format!("{id}/frame_{t:05}.png");
                        let path = dir.join(&name);
                        let bytes = encode_png16(f).map_err(|e| IoError::Png { path: path.clone(), message: e.to_string() })?;
                        write_atomic(&path, |w| w.write_all(&bytes))?;
                        Ok(name)
                    })
                    .collect::<Result<Vec<_>, IoError>>()?
            }
        };
        views.push(ViewFiles { view_id: id.clone(), files });
    }
    let manifest = FramesManifest { format, width, height, frames: count, views };
    write_json(&dir.join(FRAMES_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Reads a frames directory written by [`save_frames`].
pub fn load_frames(dir: &Path) -> Result<(FramesManifest, Vec<Vec<ActionFrame>>), IoError> {
    let manifest: FramesManifest = read_json(&dir.join(FRAMES_MANIFEST))?;
    let mut videos = Vec::with_capacity(manifest.views.len());
    for view in &manifest.views {
        let frames = match manifest.format {
            FrameFormat::RawF32 => {
                let [file] = view.files.as_slice() else {
                    return Err(IoError::Invalid {
                        path: dir.into(),
                        message: format!("view {} must list exactly one raw container", view.view_id),
                    });
                };
                read_raw(&dir.join(file))?
            }
            FrameFormat::Png16 => {
                use rayon::prelude::*;
                view.files.par_iter().map(|f| decode_png16(&dir.join(f))).collect::<Result<Vec<_>, _>>()?
            }
        };
        if frames.len() != manifest.frames || frames.iter().any(|f| f.width != manifest.width || f.height != manifest.height) {
            return Err(IoError::Invalid {
                path: dir.into(),
                message: format!("view {} does not match the manifest shape", view.view_id),
            });
        }
        videos.push(frames);
    }
    Ok((manifest, videos))
}

/// Writes one channel as an 8-bit grayscale PNG, for inspection.
pub fn save_heatmap_png8(path: &Path, h: &Heatmap) -> Result<(), IoError> {
    let data: Vec<u8> = h.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    save_png8(path, h.width, h.height, png::ColorType::Grayscale, &data)
}

pub fn save_png8(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<(), IoError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| IoError::Png { path: path.into(), message: e.to_string() };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    write_atomic(path, |w| w.write_all(&buf))
}
