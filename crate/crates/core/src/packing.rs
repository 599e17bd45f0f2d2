//! Video/action token packing, training masks and the flow-matching target.
//!
//! Tokens are opaque `channels`-wide payloads on a `(view, stream, t, y, x)`
//! grid. Per view the video stream comes first and the action stream
//! second; the flat order is view-major, then stream, then time, then
//! row-major space.
//!
//! # Shard format
//!
//! Little-endian throughout.
//!
//! ```text
//! magic       4  b"AIPK"
//! version     2  u16 = 1
//! reserved    2  u16 = 0
//! seed        8  u64
//! views       4  u32
//! time        4  u32
//! height      4  u32
//! width       4  u32
//! channels    4  u32
//! n_tokens    8  u64   = views · 2 · time · height · width
//! n_records   4  u32
//! index map   n_tokens × 5 × u32   (stream, view, t, y, x) for flat position 0..n_tokens
//! records     n_records × {
//!     strategy  1  u8   (0 joint, 1 action→video, 2 video→action, 3 video only)
//!     reserved  3
//!     present   ceil(n_tokens / 8)   bit set ⇔ token is in the mask
//!     predicted ceil(n_tokens / 8)   bit set ⇔ token is supervised
//! }
//! ```
//!
//! Bit `n` of a bitmap is bit `n % 8` (LSB first) of byte `n / 8`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PackingError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("invalid strategy mix: {0}")]
    Mix(String),
    #[error("malformed shard: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Video = 0,
    Action = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub views: usize,
    /// Latent steps per stream.
    pub time: usize,
    pub height: usize,
    pub width: usize,
    /// Payload width; metadata only.
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenCoord {
    pub stream: Stream,
    pub view: usize,
    /// 0-based; `t = 0` is the conditioning frame.
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

impl TokenLayout {
    pub fn new(views: usize, time: usize, height: usize, width: usize, channels: usize) -> Result<Self, PackingError> {
        if views == 0 || time == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(PackingError::Layout(format!(
                "all dimensions must be positive: views={views} time={time} h={height} w={width} c={channels}"
            )));
        }
        Ok(Self { views, time, height, width, channels })
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    /// Tokens in one stream of one view.
    pub fn stream_tokens(&self) -> usize {
        self.time * self.spatial()
    }

    pub fn tokens_per_view(&self) -> usize {
        2 * self.stream_tokens()
    }

    pub fn total_tokens(&self) -> usize {
        self.views * self.tokens_per_view()
    }

    /// Number of values in one stream tensor `[view][t][y][x][channel]`.
    pub fn stream_len(&self) -> usize {
        self.views * self.stream_tokens() * self.channels
    }

    pub fn position(&self, c: &TokenCoord) -> usize {
        (((c.view * 2 + c.stream as usize) * self.time + c.t) * self.height + c.y) * self.width + c.x
    }

    pub fn coord(&self, pos: usize) -> TokenCoord {
        let x = pos % self.width;
        let rest = pos / self.width;
        let y = rest % self.height;
        let rest = rest / self.height;
        let t = rest % self.time;
        let rest = rest / self.time;
        let stream = if rest.is_multiple_of(2) { Stream::Video } else { Stream::Action };
        TokenCoord { stream, view: rest / 2, t, y, x }
    }

    fn contains(&self, c: &TokenCoord) -> bool {
        c.view < self.views && c.t < self.time && c.y < self.height && c.x < self.width
    }
}

/// Flat position → token coordinate, for every position of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    pub layout: TokenLayout,
    pub coords: Vec<TokenCoord>,
}

impl IndexMap {
    pub fn new(layout: TokenLayout) -> Self {
        let coords = (0..layout.total_tokens()).map(|p| layout.coord(p)).collect();
        Self { layout, coords }
    }

    pub fn position(&self, c: &TokenCoord) -> Option<usize> {
        self.layout.contains(c).then(|| self.layout.position(c))
    }
}

/// Packed `[V₁, A₁, V₂, A₂, …]` token payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSequence {
    pub layout: TokenLayout,
    /// `total_tokens × channels` values.
    pub data: Vec<f32>,
}

impl PackedSequence {
    pub fn token(&self, pos: usize) -> &[f32] {
        let c = self.layout.channels;
        &self.data[pos * c..(pos + 1) * c]
    }
}

/// Interleaves per-view video and action tensors (`[view][t][y][x][channel]`).
pub fn pack_sequence(video: &[f32], action: &[f32], layout: &TokenLayout) -> Result<(PackedSequence, IndexMap), PackingError> {
    let expected = layout.stream_len();
    if video.len() != expected || action.len() != expected {
        return Err(PackingError::Shape(format!(
            "expected {expected} values per stream, got video {} and action {}",
            video.len(),
            action.len()
        )));
    }
    let block = layout.stream_tokens() * layout.channels;
    let mut data = Vec::with_capacity(2 * expected);
    for v in 0..layout.views {
        data.extend_from_slice(&video[v * block..(v + 1) * block]);
        data.extend_from_slice(&action[v * block..(v + 1) * block]);
    }
    Ok((PackedSequence { layout: *layout, data }, IndexMap::new(*layout)))
}

/// Inverse of [`pack_sequence`]: returns `(video, action)`.
pub fn unpack_sequence(packed: &PackedSequence) -> Result<(Vec<f32>, Vec<f32>), PackingError> {
    let layout = &packed.layout;
    if packed.data.len() != 2 * layout.stream_len() {
        return Err(PackingError::Shape(format!(
            "packed sequence has {} values, layout needs {}",
            packed.data.len(),
            2 * layout.stream_len()
        )));
    }
    let block = layout.stream_tokens() * layout.channels;
    let mut video = Vec::with_capacity(layout.stream_len());
    let mut action = Vec::with_capacity(layout.stream_len());
    for chunk in packed.data.chunks_exact(2 * block) {
        video.extend_from_slice(&chunk[..block]);
        action.extend_from_slice(&chunk[block..]);
    }
    Ok((video, action))
}

/// What a training sample asks the model to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Predict video and actions from the first observation.
    JointGen = 0,
    /// Predict video given all actions and the first observation.
    ActionCondVideo = 1,
    /// Predict actions given the whole video.
    VideoToAction = 2,
    /// Video prediction only; action tokens are left out entirely.
    VideoOnly = 3,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::JointGen,
        Strategy::ActionCondVideo,
        Strategy::VideoToAction,
        Strategy::VideoOnly,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Given to the model as conditioning.
    Visible,
    /// Noised and supervised.
    Predicted,
}

/// Per-token flags aligned with the packed order. `None` marks tokens the
/// strategy leaves out of the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub layout: TokenLayout,
    pub strategy: Strategy,
    pub flags: Vec<Option<Flag>>,
}

impl Mask {
    pub fn get(&self, c: &TokenCoord) -> Option<Flag> {
        self.flags[self.layout.position(c)]
    }

    /// Tokens included in the sample, with their flag.
    pub fn entries(&self) -> impl Iterator<Item = (TokenCoord, Flag)> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(p, f)| f.map(|f| (self.layout.coord(p), f)))
    }

    pub fn count(&self, flag: Flag) -> usize {
        self.flags.iter().filter(|f| **f == Some(flag)).count()
    }
}

fn flag_for(strategy: Strategy, stream: Stream, t: usize) -> Option<Flag> {
    use Flag::*;
    match (strategy, stream) {
        (_, Stream::Video) if t == 0 => Some(Visible),
        (Strategy::VideoToAction, Stream::Video) => Some(Visible),
        (_, Stream::Video) => Some(Predicted),
        (Strategy::JointGen, Stream::Action) => Some(Predicted),
        (Strategy::ActionCondVideo, Stream::Action) => Some(Visible),
        (Strategy::VideoToAction, Stream::Action) => Some(Predicted),
        (Strategy::VideoOnly, Stream::Action) => None,
    }
}

/// Deterministic mask for a strategy. The first video step of every view is
/// always visible.
pub fn sample_mask(strategy: Strategy, layout: &TokenLayout) -> Mask {
    let flags = (0..layout.total_tokens())
        .map(|p| {
            let c = layout.coord(p);
            flag_for(strategy, c.stream, c.t)
        })
        .collect();
    Mask { layout: *layout, strategy, flags }
}

/// Mixture weights over [`Strategy::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyMix {
    pub joint_gen: f64,
    pub action_cond_video: f64,
    pub video_to_action: f64,
    pub video_only: f64,
}

impl Default for StrategyMix {
    fn default() -> Self {
        Self { joint_gen: 0.85, action_cond_video: 0.05, video_to_action: 0.05, video_only: 0.05 }
    }
}

impl StrategyMix {
    pub fn weights(&self) -> [f64; 4] {
        [self.joint_gen, self.action_cond_video, self.video_to_action, self.video_only]
    }

    pub fn validate(&self) -> Result<(), PackingError> {
        let w = self.weights();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PackingError::Mix(format!("weights must be non-negative, got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PackingError::Mix(format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Draws a strategy from `rng`. The caller owns the generator state.
pub fn draw_strategy<R: Rng + ?Sized>(mix: &StrategyMix, rng: &mut R) -> Strategy {
    let w = mix.weights();
    let u: f64 = rng.random::<f64>() * w.iter().sum::<f64>();
    let mut acc = 0.0;
    for (s, wi) in Strategy::ALL.iter().zip(w) {
        acc += wi;
        if u < acc {
            return *s;
        }
    }
    // u landed on the rounding edge of the last bucket
    let last = w.iter().rposition(|wi| *wi > 0.0).unwrap_or(0);
    Strategy::ALL[last]
}

/// Flow-matching velocity `v = ε − x`.
///
/// Computed in `f64` so the difference of two `f32` payloads is exact and
/// `v + x` reproduces `ε` bit for bit. The training loss is an L2 over the
/// tokens flagged [`Flag::Predicted`] only; see [`masked_l2`].
pub fn flow_target(x: &PackedSequence, eps: &[f32]) -> Result<Vec<f64>, PackingError> {
    if eps.len() != x.data.len() {
        return Err(PackingError::Shape(format!("noise has {} values, sequence has {}", eps.len(), x.data.len())));
    }
    Ok(eps.iter().zip(&x.data).map(|(e, v)| *e as f64 - *v as f64).collect())
}

/// Mean squared error over predicted tokens; `NaN` when nothing is predicted.
pub fn masked_l2(pred: &[f64], target: &[f64], mask: &Mask) -> Result<f64, PackingError> {
    let c = mask.layout.channels;
    let n = mask.layout.total_tokens() * c;
    if pred.len() != n || target.len() != n {
        return Err(PackingError::Shape(format!("need {n} values, got {} and {}", pred.len(), target.len())));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, flag) in mask.flags.iter().enumerate() {
        if *flag == Some(Flag::Predicted) {
            for k in p * c..(p + 1) * c {
                sum += (pred[k] - target[k]).powi(2);
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

const SHARD_MAGIC: &[u8; 4] = b"AIPK";
const SHARD_VERSION: u16 = 1;

/// Decoded contents of a shard file.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub seed: u64,
    pub layout: TokenLayout,
    pub index_map: IndexMap,
    pub masks: Vec<Mask>,
}

fn bitmap(bits: impl Iterator<Item = bool>, n: usize) -> Vec<u8> {
    let mut out = vec![0u8; n.div_ceil(8)];
    for (i, b) in bits.enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn to_u32(v: usize, what: &str) -> Result<u32, PackingError> {
    u32::try_from(v).map_err(|_| PackingError::Layout(format!("{what} = {v} does not fit in u32")))
}

pub fn write_shard<W: Write>(mut w: W, seed: u64, layout: &TokenLayout, masks: &[Mask]) -> Result<(), PackingError> {
    let n = layout.total_tokens();
    if let Some(m) = masks.iter().find(|m| m.layout != *layout) {
        return Err(PackingError::Shape(format!("mask layout {:?} differs from shard layout", m.layout)));
    }
    w.write_all(SHARD_MAGIC)?;
    w.write_all(&SHARD_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    for (v, name) in [
        (layout.views, "views"),
        (layout.time, "time"),
        (layout.height, "height"),
        (layout.width, "width"),
        (layout.channels, "channels"),
    ] {
        w.write_all(&to_u32(v, name)?.to_le_bytes())?;
    }
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&to_u32(masks.len(), "records")?.to_le_bytes())?;
    for p in 0..n {
        let c = layout.coord(p);
        for v in [c.stream as usize, c.view, c.t, c.y, c.x] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    for m in masks {
        w.write_all(&[m.strategy as u8, 0, 0, 0])?;
        w.write_all(&bitmap(m.flags.iter().map(Option::is_some), n))?;
        w.write_all(&bitmap(m.flags.iter().map(|f| *f == Some(Flag::Predicted)), n))?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], PackingError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PackingError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_shard<R: Read>(mut r: R) -> Result<Shard, PackingError> {
    if &read_array::<4, _>(&mut r)? != SHARD_MAGIC {
        return Err(PackingError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != SHARD_VERSION {
        return Err(PackingError::Format(format!("unsupported version {version}")));
    }
    let _reserved: [u8; 2] = read_array(&mut r)?;
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = read_u32(&mut r)? as usize;
    }
    let layout = TokenLayout::new(dims[0], dims[1], dims[2], dims[3], dims[4])?;
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    if n != layout.total_tokens() {
        return Err(PackingError::Format(format!("token count {n} does not match layout")));
    }
    let records = read_u32(&mut r)? as usize;
    let mut coords = Vec::with_capacity(n);
    for p in 0..n {
        let mut f = [0usize; 5];
        for v in f.iter_mut() {
            *v = read_u32(&mut r)? as usize;
        }
        let stream = match f[0] {
            0 => Stream::Video,
            1 => Stream::Action,
            s => return Err(PackingError::Format(format!("token {p}: bad stream {s}"))),
        };
        coords.push(TokenCoord { stream, view: f[1], t: f[2], y: f[3], x: f[4] });
    }
    let bytes = n.div_ceil(8);
    let mut masks = Vec::with_capacity(records);
    for rec in 0..records {
        let head: [u8; 4] = read_array(&mut r)?;
        let strategy = Strategy::from_code(head[0])
            .ok_or_else(|| PackingError::Format(format!("record {rec}: bad strategy {}", head[0])))?;
        let mut present = vec![0u8; bytes];
        r.read_exact(&mut present)?;
        let mut predicted = vec![0u8; bytes];
        r.read_exact(&mut predicted)?;
        let bit = |b: &[u8], i: usize| b[i / 8] >> (i % 8) & 1 == 1;
        let flags = (0..n)
            .map(|i| match (bit(&present, i), bit(&predicted, i)) {
                (false, _) => None,
                (true, false) => Some(Flag::Visible),
                (true, true) => Some(Flag::Predicted),
            })
            .collect();
        masks.push(Mask { layout, strategy, flags });
    }
    Ok(Shard { seed, layout, index_map: IndexMap { layout, coords }, masks })
}
