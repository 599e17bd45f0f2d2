//! Robot actions as multi-view images.
//!
//! A 7-DoF end-effector action is turned into three world points, projected
//! into each camera and rendered as Gaussian heatmaps in an RGB frame, with
//! gripper openness stored in the background of the third channel. The
//! decoder inverts this by ray casting from one view and scoring depth
//! candidates in the others.
//!
//! Modules:
//! - [`geometry`]: rotations, pinhole projection, rays, Plücker maps
//! - [`rig`]: multi-view camera rigs and their JSON format
//! - [`encoder`] / [`decoder`]: actions ↔ action images
//! - [`packing`]: video/action token packing, training masks, flow targets
//! - [`harness`]: synthetic trajectories, noise, roundtrip and sweep reports
//! - [`io`]: trajectory files, frame containers, atomic writes
//! - [`cli`]: the `action-images` command line

pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod packing;
pub mod plot;
pub mod rig;

pub use decoder::{decode_frame, decode_video, DecodedAction, DecoderParams};
pub use encoder::{encode_frame, encode_video, Action7, ActionFrame, EncoderParams, Heatmap};
pub use geometry::{CameraView, Rotation3};
pub use rig::Rig;
