//! Pose-free Gaussian splatting on the CPU.
//!
//! Relative camera poses between adjacent frames are initialized by
//! Generalized-ICP on lifted depth maps and refined photometrically through
//! a differentiable splatting renderer. Scenes grow frame by frame where a
//! voxel density comparison shows missing coverage.

pub mod config;
pub mod densify;
pub mod error;
pub mod geometry;
pub mod gicp;
pub mod io;
pub mod kdtree;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod pose_opt;
pub mod reconstruct;
pub mod splat;
pub mod synth;

pub use error::{Error, Result};
