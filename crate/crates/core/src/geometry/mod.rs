//! Rigid transforms, the pinhole camera, depth lifting and point clouds.

mod camera;
mod cloud;
mod pose;

pub use camera::{
    compute_sky_mask, lift_depth, CameraIntrinsics, DepthMap, Image, Mask, DEFAULT_SKY_EPSILON,
};
pub use cloud::{transform_points, PointCloud};
pub use pose::{
    chain_poses, compose, exp_map, invert, log_map, skew, PoseSE3, Twist, LOG_MAX_ANGLE,
};

pub(crate) use pose::{exp_map_unchecked, rotation_angle};
