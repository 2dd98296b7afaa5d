//! Small pose-optimization problems on synthetic frames.

use gsfree::geometry::{compute_sky_mask, DepthMap, Image, Mask, PoseSE3};
use gsfree::pose_opt::{estimate_relative_pose, fit_frame_gaussians, FramePair, OptimizerConfig};
use gsfree::splat::GaussianScene;
use gsfree::synth::{default_intrinsics, make_scene, make_trajectory, render_ground_truth, SceneKind, TrajectoryKind};

pub fn frames(kind: SceneKind, trajectory: TrajectoryKind, n: usize, magnitude: f64, size: usize) -> Vec<(Image, DepthMap)> {
    let k = default_intrinsics(size, size).unwrap();
    let scene = make_scene(kind, 0);
    make_trajectory(trajectory, n, magnitude)
        .unwrap()
        .iter()
        .map(|p| render_ground_truth(&scene, p, &k).unwrap())
        .collect()
}

pub fn fast_config() -> OptimizerConfig {
    OptimizerConfig {
        fit_iterations: 100,
        refine_iterations: 100,
        ..OptimizerConfig::default()
    }
}

pub fn fitted(image: &Image, depth: &DepthMap, cfg: &OptimizerConfig) -> GaussianScene {
    fit_frame_gaussians(image, depth, cfg).unwrap().scene
}

/// Street pair whose second frame has sky. Returns the refined pose with
/// the given target and with its sky pixels replaced by noise, plus the
/// number of sky pixels.
pub fn sky_perturbation(seed: u64) -> (PoseSE3, PoseSE3, usize) {
    let f = frames(SceneKind::Street, TrajectoryKind::LineLargeSteps, 2, 0.5, 32);
    let cfg = fast_config();
    let scene = fitted(&f[0].0, &f[0].1, &cfg);
    let sky: Mask = compute_sky_mask(&f[1].1, cfg.sky_epsilon);
    let pair = FramePair {
        image_t: f[0].0.clone(),
        image_t1: f[1].0.clone(),
        depth_t: f[0].1.clone(),
        intrinsics: f[0].1.intrinsics,
    };
    let mut perturbed = pair.clone();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    for p in 0..sky.data.len() {
        if sky.data[p] {
            for c in 0..3 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perturbed.image_t1.data[3 * p + c] = (state >> 11) as f64 / (1u64 << 53) as f64;
            }
        }
    }
    let init = PoseSE3::identity();
    let a = estimate_relative_pose(&scene, &pair, &init, Some(&sky), &cfg).unwrap().pose;
    let b = estimate_relative_pose(&scene, &perturbed, &init, Some(&sky), &cfg).unwrap().pose;
    (a, b, sky.count())
}
