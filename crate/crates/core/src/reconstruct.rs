//! Progressive scene reconstruction over a posed (or tracked) sequence.
//!
//! The scene starts from the single-frame fit of the first training frame.
//! Every later training frame is lifted into the world, grown into the
//! scene where voxel density shows missing coverage, and followed by a
//! short optimization over a sliding window of recent frames. Held-out
//! frames are registered against the frozen scene and rendered.

use crate::densify::{grow_scene, DensifyConfig, DEFAULT_DENSITY_RATIO, DEFAULT_MAX_POINTS_PER_VOXEL, DEFAULT_VOXEL_FRACTION};
use crate::error::{Error, Result};
use crate::geometry::{compute_sky_mask, exp_map, lift_depth, log_map, CameraIntrinsics, DepthMap, Image, PoseSE3, Twist};
use crate::losses::rgb_loss;
use crate::metrics::{psnr, ssim};
use crate::pose_opt::{fit_frame_gaussians, fit_test_pose, track_sequence, OptimizerConfig, SceneOptimizer, Tracking};
use crate::splat::{render, GaussianScene, Rasterizer};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    pub optimizer: OptimizerConfig,
    /// Frame `i` is held out when `i % test_every == test_every - 1`;
    /// 0 keeps every frame for training.
    pub test_every: usize,
    pub voxel_densify: bool,
    /// Voxel size as a fraction of the first frame's cloud diagonal.
    pub voxel_fraction: f64,
    pub density_ratio_threshold: f64,
    pub max_points_per_voxel: usize,
    /// Pixel stride of the clouds compared against the scene.
    pub densify_stride: usize,
    /// Most recent training frames revisited after each growth step;
    /// `None` revisits every frame seen so far.
    pub window_frames: Option<usize>,
    pub window_iterations: usize,
    pub final_iterations: usize,
    pub prune_opacity: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            test_every: 8,
            voxel_densify: true,
            voxel_fraction: DEFAULT_VOXEL_FRACTION,
            density_ratio_threshold: DEFAULT_DENSITY_RATIO,
            max_points_per_voxel: DEFAULT_MAX_POINTS_PER_VOXEL,
            densify_stride: 1,
            window_frames: None,
            window_iterations: 50,
            final_iterations: 300,
            prune_opacity: 0.005,
        }
    }
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.voxel_fraction > 0.0) {
            return Err(Error::invalid("voxel fraction must be positive"));
        }
        if self.densify_stride == 0 {
            return Err(Error::invalid("densify stride must be at least 1"));
        }
        if self.window_frames == Some(0) {
            return Err(Error::invalid("window must hold at least one frame"));
        }
        if !(0.0..1.0).contains(&self.prune_opacity) {
            return Err(Error::invalid("prune opacity must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// `(train, test)` frame indices under the hold-out rule.
pub fn split_frames(n: usize, test_every: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|&i| test_every == 0 || i % test_every != test_every - 1)
}

#[derive(Debug, Clone)]
pub struct HeldOutView {
    pub index: usize,
    pub pose: PoseSE3,
    pub render: Image,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub scene: GaussianScene,
    pub train_indices: Vec<usize>,
    /// Camera-to-world poses of the training frames.
    pub train_poses: Vec<PoseSE3>,
    pub tracking: Option<Tracking>,
    pub held_out: Vec<HeldOutView>,
    /// Gaussians added by growth after each training frame.
    pub growth: Vec<usize>,
}

impl Reconstruction {
    /// Mean held-out PSNR, `None` without held-out frames.
    pub fn mean_psnr(&self) -> Option<f64> {
        (!self.held_out.is_empty())
            .then(|| self.held_out.iter().map(|v| v.psnr).sum::<f64>() / self.held_out.len() as f64)
    }
}

fn optimize_round_robin(
    scene: &mut GaussianScene,
    opt: &mut SceneOptimizer,
    frames: &[(&Image, PoseSE3)],
    iterations: usize,
    k: &CameraIntrinsics,
    lambda: f64,
) -> Result<()> {
    if scene.is_empty() {
        return Ok(());
    }
    for it in 0..iterations {
        let (image, pose) = &frames[it % frames.len()];
        let view = pose.inverse();
        let r = Rasterizer::new(scene, &view, k);
        let out = r.forward();
        let loss = rgb_loss(&out.color, image, lambda, None)?;
        let grads = r.backward(&loss.gradient, None)?;
        opt.step(scene, &grads);
    }
    Ok(())
}

fn prune(scene: &mut GaussianScene, opt: &mut SceneOptimizer, min_opacity: f64) {
    let keep: Vec<bool> = scene.gaussians.iter().map(|g| g.opacity() >= min_opacity).collect();
    opt.retain(&keep);
    scene.prune_transparent(min_opacity);
}

/// Reconstruct a scene from `frames`. With `poses` (one per frame, camera
/// to world) the training poses are taken from it; otherwise the training
/// frames are tracked first.
pub fn reconstruct(
    frames: &[(Image, DepthMap)],
    k: &CameraIntrinsics,
    poses: Option<&[PoseSE3]>,
    cfg: &ReconstructConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyInput("frames"));
    }
    if let Some(p) = poses {
        if p.len() != frames.len() {
            return Err(Error::dims(frames.len(), p.len()));
        }
    }
    let (train, test) = split_frames(frames.len(), cfg.test_every);
    if train.is_empty() {
        return Err(Error::invalid("no training frames left after the hold-out split"));
    }
    let ocfg = &cfg.optimizer;

    let (train_poses, tracking) = match poses {
        Some(p) => (train.iter().map(|&i| p[i]).collect::<Vec<_>>(), None),
        None if train.len() == 1 => (vec![PoseSE3::identity()], None),
        None => {
            let subset: Vec<(Image, DepthMap)> = train.iter().map(|&i| frames[i].clone()).collect();
            let t = track_sequence(&subset, k, ocfg)?;
            (t.poses.clone(), Some(t))
        }
    };

    let (img0, depth0) = &frames[train[0]];
    let mut scene = fit_frame_gaussians(img0, depth0, ocfg)?
        .scene
        .transformed(&train_poses[0]);
    let sky_of = |d: &DepthMap| ocfg.use_sky_mask.then(|| compute_sky_mask(d, ocfg.sky_epsilon));
    let densify = if cfg.voxel_densify {
        let reference = lift_depth(depth0, &PoseSE3::identity(), 1, None, sky_of(depth0).as_ref())?;
        let diag = reference.bounding_diagonal();
        if !(diag > 0.0) {
            return Err(Error::invalid("first frame has no usable depth extent"));
        }
        Some(DensifyConfig {
            voxel_size: diag * cfg.voxel_fraction,
            density_ratio_threshold: cfg.density_ratio_threshold,
            max_points_per_voxel: cfg.max_points_per_voxel,
        })
    } else {
        None
    };

    let mut opt = SceneOptimizer::new(scene.len(), ocfg, true);
    let mut growth = vec![0];
    for j in 1..train.len() {
        let (img, depth) = &frames[train[j]];
        let before = scene.len();
        if let Some(dcfg) = &densify {
            let cloud = lift_depth(depth, &train_poses[j], cfg.densify_stride, Some(img), sky_of(depth).as_ref())?;
            scene = grow_scene(&scene, &cloud, dcfg)?;
            opt.resize(scene.len());
        }
        growth.push(scene.len() - before);
        let lo = cfg.window_frames.map_or(0, |w| (j + 1).saturating_sub(w));
        let window: Vec<(&Image, PoseSE3)> = (lo..=j).rev().map(|w| (&frames[train[w]].0, train_poses[w])).collect();
        optimize_round_robin(&mut scene, &mut opt, &window, cfg.window_iterations, k, ocfg.ssim_lambda)?;
        prune(&mut scene, &mut opt, cfg.prune_opacity);
    }
    let all: Vec<(&Image, PoseSE3)> = train.iter().zip(&train_poses).map(|(&i, p)| (&frames[i].0, *p)).collect();
    optimize_round_robin(&mut scene, &mut opt, &all, cfg.final_iterations, k, ocfg.ssim_lambda)?;
    prune(&mut scene, &mut opt, cfg.prune_opacity);

    let mut held_out = Vec::with_capacity(test.len());
    for &i in &test {
        let image = &frames[i].0;
        let wrap = |e: Error| Error::Frame {
            index: i,
            source: Box::new(e),
        };
        let mut est = None::<crate::pose_opt::PoseEstimate>;
        for init in test_pose_candidates(&train, &train_poses, i) {
            let e = fit_test_pose(&scene, image, k, &init, ocfg).map_err(wrap)?;
            if est.as_ref().map_or(true, |b| e.loss < b.loss) {
                est = Some(e);
            }
        }
        let est = est.expect("at least one candidate");
        let out = render(&scene, &est.pose.inverse(), k);
        held_out.push(HeldOutView {
            index: i,
            pose: est.pose,
            psnr: psnr(&out.color, image)?,
            ssim: ssim(&out.color, image)?,
            render: out.color,
        });
    }
    Ok(Reconstruction {
        scene,
        train_indices: train,
        train_poses,
        tracking,
        held_out,
        growth,
    })
}

/// Starting poses for registering held-out frame `i`: the nearest training
/// pose, then the constant-velocity guess from the training frames around
/// (or, at the ends, next to) `i`.
fn test_pose_candidates(train: &[usize], poses: &[PoseSE3], i: usize) -> Vec<PoseSE3> {
    let nearest = train
        .iter()
        .enumerate()
        .min_by_key(|(_, &t)| (t.abs_diff(i), t))
        .map(|(slot, _)| slot)
        .expect("training frames exist");
    let mut out = vec![poses[nearest]];
    if train.len() < 2 {
        return out;
    }
    // Two training slots to interpolate between or extrapolate from.
    let after = train.partition_point(|&t| t < i);
    let (a, b) = match after {
        0 => (0, 1),
        n if n == train.len() => (n - 2, n - 1),
        n => (n - 1, n),
    };
    let rel = poses[a].inverse() * poses[b];
    let s = (i as f64 - train[a] as f64) / (train[b] as f64 - train[a] as f64);
    if let Ok(tw) = log_map(&rel) {
        if let Ok(step) = exp_map(&Twist::from_vector(&(tw.to_vector() * s))) {
            out.push(poses[a] * step);
        }
    }
    out
}
