//! Per-frame Gaussian fitting and photometric camera pose refinement.
//!
//! Tracking works pair by pair: frame `t` is lifted at the identity pose and
//! overfitted with Gaussians whose centers stay on the lifted depth, the
//! relative pose of frame `t + 1` is initialized by G-ICP between the two
//! lifted clouds and refined by minimizing a sky-masked L1 loss through the
//! renderer. Relative poses are then chained.

use std::fmt;

use nalgebra::{Vector3, Vector4, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{
    chain_poses, compute_sky_mask, exp_map_unchecked, lift_depth, log_map, CameraIntrinsics,
    DepthMap, Image, Mask, PoseSE3, Twist, DEFAULT_SKY_EPSILON,
};
use crate::gicp::{register, GicpConfig};
use crate::losses::{l1_loss, rgb_loss};
use crate::optim::Adam;
use crate::splat::{logit, render, Gaussian, GaussianScene, Rasterizer, SceneGradients};

/// Step sizes per parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub means: f64,
    pub log_scales: f64,
    pub rotations: f64,
    pub opacities: f64,
    pub colors: f64,
    pub twist_rotation: f64,
    pub twist_translation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 5e-4,
            log_scales: 5e-3,
            rotations: 1e-3,
            opacities: 5e-2,
            colors: 2.5e-2,
            twist_rotation: 1e-3,
            twist_translation: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr: LearningRates,
    pub fit_iterations: usize,
    pub refine_iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of the refine iterations after which the translation step
    /// is multiplied by `translation_decay`.
    pub translation_decay_at: f64,
    pub translation_decay: f64,
    /// Stop early once the best loss has not improved by a relative
    /// `convergence_tolerance` for this many iterations; 0 disables.
    pub convergence_window: usize,
    pub convergence_tolerance: f64,
    /// Pixel stride when lifting a frame into Gaussians.
    pub lift_stride: usize,
    /// Pixel stride when lifting frames for G-ICP.
    pub gicp_stride: usize,
    /// Initial Gaussian scale as a multiple of the lifted pixel footprint.
    pub init_scale_factor: f64,
    /// D-SSIM weight in the single-frame fit and test-view fitting.
    pub ssim_lambda: f64,
    /// Pixels whose rendered opacity falls below this are left out of pose
    /// losses; 0 disables.
    pub min_coverage: f64,
    pub use_gicp: bool,
    pub use_sky_mask: bool,
    pub sky_epsilon: f64,
    pub gicp: GicpConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: LearningRates::default(),
            fit_iterations: 300,
            refine_iterations: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            translation_decay_at: 0.7,
            translation_decay: 0.1,
            convergence_window: 0,
            convergence_tolerance: 1e-4,
            lift_stride: 2,
            gicp_stride: 1,
            init_scale_factor: 0.7,
            ssim_lambda: 0.2,
            min_coverage: 0.95,
            use_gicp: true,
            use_sky_mask: true,
            sky_epsilon: DEFAULT_SKY_EPSILON,
            gicp: GicpConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        let rates = [
            lr.means,
            lr.log_scales,
            lr.rotations,
            lr.opacities,
            lr.colors,
            lr.twist_rotation,
            lr.twist_translation,
        ];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("moment decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.lift_stride == 0 || self.gicp_stride == 0 {
            return Err(Error::invalid("strides must be at least 1"));
        }
        if !(self.init_scale_factor > 0.0) {
            return Err(Error::invalid("init scale factor must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ssim_lambda) {
            return Err(Error::invalid("ssim lambda must lie in [0, 1]"));
        }
        self.gicp.validate()
    }
}

/// Consecutive frames for relative pose estimation.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub image_t: Image,
    pub image_t1: Image,
    pub depth_t: DepthMap,
    pub intrinsics: CameraIntrinsics,
}

impl FramePair {
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        k.validate()?;
        for img in [&self.image_t, &self.image_t1] {
            if img.width != k.width || img.height != k.height {
                return Err(Error::dims(
                    format!("{}x{}", k.width, k.height),
                    format!("{}x{}", img.width, img.height),
                ));
            }
        }
        if self.depth_t.intrinsics != *k {
            return Err(Error::invalid("depth intrinsics differ from the pair's"));
        }
        Ok(())
    }
}

const PARAMS_PER_GAUSSIAN: usize = 14;

/// Adam over every Gaussian field, laid out per Gaussian as
/// `mean(3) log_scale(3) rotation(4) opacity(1) color(3)`.
pub struct SceneOptimizer {
    adam: Adam,
    rates: [f64; PARAMS_PER_GAUSSIAN],
}

impl SceneOptimizer {
    /// Means are only updated when `train_means` is set.
    pub fn new(n: usize, cfg: &OptimizerConfig, train_means: bool) -> Self {
        let lr = &cfg.lr;
        let m = if train_means { lr.means } else { 0.0 };
        let mut rates = [0.0; PARAMS_PER_GAUSSIAN];
        rates[0..3].fill(m);
        rates[3..6].fill(lr.log_scales);
        rates[6..10].fill(lr.rotations);
        rates[10] = lr.opacities;
        rates[11..14].fill(lr.colors);
        Self {
            adam: Adam::new(n * PARAMS_PER_GAUSSIAN, cfg.beta1, cfg.beta2, cfg.epsilon),
            rates,
        }
    }

    /// Track appended Gaussians with fresh moments.
    pub fn resize(&mut self, n: usize) {
        self.adam.resize(n * PARAMS_PER_GAUSSIAN);
    }

    /// Drop the state of Gaussians whose flag is false.
    pub fn retain(&mut self, keep: &[bool]) {
        let flags: Vec<bool> = keep
            .iter()
            .flat_map(|&k| std::iter::repeat_n(k, PARAMS_PER_GAUSSIAN))
            .collect();
        self.adam.retain(&flags);
    }

    pub fn step(&mut self, scene: &mut GaussianScene, grads: &SceneGradients) {
        self.adam.tick();
        let mut g = [0.0; PARAMS_PER_GAUSSIAN];
        let mut d = [0.0; PARAMS_PER_GAUSSIAN];
        for (i, gs) in scene.gaussians.iter_mut().enumerate() {
            g[0..3].copy_from_slice(grads.means[i].as_slice());
            g[3..6].copy_from_slice(grads.log_scales[i].as_slice());
            g[6..10].copy_from_slice(grads.rotations[i].as_slice());
            g[10] = grads.opacity_logits[i];
            g[11..14].copy_from_slice(grads.colors[i].as_slice());
            self.adam.update(i * PARAMS_PER_GAUSSIAN, &g, &self.rates, &mut d);
            gs.mean += Vector3::from_column_slice(&d[0..3]);
            gs.log_scale += Vector3::from_column_slice(&d[3..6]);
            gs.rotation += Vector4::from_column_slice(&d[6..10]);
            gs.normalize_rotation();
            gs.opacity_logit += d[10];
            gs.color += Vector3::from_column_slice(&d[11..14]);
            gs.color = gs.color.map(|c| c.clamp(0.0, 1.0));
        }
    }
}

/// Single-frame fit and its loss curve.
#[derive(Debug, Clone)]
pub struct FrameFit {
    pub scene: GaussianScene,
    /// Loss before each iteration, then the final loss.
    pub losses: Vec<f64>,
}

impl FrameFit {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss is recorded")
    }
}

/// Gaussians seeded from every `stride`-th pixel of a lifted depth map.
pub fn initial_gaussians(
    image: &Image,
    depth: &DepthMap,
    pose: &PoseSE3,
    exclude: Option<&Mask>,
    cfg: &OptimizerConfig,
) -> Result<GaussianScene> {
    let cloud = lift_depth(depth, pose, cfg.lift_stride, Some(image), exclude)?;
    let k = &depth.intrinsics;
    let footprint = cfg.lift_stride as f64 / k.fx.min(k.fy) * cfg.init_scale_factor;
    let colors = cloud.colors.as_ref().expect("lifted with an image");
    let pixels = cloud.source_pixels.as_ref().expect("lifting records pixels");
    let gaussians = cloud
        .points
        .iter()
        .zip(colors)
        .zip(pixels)
        .map(|((p, c), px)| {
            let z = depth.get(px[0] as usize, px[1] as usize);
            Gaussian {
                mean: *p,
                log_scale: Vector3::repeat((footprint * z).ln()),
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                opacity_logit: logit(0.5),
                color: *c,
            }
        })
        .collect();
    Ok(GaussianScene::new(gaussians))
}

/// Overfit Gaussians to one frame seen from the identity pose. Centers stay
/// on the lifted depth; rotation, scale, opacity and color are optimized
/// under the L1 + D-SSIM loss.
pub fn fit_frame_gaussians(image: &Image, depth: &DepthMap, cfg: &OptimizerConfig) -> Result<FrameFit> {
    cfg.validate()?;
    let k = depth.intrinsics;
    if image.width != k.width || image.height != k.height {
        return Err(Error::dims(
            format!("{}x{}", k.width, k.height),
            format!("{}x{}", image.width, image.height),
        ));
    }
    let mut scene = initial_gaussians(image, depth, &PoseSE3::identity(), None, cfg)?;
    let identity = PoseSE3::identity();
    let mut opt = SceneOptimizer::new(scene.len(), cfg, false);
    let mut losses = Vec::with_capacity(cfg.fit_iterations + 1);
    for _ in 0..cfg.fit_iterations {
        let r = Rasterizer::new(&scene, &identity, &k);
        let out = r.forward();
        let loss = rgb_loss(&out.color, image, cfg.ssim_lambda, None)?;
        losses.push(loss.value);
        let grads = r.backward(&loss.gradient, None)?;
        opt.step(&mut scene, &grads);
    }
    let out = render(&scene, &identity, &k);
    losses.push(rgb_loss(&out.color, image, cfg.ssim_lambda, None)?.value);
    Ok(FrameFit { scene, losses })
}

/// Outcome of a camera pose refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    /// Camera-to-world pose (relative to the scene frame).
    pub pose: PoseSE3,
    pub initial_loss: f64,
    pub loss: f64,
    /// Iterations actually run.
    pub iterations: usize,
}

#[derive(Clone, Copy)]
enum PoseObjective<'a> {
    MaskedL1(Option<&'a Mask>),
    Rgb(f64),
}

/// Adam on a left twist of the view transform; returns the best iterate.
fn optimize_view(
    scene: &GaussianScene,
    target: &Image,
    k: &CameraIntrinsics,
    init: &PoseSE3,
    objective: PoseObjective<'_>,
    cfg: &OptimizerConfig,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !init.is_finite() {
        return Err(Error::invalid("initial pose has non-finite entries"));
    }
    let evaluate = |view: &PoseSE3, want_grad: bool| -> Result<(f64, Option<Vector6<f64>>)> {
        let r = Rasterizer::new(scene, view, k);
        let out = r.forward();
        let coverage = (cfg.min_coverage > 0.0).then(|| {
            let mut m = match &objective {
                PoseObjective::MaskedL1(Some(sky)) => (*sky).clone(),
                _ => Mask::new(k.width, k.height, false),
            };
            for (flag, a) in m.data.iter_mut().zip(&out.alpha) {
                *flag |= *a < cfg.min_coverage;
            }
            m
        });
        let mask = match (&coverage, &objective) {
            (Some(m), _) => Some(m),
            (None, PoseObjective::MaskedL1(m)) => *m,
            (None, PoseObjective::Rgb(_)) => None,
        };
        let loss = match objective {
            PoseObjective::MaskedL1(_) => l1_loss(&out.color, target, mask)?,
            PoseObjective::Rgb(lambda) => rgb_loss(&out.color, target, lambda, mask)?,
        };
        let grad = if want_grad {
            Some(r.backward(&loss.gradient, mask)?.view)
        } else {
            None
        };
        Ok((loss.value, grad))
    };

    let mut view = init.inverse();
    let mut adam = Adam::new(6, cfg.beta1, cfg.beta2, cfg.epsilon);
    let decay_at = (cfg.translation_decay_at * cfg.refine_iterations as f64).floor() as usize;
    let (initial_loss, mut grad) = evaluate(&view, cfg.refine_iterations > 0)?;
    let mut best = (initial_loss, view);
    let mut since_improved = 0;
    let mut iterations = 0;
    for it in 0..cfg.refine_iterations {
        let g = grad.take().expect("gradient of the current iterate");
        let t_lr = if it >= decay_at {
            cfg.lr.twist_translation * cfg.translation_decay
        } else {
            cfg.lr.twist_translation
        };
        let rates = [
            cfg.lr.twist_rotation,
            cfg.lr.twist_rotation,
            cfg.lr.twist_rotation,
            t_lr,
            t_lr,
            t_lr,
        ];
        adam.tick();
        let mut delta = [0.0; 6];
        adam.update(0, g.as_slice(), &rates, &mut delta);
        let step = exp_map_unchecked(&Twist::from_vector(&Vector6::from_column_slice(&delta)));
        view = (step * view).orthonormalized();
        iterations += 1;
        let (loss, g) = evaluate(&view, it + 1 < cfg.refine_iterations)?;
        grad = g;
        if loss < best.0 * (1.0 - cfg.convergence_tolerance) {
            since_improved = 0;
        } else {
            since_improved += 1;
        }
        if loss < best.0 {
            best = (loss, view);
        }
        if cfg.convergence_window > 0 && since_improved >= cfg.convergence_window {
            break;
        }
    }
    Ok(PoseEstimate {
        pose: best.1.inverse(),
        initial_loss,
        loss: best.0,
        iterations,
    })
}

/// Refine the pose of frame `t + 1` relative to frame `t` by minimizing the
/// L1 difference between `scene_t` rendered from that pose and the frame.
/// Pixels set in `sky` are excluded from the loss. `init` and the result
/// are camera-to-world poses in frame `t` coordinates.
pub fn estimate_relative_pose(
    scene_t: &GaussianScene,
    pair: &FramePair,
    init: &PoseSE3,
    sky: Option<&Mask>,
    cfg: &OptimizerConfig,
) -> Result<PoseEstimate> {
    pair.validate()?;
    optimize_view(
        scene_t,
        &pair.image_t1,
        &pair.intrinsics,
        init,
        PoseObjective::MaskedL1(sky),
        cfg,
    )
}

/// Camera pose of an unseen image against a frozen scene, starting from
/// `init` (camera to world).
pub fn fit_test_pose(
    scene: &GaussianScene,
    test_image: &Image,
    k: &CameraIntrinsics,
    init: &PoseSE3,
    cfg: &OptimizerConfig,
) -> Result<PoseEstimate> {
    optimize_view(scene, test_image, k, init, PoseObjective::Rgb(cfg.ssim_lambda), cfg)
}

/// Per-pair record of a tracking run.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDiagnostics {
    /// Index of the later frame of the pair.
    pub frame: usize,
    /// Relative pose used to start refinement, as `[omega; v]`.
    pub init_twist: Vector6<f64>,
    pub gicp_converged: Option<bool>,
    pub gicp_iterations: usize,
    pub fit_loss: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub sky_pixels: usize,
}

impl fmt::Display for PairDiagnostics {
    /// A single line of space-separated `key=value` fields.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.init_twist;
        let gicp = match self.gicp_converged {
            Some(true) => "converged",
            Some(false) => "not_converged",
            None => "disabled",
        };
        write!(
            f,
            "frame={} init_twist={:.9},{:.9},{:.9},{:.9},{:.9},{:.9} gicp={} gicp_iterations={} \
             fit_loss={:.9} initial_loss={:.9} final_loss={:.9} iterations={} sky_pixels={}",
            self.frame,
            t[0],
            t[1],
            t[2],
            t[3],
            t[4],
            t[5],
            gicp,
            self.gicp_iterations,
            self.fit_loss,
            self.initial_loss,
            self.final_loss,
            self.iterations,
            self.sky_pixels
        )
    }
}

#[derive(Debug, Clone)]
pub struct Tracking {
    /// Camera-to-world poses, the first one exactly the identity.
    pub poses: Vec<PoseSE3>,
    pub relatives: Vec<PoseSE3>,
    pub diagnostics: Vec<PairDiagnostics>,
}

/// Relative pose of frame `t + 1` in frame `t` coordinates.
pub fn track_pair(
    image_t: &Image,
    depth_t: &DepthMap,
    image_t1: &Image,
    depth_t1: &DepthMap,
    cfg: &OptimizerConfig,
) -> Result<(PoseSE3, PairDiagnostics)> {
    let k = depth_t.intrinsics;
    let sky_t = cfg.use_sky_mask.then(|| compute_sky_mask(depth_t, cfg.sky_epsilon));
    let sky_t1 = cfg.use_sky_mask.then(|| compute_sky_mask(depth_t1, cfg.sky_epsilon));
    let fit = fit_frame_gaussians(image_t, depth_t, cfg)?;

    let (init, gicp_converged, gicp_iterations) = if cfg.use_gicp {
        let id = PoseSE3::identity();
        let target = lift_depth(depth_t, &id, cfg.gicp_stride, None, sky_t.as_ref())?;
        let source = lift_depth(depth_t1, &id, cfg.gicp_stride, None, sky_t1.as_ref())?;
        let reg = register(&source, &target, &cfg.gicp, &id)?;
        (reg.transform, Some(reg.converged), reg.iterations)
    } else {
        (PoseSE3::identity(), None, 0)
    };

    let pair = FramePair {
        image_t: image_t.clone(),
        image_t1: image_t1.clone(),
        depth_t: depth_t.clone(),
        intrinsics: k,
    };
    let est = estimate_relative_pose(&fit.scene, &pair, &init, sky_t1.as_ref(), cfg)?;
    let init_twist = log_map(&init).map(|t| t.to_vector()).unwrap_or_else(|_| Vector6::repeat(f64::NAN));
    let diag = PairDiagnostics {
        frame: 0,
        init_twist,
        gicp_converged,
        gicp_iterations,
        fit_loss: fit.final_loss(),
        initial_loss: est.initial_loss,
        final_loss: est.loss,
        iterations: est.iterations,
        sky_pixels: sky_t1.as_ref().map_or(0, Mask::count),
    };
    Ok((est.pose, diag))
}

/// Track a sequence pair by pair and chain the relative poses.
pub fn track_sequence(
    frames: &[(Image, DepthMap)],
    intrinsics: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<Tracking> {
    track_sequence_with(frames, intrinsics, cfg, |_| {})
}

/// [`track_sequence`] with a callback invoked after every pair.
pub fn track_sequence_with(
    frames: &[(Image, DepthMap)],
    intrinsics: &CameraIntrinsics,
    cfg: &OptimizerConfig,
    mut on_pair: impl FnMut(&PairDiagnostics),
) -> Result<Tracking> {
    cfg.validate()?;
    intrinsics.validate()?;
    if frames.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: frames.len(),
        });
    }
    for (index, (img, depth)) in frames.iter().enumerate() {
        if depth.intrinsics != *intrinsics || img.width != intrinsics.width || img.height != intrinsics.height {
            return Err(Error::Frame {
                index,
                source: Box::new(Error::invalid("frame does not match the intrinsics")),
            });
        }
    }
    let mut relatives = Vec::with_capacity(frames.len() - 1);
    let mut diagnostics = Vec::with_capacity(frames.len() - 1);
    for t in 0..frames.len() - 1 {
        let (img_t, d_t) = &frames[t];
        let (img_t1, d_t1) = &frames[t + 1];
        let (rel, mut diag) = track_pair(img_t, d_t, img_t1, d_t1, cfg).map_err(|e| Error::Frame {
            index: t + 1,
            source: Box::new(e),
        })?;
        diag.frame = t + 1;
        on_pair(&diag);
        relatives.push(rel);
        diagnostics.push(diag);
    }
    Ok(Tracking {
        poses: chain_poses(&relatives),
        relatives,
        diagnostics,
    })
}
