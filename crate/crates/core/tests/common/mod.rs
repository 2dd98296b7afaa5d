//! Finite-difference gradient checks shared by the integration tests.
#![allow(dead_code)]

use gsfree::geometry::{exp_map, CameraIntrinsics, Image, Mask, PoseSE3, Twist};
use gsfree::losses::{dssim_loss, l1_loss, rgb_loss};
use gsfree::splat::{logit, render, render_backward, Gaussian, GaussianScene};
use nalgebra::{Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;

/// Outcome of one gradient-check instance.
#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub entries: usize,
    /// Entries whose finite difference straddled a visibility change at
    /// every step size tried.
    pub skipped: usize,
    pub worst_excess: f64,
}

pub fn within_tol(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= (REL_TOL * numeric.abs()).max(ABS_TOL)
}

pub fn k16() -> CameraIntrinsics {
    CameraIntrinsics::new(16.0, 16.0, 7.5, 7.5, 16, 16).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::from_vec(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

/// Up to five Gaussians in front of the camera with distinct depths and
/// opacities well away from the clamp.
pub fn random_scene(rng: &mut ChaCha8Rng) -> GaussianScene {
    let n = rng.random_range(1..=5);
    let gaussians = (0..n)
        .map(|i| {
            let z = 2.0 + 0.4 * i as f64 + rng.random_range(0.0..0.3);
            let q = Vector4::new(
                rng.random_range(0.5..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            Gaussian {
                mean: Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), z),
                log_scale: Vector3::new(
                    rng.random_range(-2.2..-1.0),
                    rng.random_range(-2.2..-1.0),
                    rng.random_range(-2.2..-1.0),
                ),
                rotation: q / q.norm(),
                opacity_logit: logit(rng.random_range(0.2..0.8)),
                color: Vector3::new(rng.random(), rng.random(), rng.random()),
            }
        })
        .collect();
    GaussianScene::new(gaussians)
}

pub fn random_view(rng: &mut ChaCha8Rng) -> PoseSE3 {
    let mut t = Vector6::zeros();
    for i in 0..3 {
        t[i] = rng.random_range(-0.05..0.05);
        t[i + 3] = rng.random_range(-0.1..0.1);
    }
    exp_map(&Twist::from_vector(&t)).unwrap()
}

fn weighted_sum(img: &Image, w: &Image) -> f64 {
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

/// Central difference of `f` with the step shrunk while `same_support`
/// reports a discontinuity between the two probes.
fn central_difference(
    mut probe: impl FnMut(f64) -> (f64, Vec<u32>),
) -> Option<f64> {
    for h in [1e-4, 1e-6, 1e-7] {
        let (fp, sp) = probe(h);
        let (fm, sm) = probe(-h);
        if sp == sm {
            return Some((fp - fm) / (2.0 * h));
        }
    }
    None
}

fn record(stats: &mut CheckStats, label: &str, analytic: f64, numeric: Option<f64>) -> Result<(), String> {
    stats.entries += 1;
    let Some(numeric) = numeric else {
        stats.skipped += 1;
        return Ok(());
    };
    let excess = (analytic - numeric).abs() / (REL_TOL * numeric.abs()).max(ABS_TOL);
    stats.worst_excess = stats.worst_excess.max(excess);
    if within_tol(analytic, numeric) {
        Ok(())
    } else {
        Err(format!("{label}: analytic {analytic:e} vs numeric {numeric:e}"))
    }
}

/// Every Gaussian field and the view twist against central differences of
/// a random linear functional of the rendered image.
pub fn check_splat_gradients(seed: u64) -> Result<CheckStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = k16();
    let scene = random_scene(&mut rng);
    let view = random_view(&mut rng);
    let mut weights = random_image(&mut rng, 16, 16);
    weights.data.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
    let grads = render_backward(&scene, &view, &k, &weights, None).map_err(|e| e.to_string())?;

    let eval = |s: &GaussianScene, v: &PoseSE3| {
        let out = render(s, v, &k);
        (weighted_sum(&out.color, &weights), out.touched)
    };
    let mut stats = CheckStats::default();
    for gi in 0..scene.len() {
        let perturb = |field: usize, h: f64| {
            let mut s = scene.clone();
            let g = &mut s.gaussians[gi];
            match field {
                0..=2 => g.mean[field] += h,
                3..=5 => g.log_scale[field - 3] += h,
                6..=9 => g.rotation[field - 6] += h,
                10 => g.opacity_logit += h,
                _ => g.color[field - 11] += h,
            }
            eval(&s, &view)
        };
        for field in 0..14 {
            let analytic = match field {
                0..=2 => grads.means[gi][field],
                3..=5 => grads.log_scales[gi][field - 3],
                6..=9 => grads.rotations[gi][field - 6],
                10 => grads.opacity_logits[gi],
                _ => grads.colors[gi][field - 11],
            };
            let numeric = central_difference(|h| perturb(field, h));
            record(&mut stats, &format!("seed {seed} gaussian {gi} field {field}"), analytic, numeric)?;
        }
    }
    for i in 0..6 {
        let numeric = central_difference(|h| {
            let mut d = Vector6::zeros();
            d[i] = h;
            eval(&scene, &(exp_map(&Twist::from_vector(&d)).unwrap() * view))
        });
        record(&mut stats, &format!("seed {seed} view twist {i}"), grads.view[i], numeric)?;
    }
    Ok(stats)
}

pub fn check_l1_gradient(seed: u64) -> Result<CheckStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_image(&mut rng, 12, 10);
    let b = random_image(&mut rng, 12, 10);
    let mut mask = Mask::new(12, 10, false);
    mask.data.iter_mut().for_each(|m| *m = rng.random_bool(0.3));
    mask.data[0] = false;
    let grad = l1_loss(&a, &b, Some(&mask)).map_err(|e| e.to_string())?.gradient;
    let mut stats = CheckStats::default();
    for i in 0..a.data.len() {
        let numeric = central_difference(|h| {
            let mut p = a.clone();
            p.data[i] += h;
            (l1_loss(&p, &b, Some(&mask)).unwrap().value, Vec::new())
        });
        record(&mut stats, &format!("seed {seed} l1 entry {i}"), grad.data[i], numeric)?;
    }
    Ok(stats)
}

pub fn check_dssim_gradient(seed: u64) -> Result<CheckStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_image(&mut rng, 16, 16);
    let b = random_image(&mut rng, 16, 16);
    let grad = dssim_loss(&a, &b).map_err(|e| e.to_string())?.gradient;
    let mut stats = CheckStats::default();
    for i in 0..a.data.len() {
        let numeric = central_difference(|h| {
            let mut p = a.clone();
            p.data[i] += h;
            (dssim_loss(&p, &b).unwrap().value, Vec::new())
        });
        record(&mut stats, &format!("seed {seed} dssim entry {i}"), grad.data[i], numeric)?;
    }
    Ok(stats)
}

/// Camera twist gradient of the full photometric objective (render then
/// D-SSIM-weighted loss) against a random target.
pub fn check_twist_gradient(seed: u64) -> Result<CheckStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = k16();
    let scene = random_scene(&mut rng);
    let view = random_view(&mut rng);
    let target = random_image(&mut rng, 16, 16);
    let loss = |v: &PoseSE3| {
        let out = render(&scene, v, &k);
        (rgb_loss(&out.color, &target, 1.0, None).unwrap(), out.touched)
    };
    let (l, _) = loss(&view);
    let grads = render_backward(&scene, &view, &k, &l.gradient, None).map_err(|e| e.to_string())?;
    let mut stats = CheckStats::default();
    for i in 0..6 {
        let numeric = central_difference(|h| {
            let mut d = Vector6::zeros();
            d[i] = h;
            let (l, touched) = loss(&(exp_map(&Twist::from_vector(&d)).unwrap() * view));
            (l.value, touched)
        });
        record(&mut stats, &format!("seed {seed} twist {i}"), grads.view[i], numeric)?;
    }
    Ok(stats)
}

pub mod densify_oracle;
pub mod gicp_cases;
pub mod metric_oracles;
pub mod pose_cases;
