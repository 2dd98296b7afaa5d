//! Trajectory and image quality metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{rotation_angle, Image, PoseSE3};
use crate::losses;

/// Closed-form similarity alignment of the camera centers of `est` onto
/// `gt`. Returns `(scale, transform)` such that
/// `scale * R * c_est + t ~ c_gt`.
pub fn align_trajectories(est: &[PoseSE3], gt: &[PoseSE3]) -> Result<(f64, PoseSE3)> {
    if est.len() != gt.len() {
        return Err(Error::dims(gt.len(), est.len()));
    }
    if est.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: est.len(),
        });
    }
    umeyama(est, gt)
}

fn umeyama(est: &[PoseSE3], gt: &[PoseSE3]) -> Result<(f64, PoseSE3)> {
    let n = est.len() as f64;
    let mu_x = est.iter().map(|p| p.translation).sum::<Vector3<f64>>() / n;
    let mu_y = gt.iter().map(|p| p.translation).sum::<Vector3<f64>>() / n;
    let mut var_x = 0.0;
    let mut cov = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        let dx = e.translation - mu_x;
        var_x += dx.norm_squared();
        cov += (g.translation - mu_y) * dx.transpose();
    }
    var_x /= n;
    cov /= n;
    if !(var_x > 0.0) {
        return Err(Error::invalid("estimated camera centers are all identical"));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x;
    let translation = mu_y - scale * rotation * mu_x;
    Ok((scale, PoseSE3::new(rotation, translation)))
}

/// Root-mean-square camera-center error after similarity alignment.
pub fn ate(est: &[PoseSE3], gt: &[PoseSE3]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::dims(gt.len(), est.len()));
    }
    if est.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: est.len(),
        });
    }
    let (s, t) = umeyama(est, gt)?;
    let sum: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| (s * (t.rotation * e.translation) + t.translation - g.translation).norm_squared())
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// Relative pose error over frame step `delta` as `(translation RMSE,
/// rotation RMSE in degrees)`. Estimated translations are first rescaled by
/// the alignment scale (left at 1 for fewer than three poses).
pub fn rpe(est: &[PoseSE3], gt: &[PoseSE3], delta: usize) -> Result<(f64, f64)> {
    if est.len() != gt.len() {
        return Err(Error::dims(gt.len(), est.len()));
    }
    if delta == 0 {
        return Err(Error::invalid("rpe step must be at least 1"));
    }
    if est.len() < delta + 1 {
        return Err(Error::InsufficientPoints {
            needed: delta + 1,
            got: est.len(),
        });
    }
    let scale = if est.len() >= 3 { umeyama(est, gt)?.0 } else { 1.0 };
    let scaled: Vec<PoseSE3> = est
        .iter()
        .map(|p| PoseSE3::new(p.rotation, p.translation * scale))
        .collect();
    let pairs = est.len() - delta;
    let (mut st, mut sr) = (0.0, 0.0);
    for i in 0..pairs {
        let rel_gt = gt[i].inverse() * gt[i + delta];
        let rel_est = scaled[i].inverse() * scaled[i + delta];
        let e = rel_gt.inverse() * rel_est;
        st += e.translation.norm_squared();
        sr += rotation_angle(&e.rotation).to_degrees().powi(2);
    }
    Ok(((st / pairs as f64).sqrt(), (sr / pairs as f64).sqrt()))
}

/// Peak signal-to-noise ratio for unit-range images; `+inf` when equal.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Mean SSIM, computed as `1 - dssim_loss(a, b)`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(1.0 - (1.0 - losses::ssim_index(a, b)?))
}
