use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use super::{quat_to_matrix, Gaussian};
use crate::geometry::{CameraIntrinsics, PoseSE3};

/// Gaussians whose center is closer than this along the view axis are culled.
pub const NEAR_PLANE: f64 = 0.2;
/// Added to the diagonal of every projected covariance (pixels squared).
pub const COV2D_DILATION: f64 = 0.3;

/// A Gaussian in screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Intermediate values of the projection that the backward pass reuses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionState {
    pub cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub sigma_cam: Matrix3<f64>,
    pub gauss_rot: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub quat_norm: f64,
    pub proj: Projection,
}

/// Project through the world-to-camera transform `view`; `None` when the
/// center is behind the near plane.
pub fn project_gaussian(g: &Gaussian, view: &PoseSE3, k: &CameraIntrinsics) -> Option<Projection> {
    project_state(g, view, k).map(|s| s.proj)
}

/// How far past the image border (as a fraction of its size) the
/// linearization point may move before it is clamped.
pub const JACOBIAN_MARGIN: f64 = 0.15;

/// Direction tangents `x/z`, `y/z` used for the projection Jacobian,
/// clamped to the image grown by [`JACOBIAN_MARGIN`] on every side. Points
/// far outside the view otherwise blow up into huge screen footprints. The
/// flags tell whether each tangent was clamped.
fn jacobian_tangents(cam: &Vector3<f64>, k: &CameraIntrinsics) -> ([f64; 2], [bool; 2]) {
    let clamp = |t: f64, f: f64, c: f64, size: usize| {
        let m = JACOBIAN_MARGIN * size as f64;
        let (lo, hi) = ((-0.5 - m - c) / f, (size as f64 - 0.5 + m - c) / f);
        (t.clamp(lo, hi), !(lo..=hi).contains(&t))
    };
    let (tx, cx) = clamp(cam.x / cam.z, k.fx, k.cx, k.width);
    let (ty, cy) = clamp(cam.y / cam.z, k.fy, k.cy, k.height);
    ([tx, ty], [cx, cy])
}

pub(crate) fn projection_jacobian(cam: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / cam.z;
    let ([tx, ty], _) = jacobian_tangents(cam, k);
    Matrix2x3::new(k.fx * iz, 0.0, -k.fx * tx * iz, 0.0, k.fy * iz, -k.fy * ty * iz)
}

pub(crate) fn project_state(
    g: &Gaussian,
    view: &PoseSE3,
    k: &CameraIntrinsics,
) -> Option<ProjectionState> {
    let cam = view.transform_point(&g.mean);
    if !(cam.z > NEAR_PLANE) {
        return None;
    }
    let quat_norm = g.rotation.norm();
    let gauss_rot = quat_to_matrix(&(g.rotation / quat_norm));
    let scale = g.log_scale.map(f64::exp);
    let m = gauss_rot * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    let sigma_cam = view.rotation * sigma * view.rotation.transpose();
    let jacobian = projection_jacobian(&cam, k);
    let mut cov2d = jacobian * sigma_cam * jacobian.transpose();
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;
    let proj = Projection {
        mean2d: k.project(&cam),
        cov2d,
        depth: cam.z,
    };
    Some(ProjectionState {
        cam,
        jacobian,
        sigma_cam,
        gauss_rot,
        scale,
        quat_norm,
        proj,
    })
}

/// Gradients flowing out of one projection.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionGrad {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
    /// With respect to the left-perturbation twist `[omega; v]` of the view.
    pub view_omega: Vector3<f64>,
    pub view_v: Vector3<f64>,
}

/// Backpropagate `d_mean2d` and the (symmetric) `d_cov2d` through the
/// projection.
pub(crate) fn project_backward(
    g: &Gaussian,
    view: &PoseSE3,
    k: &CameraIntrinsics,
    s: &ProjectionState,
    d_mean2d: &Vector2<f64>,
    d_cov2d: &Matrix2<f64>,
) -> ProjectionGrad {
    let cam = &s.cam;
    let iz = 1.0 / cam.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;

    // Pinhole mean.
    let mut d_cam = Vector3::new(
        d_mean2d.x * k.fx * iz,
        d_mean2d.y * k.fy * iz,
        -d_mean2d.x * k.fx * cam.x * iz2 - d_mean2d.y * k.fy * cam.y * iz2,
    );

    // cov2d = J Sigma_cam J^T (+ dilation).
    let d_sigma_cam = s.jacobian.transpose() * d_cov2d * s.jacobian;
    let d_j = 2.0 * d_cov2d * s.jacobian * s.sigma_cam;
    d_cam.z += d_j[(0, 0)] * (-k.fx * iz2) + d_j[(1, 1)] * (-k.fy * iz2);
    // J[.,2] = -f * t / z, with t = x/z unless clamped to a constant.
    let (tangents, clamped) = jacobian_tangents(cam, k);
    for (axis, f) in [(0, k.fx), (1, k.fy)] {
        let g = d_j[(axis, 2)];
        if clamped[axis] {
            d_cam.z += g * f * tangents[axis] * iz2;
        } else {
            d_cam[axis] += g * (-f * iz2);
            d_cam.z += g * (2.0 * f * cam[axis] * iz3);
        }
    }

    let mean = view.rotation.transpose() * d_cam;

    // Sigma = M M^T with M = R_q diag(scale).
    let d_sigma = view.rotation.transpose() * d_sigma_cam * view.rotation;
    let m = s.gauss_rot * Matrix3::from_diagonal(&s.scale);
    let d_m = 2.0 * d_sigma * m;
    let rt_dm = s.gauss_rot.transpose() * d_m;
    let log_scale = Vector3::new(
        rt_dm[(0, 0)] * s.scale.x,
        rt_dm[(1, 1)] * s.scale.y,
        rt_dm[(2, 2)] * s.scale.z,
    );
    let d_rot = d_m * Matrix3::from_diagonal(&s.scale);
    let qn = g.rotation / s.quat_norm;
    let d_qn = quat_matrix_backward(&qn, &d_rot);
    let rotation = (d_qn - qn * qn.dot(&d_qn)) / s.quat_norm;

    // Left perturbation of the view: cam -> cam + omega x cam + v and
    // Sigma_cam -> Sigma_cam + [omega]x Sigma_cam + Sigma_cam [omega]x^T.
    let a = s.sigma_cam * d_sigma_cam;
    let view_omega = cam.cross(&d_cam)
        + 2.0
            * Vector3::new(
                a[(1, 2)] - a[(2, 1)],
                a[(2, 0)] - a[(0, 2)],
                a[(0, 1)] - a[(1, 0)],
            );

    ProjectionGrad {
        mean,
        log_scale,
        rotation,
        view_omega,
        view_v: d_cam,
    }
}

/// Gradient of `quat_to_matrix` with respect to the quaternion components.
fn quat_matrix_backward(q: &Vector4<f64>, d: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let gw = 2.0
        * (-z * d[(0, 1)] + y * d[(0, 2)] + z * d[(1, 0)] - x * d[(1, 2)] - y * d[(2, 0)]
            + x * d[(2, 1)]);
    let gx = 2.0
        * (y * d[(0, 1)] + z * d[(0, 2)] + y * d[(1, 0)] - w * d[(1, 2)] + z * d[(2, 0)]
            + w * d[(2, 1)])
        - 4.0 * x * (d[(1, 1)] + d[(2, 2)]);
    let gy = 2.0
        * (x * d[(0, 1)] + w * d[(0, 2)] + x * d[(1, 0)] + z * d[(1, 2)] - w * d[(2, 0)]
            + z * d[(2, 1)])
        - 4.0 * y * (d[(0, 0)] + d[(2, 2)]);
    let gz = 2.0
        * (-w * d[(0, 1)] + x * d[(0, 2)] + w * d[(1, 0)] + y * d[(1, 2)] + x * d[(2, 0)]
            + y * d[(2, 1)])
        - 4.0 * z * (d[(0, 0)] + d[(1, 1)]);
    Vector4::new(gw, gx, gy, gz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_map, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k64() -> CameraIntrinsics {
        CameraIntrinsics::new(50.0, 45.0, 31.5, 30.0, 64, 64).unwrap()
    }

    fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian {
        let mut g = Gaussian::isotropic(
            Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(2.0..4.0),
            ),
            0.1,
            0.5,
            Vector3::new(0.2, 0.5, 0.7),
        );
        g.log_scale = Vector3::new(
            rng.random_range(-2.5..-1.0),
            rng.random_range(-2.5..-1.0),
            rng.random_range(-2.5..-1.0),
        );
        g.rotation = Vector4::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        g.normalize_rotation();
        g
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.1, 0.5, Vector3::zeros());
        let p = project_gaussian(&g, &PoseSE3::identity(), &k64()).unwrap();
        assert_eq!(p.mean2d, Vector2::new(31.5, 30.0));
        assert_eq!(p.depth, 3.0);
    }

    #[test]
    fn isotropic_similar_triangles() {
        let k = CameraIntrinsics::new(40.0, 40.0, 31.5, 31.5, 64, 64).unwrap();
        let (s, z) = (0.01, 5.0);
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, z), s, 0.5, Vector3::zeros());
        let p = project_gaussian(&g, &PoseSE3::identity(), &k).unwrap();
        let expect = (40.0 * s / z).powi(2) + COV2D_DILATION;
        assert!((p.cov2d[(0, 0)] - expect).abs() / expect < 0.01);
        assert!((p.cov2d[(1, 1)] - expect).abs() / expect < 0.01);
        assert!(p.cov2d[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn behind_near_plane_is_culled() {
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 0.15), 0.1, 0.5, Vector3::zeros());
        assert!(project_gaussian(&g, &PoseSE3::identity(), &k64()).is_none());
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, -1.0), 0.1, 0.5, Vector3::zeros());
        assert!(project_gaussian(&g, &PoseSE3::identity(), &k64()).is_none());
    }

    #[test]
    fn covariance_matches_numeric_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = k64();
        for _ in 0..20 {
            let g = random_gaussian(&mut rng);
            let view = exp_map(&Twist::new(
                Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
                Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
            ))
            .unwrap();
            let cam = view.transform_point(&g.mean);
            let h = 1e-6;
            let mut j = Matrix2x3::zeros();
            for a in 0..3 {
                let mut e = Vector3::zeros();
                e[a] = h;
                let d = (k.project(&(cam + e)) - k.project(&(cam - e))) / (2.0 * h);
                j[(0, a)] = d.x;
                j[(1, a)] = d.y;
            }
            let sigma_cam = view.rotation * g.covariance() * view.rotation.transpose();
            let expect = j * sigma_cam * j.transpose() + Matrix2::identity() * COV2D_DILATION;
            let got = project_gaussian(&g, &view, &k).unwrap().cov2d;
            let rel = (got - expect).abs().max() / expect.abs().max();
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn off_screen_footprint_is_bounded() {
        // Far off to the side and close: the clamped linearization keeps
        // the footprint comparable to one at the border.
        let k = k64();
        let mut g = Gaussian::isotropic(Vector3::new(3.0, 0.0, 0.5), 0.05, 0.5, Vector3::zeros());
        let far = project_gaussian(&g, &PoseSE3::identity(), &k).unwrap().cov2d;
        g.mean.x = 0.5 * (63.5 + 0.15 * 64.0 - 31.5) / 50.0;
        let edge = project_gaussian(&g, &PoseSE3::identity(), &k).unwrap().cov2d;
        assert!((far - edge).abs().max() < 1e-9 * edge.abs().max());
    }

    #[test]
    fn clamped_backward_matches_finite_differences() {
        let k = k64();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in [2.0, -2.5] {
            let mut g = random_gaussian(&mut rng);
            g.mean = Vector3::new(x, 1.8, 1.2);
            let view = PoseSE3::identity();
            let s = project_state(&g, &view, &k).unwrap();
            let w = Matrix2::new(0.3, -0.2, -0.2, 0.7);
            let grad = project_backward(&g, &view, &k, &s, &Vector2::zeros(), &w);
            let f = |m: Vector3<f64>| {
                let mut h = g.clone();
                h.mean = m;
                project_gaussian(&h, &view, &k).unwrap().cov2d.component_mul(&w).sum()
            };
            for a in 0..3 {
                let mut e = Vector3::zeros();
                e[a] = 1e-6;
                let fd = (f(g.mean + e) - f(g.mean - e)) / 2e-6;
                assert!((fd - grad.mean[a]).abs() <= 1e-5 * (1.0 + fd.abs()), "axis {a}: {fd} vs {}", grad.mean[a]);
            }
        }
    }
}
