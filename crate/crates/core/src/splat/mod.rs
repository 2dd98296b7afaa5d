//! Differentiable Gaussian splatting on the CPU.
//!
//! Gaussians are projected with the linearized pinhole model, sorted by
//! distance from the camera and alpha-composited front to back.
//! [`Rasterizer::backward`] is the exact reverse of that forward pass,
//! including the projection and a left perturbation of the view transform.

mod project;
mod raster;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector4};

use crate::geometry::PoseSE3;

pub use project::{project_gaussian, Projection, COV2D_DILATION, NEAR_PLANE};
pub use raster::{
    render, render_backward, Rasterizer, RenderOutput, SceneGradients, ALPHA_CLAMP,
    TRANSMITTANCE_CUTOFF,
};

/// One anisotropic 3D Gaussian with degree-0 color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    /// Log of the standard deviations along the local axes.
    pub log_scale: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Vector4<f64>,
    /// Opacity before the sigmoid.
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub(crate) fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

impl Gaussian {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            mean,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&(self.rotation / self.rotation.norm()))
    }

    /// `R diag(exp(2 log_scale)) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale());
        m * m.transpose()
    }

    /// Unnormalized density `exp(-0.5 (x - mu)^T Sigma^-1 (x - mu))`.
    pub fn evaluate(&self, x: &Vector3<f64>) -> f64 {
        evaluate_gaussian(self, x)
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 && n.is_finite() {
            self.rotation /= n;
        } else {
            self.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
    }

    /// The same Gaussian after applying a rigid transform to the world.
    pub fn transformed(&self, pose: &PoseSE3) -> Gaussian {
        let q = self.rotation / self.rotation.norm();
        let own = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let outer = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            pose.rotation,
        ));
        let r = outer * own;
        Gaussian {
            mean: pose.transform_point(&self.mean),
            rotation: Vector4::new(r.w, r.i, r.j, r.k),
            ..*self
        }
    }
}

pub fn evaluate_gaussian(g: &Gaussian, x: &Vector3<f64>) -> f64 {
    let r = g.rotation_matrix();
    // Sigma^-1 = R diag(exp(-2 s)) R^T, so work in the local frame.
    let local = r.transpose() * (x - g.mean);
    let inv_var = g.log_scale.map(|s| (-2.0 * s).exp());
    let m = local.component_mul(&local).dot(&inv_var);
    (-0.5 * m).exp()
}

/// The explicit scene: a growable list of Gaussians.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn transformed(&self, pose: &PoseSE3) -> GaussianScene {
        GaussianScene::new(self.gaussians.iter().map(|g| g.transformed(pose)).collect())
    }

    pub fn means(&self) -> Vec<Vector3<f64>> {
        self.gaussians.iter().map(|g| g.mean).collect()
    }

    /// Drop Gaussians whose opacity is below `min_opacity`; returns how many
    /// were removed.
    pub fn prune_transparent(&mut self, min_opacity: f64) -> usize {
        let before = self.gaussians.len();
        self.gaussians.retain(|g| g.opacity() >= min_opacity);
        before - self.gaussians.len()
    }
}
