use nalgebra::Vector3;

use super::pose::PoseSE3;
use crate::error::{Error, Result};

/// 3D points with optional per-point colors and source pixel coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
    pub source_pixels: Option<Vec<[f64; 2]>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            colors: None,
            source_pixels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.colors.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::dims(n, "colors of another length"));
        }
        if self.source_pixels.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::dims(n, "source pixels of another length"));
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("point cloud has non-finite positions"));
        }
        Ok(())
    }

    /// Keep the points at `indices`, in that order, with their metadata.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            source_pixels: self
                .source_pixels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Length of the diagonal of the axis-aligned bounding box (0 if empty).
    pub fn bounding_diagonal(&self) -> f64 {
        let Some(first) = self.points.first() else {
            return 0.0;
        };
        let (lo, hi) = self
            .points
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        (hi - lo).norm()
    }
}

/// Apply `pose` to every point, keeping colors and pixel tags.
pub fn transform_points(pose: &PoseSE3, pcd: &PointCloud) -> PointCloud {
    PointCloud {
        points: pcd.points.iter().map(|p| pose.transform_point(p)).collect(),
        colors: pcd.colors.clone(),
        source_pixels: pcd.source_pixels.clone(),
    }
}
