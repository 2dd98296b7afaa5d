//! Voxel-density scene growing.
//!
//! A new frame's cloud, already placed in the world, is compared voxel by
//! voxel against the scene centers inside its bounding box. Voxels where the
//! frame is much denser than the scene are treated as uncovered and seed new
//! Gaussians.

use std::collections::BTreeMap;

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::splat::{logit, Gaussian, GaussianScene};

pub type VoxelKey = [i64; 3];

/// Point counts per occupied voxel. Keys are `floor(coordinate / size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    voxel_size: f64,
    counts: BTreeMap<VoxelKey, usize>,
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn key(&self, p: &Vector3<f64>) -> VoxelKey {
        voxel_key(p, self.voxel_size)
    }

    pub fn count(&self, key: &VoxelKey) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<VoxelKey, usize> {
        &self.counts
    }

    /// Number of occupied voxels.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

fn voxel_key(p: &Vector3<f64>, size: f64) -> VoxelKey {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyConfig {
    pub voxel_size: f64,
    /// A voxel is uncovered when `n_frame / max(n_scene, 1)` exceeds this.
    pub density_ratio_threshold: f64,
    pub max_points_per_voxel: usize,
}

pub const DEFAULT_DENSITY_RATIO: f64 = 4.0;
pub const DEFAULT_MAX_POINTS_PER_VOXEL: usize = 8;
/// Default voxel size as a fraction of the reference cloud's diagonal.
pub const DEFAULT_VOXEL_FRACTION: f64 = 1.0 / 32.0;

impl DensifyConfig {
    /// Defaults with the voxel size derived from a reference cloud.
    pub fn for_cloud(reference: &PointCloud) -> Result<Self> {
        let diag = reference.bounding_diagonal();
        if !(diag > 0.0) {
            return Err(Error::invalid("reference cloud has zero extent"));
        }
        Ok(Self {
            voxel_size: diag * DEFAULT_VOXEL_FRACTION,
            density_ratio_threshold: DEFAULT_DENSITY_RATIO,
            max_points_per_voxel: DEFAULT_MAX_POINTS_PER_VOXEL,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::invalid(format!("voxel size {} must be positive", self.voxel_size)));
        }
        if !(self.density_ratio_threshold > 0.0) {
            return Err(Error::invalid("density ratio threshold must be positive"));
        }
        if self.max_points_per_voxel == 0 {
            return Err(Error::invalid("max points per voxel must be at least 1"));
        }
        Ok(())
    }
}

/// Componentwise `(min, max)`.
pub fn bounding_box(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let first = points.first().ok_or(Error::EmptyInput("points"))?;
    Ok(points[1..]
        .iter()
        .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

pub fn voxelize(points: &[Vector3<f64>], voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(format!("voxel size {voxel_size} must be positive")));
    }
    let mut counts = BTreeMap::new();
    for p in points {
        *counts.entry(voxel_key(p, voxel_size)).or_insert(0) += 1;
    }
    Ok(VoxelGrid { voxel_size, counts })
}

/// Indices of `frame_cloud` points that should seed new Gaussians, in
/// ascending order.
pub fn select_new_indices(
    scene: &GaussianScene,
    frame_cloud: &PointCloud,
    cfg: &DensifyConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if frame_cloud.is_empty() {
        return Ok(Vec::new());
    }
    let (lo, hi) = bounding_box(&frame_cloud.points)?;
    let inside: Vec<Vector3<f64>> = scene
        .gaussians
        .iter()
        .map(|g| g.mean)
        .filter(|m| (0..3).all(|i| m[i] >= lo[i] && m[i] <= hi[i]))
        .collect();
    let scene_grid = voxelize(&inside, cfg.voxel_size)?;

    let mut members: BTreeMap<VoxelKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in frame_cloud.points.iter().enumerate() {
        members.entry(voxel_key(p, cfg.voxel_size)).or_default().push(i);
    }
    let cap = cfg.max_points_per_voxel;
    let mut selected = Vec::new();
    for (key, idx) in &members {
        let ratio = idx.len() as f64 / scene_grid.count(key).max(1) as f64;
        if ratio <= cfg.density_ratio_threshold {
            continue;
        }
        if idx.len() <= cap {
            selected.extend_from_slice(idx);
        } else {
            // Fixed-stride subsample spread over the voxel's members.
            selected.extend((0..cap).map(|j| idx[j * idx.len() / cap]));
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// The subset of `frame_cloud` that lands in under-covered voxels.
pub fn select_new_points(
    scene: &GaussianScene,
    frame_cloud: &PointCloud,
    cfg: &DensifyConfig,
) -> Result<PointCloud> {
    Ok(frame_cloud.select(&select_new_indices(scene, frame_cloud, cfg)?))
}

/// Append one Gaussian per selected point.
pub fn grow_scene(
    scene: &GaussianScene,
    frame_cloud: &PointCloud,
    cfg: &DensifyConfig,
) -> Result<GaussianScene> {
    let new = select_new_points(scene, frame_cloud, cfg)?;
    let log_scale = Vector3::repeat((cfg.voxel_size / 4.0).ln());
    let mut out = scene.clone();
    out.gaussians.extend(new.points.iter().enumerate().map(|(i, p)| Gaussian {
        mean: *p,
        log_scale,
        rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
        opacity_logit: logit(0.5),
        color: new
            .colors
            .as_ref()
            .map_or(Vector3::repeat(0.5), |c| c[i]),
    }));
    Ok(out)
}
