//! Brute-force voxel loop for the densification rule, plus random
//! instances and the property checks run on them.

use std::collections::BTreeMap;

use gsfree::densify::{grow_scene, select_new_indices, DensifyConfig};
use gsfree::geometry::PointCloud;
use gsfree::splat::{logit, Gaussian, GaussianScene};
use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Key = (i64, i64, i64);

fn key(p: &Vector3<f64>, size: f64) -> Key {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Selection by a direct scan: every distinct frame voxel in key order,
/// counting frame and in-box scene points one by one.
pub fn oracle(scene: &GaussianScene, cloud: &PointCloud, cfg: &DensifyConfig) -> Vec<usize> {
    if cloud.points.is_empty() {
        return Vec::new();
    }
    let mut lo = cloud.points[0];
    let mut hi = cloud.points[0];
    for p in &cloud.points {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let mut keys: Vec<Key> = cloud.points.iter().map(|p| key(p, cfg.voxel_size)).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for k in keys {
        let members: Vec<usize> = (0..cloud.points.len())
            .filter(|&i| key(&cloud.points[i], cfg.voxel_size) == k)
            .collect();
        let mut n_scene = 0usize;
        for g in &scene.gaussians {
            let m = g.mean;
            let inside = (0..3).all(|i| m[i] >= lo[i] && m[i] <= hi[i]);
            if inside && key(&m, cfg.voxel_size) == k {
                n_scene += 1;
            }
        }
        if members.len() as f64 / n_scene.max(1) as f64 > cfg.density_ratio_threshold {
            let cap = cfg.max_points_per_voxel;
            if members.len() <= cap {
                out.extend(&members);
            } else {
                for j in 0..cap {
                    out.push(members[j * members.len() / cap]);
                }
            }
        }
    }
    out.sort();
    out
}

pub fn gaussian_at(mean: Vector3<f64>) -> Gaussian {
    Gaussian {
        mean,
        log_scale: Vector3::repeat(-3.0),
        rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
        opacity_logit: logit(0.5),
        color: Vector3::repeat(0.5),
    }
}

pub struct Instance {
    pub scene: GaussianScene,
    pub cloud: PointCloud,
    pub cfg: DensifyConfig,
}

/// Clustered points so voxels hold several members, some on exact voxel
/// boundaries, and scene centers both inside and outside the cloud's box.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voxel_size = rng.random_range(0.1..0.5);
    let clusters: Vec<Vector3<f64>> = (0..rng.random_range(1..6))
        .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let around = |rng: &mut ChaCha8Rng, spread: f64| {
        let c = clusters[rng.random_range(0..clusters.len())];
        if rng.random_bool(0.1) {
            // Snap to the voxel lattice to exercise the floor convention.
            (c / voxel_size).map(f64::round) * voxel_size
        } else {
            c + Vector3::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            )
        }
    };
    let n = rng.random_range(0..300);
    let points: Vec<Vector3<f64>> = (0..n).map(|_| around(&mut rng, 0.5)).collect();
    let colors = points.iter().map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
    let m = rng.random_range(0..200);
    let scene = GaussianScene::new((0..m).map(|_| gaussian_at(around(&mut rng, 1.0))).collect());
    Instance {
        scene,
        cloud: PointCloud {
            points,
            colors: Some(colors),
            source_pixels: None,
        },
        cfg: DensifyConfig {
            voxel_size,
            density_ratio_threshold: rng.random_range(0.5..6.0),
            max_points_per_voxel: rng.random_range(1..10),
        },
    }
}

fn per_voxel(cloud: &PointCloud, selected: &[usize], size: f64) -> BTreeMap<Key, usize> {
    let mut m = BTreeMap::new();
    for &i in selected {
        *m.entry(key(&cloud.points[i], size)).or_insert(0) += 1;
    }
    m
}

/// Oracle agreement, subset, cap, determinism, monotonicity and the
/// growth fixed-point trend on one instance.
pub fn check(seed: u64) -> Result<(), String> {
    let Instance { scene, cloud, cfg } = instance(seed);
    let fail = |what: &str| Err(format!("seed {seed}: {what}"));
    let got = select_new_indices(&scene, &cloud, &cfg).map_err(|e| e.to_string())?;
    if got != oracle(&scene, &cloud, &cfg) {
        return fail("selection differs from the brute-force oracle");
    }
    if got.windows(2).any(|w| w[0] >= w[1]) || got.iter().any(|&i| i >= cloud.points.len()) {
        return fail("indices are not a strictly increasing subset");
    }
    let picked = gsfree::densify::select_new_points(&scene, &cloud, &cfg).map_err(|e| e.to_string())?;
    if picked.points.len() != got.len()
        || picked.points.iter().zip(&got).any(|(p, &i)| p.map(f64::to_bits) != cloud.points[i].map(f64::to_bits))
    {
        return fail("selected positions are not bit-identical to the cloud's");
    }
    let counts = per_voxel(&cloud, &got, cfg.voxel_size);
    if counts.values().any(|&c| c > cfg.max_points_per_voxel) {
        return fail("a voxel exceeds the cap");
    }
    if select_new_indices(&scene, &cloud, &cfg).map_err(|e| e.to_string())? != got {
        return fail("repeated call differs");
    }
    // Monotonicity: pile extra scene centers into one frame voxel.
    if let Some(target) = cloud.points.first() {
        let k = key(target, cfg.voxel_size);
        let before = counts.get(&k).copied().unwrap_or(0);
        let mut denser = scene.clone();
        for _ in 0..seed % 5 + 1 {
            denser.gaussians.push(gaussian_at(*target));
        }
        let after_sel = select_new_indices(&denser, &cloud, &cfg).map_err(|e| e.to_string())?;
        let after = per_voxel(&cloud, &after_sel, cfg.voxel_size).get(&k).copied().unwrap_or(0);
        if after > before {
            return fail("adding scene points raised a voxel's selection");
        }
    }
    // Growth never makes the same cloud select more voxels.
    let grown = grow_scene(&scene, &cloud, &cfg).map_err(|e| e.to_string())?;
    if grown.len() != scene.len() + got.len() || grown.gaussians[..scene.len()] != scene.gaussians[..] {
        return fail("growth changed existing Gaussians or added the wrong count");
    }
    let again = select_new_indices(&grown, &cloud, &cfg).map_err(|e| e.to_string())?;
    if per_voxel(&cloud, &again, cfg.voxel_size).len() > counts.len() {
        return fail("more voxels selected after growth");
    }
    Ok(())
}
