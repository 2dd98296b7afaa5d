//! Procedural test scenes, ground-truth ray casting and camera paths.
//!
//! Scenes are built from textured parallelograms. The camera convention
//! matches the rest of the crate: `+z` forward, `+y` down.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Image, PoseSE3};

/// Depth written for rays that hit nothing.
pub const FAR_PLANE: f64 = 100.0;
pub const SKY_COLOR: [f64; 3] = [0.6, 0.7, 0.8];
/// Supersampling factor per axis for colors.
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Planes,
    BoxRoom,
    Street,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planes" => Ok(Self::Planes),
            "box_room" => Ok(Self::BoxRoom),
            "street" => Ok(Self::Street),
            _ => Err(Error::UnknownKind {
                what: "scene",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Planes => "planes",
            Self::BoxRoom => "box_room",
            Self::Street => "street",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Orbit,
    LineLargeSteps,
    Arc,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "line_large_steps" => Ok(Self::LineLargeSteps),
            "arc" => Ok(Self::Arc),
            _ => Err(Error::UnknownKind {
                what: "trajectory",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Orbit => "orbit",
            Self::LineLargeSteps => "line_large_steps",
            Self::Arc => "arc",
        })
    }
}

/// Soft checkerboard modulated by smooth value noise, in surface units.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub colors: [Vector3<f64>; 2],
    pub cell: f64,
    pub noise_cell: f64,
    pub noise_amplitude: f64,
    /// Noise lattice, `lattice_w * lattice_h` RGB values in `[0, 1]`.
    pub lattice: Vec<Vector3<f64>>,
    pub lattice_w: usize,
    pub lattice_h: usize,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, width: f64, height: f64, cell: f64) -> Self {
        let base = Vector3::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
        let shift = Vector3::new(rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25));
        let noise_cell = cell * 0.7;
        let lattice_w = (width / noise_cell).ceil() as usize + 2;
        let lattice_h = (height / noise_cell).ceil() as usize + 2;
        let lattice = (0..lattice_w * lattice_h)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        Self {
            colors: [
                (base + shift).map(|v: f64| v.clamp(0.05, 0.95)),
                (base - shift).map(|v: f64| v.clamp(0.05, 0.95)),
            ],
            cell,
            noise_cell,
            noise_amplitude: 0.3,
            lattice,
            lattice_w,
            lattice_h,
        }
    }

    /// Color at surface coordinates `(a, b)` measured from the quad origin.
    pub fn sample(&self, a: f64, b: f64) -> Vector3<f64> {
        let k = PI / self.cell;
        let checker = 0.5 + 0.5 * (3.0 * (k * a).sin() * (k * b).sin()).tanh();
        let base = self.colors[0] * checker + self.colors[1] * (1.0 - checker);
        let noise = self.noise(a / self.noise_cell, b / self.noise_cell);
        (base + (noise - Vector3::repeat(0.5)) * self.noise_amplitude).map(|v| v.clamp(0.0, 1.0))
    }

    fn noise(&self, x: f64, y: f64) -> Vector3<f64> {
        let x = x.clamp(0.0, (self.lattice_w - 2) as f64);
        let y = y.clamp(0.0, (self.lattice_h - 2) as f64);
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (smooth(x - i as f64), smooth(y - j as f64));
        let at = |ii: usize, jj: usize| self.lattice[jj * self.lattice_w + ii];
        let top = at(i, j) * (1.0 - fx) + at(i + 1, j) * fx;
        let bottom = at(i, j + 1) * (1.0 - fx) + at(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Parallelogram `origin + s * edge_u + t * edge_v`, `s, t` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quad {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    pub texture: Texture,
}

impl Quad {
    fn new(rng: &mut ChaCha8Rng, origin: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>, cell: f64) -> Self {
        let texture = Texture::random(rng, edge_u.norm(), edge_v.norm(), cell);
        Self {
            origin,
            edge_u,
            edge_v,
            texture,
        }
    }

    /// Ray parameter and color of the hit, if any.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let n = self.edge_u.cross(&self.edge_v);
        let denom = d.dot(&n);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.origin - o).dot(&n) / denom;
        if t <= 1e-9 {
            return None;
        }
        let rel = o + d * t - self.origin;
        let pu = self.edge_v.cross(&n);
        let pv = n.cross(&self.edge_u);
        let s = rel.dot(&pu) / self.edge_u.dot(&pu);
        let r = rel.dot(&pv) / self.edge_v.dot(&pv);
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&r) {
            return None;
        }
        let color = self.texture.sample(s * self.edge_u.norm(), r * self.edge_v.norm());
        Some((t, color))
    }
}

/// Analytic scene: a list of textured quads under an optional open sky.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub seed: u64,
    pub quads: Vec<Quad>,
    pub far_plane: f64,
    pub sky_color: Vector3<f64>,
}

impl SyntheticScene {
    /// Closest hit along the ray `o + t d` as `(t, color)`.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        self.quads
            .iter()
            .filter_map(|q| q.intersect(o, d))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Five visible faces of an axis-aligned box (no bottom face).
fn push_box(rng: &mut ChaCha8Rng, quads: &mut Vec<Quad>, lo: Vector3<f64>, hi: Vector3<f64>, cell: f64) {
    let s = hi - lo;
    let (x, y, z) = (Vector3::x() * s.x, Vector3::y() * s.y, Vector3::z() * s.z);
    quads.push(Quad::new(rng, lo, x, y, cell));
    quads.push(Quad::new(rng, lo + z, x, y, cell));
    quads.push(Quad::new(rng, lo, z, y, cell));
    quads.push(Quad::new(rng, lo + x, z, y, cell));
    quads.push(Quad::new(rng, lo, x, z, cell));
}

/// Deterministic scene for `(kind, seed)`.
pub fn make_scene(kind: SceneKind, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000 ^ kind as u64);
    let mut quads = Vec::new();
    match kind {
        SceneKind::Planes => {
            quads.push(Quad::new(
                &mut rng,
                Vector3::new(-6.0, -6.0, 4.5),
                Vector3::new(12.0, 0.0, 0.0),
                Vector3::new(0.0, 12.0, 0.0),
                0.5,
            ));
            let panels = rng.random_range(1..=3);
            for _ in 0..panels {
                let w = rng.random_range(0.8..1.6);
                let h = rng.random_range(0.8..1.6);
                let c = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8), rng.random_range(2.2..3.8));
                let yaw = rng.random_range(-0.5..0.5);
                let u = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw) * Vector3::new(w, 0.0, 0.0);
                let v = Vector3::new(0.0, h, 0.0);
                quads.push(Quad::new(&mut rng, c - u / 2.0 - v / 2.0, u, v, 0.3));
            }
        }
        SceneKind::BoxRoom => {
            let c = Vector3::new(0.0, 0.0, 1.0);
            let h = 2.5;
            let lo = c - Vector3::repeat(h);
            let e = 2.0 * h;
            let (x, y, z) = (Vector3::x() * e, Vector3::y() * e, Vector3::z() * e);
            for (o, u, v) in [
                (lo, x, y),
                (lo + z, x, y),
                (lo, z, y),
                (lo + x, z, y),
                (lo, x, z),
                (lo + y, x, z),
            ] {
                quads.push(Quad::new(&mut rng, o, u, v, 0.6));
            }
        }
        SceneKind::Street => {
            let ground_y = 1.5;
            let (z0, z1) = (-10.0, 60.0);
            quads.push(Quad::new(
                &mut rng,
                Vector3::new(-9.0, ground_y, z0),
                Vector3::new(18.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, z1 - z0),
                0.8,
            ));
            for side in [-1.0, 1.0] {
                let mut z = z0 + rng.random_range(0.0..2.0);
                while z < z1 - 2.0 {
                    let len = rng.random_range(4.0..9.0f64).min(z1 - z);
                    let height = rng.random_range(3.0..8.0);
                    let depth = rng.random_range(3.0..5.0);
                    let front = 4.0 + rng.random_range(0.0..0.8);
                    let (xa, xb) = if side < 0.0 { (-front - depth, -front) } else { (front, front + depth) };
                    push_box(
                        &mut rng,
                        &mut quads,
                        Vector3::new(xa, ground_y - height, z),
                        Vector3::new(xb, ground_y, z + len),
                        0.7,
                    );
                    if rng.random_bool(0.35) && z > 0.0 {
                        let cz = z + rng.random_range(0.0..(len - 3.5).max(0.1));
                        let cx = side * 2.7;
                        push_box(
                            &mut rng,
                            &mut quads,
                            Vector3::new(cx - 0.8, ground_y - 1.3, cz),
                            Vector3::new(cx + 0.8, ground_y, cz + 3.5),
                            0.4,
                        );
                    }
                    z += len + rng.random_range(1.5..4.0);
                }
            }
        }
    }
    SyntheticScene {
        kind,
        seed,
        quads,
        far_plane: FAR_PLANE,
        sky_color: Vector3::from(SKY_COLOR),
    }
}

/// Default square-pixel intrinsics for a `w x h` render.
pub fn default_intrinsics(width: usize, height: usize) -> Result<CameraIntrinsics> {
    CameraIntrinsics::centered(0.6 * width as f64, width, height)
}

/// Ray-cast color (supersampled) and exact z-depth from camera pose `pose`
/// (camera to world). Misses get the sky color and the far-plane depth.
pub fn render_ground_truth(
    scene: &SyntheticScene,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<(Image, DepthMap)> {
    k.validate()?;
    if !pose.is_finite() {
        return Err(Error::invalid("pose has non-finite entries"));
    }
    let o = pose.translation;
    let ray = |u: f64, v: f64| pose.rotation * Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(3 * k.width);
            let mut depths = Vec::with_capacity(k.width);
            for x in 0..k.width {
                let d = ray(x as f64, y as f64);
                let depth = scene
                    .cast(&o, &d)
                    .map_or(scene.far_plane, |(t, _)| t.min(scene.far_plane));
                depths.push(depth);
                let mut c = Vector3::zeros();
                for j in 0..SUPERSAMPLE {
                    for i in 0..SUPERSAMPLE {
                        let du = (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                        let dv = (j as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                        let d = ray(x as f64 + du, y as f64 + dv);
                        c += scene.cast(&o, &d).map_or(scene.sky_color, |(_, c)| c);
                    }
                }
                c /= (SUPERSAMPLE * SUPERSAMPLE) as f64;
                colors.extend_from_slice(c.as_slice());
            }
            (colors, depths)
        })
        .collect();
    let mut color = Vec::with_capacity(3 * k.pixel_count());
    let mut depth = Vec::with_capacity(k.pixel_count());
    for (c, d) in rows {
        color.extend(c);
        depth.extend(d);
    }
    Ok((Image::from_vec(k.width, k.height, color)?, DepthMap::new(depth, *k)?))
}

/// Camera path of `n_frames` poses starting at the identity.
///
/// * `Orbit`: yaw around the point one unit ahead of the first camera;
///   `magnitude` is the total angle in degrees, spaced `magnitude / n`.
/// * `LineLargeSteps`: straight forward motion of `magnitude` per frame.
/// * `Arc`: forward steps of `magnitude` while yawing 3 degrees per frame.
pub fn make_trajectory(kind: TrajectoryKind, n_frames: usize, magnitude: f64) -> Result<Vec<PoseSE3>> {
    if n_frames < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: n_frames,
        });
    }
    if !magnitude.is_finite() {
        return Err(Error::invalid("trajectory magnitude must be finite"));
    }
    let poses = match kind {
        TrajectoryKind::Orbit => {
            let center = Vector3::new(0.0, 0.0, 1.0);
            let step = magnitude.to_radians() / n_frames as f64;
            (0..n_frames)
                .map(|i| {
                    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), step * i as f64).into_inner();
                    let t = if i == 0 { Vector3::zeros() } else { center - r * Vector3::z() };
                    PoseSE3::new(r, t)
                })
                .collect()
        }
        TrajectoryKind::LineLargeSteps => (0..n_frames)
            .map(|i| PoseSE3::from_translation(Vector3::new(0.0, 0.0, magnitude * i as f64)))
            .collect(),
        TrajectoryKind::Arc => {
            let yaw = 3f64.to_radians();
            let mut t = Vector3::zeros();
            let mut out = Vec::with_capacity(n_frames);
            for i in 0..n_frames {
                let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw * i as f64).into_inner();
                out.push(PoseSE3::new(r, t));
                t += r * Vector3::new(0.0, 0.0, magnitude);
            }
            out
        }
    };
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_sky_mask, DEFAULT_SKY_EPSILON};

    #[test]
    fn deterministic_scenes() {
        for kind in [SceneKind::Planes, SceneKind::BoxRoom, SceneKind::Street] {
            assert_eq!(make_scene(kind, 7), make_scene(kind, 7));
        }
        assert_ne!(make_scene(SceneKind::Street, 1), make_scene(SceneKind::Street, 2));
        assert!("nope".parse::<SceneKind>().is_err());
    }

    #[test]
    fn street_sky_above_horizon() {
        let scene = make_scene(SceneKind::Street, 3);
        let k = default_intrinsics(32, 32).unwrap();
        let (img, depth) = render_ground_truth(&scene, &PoseSE3::identity(), &k).unwrap();
        let top = depth.get(16, 0);
        assert_eq!(top, FAR_PLANE);
        assert!(compute_sky_mask(&depth, DEFAULT_SKY_EPSILON).get(16, 0));
        let c = img.get(16, 0);
        assert!((c[0] - 0.6).abs() < 1e-12 && (c[2] - 0.8).abs() < 1e-12);
        assert!(depth.get(16, 31) < FAR_PLANE);
    }

    #[test]
    fn box_room_has_no_sky() {
        let scene = make_scene(SceneKind::BoxRoom, 0);
        let k = default_intrinsics(24, 24).unwrap();
        for pose in make_trajectory(TrajectoryKind::Orbit, 4, 360.0).unwrap() {
            let (_, depth) = render_ground_truth(&scene, &pose, &k).unwrap();
            assert!(depth.values.iter().all(|&d| d < FAR_PLANE));
        }
    }

    #[test]
    fn fronto_parallel_plane_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scene = SyntheticScene {
            kind: SceneKind::Planes,
            seed: 0,
            quads: vec![Quad::new(
                &mut rng,
                Vector3::new(-5.0, -5.0, 3.0),
                Vector3::new(10.0, 0.0, 0.0),
                Vector3::new(0.0, 10.0, 0.0),
                0.5,
            )],
            far_plane: FAR_PLANE,
            sky_color: Vector3::from(SKY_COLOR),
        };
        let k = default_intrinsics(15, 15).unwrap();
        let (_, d0) = render_ground_truth(&scene, &PoseSE3::identity(), &k).unwrap();
        assert!((d0.get(7, 7) - 3.0).abs() < 1e-12);
        let moved = PoseSE3::from_translation(Vector3::new(0.0, 0.0, 0.7));
        let (_, d1) = render_ground_truth(&scene, &moved, &k).unwrap();
        assert!((d0.get(7, 7) - d1.get(7, 7) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn trajectory_examples() {
        let orbit = make_trajectory(TrajectoryKind::Orbit, 4, 360.0).unwrap();
        assert_eq!(orbit[0], PoseSE3::identity());
        let center = Vector3::new(0.0, 0.0, 1.0);
        for (i, p) in orbit.iter().enumerate() {
            let forward = p.rotation * Vector3::z();
            assert!(((center - p.translation).normalize() - forward).norm() < 1e-12);
            assert!((p.rotation_angle().to_degrees() - [0.0, 90.0, 180.0, 90.0][i]).abs() < 1e-9);
        }
        let line = make_trajectory(TrajectoryKind::LineLargeSteps, 5, 2.5).unwrap();
        for w in line.windows(2) {
            assert!(((w[1].translation - w[0].translation).norm() - 2.5).abs() < 1e-12);
        }
        let arc = make_trajectory(TrajectoryKind::Arc, 3, 1.0).unwrap();
        assert_eq!(arc[0], PoseSE3::identity());
        assert!(make_trajectory(TrajectoryKind::Arc, 1, 1.0).is_err());
    }
}
