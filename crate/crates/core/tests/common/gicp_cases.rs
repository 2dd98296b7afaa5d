//! Seeded registration problems on clean structured clouds.

use gsfree::geometry::{exp_map, transform_points, PointCloud, PoseSE3, Twist};
use gsfree::gicp::{register, GicpConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ROTATION_DEG: f64 = 30.0;
pub const MAX_TRANSLATION_FRACTION: f64 = 0.2;

/// Room corner: floor, two walls and a box on the floor. Points are drawn
/// uniformly by area so independent draws sample the same surfaces.
pub fn room_corner(n: usize, rng: &mut impl Rng) -> PointCloud {
    // (origin, edge u, edge v)
    let faces: [([f64; 3], [f64; 3], [f64; 3]); 6] = [
        ([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.5, 0.0]),
        ([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
        ([0.0, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 1.0]),
        ([1.1, 0.6, 0.4], [0.5, 0.0, 0.0], [0.0, 0.4, 0.0]),
        ([1.1, 1.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.4]),
        ([1.6, 0.6, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 0.4]),
    ];
    let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
    let areas: Vec<f64> = faces.iter().map(|f| v(f.1).cross(&v(f.2)).norm()).collect();
    let total: f64 = areas.iter().sum();
    let points = (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut i = 0;
            while pick > areas[i] && i + 1 < faces.len() {
                pick -= areas[i];
                i += 1;
            }
            let (o, u, w) = faces[i];
            v(o) + v(u) * rng.random_range(0.0..1.0) + v(w) * rng.random_range(0.0..1.0)
        })
        .collect();
    PointCloud::from_points(points)
}

pub struct Case {
    pub source: PointCloud,
    pub target: PointCloud,
    pub truth: PoseSE3,
    pub diameter: f64,
}

/// Source and target are independent draws; the target is moved by a
/// random motion up to the stated bounds.
pub fn case(seed: u64, points: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = room_corner(points, &mut rng);
    let diameter = source.bounding_diagonal();
    let random_unit = |rng: &mut ChaCha8Rng| loop {
        let d = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = d.norm();
        if n > 1e-3 && n <= 1.0 {
            break d / n;
        }
    };
    let axis = random_unit(&mut rng);
    let angle = rng.random_range(0.0..MAX_ROTATION_DEG).to_radians();
    let direction = random_unit(&mut rng);
    let shift = rng.random_range(0.0..MAX_TRANSLATION_FRACTION) * diameter;
    let truth = PoseSE3::from_axis_angle(axis, angle, direction * shift);
    let target = transform_points(&truth, &room_corner(points, &mut rng));
    Case {
        source,
        target,
        truth,
        diameter,
    }
}

/// Rotation error in degrees and translation error as a fraction of the
/// cloud diameter.
pub fn errors(estimate: &PoseSE3, c: &Case) -> (f64, f64) {
    let e = estimate.inverse() * c.truth;
    (
        e.rotation_angle().to_degrees(),
        (estimate.translation - c.truth.translation).norm() / c.diameter,
    )
}

/// Number of the seeds `0..n` whose registration lands within 0.5 degrees
/// and 1% of the diameter, with the worst errors seen.
pub fn recovery(n: u64, points: usize) -> (usize, f64, f64) {
    let mut ok = 0;
    let (mut worst_r, mut worst_t) = (0.0f64, 0.0f64);
    for seed in 0..n {
        let c = case(seed, points);
        let (r, t) = match register(&c.source, &c.target, &GicpConfig::default(), &PoseSE3::identity()) {
            Ok(res) => errors(&res.transform, &c),
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };
        worst_r = worst_r.max(r);
        worst_t = worst_t.max(t);
        if r < 0.5 && t < 0.01 {
            ok += 1;
        }
    }
    (ok, worst_r, worst_t)
}

/// A small random rigid motion for equivariance checks.
pub fn random_rigid(rng: &mut impl Rng) -> PoseSE3 {
    let mut t = Twist::zero();
    for i in 0..3 {
        t.omega[i] = rng.random_range(-1.0..1.0);
        t.v[i] = rng.random_range(-2.0..2.0);
    }
    exp_map(&t).unwrap()
}
