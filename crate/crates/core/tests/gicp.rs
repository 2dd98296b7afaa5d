mod common;

use common::gicp_cases::*;
use gsfree::geometry::{exp_map, transform_points, PointCloud, PoseSE3, Twist};
use gsfree::gicp::{register, GicpConfig};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn recovers_structured_motions() {
    let (ok, worst_r, worst_t) = recovery(50, 2000);
    assert!(ok >= 48, "{ok}/50, worst {worst_r} deg, {worst_t} of diameter");
}

#[test]
fn equivariant_under_rigid_change_of_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let c = case(seed, 1500);
        // Exact copies, so the optimum is unique and exact.
        let target = transform_points(&c.truth, &c.source);
        let cfg = GicpConfig::default();
        let t = register(&c.source, &target, &cfg, &PoseSE3::identity()).unwrap().transform;
        let q = random_rigid(&mut rng);
        let moved = register(
            &transform_points(&q, &c.source),
            &transform_points(&q, &target),
            &cfg,
            &PoseSE3::identity(),
        )
        .unwrap()
        .transform;
        let expected = q * t * q.inverse();
        let diff = (moved.to_homogeneous() - expected.to_homogeneous()).abs().max();
        assert!(diff < 1e-6, "seed {seed}: {diff}");
    }
}

#[test]
fn converges_from_a_close_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..10 {
        let c = case(100 + seed, 2000);
        let mut t = Twist::zero();
        t.omega = Vector3::new(rng.random(), rng.random(), rng.random()).normalize() * 4f64.to_radians();
        t.v = Vector3::new(rng.random(), rng.random(), rng.random()).normalize() * 0.04 * c.diameter;
        let init = exp_map(&t).unwrap() * c.truth;
        let res = register(&c.source, &c.target, &GicpConfig::default(), &init).unwrap();
        assert!(res.converged && res.iterations <= 50, "seed {seed}: {} iterations", res.iterations);
    }
}

/// A single plane leaves three degrees of freedom unconstrained, which is
/// where damping has to engage.
fn flat_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    PointCloud::from_points(
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn accepted_steps_never_raise_the_cost(seed in any::<u64>(), flat in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (source, target) = if flat {
            (flat_cloud(400, &mut rng), flat_cloud(400, &mut rng))
        } else {
            let source = room_corner(600, &mut rng);
            let motion = PoseSE3::from_axis_angle(Vector3::z(), rng.random_range(-0.3..0.3), Vector3::new(0.1, 0.0, 0.05));
            (source, transform_points(&motion, &room_corner(600, &mut rng)))
        };
        let res = register(&source, &target, &GicpConfig::default(), &PoseSE3::identity()).unwrap();
        for r in &res.history {
            prop_assert!(r.cost_after <= r.cost_before, "{:?}", r);
        }
    }
}

#[test]
fn self_registration_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cloud = room_corner(1000, &mut rng);
    let res = register(&cloud, &cloud, &GicpConfig::default(), &PoseSE3::identity()).unwrap();
    assert!(res.converged);
    assert!((res.transform.to_homogeneous() - nalgebra::Matrix4::identity()).abs().max() < 1e-9);
}
