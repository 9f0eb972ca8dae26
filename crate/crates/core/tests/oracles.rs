mod common;

use common::*;
use curiosim::builder::{estimate_axes, voxel_iou};
use curiosim::geometry::{Point, Vector};
use curiosim::metrics::{apply_script, forest_edit_distance, GedMode, LabeledForest};
use curiosim::scene::RelationKind;
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const RES: f64 = 0.05;

#[test]
fn iou_matches_voxel_counter() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let a = random_cloud(&mut rng, RES);
        let b = random_cloud(&mut rng, RES);
        assert_eq!(voxel_iou(&a, &b, RES).unwrap(), brute_iou(&a, &b, RES));
    }
}

#[test]
fn overlapping_slabs_give_one_third() {
    let a = slab(0, 10, 10, 1, RES);
    let b = slab(5, 10, 10, 1, RES);
    let iou = voxel_iou(&a, &b, RES).unwrap();
    assert_eq!(iou, 50.0 / 150.0);
    assert_eq!(iou, brute_iou(&a, &b, RES));
}

#[test]
fn ged_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..220 {
        let a = random_forest(&mut rng, 5);
        let b = random_forest(&mut rng, 5);
        let r = forest_edit_distance(&a, &b, &[]);
        assert_eq!(r.mode, GedMode::Exact);
        assert_eq!(r.cost, brute_force_ged(&a, &b), "{a:?} vs {b:?}");
        assert_eq!(brute_force_ged(&apply_script(&a, &r.script), &b), 0);
    }
}

#[test]
fn ged_of_graph_with_itself_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let g = random_forest(&mut rng, 9);
        assert_eq!(forest_edit_distance(&g, &g, &[]).cost, 0);
    }
}

#[test]
fn known_edit_costs() {
    let base = LabeledForest {
        labels: [(1, "box".to_string())].into(),
        edges: Default::default(),
    };
    let mut extra = base.clone();
    extra.labels.insert(2, "toy".into());
    extra.edges.insert((1, 2, RelationKind::Inside));
    assert_eq!(brute_force_ged(&base, &extra), 2);
    assert_eq!(forest_edit_distance(&base, &extra, &[]).cost, 2);

    let mut under = extra.clone();
    under.edges = [(1, 2, RelationKind::Under)].into();
    assert_eq!(brute_force_ged(&extra, &under), 1);
    assert_eq!(forest_edit_distance(&extra, &under, &[]).cost, 1);
}

/// Points jittered around a 0.12 x 0.02 x 0.02 bar along `axis`.
fn handle_cloud(seed: u64, axis: &Vector) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.002).unwrap();
    let rot = Rotation3::rotation_between(&Vector::x(), axis).unwrap_or_else(Rotation3::identity);
    let center = Point::new(0.4, -0.2, 0.6);
    let mut out = Vec::new();
    for i in 0..25 {
        for j in 0..5 {
            for k in 0..5 {
                let local = Vector::new(
                    -0.06 + 0.12 * i as f64 / 24.0,
                    -0.01 + 0.02 * j as f64 / 4.0,
                    -0.01 + 0.02 * k as f64 / 4.0,
                );
                let jitter = Vector::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                out.push(center + rot * local + jitter);
            }
        }
    }
    out
}

#[test]
fn handle_axis_within_five_degrees() {
    let axis = Vector::new(0.3, 1.0, 0.2).normalize();
    for seed in 0..20 {
        let a = estimate_axes(&handle_cloud(seed, &axis), &Point::new(0.0, 0.0, 1.0)).unwrap();
        let angle = a.principal.dot(&axis).abs().min(1.0).acos().to_degrees();
        assert!(angle < 5.0, "seed {seed}: {angle:.2} deg");
    }
}

proptest! {
    #[test]
    fn axes_rotate_with_the_cloud(seed in 0u64..1000, ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in 0.1..1.0f64, angle in -3.1..3.1f64) {
        let pts = handle_cloud(seed, &Vector::new(1.0, 0.2, 0.1).normalize());
        let view = Point::new(0.0, 0.0, 1.0);
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector::new(ax, ay, az)), angle);
        let turned: Vec<Point> = pts.iter().map(|p| rot * p).collect();
        let a = estimate_axes(&pts, &view).unwrap();
        let b = estimate_axes(&turned, &(rot * view)).unwrap();
        prop_assert!((rot * a.principal - b.principal).norm() < 1e-6);
        prop_assert!((rot * a.normal - b.normal).norm() < 1e-6);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, RES);
        let b = random_cloud(&mut rng, RES);
        let ab = voxel_iou(&a, &b, RES).unwrap();
        prop_assert_eq!(ab, voxel_iou(&b, &a, RES).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(voxel_iou(&a, &a, RES).unwrap(), 1.0);
    }

    #[test]
    fn ged_is_a_symmetric_metric(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_forest(&mut rng, 4);
        let b = random_forest(&mut rng, 4);
        let c = random_forest(&mut rng, 4);
        let ab = forest_edit_distance(&a, &b, &[]).cost;
        prop_assert_eq!(ab, forest_edit_distance(&b, &a, &[]).cost);
        prop_assert!(ab <= forest_edit_distance(&a, &c, &[]).cost + forest_edit_distance(&c, &b, &[]).cost);
        prop_assert_eq!(ab == 0, a == b || brute_force_ged(&a, &b) == 0);
    }
}
