use ellipsloc::metrics::{
    accuracy_curve, add_error, ellipsoid_surface_points, pose_error, rotation_angle, rotation_distance_deg,
};
use ellipsloc::quadric::rotation_from_vector;
use ellipsloc::{Ellipsoid, Pose};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform3(-3.0f64..3.0).prop_map(|v| rotation_from_vector(Vector3::from(v)))
}

fn vector(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), vector(5.0)).prop_map(|(r, t)| Pose::new(r, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rotation_distance_is_symmetric(a in rotation(), b in rotation()) {
        let d = rotation_distance_deg(&a, &b);
        prop_assert!((d - rotation_distance_deg(&b, &a)).abs() < 1e-9);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert!(rotation_distance_deg(&a, &a) < 1e-6);
    }

    #[test]
    fn rotation_angle_matches_the_axis_angle(v in vector(1.0), angle in 0.0f64..std::f64::consts::PI) {
        prop_assume!(v.norm() > 1e-3);
        let r = rotation_from_vector(v.normalize() * angle);
        prop_assert!((rotation_angle(&r) - angle).abs() < 1e-9);
    }

    #[test]
    fn position_error_is_a_metric(a in pose(), b in pose(), c in pose()) {
        let (ab, bc, ac) = (pose_error(&a, &b), pose_error(&b, &c), pose_error(&a, &c));
        prop_assert!(ac.position <= ab.position + bc.position + 1e-12);
        prop_assert_eq!(ab.position, pose_error(&b, &a).position);
        prop_assert!(ac.orientation <= ab.orientation + bc.orientation + 1e-6);
    }

    #[test]
    fn accuracy_curve_never_decreases(errors in prop::collection::vec(0.0f64..10.0, 0..50), mut t in prop::collection::vec(0.0f64..12.0, 1..20)) {
        t.sort_by(|a, b| a.total_cmp(b));
        let curve = accuracy_curve(&errors, &t);
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curve.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn add_survives_a_common_rigid_motion(est in pose(), gt in pose(), r in rotation(), t in vector(3.0), c in vector(1.0)) {
        let e = Ellipsoid::new(c, Vector3::new(0.3, 0.2, 0.1), Matrix3::identity()).unwrap();
        let points = ellipsoid_surface_points(&e, 64);
        let moved: Vec<Vector3<f64>> = points.iter().map(|x| r * x + t).collect();
        let a = add_error(&points, &est, &gt).unwrap();
        let b = add_error(&moved, &est.after_world_motion(&r, &t), &gt.after_world_motion(&r, &t)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}
