use std::f64::consts::{FRAC_PI_2, PI};

use ellipsloc::conic::{dual_conic_to_ellipse, ellipse_bbox, ellipse_iou, inscribed_ellipse, wrap_half_turn};
use ellipsloc::{DualConic, Ellipse};
use nalgebra::Vector2;
use proptest::prelude::*;

fn ellipse() -> impl Strategy<Value = Ellipse> {
    (-1e3f64..1e3, -1e3f64..1e3, 0.1f64..200.0, 0.05f64..1.0, -10.0f64..10.0)
        .prop_map(|(x, y, a, ratio, t)| Ellipse::new(Vector2::new(x, y), a, a * ratio, t).unwrap())
}

/// Angle distance modulo a half turn.
fn half_turn_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn dual_conic_round_trip(e in ellipse(), scale in prop::sample::select(vec![1e-6, 0.5, -3.0, 1e6])) {
        let m = DualConic::new(DualConic::from(&e).matrix() * scale);
        let back = dual_conic_to_ellipse(&m).unwrap();
        let size = e.alpha().max(e.center().norm());
        prop_assert!((back.center() - e.center()).norm() <= 1e-9 * size);
        prop_assert!((back.alpha() - e.alpha()).abs() <= 1e-9 * size);
        prop_assert!((back.beta() - e.beta()).abs() <= 1e-9 * size);
        if e.alpha() - e.beta() > 1e-3 * e.alpha() {
            prop_assert!(half_turn_gap(back.theta(), e.theta()) < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn construction_normalizes_the_angle(a in 0.1f64..10.0, b in 0.1f64..10.0, t in -50.0f64..50.0) {
        let e = Ellipse::new(Vector2::zeros(), a, b, t).unwrap();
        prop_assert!(e.alpha() >= e.beta());
        prop_assert!((-FRAC_PI_2..FRAC_PI_2).contains(&e.theta()));
        // Boundary samples of the stored ellipse lie on the boundary described by the
        // raw parameters.
        let (s, c) = t.sin_cos();
        for i in 0..16 {
            let p = e.boundary_point(i as f64 * PI / 8.0);
            let (u, w) = (c * p.x + s * p.y, -s * p.x + c * p.y);
            let radial = (u * u / (a * a) + w * w / (b * b)).sqrt();
            prop_assert!((radial - 1.0).abs() * p.norm() < 1e-9);
        }
    }

    #[test]
    fn wrapped_angles_stay_in_range(t in -1e4f64..1e4) {
        let w = wrap_half_turn(t);
        prop_assert!((-FRAC_PI_2..FRAC_PI_2).contains(&w));
        prop_assert!(half_turn_gap(w, t) < 1e-9);
    }

    #[test]
    fn circles_have_zero_angle(x in -10.0f64..10.0, r in 0.01f64..10.0, t in -10.0f64..10.0) {
        let e = Ellipse::new(Vector2::new(x, -x), r, r, t).unwrap();
        prop_assert_eq!(e.theta(), 0.0);
        prop_assert_eq!(e, Ellipse::circle(Vector2::new(x, -x), r).unwrap());
        prop_assert_eq!(DualConic::from(&e), DualConic::from(&Ellipse::new(Vector2::new(x, -x), r, r, 0.0).unwrap()));
        let back = dual_conic_to_ellipse(&DualConic::from(&e)).unwrap();
        prop_assert!((back.alpha() - r).abs() < 1e-9 * r.max(1.0));
        prop_assert!((back.beta() - r).abs() < 1e-6 * r.max(1.0));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in ellipse(), b in ellipse()) {
        let ab = ellipse_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ellipse_iou(&b, &a)).abs() < 1e-12);
        prop_assert!(ellipse_iou(&a, &a) > 1.0 - 1e-9);
    }

    #[test]
    fn inscribed_ellipse_fills_its_box(e in ellipse()) {
        let b = ellipse_bbox(&e);
        let i = inscribed_ellipse(&b);
        let ib = ellipse_bbox(&i);
        prop_assert!((ib.min() - b.min()).norm() < 1e-9 * b.width().max(1.0));
        prop_assert!((ib.max() - b.max()).norm() < 1e-9 * b.width().max(1.0));
        prop_assert!((i.center() - e.center()).norm() < 1e-9 * b.width().max(1.0));
    }
}
