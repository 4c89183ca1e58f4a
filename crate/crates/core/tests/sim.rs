use ellipsloc::experiments::{trial_intrinsics, IMAGE_HEIGHT, IMAGE_WIDTH};
use ellipsloc::sim::{
    deform_scene, generate_scene, generate_scene_with, perturb_orientation, random_view, render_detections, rng,
    RenderMode, SceneParams, ViewParams,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generators_repeat_for_a_seed(seed in any::<u64>(), n in 1usize..8) {
        let a = generate_scene(seed, n, 0).unwrap();
        prop_assert_eq!(&a, &generate_scene(seed, n, 0).unwrap());
        let va = random_view(&mut rng(seed), &ViewParams::default());
        prop_assert_eq!(va, random_view(&mut rng(seed), &ViewParams::default()));
        let da = render_detections(&a.model, &va, &trial_intrinsics(), IMAGE_WIDTH, IMAGE_HEIGHT, RenderMode::InscribedOfTrueBbox);
        let db = render_detections(&a.model, &va, &trial_intrinsics(), IMAGE_WIDTH, IMAGE_HEIGHT, RenderMode::InscribedOfTrueBbox);
        prop_assert_eq!(da, db);
        prop_assert_eq!(deform_scene(&a, seed, 0.3).unwrap(), deform_scene(&a, seed, 0.3).unwrap());
        let r = a.model.objects()[0].ellipsoid.rotation();
        prop_assert_eq!(perturb_orientation(&r, 2.0, seed), perturb_orientation(&r, 2.0, seed));
    }

    #[test]
    fn generated_objects_do_not_overlap(seed in any::<u64>(), n in 2usize..8, dup in 0usize..3) {
        let p = SceneParams { n_objects: n, duplicate_classes: dup.min(n), ..Default::default() };
        let s = generate_scene_with(seed, &p).unwrap();
        let objs = s.model.objects();
        for (i, a) in objs.iter().enumerate() {
            for b in &objs[i + 1..] {
                let d = (a.ellipsoid.center() - b.ellipsoid.center()).norm();
                prop_assert!(d > a.ellipsoid.max_axis() + b.ellipsoid.max_axis());
            }
        }
    }

    #[test]
    fn rendered_detections_lie_in_the_image(seed in any::<u64>()) {
        let s = generate_scene(seed, 5, 0).unwrap();
        let view = random_view(&mut rng(seed ^ 7), &ViewParams::default());
        for d in render_detections(&s.model, &view, &trial_intrinsics(), IMAGE_WIDTH, IMAGE_HEIGHT, RenderMode::TrueProjection) {
            let b = d.detection.bbox();
            prop_assert!(b.min().x >= 0.0 && b.min().y >= 0.0);
            prop_assert!(b.max().x <= IMAGE_WIDTH as f64 && b.max().y <= IMAGE_HEIGHT as f64);
        }
    }
}
