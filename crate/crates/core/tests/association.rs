use ellipsloc::association::{localize, score_pose, Detection, RansacConfig};
use ellipsloc::conic::{inscribed_ellipse, BBox};
use ellipsloc::experiments::{trial_intrinsics, IMAGE_HEIGHT, IMAGE_WIDTH};
use ellipsloc::metrics::{pose_error, valid_pose, VALID_ORIENTATION_DEG, VALID_POSITION_M};
use ellipsloc::sim::{generate_scene, random_view, render_detections, rng, trial_seed, RenderMode, SimDetection, ViewParams};
use ellipsloc::solvers::Correspondence;
use ellipsloc::reconstruction::SceneModel;
use ellipsloc::{Error, Pose};
use nalgebra::Vector3;
use rand::Rng;

/// A scene of `n` objects (`dup` sharing one class) and a view that sees all of them.
fn full_view(seed: u64, n: usize, dup: usize) -> (SceneModel, Pose, Vec<SimDetection>) {
    for i in 0.. {
        let s = trial_seed(seed, i);
        let scene = generate_scene(s, n, dup).unwrap().model;
        let pose = random_view(&mut rng(s ^ 1), &ViewParams::default());
        let dets = render_detections(&scene, &pose, &trial_intrinsics(), IMAGE_WIDTH, IMAGE_HEIGHT, RenderMode::TrueProjection);
        if dets.len() == n {
            return (scene, pose, dets);
        }
    }
    unreachable!()
}

fn detections(sim: &[SimDetection]) -> Vec<Detection> {
    sim.iter().map(|d| d.detection.clone()).collect()
}

#[test]
fn identical_inputs_give_identical_results() {
    let (scene, _, sim) = full_view(3, 5, 2);
    let dets = detections(&sim);
    let cfg = RansacConfig { seed: 11, max_iterations: 20, ..Default::default() };
    let a = localize(&dets, &scene, &trial_intrinsics(), &cfg, None).unwrap();
    let b = localize(&dets, &scene, &trial_intrinsics(), &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.pose.rotation().as_slice(), b.pose.rotation().as_slice());
}

#[test]
fn every_inlier_rescores_above_threshold() {
    let k = trial_intrinsics();
    let cfg = RansacConfig::default();
    for seed in 0..10 {
        let (scene, _, sim) = full_view(100 + seed, 4, 2);
        let dets = detections(&sim);
        let res = localize(&dets, &scene, &k, &cfg, None).unwrap();
        let pairs: Vec<Correspondence> = res
            .inliers
            .iter()
            .map(|a| Correspondence {
                ellipse: *dets[a.detection].ellipse_for(&a.object_id).unwrap(),
                ellipsoid: scene.get(&a.object_id).unwrap().ellipsoid,
            })
            .collect();
        let score = score_pose(&res.pose, &pairs, &k);
        for (iou, a) in score.ious.iter().zip(&res.inliers) {
            assert!(*iou >= cfg.iou_threshold, "inlier {} rescored at {iou}", a.object_id);
            assert_eq!(*iou, a.iou);
        }
    }
}

#[test]
fn ambiguous_instances_are_resolved_by_overlap() {
    let k = trial_intrinsics();
    for seed in 0..5 {
        let (scene, truth, sim) = full_view(200 + seed, 4, 2);
        let res = localize(&detections(&sim), &scene, &k, &RansacConfig::default(), None).unwrap();
        let e = pose_error(&res.pose, &truth);
        assert!(e.position < 1e-6 && e.orientation < 1e-6, "{e:?}");
        assert_eq!(res.inliers.len(), 4);
        for a in &res.inliers {
            assert_eq!(sim[a.detection].object.as_deref(), Some(a.object_id.as_str()));
        }
    }
}

#[test]
fn a_detection_outside_the_model_is_rejected() {
    let k = trial_intrinsics();
    for seed in 0..3 {
        // obj0 and obj1 share a class and only obj1 stays in the model.
        let (full, truth, sim) = full_view(300 + seed, 3, 2);
        let scene = full.without("obj0");
        let res = localize(&detections(&sim), &scene, &k, &RansacConfig::default(), None).unwrap();
        let e = pose_error(&res.pose, &truth);
        assert!(valid_pose(&e, 0.01, 0.5), "{e:?}");
        let stray = sim.iter().position(|d| d.object.as_deref() == Some("obj0")).unwrap();
        assert!(res.inliers.iter().all(|a| a.detection != stray));
        assert_eq!(res.inliers.len(), 2);
    }
}

#[test]
fn one_detection_without_orientation_is_not_enough() {
    let (scene, truth, sim) = full_view(400, 3, 0);
    let k = trial_intrinsics();
    let one = detections(&sim[..1]);
    let err = localize(&one, &scene, &k, &RansacConfig::default(), None).unwrap_err();
    assert!(matches!(err, Error::NotEnoughObjects { available: 1 }));
    let res = localize(&one, &scene, &k, &RansacConfig::default(), Some(&truth.rotation())).unwrap();
    assert!(pose_error(&res.pose, &truth).position < 1e-6);
}

#[test]
fn no_hypothesis_above_threshold_is_reported() {
    let (scene, _, sim) = full_view(500, 3, 0);
    // Boxes moved far from where any pose consistent with the others would put them.
    let dets: Vec<Detection> = sim
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let b = d.detection.bbox();
            let s = (i as f64 + 1.0) * 37.0;
            let moved = BBox::from_corners(b.min().x * 0.3 + s, b.min().y * 0.2, b.min().x * 0.3 + s + 4.0, b.min().y * 0.2 + 90.0).unwrap();
            Detection::inscribed(moved, d.detection.class(), 1.0).unwrap()
        })
        .collect();
    let err = localize(&dets, &scene, &trial_intrinsics(), &RansacConfig::default(), None).unwrap_err();
    assert!(matches!(err, Error::NoValidPose), "{err:?}");
}

#[test]
fn scoring_prefers_the_true_pose() {
    let (scene, truth, sim) = full_view(600, 3, 0);
    let k = trial_intrinsics();
    let pairs: Vec<Correspondence> = sim
        .iter()
        .map(|d| Correspondence {
            ellipse: d.true_ellipse,
            ellipsoid: scene.get(d.object.as_deref().unwrap()).unwrap().ellipsoid,
        })
        .collect();
    let exact = score_pose(&truth, &pairs, &k);
    assert!(exact.ious.iter().all(|&v| v >= 0.999));

    let side = truth.rotation().transpose() * Vector3::x();
    let shifted = Pose::from_center(truth.rotation(), truth.center() + side).unwrap();
    let moved = score_pose(&shifted, &pairs, &k);
    assert!(moved.mean < exact.mean);
    assert!(moved.ious.iter().all(|v| (0.0..=1.0).contains(v)));

    // Turned around, every object is behind the camera.
    let turn = nalgebra::Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0));
    let behind = Pose::from_center(turn * truth.rotation(), truth.center()).unwrap();
    assert!(score_pose(&behind, &pairs, &k).ious.iter().all(|&v| v == 0.0));
}

#[test]
fn success_rate_does_not_grow_with_spurious_detections() {
    let k = trial_intrinsics();
    let fractions = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let trials = 200;
    let mut successes = vec![0usize; fractions.len()];
    for t in 0..trials {
        let (scene, truth, sim) = full_view(trial_seed(700, t), 4, 0);
        let classes: Vec<String> = scene.objects().iter().map(|o| o.class.clone()).collect();
        // Nested spurious sets: each level adds boxes to the previous one.
        let mut r = rng(trial_seed(701, t));
        let spurious: Vec<Detection> = (0..sim.len())
            .map(|_| {
                let w = r.random_range(20.0..120.0);
                let h = r.random_range(20.0..120.0);
                let x = r.random_range(0.0..IMAGE_WIDTH as f64 - w);
                let y = r.random_range(0.0..IMAGE_HEIGHT as f64 - h);
                let b = BBox::from_corners(x, y, x + w, y + h).unwrap();
                let class = &classes[r.random_range(0..classes.len())];
                Detection::inscribed(b, class, 1.0).unwrap()
            })
            .collect();
        for (i, f) in fractions.iter().enumerate() {
            let extra = (f / (1.0 - f) * sim.len() as f64).round() as usize;
            let mut dets = detections(&sim);
            dets.extend(spurious[..extra].iter().cloned());
            let ok = localize(&dets, &scene, &k, &RansacConfig { seed: t, ..Default::default() }, None)
                .map(|res| valid_pose(&pose_error(&res.pose, &truth), VALID_POSITION_M, VALID_ORIENTATION_DEG))
                .unwrap_or(false);
            successes[i] += ok as usize;
        }
    }
    for w in successes.windows(2) {
        assert!(w[1] <= w[0], "success counts {successes:?}");
    }
    assert_eq!(successes[0], trials as usize);
}

#[test]
fn inscribed_detection_boxes_match_their_ellipse() {
    let b = BBox::from_corners(10.0, 20.0, 50.0, 40.0).unwrap();
    let d = Detection::inscribed(b, "cup", 0.5).unwrap();
    assert_eq!(*d.ellipse_for("anything").unwrap(), inscribed_ellipse(&b));
    assert!(Detection::inscribed(b, "cup", 1.5).is_err());
}
