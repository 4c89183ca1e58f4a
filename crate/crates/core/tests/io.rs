use ellipsloc::io::{
    CameraFile, CameraRecord, DetectionRecord, DetectionsFile, EllipseRecord, ObjectRecord, PoseRecord, SceneFile,
    FORMAT_VERSION,
};
use proptest::prelude::*;

fn unit_quaternion() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("away from zero", |q| q.iter().map(|v| v * v).sum::<f64>() > 0.01)
        .prop_map(|q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.map(|v| v / n)
        })
}

fn object() -> impl Strategy<Value = ObjectRecord> {
    (
        "[a-z][a-z0-9_]{0,7}",
        "[a-z]{1,6}",
        prop::array::uniform3(-1e3f64..1e3),
        prop::array::uniform3(1e-3f64..10.0),
        unit_quaternion(),
    )
        .prop_map(|(id, class, center, axes, rotation)| ObjectRecord { id, class, center, axes, rotation })
}

fn scene() -> impl Strategy<Value = SceneFile> {
    prop::collection::vec(object(), 0..6).prop_map(|mut objects| {
        // Ids must be unique.
        for (i, o) in objects.iter_mut().enumerate() {
            o.id = format!("{}{i}", o.id);
        }
        SceneFile { format_version: FORMAT_VERSION, objects }
    })
}

fn camera() -> impl Strategy<Value = CameraRecord> {
    (
        "[a-z0-9]{1,8}",
        prop::array::uniform4(1.0f64..2000.0),
        1u32..4000,
        1u32..4000,
        prop::option::of((unit_quaternion(), prop::array::uniform3(-100.0f64..100.0))),
    )
        .prop_map(|(id, f, width, height, pose)| CameraRecord {
            id,
            fx: f[0],
            fy: f[1],
            cx: f[2],
            cy: f[3],
            width,
            height,
            pose: pose.map(|(rotation, translation)| PoseRecord { rotation, translation }),
        })
}

fn detection() -> impl Strategy<Value = DetectionRecord> {
    let ellipse = (prop::array::uniform2(-500.0f64..500.0), 0.5f64..50.0, 0.1f64..1.0, -1.5f64..1.5, prop::option::of("[a-z]{1,4}"))
        .prop_map(|(center, a, ratio, angle, object)| EllipseRecord { center, axes: [a, a * ratio], angle, object });
    (
        "[a-z]{1,6}",
        0.0f64..=1.0,
        prop::array::uniform2(-500.0f64..500.0),
        prop::array::uniform2(0.5f64..300.0),
        prop::collection::vec(ellipse, 0..3),
    )
        .prop_map(|(class, score, lo, size, ellipses)| DetectionRecord {
            class,
            score,
            bbox: [lo[0], lo[1], lo[0] + size[0], lo[1] + size[1]],
            ellipses,
        })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scene_files_round_trip_bit_exactly(doc in scene()) {
        let back = SceneFile::load(&doc.save()).unwrap();
        prop_assert_eq!(&back, &doc);
        for (a, b) in back.objects.iter().zip(&doc.objects) {
            prop_assert_eq!(bits(&a.center), bits(&b.center));
            prop_assert_eq!(bits(&a.axes), bits(&b.axes));
            prop_assert_eq!(bits(&a.rotation), bits(&b.rotation));
        }
    }

    #[test]
    fn camera_files_round_trip(cams in prop::collection::vec(camera(), 1..4)) {
        let cams: Vec<CameraRecord> = cams
            .into_iter()
            .enumerate()
            .map(|(i, c)| CameraRecord { id: format!("{}{i}", c.id), ..c })
            .collect();
        let doc = CameraFile::new(cams);
        prop_assert_eq!(CameraFile::load(&doc.save()).unwrap(), doc);
    }

    #[test]
    fn detection_files_round_trip(dets in prop::collection::vec(detection(), 0..5)) {
        let doc = DetectionsFile { format_version: FORMAT_VERSION, detections: dets };
        let back = DetectionsFile::load(&doc.save()).unwrap();
        prop_assert_eq!(&back, &doc);
        let parsed = back.to_detections().unwrap();
        prop_assert_eq!(DetectionsFile::from_detections(&parsed).detections.len(), doc.detections.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    /// Corrupted files are either rejected or describe a valid model.
    #[test]
    fn mutated_scene_files_never_load_invalid_models(
        doc in scene(),
        edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..4),
    ) {
        let mut bytes = doc.save().into_bytes();
        for (at, byte) in edits {
            let i = at.index(bytes.len());
            bytes[i] = byte;
        }
        let text = String::from_utf8_lossy(&bytes);
        if let Ok(loaded) = SceneFile::load(&text) {
            let model = loaded.to_model().unwrap();
            for o in model.objects() {
                let e = &o.ellipsoid;
                prop_assert!(e.axes().iter().all(|a| a.is_finite() && *a > 0.0));
                prop_assert!(e.center().iter().all(|c| c.is_finite()));
                let r = e.rotation();
                prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-5);
            }
        }
    }
}
