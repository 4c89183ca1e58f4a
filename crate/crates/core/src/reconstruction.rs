//! Ellipsoid-cloud scene models reconstructed from calibrated ellipse observations.
//!
//! Each ellipsoid is the linear least-squares solution of `s_i C*_i = P_i Q* P_iᵀ` over all
//! views, with the ten entries of `Q*` and one scale per view as unknowns. The system is
//! solved by SVD in normalized image coordinates and a normalized world frame.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3};

use crate::conic::{ellipse_bbox, inscribed_ellipse, BBox, DualConic, Ellipse};
use crate::error::{Error, Result};
use crate::quadric::{
    dual_quadric_to_ellipsoid, project_ellipsoid, Camera, CameraIntrinsics, DualQuadric,
    Ellipsoid, Pose,
};

/// Singular-value gap below which the nullspace is considered more than one-dimensional.
pub const MIN_NULLSPACE_GAP: f64 = 10.0;

/// Gap expected on noise-free observations.
pub const EXACT_NULLSPACE_GAP: f64 = 1e3;

/// One ellipse seen by a calibrated camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub ellipse: Ellipse,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: String,
    pub class: String,
    pub ellipsoid: Ellipsoid,
}

/// Labelled ellipsoid cloud with unique object ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneModel {
    objects: Vec<SceneObject>,
}

impl SceneModel {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self> {
        let mut seen = HashSet::new();
        for o in &objects {
            if !seen.insert(o.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate object id `{}`", o.id)));
            }
        }
        Ok(Self { objects })
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Copy with each ellipsoid replaced by `f(object)`.
    pub fn map_ellipsoids(&self, mut f: impl FnMut(&SceneObject) -> Ellipsoid) -> SceneModel {
        SceneModel {
            objects: self
                .objects
                .iter()
                .map(|o| SceneObject {
                    id: o.id.clone(),
                    class: o.class.clone(),
                    ellipsoid: f(o),
                })
                .collect(),
        }
    }

    pub fn without(&self, id: &str) -> SceneModel {
        SceneModel {
            objects: self.objects.iter().filter(|o| o.id != id).cloned().collect(),
        }
    }
}

/// Box annotation of an object in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image: String,
    pub bbox: BBox,
    /// Object identifier.
    pub label: String,
    /// Semantic class; defaults to the label.
    pub class: Option<String>,
}

// Index pairs of the ten independent entries of a symmetric 4×4 matrix.
const SYM4: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];
const SYM3: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn sym3_weight(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        std::f64::consts::SQRT_2
    }
}

/// Rows of the linear map `q -> vec(P Q Pᵀ)`.
fn projection_block(p: &Matrix3x4<f64>) -> [[f64; 10]; 6] {
    let mut block = [[0.0; 10]; 6];
    for (k, &(a, b)) in SYM4.iter().enumerate() {
        let mut e = Matrix4::zeros();
        e[(a, b)] = 1.0;
        e[(b, a)] = 1.0;
        let m = p * e * p.transpose();
        for (r, &(i, j)) in SYM3.iter().enumerate() {
            block[r][k] = sym3_weight(i, j) * m[(i, j)];
        }
    }
    block
}

pub fn reconstruct_ellipsoid(obs: &[Observation]) -> Result<Ellipsoid> {
    let label = obs.first().map(|o| o.label.clone()).unwrap_or_default();
    let views: Vec<ConicView> = obs
        .iter()
        .map(|o| ConicView {
            pose: o.pose,
            intrinsics: o.intrinsics,
            conic: DualConic::from(&o.ellipse),
        })
        .collect();
    reconstruct_from_conics(&views).map_err(|e| match e {
        Error::InsufficientViews { got, .. } => Error::InsufficientViews { label, got },
        other => other,
    })
}

/// A dual conic observed by a calibrated camera, at any scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConicView {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub conic: DualConic,
}

/// [`reconstruct_ellipsoid`] on raw dual conics.
pub fn reconstruct_from_conics(obs: &[ConicView]) -> Result<Ellipsoid> {
    if obs.len() < 3 {
        return Err(Error::InsufficientViews {
            label: String::new(),
            got: obs.len(),
        });
    }
    let centers = obs
        .iter()
        .map(|o| crate::conic::dual_conic_to_ellipse(&o.conic).map(|e| e.center()))
        .collect::<Result<Vec<_>>>()?;

    // World normalization: origin at the least-squares intersection of the center rays,
    // unit scale at the mean camera distance.
    let rays: Vec<(Vector3<f64>, Vector3<f64>)> = obs
        .iter()
        .zip(&centers)
        .map(|(o, c)| {
            let origin = o.pose.center();
            let d = o.pose.rotation().transpose() * o.intrinsics.unproject(c);
            (origin, d.normalize())
        })
        .collect();
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (origin, d) in &rays {
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * origin;
    }
    let anchor = a
        .try_inverse()
        .map(|inv| inv * b)
        .unwrap_or_else(|| rays.iter().map(|r| r.0).sum::<Vector3<f64>>() / rays.len() as f64);
    let scale = rays.iter().map(|r| (r.0 - anchor).norm()).sum::<f64>() / rays.len() as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateConfiguration(
            "camera centers coincide with the object".into(),
        ));
    }
    // x = scale x' + anchor.
    let mut denorm = Matrix4::identity() * scale;
    denorm.fixed_view_mut::<3, 1>(0, 3).copy_from(&anchor);
    denorm[(3, 3)] = 1.0;

    let n = obs.len();
    let cols = 10 + n;
    let mut m = DMatrix::zeros(6 * n, cols);
    for (v, o) in obs.iter().enumerate() {
        let p = o.pose.extrinsic_matrix() * denorm;
        let kinv = o.intrinsics.inverse_matrix();
        let c = kinv * o.conic.matrix() * kinv.transpose();
        let c = c / c.norm();
        let block = projection_block(&p);
        for (r, &(i, j)) in SYM3.iter().enumerate() {
            let row = 6 * v + r;
            for k in 0..10 {
                m[(row, k)] = block[r][k];
            }
            m[(row, 10 + v)] = -sym3_weight(i, j) * c[(i, j)];
        }
    }

    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second, largest) = (sv[order[0]], sv[order[1]], sv[order[sv.len() - 1]]);
    if second <= 1e-12 * largest || second < MIN_NULLSPACE_GAP * smallest {
        return Err(Error::DegenerateConfiguration(format!(
            "nullspace is not one-dimensional (singular values {second:e}, {smallest:e})"
        )));
    }
    let sol = v_t.row(order[0]);
    let mut q = Matrix4::zeros();
    for (k, &(i, j)) in SYM4.iter().enumerate() {
        q[(i, j)] = sol[k];
        q[(j, i)] = sol[k];
    }
    let local = dual_quadric_to_ellipsoid(&DualQuadric::new(q))?;
    Ellipsoid::new(
        local.center() * scale + anchor,
        local.axes() * scale,
        local.rotation(),
    )
}

/// Failure while building a scene, tagged with the object label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFailure {
    pub label: String,
    pub error: Error,
}

/// Reconstruct every labelled object from inscribed ellipses of its boxes, collecting
/// per-label failures instead of stopping at the first one.
pub fn build_scene_report(
    annotations: &[Annotation],
    cameras: &HashMap<String, Camera>,
) -> Result<(SceneModel, Vec<LabelFailure>)> {
    let mut groups: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        if !cameras.contains_key(&a.image) {
            return Err(Error::InvalidConfig(format!(
                "annotation of `{}` refers to unknown image `{}`",
                a.label, a.image
            )));
        }
        groups.entry(a.label.as_str()).or_default().push(a);
    }
    let mut objects = Vec::new();
    let mut failures = Vec::new();
    for (label, anns) in groups {
        let obs: Vec<Observation> = anns
            .iter()
            .map(|a| {
                let cam = &cameras[&a.image];
                Observation {
                    pose: cam.pose,
                    intrinsics: cam.intrinsics,
                    ellipse: inscribed_ellipse(&a.bbox),
                    label: label.to_string(),
                }
            })
            .collect();
        match reconstruct_ellipsoid(&obs) {
            Ok(ellipsoid) => objects.push(SceneObject {
                id: label.to_string(),
                class: anns
                    .iter()
                    .find_map(|a| a.class.clone())
                    .unwrap_or_else(|| label.to_string()),
                ellipsoid,
            }),
            Err(error) => failures.push(LabelFailure {
                label: label.to_string(),
                error,
            }),
        }
    }
    Ok((SceneModel::new(objects)?, failures))
}

pub fn build_scene(
    annotations: &[Annotation],
    cameras: &HashMap<String, Camera>,
) -> Result<SceneModel> {
    let (scene, failures) = build_scene_report(annotations, cameras)?;
    match failures.into_iter().next() {
        Some(f) => Err(Error::Reconstruction {
            label: f.label,
            source: Box::new(f.error),
        }),
        None => Ok(scene),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseAnnotation {
    pub image: String,
    pub label: String,
    pub ellipse: Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedObject {
    pub image: String,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReprojectionReport {
    pub annotations: Vec<EllipseAnnotation>,
    pub skipped: Vec<SkippedObject>,
}

/// Project the scene into every camera. Objects behind a camera or whose ellipse lies
/// entirely outside the image are reported as skipped.
pub fn reproject_annotations(scene: &SceneModel, cameras: &[(String, Camera)]) -> ReprojectionReport {
    let mut report = ReprojectionReport::default();
    for (image, cam) in cameras {
        let frame = BBox::from_corners(0.0, 0.0, cam.width as f64, cam.height as f64).ok();
        for o in scene.objects() {
            let skip = |reason: String| SkippedObject {
                image: image.clone(),
                label: o.id.clone(),
                reason,
            };
            match project_ellipsoid(&o.ellipsoid, &cam.pose, &cam.intrinsics) {
                Ok(ellipse) => {
                    let inside = frame.is_none_or(|f| ellipse_bbox(&ellipse).intersects(&f));
                    if inside {
                        report.annotations.push(EllipseAnnotation {
                            image: image.clone(),
                            label: o.id.clone(),
                            ellipse,
                        });
                    } else {
                        report.skipped.push(skip("outside image".into()));
                    }
                }
                Err(e) => report.skipped.push(skip(e.to_string())),
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ellipse_iou;
    use crate::quadric::rotation_from_vector;
    use nalgebra::Vector2;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    fn object() -> Ellipsoid {
        Ellipsoid::new(
            Vector3::new(0.3, -0.2, 0.5),
            Vector3::new(0.4, 0.25, 0.15),
            rotation_from_vector(Vector3::new(0.3, -0.5, 0.8)),
        )
        .unwrap()
    }

    fn orbit(n: usize, target: Vector3<f64>) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 1.9;
                let eye = target + Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.0 + 0.3 * i as f64);
                Pose::look_at(eye, target, Vector3::z()).unwrap()
            })
            .collect()
    }

    fn observe(e: &Ellipsoid, poses: &[Pose]) -> Vec<Observation> {
        poses
            .iter()
            .map(|p| Observation {
                pose: *p,
                intrinsics: k(),
                ellipse: project_ellipsoid(e, p, &k()).unwrap(),
                label: "obj".into(),
            })
            .collect()
    }

    #[test]
    fn exact_three_views() {
        let e = object();
        let rec = reconstruct_ellipsoid(&observe(&e, &orbit(3, e.center()))).unwrap();
        let truth = e.canonical();
        assert!((rec.center() - truth.center()).norm() < 1e-6);
        assert!((rec.axes() - truth.axes()).norm() < 1e-6);
    }

    #[test]
    fn shared_camera_center_is_degenerate() {
        let e = object();
        let eye = Vector3::new(3.0, 0.0, 1.0);
        let poses: Vec<Pose> = [0.0, 0.05, -0.05]
            .iter()
            .map(|d| Pose::look_at(eye, e.center() + Vector3::new(0.0, *d, *d), Vector3::z()).unwrap())
            .collect();
        assert!(matches!(
            reconstruct_ellipsoid(&observe(&e, &poses)),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn two_views_are_insufficient() {
        let e = object();
        assert!(matches!(
            reconstruct_ellipsoid(&observe(&e, &orbit(2, e.center()))),
            Err(Error::InsufficientViews { got: 2, .. })
        ));
    }

    #[test]
    fn conic_scale_does_not_matter() {
        let e = object();
        let obs = observe(&e, &orbit(4, e.center()));
        let a = reconstruct_ellipsoid(&obs).unwrap();
        let rescaled: Vec<ConicView> = obs
            .iter()
            .zip([3.0, -0.2, 11.0, 0.5])
            .map(|(o, s)| ConicView {
                pose: o.pose,
                intrinsics: o.intrinsics,
                conic: DualConic::new(*DualConic::from(&o.ellipse).matrix() * s),
            })
            .collect();
        let b = reconstruct_from_conics(&rescaled).unwrap();
        assert!((a.center() - b.center()).norm() < 1e-9);
        assert!((a.axes() - b.axes()).norm() < 1e-9);
    }

    fn box_cameras(poses: &[Pose]) -> HashMap<String, Camera> {
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                (
                    format!("img{i}"),
                    Camera {
                        intrinsics: k(),
                        pose: *p,
                        width: 640,
                        height: 480,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn inscribed_boxes_give_consistent_ellipsoids() {
        let objs = [
            object(),
            Ellipsoid::new(
                Vector3::new(-0.8, 0.6, 0.3),
                Vector3::new(0.2, 0.2, 0.3),
                rotation_from_vector(Vector3::new(0.0, 0.2, 0.1)),
            )
            .unwrap(),
            Ellipsoid::sphere(Vector3::new(0.9, 0.9, 0.2), 0.2).unwrap(),
        ];
        let poses = orbit(3, Vector3::new(0.0, 0.0, 0.3));
        let cams = box_cameras(&poses);
        let mut anns = Vec::new();
        for (i, p) in poses.iter().enumerate() {
            for (j, o) in objs.iter().enumerate() {
                let el = project_ellipsoid(o, p, &k()).unwrap();
                anns.push(Annotation {
                    image: format!("img{i}"),
                    bbox: ellipse_bbox(&el),
                    label: format!("obj{j}"),
                    class: None,
                });
            }
        }
        let scene = build_scene(&anns, &cams).unwrap();
        assert_eq!(scene.len(), 3);
        for a in &anns {
            let cam = &cams[&a.image];
            let rec = scene.get(&a.label).unwrap();
            let el = project_ellipsoid(&rec.ellipsoid, &cam.pose, &k()).unwrap();
            assert!(ellipse_iou(&el, &inscribed_ellipse(&a.bbox)) > 0.8);
        }
    }

    #[test]
    fn missing_views_and_empty_input() {
        let poses = orbit(3, Vector3::zeros());
        let cams = box_cameras(&poses);
        let b = BBox::from_corners(300.0, 200.0, 340.0, 260.0).unwrap();
        let anns: Vec<Annotation> = (0..2)
            .map(|i| Annotation {
                image: format!("img{i}"),
                bbox: b,
                label: "lamp".into(),
                class: None,
            })
            .collect();
        match build_scene(&anns, &cams) {
            Err(Error::Reconstruction { label, source }) => {
                assert_eq!(label, "lamp");
                assert!(matches!(*source, Error::InsufficientViews { got: 2, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_scene(&[], &cams).unwrap().is_empty());
    }

    #[test]
    fn reprojection_report() {
        let scene = SceneModel::new(vec![
            SceneObject {
                id: "front".into(),
                class: "ball".into(),
                ellipsoid: Ellipsoid::sphere(Vector3::new(0.0, 0.0, 4.0), 0.3).unwrap(),
            },
            SceneObject {
                id: "back".into(),
                class: "ball".into(),
                ellipsoid: Ellipsoid::sphere(Vector3::new(0.0, 0.0, -4.0), 0.3).unwrap(),
            },
        ])
        .unwrap();
        let cam = Camera {
            intrinsics: k(),
            pose: Pose::identity(),
            width: 640,
            height: 480,
        };
        let report = reproject_annotations(&scene, &[("i0".into(), cam)]);
        assert_eq!(report.annotations.len(), 1);
        assert!((report.annotations[0].ellipse.center() - Vector2::new(320.0, 240.0)).norm() < 1e-9);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].label, "back");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let o = SceneObject {
            id: "a".into(),
            class: "c".into(),
            ellipsoid: object(),
        };
        assert!(SceneModel::new(vec![o.clone(), o]).is_err());
    }
}
