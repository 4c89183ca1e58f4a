//! Synthetic scenes, cameras and detections.
//!
//! Objects never occlude each other: generated ellipsoids are well separated and
//! rendering ignores depth ordering. The exact projection stands in for a learned ellipse
//! predictor, so results obtained with it are geometric upper bounds.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::association::{Detection, DetectionEllipse};
use crate::conic::{ellipse_bbox, inscribed_ellipse, BBox, Ellipse};
use crate::error::{Error, Result};
use crate::loss::{denormalize_from_crop, normalize_to_crop, CropFrame};
use crate::quadric::{
    center_gap, in_front, project_ellipsoid, rotation_from_vector, CameraIntrinsics, Ellipsoid,
    Pose,
};
use crate::reconstruction::{SceneModel, SceneObject};

/// Seeded generator used everywhere in the simulator.
pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent seed for trial `i` of a run seeded with `seed` (splitmix64 finalizer).
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniformly distributed rotation (Shoemake).
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = 2.0 * std::f64::consts::PI;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

pub fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScene {
    pub model: SceneModel,
    pub up: Vector3<f64>,
}

/// Parameters of [`generate_scene_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub n_objects: usize,
    /// Number of objects sharing one class; 0 or 1 gives all-distinct classes.
    pub duplicate_classes: usize,
    pub xy_range: f64,
    pub z_range: (f64, f64),
    pub axis_range: (f64, f64),
    /// When set, the two minor semi-axes are this fraction range of the major one.
    pub elongation: Option<(f64, f64)>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_objects: 3,
            duplicate_classes: 0,
            xy_range: 1.5,
            z_range: (0.0, 1.0),
            axis_range: (0.05, 0.5),
            elongation: None,
        }
    }
}

pub fn generate_scene(seed: u64, n_objects: usize, duplicate_classes: usize) -> Result<SimScene> {
    generate_scene_with(
        seed,
        &SceneParams {
            n_objects,
            duplicate_classes,
            ..Default::default()
        },
    )
}

/// Random non-intersecting ellipsoids: centers are kept further apart than the sum of
/// their largest semi-axes.
pub fn generate_scene_with(seed: u64, p: &SceneParams) -> Result<SimScene> {
    if p.n_objects == 0 {
        return Err(Error::InvalidConfig("a scene needs at least one object".into()));
    }
    if p.duplicate_classes > p.n_objects {
        return Err(Error::InvalidConfig("more duplicates than objects".into()));
    }
    let (amin, amax) = p.axis_range;
    if !(amin > 0.0 && amin <= amax) {
        return Err(Error::InvalidConfig("invalid semi-axis range".into()));
    }
    let mut rng = rng(seed);
    let mut placed: Vec<Ellipsoid> = Vec::with_capacity(p.n_objects);
    let mut attempts = 0usize;
    while placed.len() < p.n_objects {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidConfig(format!(
                "could not place {} separated objects",
                p.n_objects
            )));
        }
        let center = Vector3::new(
            rng.random_range(-p.xy_range..=p.xy_range),
            rng.random_range(-p.xy_range..=p.xy_range),
            rng.random_range(p.z_range.0..=p.z_range.1),
        );
        let axes = match p.elongation {
            None => Vector3::new(
                rng.random_range(amin..=amax),
                rng.random_range(amin..=amax),
                rng.random_range(amin..=amax),
            ),
            Some((lo, hi)) => {
                let a: f64 = rng.random_range(amin..=amax);
                Vector3::new(a, a * rng.random_range(lo..=hi), a * rng.random_range(lo..=hi))
            }
        };
        let rotation = random_rotation(&mut rng);
        let e = Ellipsoid::new(center, axes, rotation)?;
        if placed
            .iter()
            .all(|o| (o.center() - center).norm() > o.max_axis() + e.max_axis())
        {
            placed.push(e);
        }
    }
    let dup = if p.duplicate_classes >= 2 { p.duplicate_classes } else { 0 };
    let objects = placed
        .into_iter()
        .enumerate()
        .map(|(i, ellipsoid)| SceneObject {
            id: format!("obj{i}"),
            class: if i < dup { "class0".to_string() } else { format!("class{}", i + 1 - dup.min(1)) },
            ellipsoid,
        })
        .collect();
    Ok(SimScene {
        model: SceneModel::new(objects)?,
        up: Vector3::z(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub radius: f64,
    pub height: f64,
    pub target: Vector3<f64>,
}

/// Zero-roll cameras on a horizontal circle, all looking at `target`.
pub fn orbit(target: Vector3<f64>, radius: f64, height: f64, n: usize) -> Result<Trajectory> {
    if !(radius > 0.0) || n == 0 {
        return Err(Error::InvalidConfig("orbit needs a positive radius and at least one pose".into()));
    }
    let poses = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let eye = target + Vector3::new(radius * a.cos(), radius * a.sin(), height);
            Pose::look_at(eye, target, Vector3::z())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        poses,
        radius,
        height,
        target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    TrueProjection,
    InscribedOfTrueBbox,
}

/// A rendered detection with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection {
    pub detection: Detection,
    /// Scene object that produced it; `None` for objects absent from the model.
    pub object: Option<String>,
    pub true_ellipse: Ellipse,
}

/// Image of one ellipsoid if it lies in front of the camera and fully inside the image.
pub fn visible_projection(
    e: &Ellipsoid,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: u32,
    height: u32,
) -> Option<Ellipse> {
    if !in_front(e, pose) {
        return None;
    }
    let ell = project_ellipsoid(e, pose, k).ok()?;
    let b = ellipse_bbox(&ell);
    let inside = b.min().x >= 0.0
        && b.min().y >= 0.0
        && b.max().x <= width as f64
        && b.max().y <= height as f64;
    inside.then_some(ell)
}

pub fn detection_from(ellipse: &Ellipse, class: &str, mode: RenderMode) -> Result<Detection> {
    let bbox = ellipse_bbox(ellipse);
    let e = match mode {
        RenderMode::TrueProjection => *ellipse,
        RenderMode::InscribedOfTrueBbox => inscribed_ellipse(&bbox),
    };
    Detection::new(bbox, class, 1.0, vec![DetectionEllipse { ellipse: e, object: None }])
}

/// Detections of every visible object, in model order.
pub fn render_detections(
    scene: &SceneModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: u32,
    height: u32,
    mode: RenderMode,
) -> Vec<SimDetection> {
    scene
        .objects()
        .iter()
        .filter_map(|o| {
            let ell = visible_projection(&o.ellipsoid, pose, k, width, height)?;
            let detection = detection_from(&ell, &o.class, mode).ok()?;
            Some(SimDetection {
                detection,
                object: Some(o.id.clone()),
                true_ellipse: ell,
            })
        })
        .collect()
}

/// Shift each box corner coordinate by `half_range * u`, `u ∈ [-1, 1]⁴`. Callers draw
/// `u` once and vary the half range to get common random numbers across noise levels.
/// Boxes that would collapse keep a width of at least one pixel.
pub fn shift_corners(b: &BBox, unit: &[f64; 4], half_range: f64) -> BBox {
    let mut x0 = b.min().x + half_range * unit[0];
    let mut y0 = b.min().y + half_range * unit[1];
    let mut x1 = b.max().x + half_range * unit[2];
    let mut y1 = b.max().y + half_range * unit[3];
    for (lo, hi) in [(&mut x0, &mut x1), (&mut y0, &mut y1)] {
        if *lo > *hi {
            std::mem::swap(lo, hi);
        }
        if *hi - *lo < 1.0 {
            let mid = 0.5 * (*lo + *hi);
            *lo = mid - 0.5;
            *hi = mid + 0.5;
        }
    }
    BBox::from_corners(x0, y0, x1, y1).expect("finite ordered corners")
}

pub fn unit_noise(rng: &mut impl Rng) -> [f64; 4] {
    std::array::from_fn(|_| rng.random_range(-1.0..=1.0))
}

/// How the ellipse of a detection follows a perturbed box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Inscribed ellipse of the noisy box.
    Inscribed,
    /// The true ellipse keeps its position relative to the square crop around the box,
    /// as an ellipse predictor run on the shifted crop would report it.
    Predicted,
}

/// Ellipse attached to a box obtained by perturbing `true_box`.
pub fn ellipse_for_box(true_ellipse: &Ellipse, true_box: &BBox, noisy: &BBox, mode: NoiseMode) -> Ellipse {
    match mode {
        NoiseMode::Inscribed => inscribed_ellipse(noisy),
        NoiseMode::Predicted => {
            let side = 256.0;
            let from = CropFrame::around(true_box, side).expect("valid box");
            let to = CropFrame::around(noisy, side).expect("valid box");
            denormalize_from_crop(&normalize_to_crop(true_ellipse, &from), &to)
        }
    }
}

/// Detection with box corners shifted uniformly within `±half_range` px.
pub fn perturb_bbox(
    d: &SimDetection,
    half_range: f64,
    seed: u64,
    mode: NoiseMode,
) -> Result<SimDetection> {
    if !(half_range >= 0.0) {
        return Err(Error::InvalidConfig("half range must be non-negative".into()));
    }
    let unit = unit_noise(&mut rng(seed));
    let true_box = ellipse_bbox(&d.true_ellipse);
    let noisy = shift_corners(&true_box, &unit, half_range);
    let e = ellipse_for_box(&d.true_ellipse, &true_box, &noisy, mode);
    Ok(SimDetection {
        detection: Detection::new(
            noisy,
            d.detection.class(),
            d.detection.score(),
            vec![DetectionEllipse { ellipse: e, object: None }],
        )?,
        ..d.clone()
    })
}

/// Rotation perturbed by a rotation vector with components uniform in `±half_range_deg`,
/// so the geodesic change never exceeds `√3 · half_range_deg`.
pub fn perturb_orientation(rot: &Matrix3<f64>, half_range_deg: f64, seed: u64) -> Matrix3<f64> {
    let h = half_range_deg.to_radians();
    if h == 0.0 {
        return *rot;
    }
    let mut r = rng(seed);
    let v = Vector3::new(
        r.random_range(-h..=h),
        r.random_range(-h..=h),
        r.random_range(-h..=h),
    );
    rotation_from_vector(v) * rot
}

/// Small ellipse parameter noise: center within `±center_px`, each semi-axis scaled
/// within `1 ± axis_frac`, angle within `±angle_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseNoise {
    pub center_px: f64,
    pub axis_frac: f64,
    pub angle_deg: f64,
}

pub fn perturb_ellipse(e: &Ellipse, noise: &EllipseNoise, rng: &mut impl Rng) -> Ellipse {
    let u: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
    let c = e.center() + Vector2::new(u[0], u[1]) * noise.center_px;
    Ellipse::new(
        c,
        e.alpha() * (1.0 + noise.axis_frac * u[2]),
        e.beta() * (1.0 + noise.axis_frac * u[3]),
        e.theta() + noise.angle_deg.to_radians() * u[4],
    )
    .expect("noise keeps the ellipse valid")
}

/// Each semi-axis scaled by a factor uniform in `1 ± magnitude`, each rotation perturbed
/// by at most `magnitude · 45°`, centers fixed.
pub fn deform_scene(scene: &SimScene, seed: u64, magnitude: f64) -> Result<SimScene> {
    if !(0.0..1.0).contains(&magnitude) {
        return Err(Error::InvalidConfig("deformation magnitude must lie in [0, 1)".into()));
    }
    if magnitude == 0.0 {
        return Ok(scene.clone());
    }
    let mut rng = rng(seed);
    let max_angle = magnitude * std::f64::consts::FRAC_PI_4;
    let model = scene.model.map_ellipsoids(|o| {
        let e = &o.ellipsoid;
        let s = Vector3::from_fn(|_, _| rng.random_range(1.0 - magnitude..=1.0 + magnitude));
        let axis = random_unit_vector(&mut rng);
        let angle = rng.random_range(0.0..=max_angle);
        Ellipsoid::new(
            e.center(),
            e.axes().component_mul(&s),
            rotation_from_vector(axis * angle) * e.rotation(),
        )
        .expect("deformation keeps the ellipsoid valid")
    });
    Ok(SimScene { model, up: scene.up })
}

/// Camera placement for random trial views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewParams {
    pub radius: (f64, f64),
    pub height: (f64, f64),
    pub target: Vector3<f64>,
    pub target_jitter: f64,
}

impl Default for ViewParams {
    fn default() -> Self {
        Self {
            radius: (3.5, 4.5),
            height: (1.0, 2.5),
            target: Vector3::new(0.0, 0.0, 0.5),
            target_jitter: 0.3,
        }
    }
}

/// Random zero-roll camera around the scene.
pub fn random_view(rng: &mut impl Rng, v: &ViewParams) -> Pose {
    let a: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    let r = rng.random_range(v.radius.0..=v.radius.1);
    let h = rng.random_range(v.height.0..=v.height.1);
    let j = v.target_jitter;
    let target = v.target
        + Vector3::new(
            rng.random_range(-j..=j),
            rng.random_range(-j..=j),
            rng.random_range(-j..=j),
        );
    let eye = Vector3::new(v.target.x + r * a.cos(), v.target.y + r * a.sin(), h);
    Pose::look_at(eye, target, Vector3::z()).expect("eye differs from target")
}

/// One cell of the center-gap sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub azimuth_deg: f64,
    pub distance_m: f64,
    pub gap_px: f64,
    pub in_fov: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSweep {
    /// Full object size along each ellipsoid axis, meters.
    pub size: Vector3<f64>,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    pub azimuths_deg: Vec<f64>,
    pub distances: Vec<f64>,
    /// Nominal field of view used to flag in-view cells, degrees.
    pub fov_deg: f64,
}

impl Default for GapSweep {
    fn default() -> Self {
        Self {
            size: Vector3::new(0.30, 0.20, 0.15),
            focal: 450.0,
            width: 640,
            height: 480,
            azimuths_deg: (0..=9).map(|i| 5.0 * i as f64).collect(),
            distances: vec![1.0, 1.5, 2.0, 3.0, 4.0, 5.0],
            fov_deg: 70.0,
        }
    }
}

/// Center gap of an axis-aligned ellipsoid seen by a camera at the origin looking along
/// `+z`, moved sideways by the azimuth at each distance.
pub fn center_gap_sweep(s: &GapSweep) -> Result<Vec<GapRow>> {
    let semi = s.size / 2.0;
    let k = CameraIntrinsics::new(s.focal, s.focal, s.width as f64 / 2.0, s.height as f64 / 2.0)?;
    let mut rows = Vec::new();
    for &d in &s.distances {
        if !(d > semi.max()) {
            return Err(Error::InvalidConfig(format!("distance {d} inside the ellipsoid")));
        }
        for &az in &s.azimuths_deg {
            let a = az.to_radians();
            let e = Ellipsoid::new(Vector3::new(d * a.sin(), 0.0, d * a.cos()), semi, Matrix3::identity())?;
            rows.push(GapRow {
                azimuth_deg: az,
                distance_m: d,
                gap_px: center_gap(&e, &Pose::identity(), &k)?,
                in_fov: az <= s.fov_deg / 2.0,
            });
        }
    }
    Ok(rows)
}
