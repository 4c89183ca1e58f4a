//! Seeded experiment drivers over synthetic scenes.
//!
//! Every driver derives one seed per trial from the run seed, evaluates trials in
//! parallel and returns rows in trial order, so output is identical for any thread count.
//! Failed localizations are recorded with infinite errors.

use nalgebra::{Matrix3, Vector2};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::association::{localize, Detection, LocalizationResult, RansacConfig};
use crate::conic::{ellipse_bbox, inscribed_ellipse, Ellipse};
use crate::error::{Error, Result};
use crate::loss::{loss, loss_gradient, EmbeddingVariant, SamplingGrid};
use crate::metrics::{median, pose_error, PoseError};
use crate::quadric::{CameraIntrinsics, Pose};
use crate::reconstruction::SceneModel;
use crate::sim::{
    deform_scene, detection_from, ellipse_for_box, generate_scene, generate_scene_with, perturb_ellipse,
    perturb_orientation, random_view, render_detections, rng, shift_corners, trial_seed, unit_noise,
    EllipseNoise, NoiseMode, RenderMode, SceneParams, SimDetection, SimScene, ViewParams,
};
use crate::solvers::{position_from_orientation, Correspondence};

pub const IMAGE_WIDTH: u32 = 640;
pub const IMAGE_HEIGHT: u32 = 480;

/// Camera used by every trial.
pub fn trial_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).expect("valid intrinsics")
}

const FAILED: PoseError = PoseError {
    position: f64::INFINITY,
    orientation: f64::INFINITY,
};

fn error_of(res: &Result<LocalizationResult>, gt: &Pose) -> PoseError {
    match res {
        Ok(r) => pose_error(&r.pose, gt),
        Err(_) => FAILED,
    }
}

fn detections(d: &[SimDetection]) -> Vec<Detection> {
    d.iter().map(|s| s.detection.clone()).collect()
}

/// Random view of `scene` whose rendered detections satisfy `accept`.
fn find_view(
    rng: &mut impl Rng,
    scene: &SceneModel,
    view: &ViewParams,
    mode: RenderMode,
    accept: impl Fn(&[SimDetection]) -> bool,
) -> Option<(Pose, Vec<SimDetection>)> {
    let k = trial_intrinsics();
    for _ in 0..500 {
        let pose = random_view(rng, view);
        let dets = render_detections(scene, &pose, &k, IMAGE_WIDTH, IMAGE_HEIGHT, mode);
        if accept(&dets) {
            return Some((pose, dets));
        }
    }
    None
}

/// Scene and view drawn for trial `seed`, retrying with fresh scenes until `accept`
/// holds.
fn trial_setup(
    seed: u64,
    make_scene: impl Fn(u64) -> Result<SimScene>,
    view: &ViewParams,
    mode: RenderMode,
    accept: impl Fn(&[SimDetection]) -> bool,
) -> Result<(SimScene, Pose, Vec<SimDetection>)> {
    for attempt in 0..100 {
        let s = trial_seed(seed, attempt);
        let scene = make_scene(s)?;
        let mut r = rng(s ^ 0x5EED);
        if let Some((pose, dets)) = find_view(&mut r, &scene.model, view, mode, &accept) {
            return Ok((scene, pose, dets));
        }
    }
    Err(Error::InvalidConfig("no acceptable view found".into()))
}

// ── end-to-end exactness ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndToEndRow {
    pub trial: usize,
    pub n_detections: usize,
    pub pos_err_m: f64,
    pub rot_err_deg: f64,
    pub association_ok: bool,
    pub solver: String,
}

/// Detections of a scene with one duplicated class and one detected object missing from
/// the model, localized from the exact projections.
pub fn run_end_to_end(seed: u64, trials: usize) -> Result<Vec<EndToEndRow>> {
    let k = trial_intrinsics();
    let view = ViewParams {
        radius: (4.5, 5.5),
        ..Default::default()
    };
    (0..trials)
        .into_par_iter()
        .map(|t| {
            // obj0..obj2 share a class; obj2 is left out of the model.
            let (scene, pose, dets) = trial_setup(
                trial_seed(seed, t as u64),
                |s| generate_scene(s, 6, 3),
                &view,
                RenderMode::TrueProjection,
                |d| {
                    let has = |id: &str| d.iter().any(|x| x.object.as_deref() == Some(id));
                    let in_model = d.iter().filter(|x| x.object.as_deref() != Some("obj2")).count();
                    has("obj0") && has("obj1") && has("obj2") && in_model >= 3
                },
            )?;
            let model = scene.model.without("obj2");
            let truth: Vec<Option<String>> = dets
                .iter()
                .map(|d| d.object.clone().filter(|id| id != "obj2"))
                .collect();
            let res = localize(&detections(&dets), &model, &k, &RansacConfig::default(), None);
            let err = error_of(&res, &pose);
            let (association_ok, solver) = match &res {
                Ok(r) => {
                    let expected = truth.iter().filter(|t| t.is_some()).count();
                    let ok = r.inliers.len() == expected
                        && r
                            .inliers
                            .iter()
                            .all(|a| truth[a.detection].as_deref() == Some(a.object_id.as_str()));
                    (ok, r.solver.name().to_string())
                }
                Err(e) => (false, format!("error: {e}")),
            };
            Ok(EndToEndRow {
                trial: t,
                n_detections: dets.len(),
                pos_err_m: err.position,
                rot_err_deg: err.orientation,
                association_ok,
                solver,
            })
        })
        .collect()
}

// ── inscribed vs exact ellipses ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperiorityRow {
    pub trial: usize,
    pub exact_pos_m: f64,
    pub exact_rot_deg: f64,
    pub inscribed_pos_m: f64,
    pub inscribed_rot_deg: f64,
}

/// Paired localization of tilted elongated objects from exact and inscribed ellipses.
pub fn run_superiority(seed: u64, trials: usize) -> Result<Vec<SuperiorityRow>> {
    let k = trial_intrinsics();
    let params = SceneParams {
        n_objects: 4,
        axis_range: (0.2, 0.5),
        elongation: Some((0.25, 0.5)),
        ..Default::default()
    };
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let (scene, pose, dets) = trial_setup(
                trial_seed(seed, t as u64),
                |s| generate_scene_with(s, &params),
                &ViewParams::default(),
                RenderMode::TrueProjection,
                |d| d.len() >= 3,
            )?;
            let inscribed: Vec<Detection> = dets
                .iter()
                .map(|d| detection_from(&d.true_ellipse, d.detection.class(), RenderMode::InscribedOfTrueBbox))
                .collect::<Result<_>>()?;
            let cfg = RansacConfig::default();
            let exact = error_of(&localize(&detections(&dets), &scene.model, &k, &cfg, None), &pose);
            let insc = error_of(&localize(&inscribed, &scene.model, &k, &cfg, None), &pose);
            Ok(SuperiorityRow {
                trial: t,
                exact_pos_m: exact.position,
                exact_rot_deg: exact.orientation,
                inscribed_pos_m: insc.position,
                inscribed_rot_deg: insc.orientation,
            })
        })
        .collect()
}

// ── bounding-box noise ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub mode: NoiseMode,
    pub half_range_px: f64,
    pub trial: usize,
    pub pos_err_m: f64,
    pub rot_err_deg: f64,
}

pub const NOISE_LEVELS: [f64; 5] = [0.0, 2.0, 4.0, 8.0, 16.0];

/// Localization from boxes whose corners are shifted by the same unit noise scaled to each
/// half range, for both ellipse modes. Rows are ordered by mode, level, trial.
pub fn run_noise_study(seed: u64, trials: usize, levels: &[f64]) -> Result<Vec<NoiseRow>> {
    let k = trial_intrinsics();
    let cfg = RansacConfig::default();
    let setups: Vec<(SimScene, Pose, Vec<SimDetection>, Vec<[f64; 4]>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t as u64);
            let (scene, pose, dets) = trial_setup(
                s,
                |s| generate_scene(s, 5, 0),
                &ViewParams::default(),
                RenderMode::TrueProjection,
                |d| d.len() >= 4,
            )?;
            let mut r = rng(s ^ 0xB0C5);
            let noise = dets.iter().map(|_| unit_noise(&mut r)).collect();
            Ok((scene, pose, dets, noise))
        })
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for mode in [NoiseMode::Inscribed, NoiseMode::Predicted] {
        for &level in levels {
            for t in 0..trials {
                jobs.push((mode, level, t));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(mode, level, t)| {
            let (scene, pose, dets, noise) = &setups[t];
            let noisy: Vec<Detection> = dets
                .iter()
                .zip(noise)
                .map(|(d, u)| {
                    let true_box = ellipse_bbox(&d.true_ellipse);
                    let b = shift_corners(&true_box, u, level);
                    let e = ellipse_for_box(&d.true_ellipse, &true_box, &b, mode);
                    Detection::new(b, d.detection.class(), 1.0, vec![crate::association::DetectionEllipse { ellipse: e, object: None }])
                })
                .collect::<Result<_>>()?;
            let err = error_of(&localize(&noisy, &scene.model, &k, &cfg, None), pose);
            Ok(NoiseRow {
                mode,
                half_range_px: level,
                trial: t,
                pos_err_m: err.position,
                rot_err_deg: err.orientation,
            })
        })
        .collect()
}

/// Median position and orientation error per level for one mode, in level order.
pub fn noise_medians(rows: &[NoiseRow], mode: NoiseMode, levels: &[f64]) -> Vec<(f64, f64, f64)> {
    levels
        .iter()
        .map(|&l| {
            let sel: Vec<&NoiseRow> = rows.iter().filter(|r| r.mode == mode && r.half_range_px == l).collect();
            let pos: Vec<f64> = sel.iter().map(|r| r.pos_err_m).collect();
            let rot: Vec<f64> = sel.iter().map(|r| r.rot_err_deg).collect();
            (l, median(&pos).unwrap_or(f64::NAN), median(&rot).unwrap_or(f64::NAN))
        })
        .collect()
}

// ── model deformation ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeformRow {
    pub trial: usize,
    pub original_pos_m: f64,
    pub original_rot_deg: f64,
    pub deformed_pos_m: f64,
    pub deformed_rot_deg: f64,
}

/// Small ellipse noise applied to rendered detections in the deformation study.
pub const DETECTION_NOISE: EllipseNoise = EllipseNoise {
    center_px: 1.0,
    axis_frac: 0.02,
    angle_deg: 1.0,
};

fn noisy_detections(dets: &[SimDetection], seed: u64) -> Result<Vec<Detection>> {
    let mut r = rng(seed);
    dets.iter()
        .map(|d| {
            let e = perturb_ellipse(&d.true_ellipse, &DETECTION_NOISE, &mut r);
            detection_from(&e, d.detection.class(), RenderMode::TrueProjection)
        })
        .collect()
}

/// Each model localized from its own (slightly noisy) detections, original against
/// deformed, with the same camera and the same noise draws.
pub fn run_deform_study(seed: u64, trials: usize, magnitude: f64) -> Result<Vec<DeformRow>> {
    let k = trial_intrinsics();
    let cfg = RansacConfig::default();
    let view = ViewParams::default();
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t as u64);
            let deformed_seed = s ^ 0xDEF0;
            let (scene, pose, dets) = trial_setup(
                s,
                |s| generate_scene(s, 5, 0),
                &view,
                RenderMode::TrueProjection,
                |d| d.len() >= 4,
            )?;
            let deformed = deform_scene(&scene, deformed_seed, magnitude)?;
            let ddets = render_detections(&deformed.model, &pose, &k, IMAGE_WIDTH, IMAGE_HEIGHT, RenderMode::TrueProjection);
            // Same objects in both pairings for a fair comparison.
            let keep = |v: &[SimDetection], other: &[SimDetection]| -> Vec<SimDetection> {
                v.iter().filter(|d| other.iter().any(|o| o.object == d.object)).cloned().collect()
            };
            let (a, b) = (keep(&dets, &ddets), keep(&ddets, &dets));
            let noise_seed = s ^ 0x1015E;
            let orig = error_of(&localize(&noisy_detections(&a, noise_seed)?, &scene.model, &k, &cfg, None), &pose);
            let def = error_of(&localize(&noisy_detections(&b, noise_seed)?, &deformed.model, &k, &cfg, None), &pose);
            Ok(DeformRow {
                trial: t,
                original_pos_m: orig.position,
                original_rot_deg: orig.orientation,
                deformed_pos_m: def.position,
                deformed_rot_deg: def.orientation,
            })
        })
        .collect()
}

// ── two objects, zero roll ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct P2eRow {
    pub trial: usize,
    pub pos_err_m: f64,
    pub rot_err_deg: f64,
    pub solver: String,
}

/// Localization of a zero-roll camera from two exact detections at about 2 m scale.
pub fn run_p2e_study(seed: u64, trials: usize, sweep_step_deg: f64) -> Result<Vec<P2eRow>> {
    let k = trial_intrinsics();
    let cfg = RansacConfig {
        sweep_step: sweep_step_deg.to_radians(),
        ..Default::default()
    };
    let params = SceneParams {
        n_objects: 2,
        xy_range: 0.8,
        axis_range: (0.05, 0.3),
        ..Default::default()
    };
    let view = ViewParams {
        radius: (1.8, 2.5),
        height: (0.5, 1.5),
        target_jitter: 0.2,
        ..Default::default()
    };
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let (scene, pose, dets) = trial_setup(
                trial_seed(seed, t as u64),
                |s| generate_scene_with(s, &params),
                &view,
                RenderMode::TrueProjection,
                |d| d.len() == 2,
            )?;
            let res = localize(&detections(&dets), &scene.model, &k, &cfg, None);
            let err = error_of(&res, &pose);
            Ok(P2eRow {
                trial: t,
                pos_err_m: err.position,
                rot_err_deg: err.orientation,
                solver: res.map(|r| r.solver.name().to_string()).unwrap_or_else(|e| format!("error: {e}")),
            })
        })
        .collect()
}

// ── one object, known orientation ───────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleObjectRow {
    pub trial: usize,
    pub distance_m: f64,
    /// True ellipse, true rotation.
    pub exact_err_m: f64,
    /// True ellipse, rotation with uniform ±2° noise per axis.
    pub noisy_rotation_err_m: f64,
    /// Inscribed ellipse of the true box, true rotation.
    pub inscribed_err_m: f64,
}

/// Camera position from a single object of known orientation.
pub fn run_single_object(seed: u64, trials: usize, noise_deg: f64) -> Result<Vec<SingleObjectRow>> {
    let k = trial_intrinsics();
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t as u64);
            let (scene, pose, dets) = trial_setup(
                s,
                |s| generate_scene(s, 1, 0),
                &ViewParams {
                    radius: (1.5, 3.5),
                    height: (0.3, 2.0),
                    target: nalgebra::Vector3::zeros(),
                    target_jitter: 0.0,
                },
                RenderMode::TrueProjection,
                |d| d.len() == 1,
            )?;
            let e = scene.model.objects()[0].ellipsoid;
            let dist = (pose.center() - e.center()).norm();
            let r = pose.rotation();
            let solve = |ellipse: Ellipse, rot: &Matrix3<f64>| {
                position_from_orientation(&Correspondence { ellipse, ellipsoid: e }, rot, &k)
                    .map(|p| (p.pose.center() - pose.center()).norm())
                    .unwrap_or(f64::INFINITY)
            };
            let truth = dets[0].true_ellipse;
            Ok(SingleObjectRow {
                trial: t,
                distance_m: dist,
                exact_err_m: solve(truth, &r),
                noisy_rotation_err_m: solve(truth, &perturb_orientation(&r, noise_deg, s ^ 0x0121)),
                inscribed_err_m: solve(inscribed_ellipse(&ellipse_bbox(&truth)), &r),
            })
        })
        .collect()
}

// ── loss gradients ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientRow {
    pub variant: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Relative error accepted between analytic and finite-difference gradients.
pub const GRADIENT_TOL: f64 = 1e-5;
/// Finite-difference step in normalized crop coordinates.
pub const GRADIENT_STEP: f64 = 1e-6;
/// Inverse-square cases with a semi-axis below this are excluded from the check.
pub const INVERSE_SQUARE_MIN_AXIS: f64 = 0.02;

fn random_crop_ellipse(r: &mut impl Rng) -> Ellipse {
    Ellipse::new(
        Vector2::new(r.random_range(0.2..0.8), r.random_range(0.2..0.8)),
        r.random_range(0.01..0.5),
        r.random_range(0.01..0.5),
        r.random_range(-1.6..1.6),
    )
    .expect("valid random ellipse")
}

fn raw_ellipse(p: &[f64; 5]) -> Ellipse {
    Ellipse::new(Vector2::new(p[0], p[1]), p[2], p[3], p[4]).expect("positive axes")
}

/// Relative vector error of the analytic gradient against central differences.
pub fn gradient_error(pred: &Ellipse, gt: &Ellipse, grid: &SamplingGrid, v: EmbeddingVariant, h: f64) -> f64 {
    let g = loss_gradient(pred, gt, grid, v);
    let base = [pred.center().x, pred.center().y, pred.alpha(), pred.beta(), pred.theta()];
    let mut fd = [0.0; 5];
    for i in 0..5 {
        let (mut plus, mut minus) = (base, base);
        plus[i] += h;
        minus[i] -= h;
        fd[i] = (loss(&raw_ellipse(&plus), gt, grid, v) - loss(&raw_ellipse(&minus), gt, grid, v)) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Finite-difference check of the loss gradient on random pairs, per variant.
pub fn run_loss_check(seed: u64, pairs: usize) -> Vec<GradientRow> {
    let grid = SamplingGrid::default();
    let mut r = rng(seed);
    let cases: Vec<(Ellipse, Ellipse)> =
        (0..pairs).map(|_| (random_crop_ellipse(&mut r), random_crop_ellipse(&mut r))).collect();
    EmbeddingVariant::ALL
        .iter()
        .map(|&v| {
            let errs: Vec<Option<f64>> = cases
                .par_iter()
                .map(|(p, g)| {
                    let small = p.beta().min(g.beta()) < INVERSE_SQUARE_MIN_AXIS;
                    if v == EmbeddingVariant::InverseSquare && small {
                        None
                    } else {
                        Some(gradient_error(p, g, &grid, v, GRADIENT_STEP))
                    }
                })
                .collect();
            let checked: Vec<f64> = errs.iter().flatten().copied().collect();
            let max = checked.iter().fold(0.0f64, |m, &e| m.max(e));
            GradientRow {
                variant: v.name().to_string(),
                checked: checked.len(),
                skipped: errs.len() - checked.len(),
                max_rel_err: max,
                passed: max < GRADIENT_TOL,
            }
        })
        .collect()
}

