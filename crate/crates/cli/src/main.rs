//! `ellipsloc` command-line tool: scene reconstruction, localization and the synthetic
//! experiment suites.
//!
//! Failures exit with 1 (internal), 2 (input or schema), 3 (not enough objects) or
//! 4 (no valid pose); the last line on stderr is always `error-code: <n> <kind>`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Matrix3;

use ellipsloc::association::{localize, RansacConfig};
use ellipsloc::conic::{ellipse_iou, inscribed_ellipse};
use ellipsloc::experiments::{
    noise_medians, run_deform_study, run_end_to_end, run_loss_check, run_noise_study, run_p2e_study,
    run_single_object, run_superiority, NOISE_LEVELS,
};
use ellipsloc::io::{
    read_file, to_csv, write_file, AnnotationsFile, CameraFile, DetectionsFile, FormatError, PoseRecord,
    ResultFile, SceneFile,
};
use ellipsloc::metrics::{median, pose_error};
use ellipsloc::quadric::project_ellipsoid;
use ellipsloc::reconstruction::{build_scene_report, SceneModel};
use ellipsloc::sim::{center_gap_sweep, GapSweep, NoiseMode};
use ellipsloc::{Camera, Error};

#[derive(Parser)]
#[command(name = "ellipsloc", version, about = "Camera localization from ellipsoid landmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an ellipsoid scene model from box annotations in posed images.
    Reconstruct {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a camera pose from object detections.
    Localize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Camera file holding the intrinsics; a pose in the record is used as reference.
        #[arg(long)]
        camera: PathBuf,
        /// Camera record to use when the file holds several.
        #[arg(long)]
        camera_id: Option<String>,
        /// Known world-to-camera rotation as a `w,x,y,z` quaternion.
        #[arg(long, value_parser = parse_quaternion, allow_hyphen_values = true)]
        orientation: Option<[f64; 4]>,
        #[arg(long, env = "ELLIPSLOC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = RansacConfig::default().max_iterations)]
        max_iterations: usize,
        #[arg(long, default_value_t = RansacConfig::default().iou_threshold)]
        iou_threshold: f64,
        #[arg(long, default_value_t = RansacConfig::default().sweep_step.to_degrees())]
        sweep_step_deg: f64,
        /// Write the result document here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic localization studies with per-trial pose errors.
    Evaluate {
        #[arg(long, value_enum)]
        study: Study,
        /// Defaults to the study's acceptance size.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, env = "ELLIPSLOC_SEED", default_value_t = 0)]
        seed: u64,
        /// P2E yaw sampling step.
        #[arg(long, default_value_t = 0.1)]
        sweep_step_deg: f64,
        /// Rotation noise of the single-object study.
        #[arg(long, default_value_t = 2.0)]
        noise_deg: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gap between projected ellipse centers and projected ellipsoid centers.
    SweepCenterGap {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pose error under bounding-box corner noise.
    NoiseStudy {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, env = "ELLIPSLOC_SEED", default_value_t = 0)]
        seed: u64,
        /// Corner-noise half ranges in pixels.
        #[arg(long, value_delimiter = ',', default_values_t = NOISE_LEVELS)]
        levels: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pose error with deformed model ellipsoids.
    DeformStudy {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, env = "ELLIPSLOC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        magnitude: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the ellipse loss gradient.
    LossCheck {
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, env = "ELLIPSLOC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    EndToEnd,
    Superiority,
    P2e,
    SingleObject,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
        }
    }

    fn schema(message: impl Into<String>) -> Self {
        Self::new(2, "schema_mismatch", message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        let kind = match e {
            FormatError::Parse { .. } => "parse_error",
            FormatError::SchemaMismatch(_) => "schema_mismatch",
            FormatError::InvariantViolation { .. } => "invariant_violation",
            FormatError::Io(_) => "io_error",
        };
        Self::new(2, kind, e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match e {
            Error::NotEnoughObjects { .. } => (3, "not_enough_objects"),
            Error::NoValidPose => (4, "no_valid_pose"),
            Error::InvalidEllipse(_)
            | Error::InvalidBox(_)
            | Error::InvalidEllipsoid(_)
            | Error::InvalidRotation(_)
            | Error::InvalidIntrinsics(_)
            | Error::InvalidConfig(_) => (2, "invalid_input"),
            Error::InsufficientViews { .. } | Error::DegenerateConfiguration(_) | Error::Reconstruction { .. } => {
                (2, "reconstruction_failed")
            }
            _ => (1, "internal"),
        };
        Self::new(code, kind, e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn parse_quaternion(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| format!("expected 4 comma-separated values, got {}", p.len()))
}

fn orientation_matrix(q: &[f64; 4]) -> Result<Matrix3<f64>, Failure> {
    let record = PoseRecord {
        rotation: *q,
        translation: [0.0; 3],
    };
    Ok(record.to_pose("orientation")?.rotation())
}

fn load<T>(path: &Path, parse: fn(&str) -> Result<T, FormatError>) -> Result<T, Failure> {
    parse(&read_file(path)?).map_err(|e| Failure::from(e).prefixed(path))
}

impl Failure {
    fn prefixed(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> CliResult {
    write_file(path, &to_csv(rows)?)?;
    Ok(())
}

fn summary(pass: bool, detail: String) {
    println!("{}: {detail}", if pass { "PASS" } else { "FAIL" });
}

// ── reconstruct ─────────────────────────────────────────────────────────────

fn reconstruct(annotations: &Path, cameras: &Path, out: &Path) -> CliResult {
    let anns = load(annotations, AnnotationsFile::load)?.to_annotations()?;
    let cams = load(cameras, CameraFile::load)?;
    if anns.is_empty() {
        log::warn!("{}: no annotations, writing an empty scene", annotations.display());
        write_file(out, &SceneFile::from_model(&SceneModel::default()).save())?;
        println!("objects: 0");
        return Ok(());
    }

    let mut posed: HashMap<String, Camera> = HashMap::new();
    for a in &anns {
        if posed.contains_key(&a.image) {
            continue;
        }
        let rec = cams
            .get(&a.image)
            .ok_or_else(|| Failure::schema(format!("annotation of `{}` refers to unknown camera `{}`", a.label, a.image)))?;
        posed.insert(a.image.clone(), rec.camera()?);
    }

    let (scene, failures) = build_scene_report(&anns, &posed)?;
    write_file(out, &SceneFile::from_model(&scene).save())?;
    for o in scene.objects() {
        let ious: Vec<f64> = anns
            .iter()
            .filter(|a| a.label == o.id)
            .map(|a| {
                let cam = &posed[&a.image];
                project_ellipsoid(&o.ellipsoid, &cam.pose, &cam.intrinsics)
                    .map(|p| ellipse_iou(&p, &inscribed_ellipse(&a.bbox)))
                    .unwrap_or(0.0)
            })
            .collect();
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        let min = ious.iter().copied().fold(f64::INFINITY, f64::min);
        println!("object {}: {} views, reprojection IoU mean {mean:.4} min {min:.4}", o.id, ious.len());
    }
    println!("objects: {}", scene.len());
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("failed {}: {}", f.label, f.error);
    }
    Err(Failure::new(
        2,
        "reconstruction_failed",
        format!("{} of {} labels failed", failures.len(), failures.len() + scene.len()),
    ))
}

// ── localize ────────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn localize_cmd(
    scene: &Path,
    detections: &Path,
    camera: &Path,
    camera_id: Option<&str>,
    orientation: Option<[f64; 4]>,
    cfg: RansacConfig,
    out: Option<&Path>,
) -> CliResult {
    cfg.validate()?;
    let rotation = orientation.as_ref().map(orientation_matrix).transpose()?;
    let model = load(scene, SceneFile::load)?.to_model()?;
    let dets = load(detections, DetectionsFile::load)?.to_detections()?;
    let cams = load(camera, CameraFile::load)?;
    let rec = match camera_id {
        Some(id) => cams.get(id).ok_or_else(|| Failure::schema(format!("no camera `{id}`")))?,
        None => match cams.cameras.as_slice() {
            [only] => only,
            _ => return Err(Failure::schema("camera file must hold one camera unless --camera-id is given")),
        },
    };
    let k = rec.intrinsics()?;

    let res = localize(&dets, &model, &k, &cfg, rotation.as_ref())?;
    let doc = ResultFile::from_result(&res);
    println!("solver: {}", doc.solver);
    println!("position: {} {} {}", doc.position[0], doc.position[1], doc.position[2]);
    let q = doc.pose.rotation;
    println!("rotation (w x y z): {} {} {} {}", q[0], q[1], q[2], q[3]);
    let t = doc.pose.translation;
    println!("translation: {} {} {}", t[0], t[1], t[2]);
    for a in &res.inliers {
        println!("detection {} -> {}: IoU {:.6}", a.detection, a.object_id, a.iou);
    }
    println!("mean IoU: {:.6}", res.mean_iou);
    if let Some(reference) = rec.pose()? {
        let e = pose_error(&res.pose, &reference);
        println!("reference error: {:e} m, {:e} deg", e.position, e.orientation);
    }
    if let Some(path) = out {
        write_file(path, &doc.save())?;
    }
    Ok(())
}

// ── experiments ─────────────────────────────────────────────────────────────

fn fraction(n: usize, total: usize) -> f64 {
    n as f64 / total.max(1) as f64
}

fn evaluate(study: Study, trials: Option<usize>, seed: u64, sweep_step_deg: f64, noise_deg: f64, out: &Path) -> CliResult {
    match study {
        Study::EndToEnd => {
            let rows = run_end_to_end(seed, trials.unwrap_or(200))?;
            write_csv(out, &rows)?;
            let pos = rows.iter().map(|r| r.pos_err_m).fold(0.0, f64::max);
            let rot = rows.iter().map(|r| r.rot_err_deg).fold(0.0, f64::max);
            let assoc = rows.iter().filter(|r| r.association_ok).count();
            summary(
                pos < 1e-6 && rot < 1e-6 && assoc == rows.len(),
                format!("worst {pos:.1e} m / {rot:.1e} deg, associations {assoc}/{}", rows.len()),
            );
        }
        Study::Superiority => {
            let rows = run_superiority(seed, trials.unwrap_or(200))?;
            write_csv(out, &rows)?;
            let wins = rows
                .iter()
                .filter(|r| r.exact_pos_m < r.inscribed_pos_m && r.exact_rot_deg < r.inscribed_rot_deg)
                .count();
            let me = median(&rows.iter().map(|r| r.exact_pos_m).collect::<Vec<_>>()).unwrap_or(f64::NAN);
            let mi = median(&rows.iter().map(|r| r.inscribed_pos_m).collect::<Vec<_>>()).unwrap_or(f64::NAN);
            let frac = fraction(wins, rows.len());
            summary(
                frac >= 0.9 && 2.0 * me <= mi,
                format!("exact lower in {:.1}% of trials, median position {me:.2e} vs {mi:.2e} m", 100.0 * frac),
            );
        }
        Study::P2e => {
            let rows = run_p2e_study(seed, trials.unwrap_or(100), sweep_step_deg)?;
            write_csv(out, &rows)?;
            let good = rows.iter().filter(|r| r.pos_err_m < 0.01 && r.rot_err_deg < 0.5).count();
            summary(
                fraction(good, rows.len()) >= 0.95,
                format!("{good}/{} within 1 cm and 0.5 deg", rows.len()),
            );
        }
        Study::SingleObject => {
            let rows = run_single_object(seed, trials.unwrap_or(200), noise_deg)?;
            write_csv(out, &rows)?;
            let exact = rows.iter().map(|r| r.exact_err_m).fold(0.0, f64::max);
            let rel = median(&rows.iter().map(|r| r.noisy_rotation_err_m / r.distance_m).collect::<Vec<_>>())
                .unwrap_or(f64::NAN);
            summary(
                exact < 1e-4 && rel < 0.05,
                format!("exact worst {exact:.1e} m, noisy median {:.2}% of distance", 100.0 * rel),
            );
        }
    }
    Ok(())
}

fn sweep_center_gap(out: &Path) -> CliResult {
    let rows = center_gap_sweep(&GapSweep::default())?;
    write_csv(out, &rows)?;
    let worst = rows
        .iter()
        .filter(|r| r.in_fov && r.distance_m >= 1.0)
        .map(|r| r.gap_px)
        .fold(0.0, f64::max);
    let monotone = rows
        .windows(2)
        .filter(|w| w[0].distance_m == w[1].distance_m)
        .all(|w| w[1].gap_px >= w[0].gap_px);
    summary(
        worst < 5.0 && monotone,
        format!("max in-view gap {worst:.2} px, monotone in azimuth {monotone}"),
    );
    Ok(())
}

fn noise_study(trials: usize, seed: u64, levels: &[f64], out: &Path) -> CliResult {
    let rows = run_noise_study(seed, trials, levels)?;
    write_csv(out, &rows)?;
    let mut pass = true;
    let mut detail = Vec::new();
    for mode in [NoiseMode::Predicted, NoiseMode::Inscribed] {
        let m = noise_medians(&rows, mode, levels);
        pass &= m.windows(2).all(|w| w[1].1 >= w[0].1 && w[1].2 >= w[0].2);
        let medians: Vec<String> = m.iter().map(|(_, p, r)| format!("{p:.3}m/{r:.2}deg")).collect();
        detail.push(format!("{mode:?} {}", medians.join(" ")));
    }
    summary(pass, format!("medians non-decreasing: {}", detail.join("; ")));
    Ok(())
}

fn deform_study(trials: usize, seed: u64, magnitude: f64, out: &Path) -> CliResult {
    let rows = run_deform_study(seed, trials, magnitude)?;
    write_csv(out, &rows)?;
    let med = |f: fn(&ellipsloc::experiments::DeformRow) -> f64| {
        median(&rows.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    };
    let pos = med(|r| r.deformed_pos_m) / med(|r| r.original_pos_m);
    let rot = med(|r| r.deformed_rot_deg) / med(|r| r.original_rot_deg);
    let ok = |x: f64| (0.5..=2.0).contains(&x);
    summary(ok(pos) && ok(rot), format!("median error ratio position {pos:.2}, orientation {rot:.2}"));
    Ok(())
}

fn loss_check(pairs: usize, seed: u64, out: &Path) -> CliResult {
    let rows = run_loss_check(seed, pairs);
    write_csv(out, &rows)?;
    let detail: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.1e} ({} checked)", r.variant, r.max_rel_err, r.checked))
        .collect();
    summary(rows.iter().all(|r| r.passed), format!("max relative gradient error {}", detail.join(", ")));
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Reconstruct {
            annotations,
            cameras,
            out,
        } => reconstruct(&annotations, &cameras, &out),
        Command::Localize {
            scene,
            detections,
            camera,
            camera_id,
            orientation,
            seed,
            max_iterations,
            iou_threshold,
            sweep_step_deg,
            out,
        } => {
            let cfg = RansacConfig {
                max_iterations,
                iou_threshold,
                seed,
                sweep_step: sweep_step_deg.to_radians(),
            };
            localize_cmd(&scene, &detections, &camera, camera_id.as_deref(), orientation, cfg, out.as_deref())
        }
        Command::Evaluate {
            study,
            trials,
            seed,
            sweep_step_deg,
            noise_deg,
            out,
        } => evaluate(study, trials, seed, sweep_step_deg, noise_deg, &out),
        Command::SweepCenterGap { out } => sweep_center_gap(&out),
        Command::NoiseStudy {
            trials,
            seed,
            levels,
            out,
        } => noise_study(trials, seed, &levels, &out),
        Command::DeformStudy {
            trials,
            seed,
            magnitude,
            out,
        } => deform_study(trials, seed, magnitude, &out),
        Command::LossCheck { pairs, seed, out } => loss_check(pairs, seed, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("error-code: 2 usage");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            eprintln!("error-code: {} {}", f.code, f.kind);
            ExitCode::from(f.code)
        }
    }
}
