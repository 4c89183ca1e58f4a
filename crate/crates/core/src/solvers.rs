//! Minimal camera pose solvers from ellipse–ellipsoid correspondences.
//!
//! * [`p3p_centers`]: three correspondences, P3P on ellipse and ellipsoid centers.
//! * [`p2e_zero_roll`]: two correspondences and a camera whose x axis is horizontal.
//! * [`position_from_orientation`]: one correspondence and a known camera rotation.
//!
//! The image of an ellipsoid center is not the center of its image ellipse. The
//! `*_corrected` variants remove this offset by fixed-point iteration: the offset predicted
//! by the current candidate is subtracted from the observed ellipse centers and the solver
//! is run again, which converges to the exact pose on noise-free input.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3, Vector4};

use crate::conic::{DualConic, Ellipse};
use crate::error::{Error, Result};
use crate::quadric::{
    ellipsoid_to_dual_quadric, rotation_from_vector, project_ellipsoid, project_point, CameraIntrinsics, Ellipsoid, Pose,
};

/// An image ellipse matched to a scene ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub ellipse: Ellipse,
    pub ellipsoid: Ellipsoid,
}

/// Ordered by preference in tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Solver {
    P3p,
    P2e,
    PositionOnly,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::P3p => "p3p",
            Solver::P2e => "p2e",
            Solver::PositionOnly => "position_only",
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p3p" => Ok(Solver::P3p),
            "p2e" => Ok(Solver::P2e),
            "position_only" => Ok(Solver::PositionOnly),
            _ => Err(Error::InvalidConfig(format!("unknown solver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCandidate {
    pub pose: Pose,
    pub solver: Solver,
    /// Root index (P3P) or sweep sample index (P2E).
    pub index: usize,
}

// ── polynomials ────────────────────────────────────────────────────────────

/// Coefficients, lowest degree first.
type Poly = Vec<f64>;

fn poly_mul(a: &[f64], b: &[f64]) -> Poly {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Poly {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

fn poly_scale(a: &[f64], s: f64) -> Poly {
    a.iter().map(|x| x * s).collect()
}

fn poly_eval(a: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for c in a.iter().rev() {
        d = d * x + v;
        v = v * x + c;
    }
    (v, d)
}

/// Real roots of a polynomial via companion-matrix eigenvalues, polished by Newton steps.
#[cfg(test)]
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    roots_near_real(coeffs, 0.0)
}

/// [`real_roots`] plus the real parts of complex pairs with `|im| <= pair_tol (1 + |re|)`:
/// a double root perturbed by noise splits into such a pair. Pair real parts are left
/// unpolished since Newton steps diverge near a double root.
pub(crate) fn roots_near_real(coeffs: &[f64], pair_tol: f64) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|x| x / scale).collect();
    while c.len() > 1 && c.last().unwrap().abs() < 1e-14 {
        c.pop();
    }
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = c[n];
    let mut comp = DMatrix::zeros(n, n);
    for i in 0..n {
        comp[(0, i)] = -c[n - 1 - i] / lead;
        if i + 1 < n {
            comp[(i + 1, i)] = 1.0;
        }
    }
    let mut roots = Vec::new();
    for z in comp.complex_eigenvalues().iter() {
        let tol = 1.0 + z.re.abs();
        if z.im.abs() <= 1e-4 * tol {
            roots.push(polish(&c, z.re));
        } else if z.im > 0.0 && z.im <= pair_tol * tol {
            roots.push(z.re);
        }
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
    roots
}

fn polish(c: &[f64], mut x: f64) -> f64 {
    for _ in 0..8 {
        let (v, d) = poly_eval(c, x);
        if d == 0.0 {
            break;
        }
        let step = v / d;
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

// ── rigid alignment ─────────────────────────────────────────────────────────

/// Least-squares rigid transform with `cam ≈ R world + t`.
pub(crate) fn kabsch(world: &[Vector3<f64>], cam: &[Vector3<f64>]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = world.len() as f64;
    let wc = world.iter().sum::<Vector3<f64>>() / n;
    let cc = cam.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (w - wc) * (c - cc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Some((r, cc - r * wc))
}

fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.rotation() - b.rotation()).norm() + (a.center() - b.center()).norm()
}

// ── P3P ─────────────────────────────────────────────────────────────────────

/// Largest relative imaginary part of a quartic root pair still tried as a P3P solution.
pub const NEAR_DOUBLE_ROOT_TOL: f64 = 0.05;

/// All P3P solutions for three image points and their world points.
///
/// Grunert's formulation: with depth ratios `u = s2/s1` and `v = s3/s1`, the three laws of
/// cosines reduce to a quartic in `v`.
pub fn p3p_points(
    image: &[Vector2<f64>; 3],
    world: &[Vector3<f64>; 3],
    k: &CameraIntrinsics,
) -> Result<Vec<Pose>> {
    let (p1, p2, p3) = (world[0], world[1], world[2]);
    let spread = (p2 - p1).norm().max((p3 - p1).norm()).max((p3 - p2).norm());
    if (p2 - p1).cross(&(p3 - p1)).norm() <= 1e-9 * spread * spread {
        return Err(Error::DegenerateConfiguration("collinear world points".into()));
    }
    let j: Vec<Vector3<f64>> = image.iter().map(|p| k.unproject(p).normalize()).collect();
    if (j[0] - j[1]).norm() < 1e-12 || (j[0] - j[2]).norm() < 1e-12 || (j[1] - j[2]).norm() < 1e-12 {
        return Err(Error::DegenerateConfiguration("coincident image points".into()));
    }
    let cos_a = j[1].dot(&j[2]);
    let cos_b = j[0].dot(&j[2]);
    let cos_g = j[0].dot(&j[1]);
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    let kk = (a2 - c2) / b2;
    let cb = c2 / b2;

    // u(v) = num(v) / den(v).
    let num = vec![kk + 1.0, -2.0 * kk * cos_b, kk - 1.0];
    let den = vec![2.0 * cos_g, -2.0 * cos_a];
    // 1 + v² - 2 v cosβ
    let base = vec![1.0, -2.0 * cos_b, 1.0];
    let quartic = poly_add(
        &poly_add(
            &poly_mul(&num, &num),
            &poly_scale(&poly_mul(&num, &den), -2.0 * cos_g),
        ),
        &poly_mul(
            &poly_mul(&den, &den),
            &poly_add(&[1.0], &poly_scale(&base, -cb)),
        ),
    );

    let mut poses = Vec::new();
    for v in roots_near_real(&quartic, NEAR_DOUBLE_ROOT_TOL) {
        let (d, _) = poly_eval(&den, v);
        if d.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&num, v).0 / d;
        let q = poly_eval(&base, v).0;
        if !(u > 0.0 && v > 0.0 && q > 0.0) {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let cam = [j[0] * s1, j[1] * (u * s1), j[2] * (v * s1)];
        if let Some((r, t)) = kabsch(world, &cam) {
            if let Ok(p) = Pose::new(r, t) {
                poses.push(p);
            }
        }
    }
    if poses.is_empty() {
        return Err(Error::NoSolution);
    }
    Ok(poses)
}

/// P3P treating each ellipse center as the image of its ellipsoid center.
pub fn p3p_centers(c: &[Correspondence; 3], k: &CameraIntrinsics) -> Result<Vec<PoseCandidate>> {
    let image = [c[0].ellipse.center(), c[1].ellipse.center(), c[2].ellipse.center()];
    let world = [c[0].ellipsoid.center(), c[1].ellipsoid.center(), c[2].ellipsoid.center()];
    Ok(p3p_points(&image, &world, k)?
        .into_iter()
        .enumerate()
        .map(|(index, pose)| PoseCandidate {
            pose,
            solver: Solver::P3p,
            index,
        })
        .collect())
}

/// Offset between the projected ellipse center and the projected ellipsoid center.
fn center_offset(c: &Correspondence, pose: &Pose, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let e = project_ellipsoid(&c.ellipsoid, pose, k).ok()?;
    let p = project_point(&c.ellipsoid.center(), pose, k).ok()?;
    Some(e.center() - p)
}

/// Maximum number of center-offset correction rounds.
pub const CENTER_CORRECTION_ROUNDS: usize = 20;

/// [`p3p_centers`] followed by center-offset correction of every candidate.
///
/// Where the fixed-point correction does not settle, every root met along the way seeds
/// a Newton solve and each distinct solution is kept.
pub fn p3p_centers_corrected(
    c: &[Correspondence; 3],
    k: &CameraIntrinsics,
) -> Result<Vec<PoseCandidate>> {
    let world = [c[0].ellipsoid.center(), c[1].ellipsoid.center(), c[2].ellipsoid.center()];
    let mut out: Vec<PoseCandidate> = Vec::new();
    let push = |out: &mut Vec<PoseCandidate>, cand: &PoseCandidate, pose: Pose| {
        if out.iter().all(|o| pose_distance(&o.pose, &pose) > 1e-8) {
            out.push(PoseCandidate { pose, ..*cand });
        }
    };
    for cand in p3p_centers(c, k)? {
        let mut pose = cand.pose;
        let mut seeds = vec![pose];
        let mut converged = false;
        for _ in 0..CENTER_CORRECTION_ROUNDS {
            let offsets: Option<Vec<Vector2<f64>>> =
                c.iter().map(|ci| center_offset(ci, &pose, k)).collect();
            let Some(offsets) = offsets else { break };
            let image = [
                c[0].ellipse.center() - offsets[0],
                c[1].ellipse.center() - offsets[1],
                c[2].ellipse.center() - offsets[2],
            ];
            let Ok(next) = p3p_points(&image, &world, k) else { break };
            let best = *next
                .iter()
                .min_by(|a, b| pose_distance(a, &pose).total_cmp(&pose_distance(b, &pose)))
                .expect("non-empty solution set");
            seeds.extend(next);
            let change = pose_distance(&best, &pose);
            pose = best;
            if change < 1e-13 {
                converged = true;
                break;
            }
        }
        if converged {
            push(&mut out, &cand, pose);
            continue;
        }
        let solved: Vec<Pose> = seeds.iter().filter_map(|s| p3p_newton(s, c, k)).collect();
        if solved.is_empty() {
            push(&mut out, &cand, pose);
        }
        for p in solved {
            push(&mut out, &cand, p);
        }
    }
    Ok(out)
}

/// Newton's method on the six projected-center coordinates over the full pose, for
/// where the fixed-point correction does not contract.
fn p3p_newton(seed: &Pose, c: &[Correspondence; 3], k: &CameraIntrinsics) -> Option<Pose> {
    let r0 = seed.rotation();
    let pose_at = |x: &DVector<f64>| {
        Pose::from_center(rotation_from_vector(Vector3::new(x[0], x[1], x[2])) * r0, Vector3::new(x[3], x[4], x[5])).ok()
    };
    let residual = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let pose = pose_at(x)?;
        let mut r = DVector::zeros(6);
        for (i, ci) in c.iter().enumerate() {
            let d = project_ellipsoid(&ci.ellipsoid, &pose, k).ok()?.center() - ci.ellipse.center();
            r[2 * i] = d.x;
            r[2 * i + 1] = d.y;
        }
        Some(r)
    };
    let center = seed.center();
    pose_at(&newton(DVector::from_vec(vec![0.0, 0.0, 0.0, center.x, center.y, center.z]), residual)?)
}

// ── P2E ─────────────────────────────────────────────────────────────────────

/// Camera-to-world basis of a level camera looking along world `+x` with `z` up.
fn level_basis() -> Matrix3<f64> {
    Matrix3::from_columns(&[
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(1.0, 0.0, 0.0),
    ])
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// World-to-camera rotation of a zero-roll camera with the given yaw and pitch
/// (world `z` up, positive pitch looks upward).
pub fn zero_roll_rotation(yaw: f64, pitch: f64) -> Matrix3<f64> {
    (rot_z(yaw) * level_basis() * rot_x(pitch)).transpose()
}

/// Pitch angles making the two center rays coplanar with the world segment between the
/// two ellipsoid centers, for a fixed yaw.
fn pitches_for_yaw(yaw: f64, bearings: &[Vector3<f64>; 2], delta: &Vector3<f64>) -> Vec<f64> {
    let n = bearings[0].cross(&bearings[1]);
    let w = level_basis().transpose() * rot_z(yaw).transpose() * delta;
    let a = w.y * n.y + w.z * n.z;
    let b = w.z * n.y - w.y * n.z;
    let c0 = w.x * n.x;
    let rho = a.hypot(b);
    if rho < 1e-15 {
        return Vec::new();
    }
    let ratio = -c0 / rho;
    if ratio.abs() > 1.0 {
        return Vec::new();
    }
    let phase = b.atan2(a);
    let spread = ratio.acos();
    let mut out = Vec::with_capacity(2);
    for phi in [phase - spread, phase + spread] {
        let phi = (phi + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        if phi.abs() < std::f64::consts::FRAC_PI_2 {
            out.push(phi);
        }
    }
    out
}

/// Camera center seeing `points` along world-frame `dirs`, by least-squares ray
/// intersection. Requires positive depths.
fn triangulate_center(points: &[Vector3<f64>; 2], dirs: &[Vector3<f64>; 2]) -> Option<Vector3<f64>> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (p, d) in points.iter().zip(dirs) {
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * p;
    }
    let c = a.try_inverse()? * b;
    let ahead = points.iter().zip(dirs).all(|(p, d)| (p - c).dot(d) > 0.0);
    ahead.then_some(c)
}

fn p2e_at(
    yaw: f64,
    image: &[Vector2<f64>; 2],
    world: &[Vector3<f64>; 2],
    k: &CameraIntrinsics,
) -> Vec<(f64, Pose)> {
    let bearings = [k.unproject(&image[0]).normalize(), k.unproject(&image[1]).normalize()];
    let delta = world[0] - world[1];
    pitches_for_yaw(yaw, &bearings, &delta)
        .into_iter()
        .filter_map(|pitch| {
            let r = zero_roll_rotation(yaw, pitch);
            let dirs = [r.transpose() * bearings[0], r.transpose() * bearings[1]];
            let c = triangulate_center(world, &dirs)?;
            Pose::from_center(r, c).ok().map(|p| (pitch, p))
        })
        .collect()
}

type Offsets = [Vector2<f64>; 2];

/// Correction rounds per P2E candidate; convergence slows near the ends of a yaw interval.
pub const P2E_CORRECTION_ROUNDS: usize = 100;

/// Projected ellipse centers minus the observed ones for the zero-roll pose
/// `x = (pitch, center)` at `yaw`.
fn p2e_residual(yaw: f64, x: &Vector4<f64>, c: &[Correspondence; 2], k: &CameraIntrinsics) -> Option<Vector4<f64>> {
    let pose = Pose::from_center(zero_roll_rotation(yaw, x[0]), Vector3::new(x[1], x[2], x[3])).ok()?;
    let a = project_ellipsoid(&c[0].ellipsoid, &pose, k).ok()?.center() - c[0].ellipse.center();
    let b = project_ellipsoid(&c[1].ellipsoid, &pose, k).ok()?.center() - c[1].ellipse.center();
    Some(Vector4::new(a.x, a.y, b.x, b.y))
}

/// Damped Newton iteration for `f(x) = 0` with a central-difference Jacobian. Returns
/// the root when the residual falls below `1e-6`.
fn newton(mut x: DVector<f64>, f: impl Fn(&DVector<f64>) -> Option<DVector<f64>>) -> Option<DVector<f64>> {
    let n = x.len();
    let mut r = f(&x)?;
    for _ in 0..20 {
        let mut j = DMatrix::zeros(n, n);
        for col in 0..n {
            let h = 1e-7 * (1.0 + x[col].abs());
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[col] += h;
            lo[col] -= h;
            j.set_column(col, &((f(&hi)? - f(&lo)?) / (2.0 * h)));
        }
        let step = j.lu().solve(&(-&r))?;
        let mut t = 1.0;
        let (next, rn) = loop {
            let cand = &x + &step * t;
            if let Some(rn) = f(&cand) {
                if rn.norm() < r.norm() || rn.norm() < 1e-12 {
                    break (cand, rn);
                }
            }
            t *= 0.5;
            if t < 1e-4 {
                return None;
            }
        };
        let moved = (&next - &x).norm();
        x = next;
        r = rn;
        if moved < 1e-12 || r.norm() < 1e-10 {
            break;
        }
    }
    (r.norm() <= 1e-6).then_some(x)
}

/// Newton's method on the projected centers at fixed yaw, for where the fixed-point
/// correction does not contract.
fn p2e_newton(yaw: f64, pitch: f64, pose: &Pose, c: &[Correspondence; 2], k: &CameraIntrinsics) -> Option<(Pose, Offsets)> {
    let center = pose.center();
    let x = newton(DVector::from_vec(vec![pitch, center.x, center.y, center.z]), |x| {
        p2e_residual(yaw, &Vector4::new(x[0], x[1], x[2], x[3]), c, k).map(|r| DVector::from_column_slice(r.as_slice()))
    })?;
    if x[0].abs() >= std::f64::consts::FRAC_PI_2 {
        return None;
    }
    let pose = Pose::from_center(zero_roll_rotation(yaw, x[0]), Vector3::new(x[1], x[2], x[3])).ok()?;
    Some((pose, [center_offset(&c[0], &pose, k)?, center_offset(&c[1], &pose, k)?]))
}

/// Zero-roll poses at `yaw` seeded from `observed - seed`, each refined by center-offset
/// correction. A pose comes with its offsets when the correction converged.
fn p2e_corrected_at(
    yaw: f64,
    seed: &Offsets,
    c: &[Correspondence; 2],
    world: &[Vector3<f64>; 2],
    k: &CameraIntrinsics,
) -> Vec<(Pose, Option<Offsets>)> {
    let observed = [c[0].ellipse.center(), c[1].ellipse.center()];
    let shifted = [observed[0] - seed[0], observed[1] - seed[1]];
    p2e_at(yaw, &shifted, world, k)
        .into_iter()
        .map(|(seed_pitch, seed_pose)| {
            let (mut pitch, mut pose) = (seed_pitch, seed_pose);
            for _ in 0..P2E_CORRECTION_ROUNDS {
                let (Some(a), Some(b)) = (center_offset(&c[0], &pose, k), center_offset(&c[1], &pose, k))
                else {
                    break;
                };
                let image = [observed[0] - a, observed[1] - b];
                let next = p2e_at(yaw, &image, world, k)
                    .into_iter()
                    .min_by(|x, y| (x.0 - pitch).abs().total_cmp(&(y.0 - pitch).abs()));
                match next {
                    Some((p, q)) if (p - pitch).abs() < 0.1 => {
                        let change = pose_distance(&q, &pose);
                        pitch = p;
                        pose = q;
                        if change < 1e-12 {
                            return (pose, Some([a, b]));
                        }
                    }
                    _ => break,
                }
            }
            match p2e_newton(yaw, seed_pitch, &seed_pose, c, k) {
                Some((p, off)) => (p, Some(off)),
                None => (pose, None),
            }
        })
        .collect()
}

/// Enumerate zero-roll poses consistent with two center correspondences over the yaw
/// angle, sampled every `sweep_step` radians in `[-π, π)`. Each candidate's center
/// offset is corrected at its own yaw.
///
/// The corrected constraint can admit yaws the raw centers do not, so converged
/// offsets are also carried to the neighbouring yaw in both sweep directions.
pub fn p2e_zero_roll(
    c: &[Correspondence; 2],
    k: &CameraIntrinsics,
    sweep_step: f64,
) -> Result<Vec<PoseCandidate>> {
    if !(sweep_step > 0.0) {
        return Err(Error::InvalidConfig("sweep step must be positive".into()));
    }
    let world = [c[0].ellipsoid.center(), c[1].ellipsoid.center()];
    if (world[0] - world[1]).norm() < 1e-9 {
        return Err(Error::DegenerateConfiguration("identical ellipsoid centers".into()));
    }
    if (c[0].ellipse.center() - c[1].ellipse.center()).norm() < 1e-9 {
        return Err(Error::DegenerateConfiguration("identical ellipse centers".into()));
    }
    let samples = (2.0 * std::f64::consts::PI / sweep_step).ceil() as usize;
    let yaw = |i: usize| -std::f64::consts::PI + i as f64 * sweep_step;
    let zero = [Vector2::zeros(); 2];
    let mut found: Vec<Vec<(Pose, Option<Offsets>)>> =
        (0..samples).map(|i| p2e_corrected_at(yaw(i), &zero, c, &world, k)).collect();

    let forward: Vec<usize> = (0..samples).collect();
    let backward: Vec<usize> = (0..samples).rev().collect();
    for order in [forward, backward] {
        for w in order.windows(2) {
            let (prev, i) = (w[0], w[1]);
            let seeds: Vec<Offsets> = found[prev].iter().filter_map(|f| f.1).collect();
            for seed in seeds {
                for (pose, off) in p2e_corrected_at(yaw(i), &seed, c, &world, k) {
                    let known = found[i].iter().any(|f| pose_distance(&f.0, &pose) < 1e-8);
                    if off.is_some() && !known {
                        found[i].push((pose, off));
                    }
                }
            }
        }
    }

    Ok(found
        .into_iter()
        .enumerate()
        .flat_map(|(i, f)| {
            f.into_iter().map(move |(pose, _)| PoseCandidate {
                pose,
                solver: Solver::P2e,
                index: i,
            })
        })
        .collect())
}

/// Sub-samples per half-interval when following a candidate's branch in yaw.
const P2E_REFINE_SUBSTEPS: usize = 8;

/// Sharpen a P2E candidate between sweep samples. The yaw moves by at most one
/// `sweep_step` to best match both ellipse shapes, with pitch and position re-solved
/// from the centers at every trial yaw.
///
/// The branch is followed outward from the candidate in sub-steps so every trial pose
/// is seeded from a close neighbour, then bracketed by golden-section search. Returns
/// `None` when no trial yaw admits a solution near the candidate.
pub fn p2e_refine_yaw(
    c: &[Correspondence; 2],
    k: &CameraIntrinsics,
    pose: &Pose,
    sweep_step: f64,
) -> Option<Pose> {
    let forward = pose.rotation().transpose() * Vector3::z();
    let yaw0 = forward.y.atan2(forward.x);
    let kinv = k.inverse_matrix();
    let targets = c.map(|ci| {
        DualConic::new(kinv * DualConic::from(&ci.ellipse).matrix() * kinv.transpose()).frobenius_normalized()
    });
    let eval = |yaw: f64, seed: &Pose| -> Option<(f64, Pose)> {
        let f = seed.rotation().transpose() * Vector3::z();
        let (p, _) = p2e_newton(yaw, f.z.clamp(-1.0, 1.0).asin(), seed, c, k)?;
        let mut cost = 0.0;
        for (t, ci) in targets.iter().zip(c) {
            cost += (t - normalized_projection(&ci.ellipsoid, &p.rotation(), &p.center())?).norm_squared();
        }
        Some((cost, p))
    };

    let h = sweep_step / P2E_REFINE_SUBSTEPS as f64;
    let mut samples = Vec::new();
    if let Some((cost, p)) = eval(yaw0, pose) {
        samples.push((yaw0, cost, p));
    }
    for dir in [-1.0, 1.0] {
        let mut prev = samples.first().map(|s| s.2);
        for i in 1..=P2E_REFINE_SUBSTEPS {
            let yaw = yaw0 + dir * h * i as f64;
            let found = prev.and_then(|p| eval(yaw, &p)).or_else(|| eval(yaw, pose));
            if let Some((cost, p)) = found {
                samples.push((yaw, cost, p));
            }
            prev = found.map(|f| f.1);
        }
    }
    let &(yaw_s, cost_s, pose_s) = samples.iter().min_by(|a, b| a.1.total_cmp(&b.1))?;
    let mut best = (cost_s, pose_s);
    let mut consider = |yaw: f64| -> f64 {
        match eval(yaw, &pose_s) {
            Some((cost, p)) => {
                if cost < best.0 {
                    best = (cost, p);
                }
                cost
            }
            None => f64::INFINITY,
        }
    };

    // Golden-section search around the best sub-sample.
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (yaw_s - h, yaw_s + h);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = consider(x1);
    let mut f2 = consider(x2);
    for _ in 0..60 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = consider(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = consider(x2);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Some(best.1)
}

// ── position from orientation ───────────────────────────────────────────────

/// Stopping rules of the single-object position solver.
pub const POSITION_MAX_ITERATIONS: usize = 100;
pub const POSITION_STEP_TOL: f64 = 1e-10;

/// Frobenius-normalized dual conic of the ellipsoid in normalized image coordinates, or
/// `None` when it is not visible.
fn normalized_projection(e: &Ellipsoid, r: &Matrix3<f64>, center: &Vector3<f64>) -> Option<Matrix3<f64>> {
    let pose = Pose::from_center(*r, *center).ok()?;
    if !crate::quadric::in_front(e, &pose) {
        return None;
    }
    let p = pose.extrinsic_matrix();
    let c = p * ellipsoid_to_dual_quadric(e).matrix() * p.transpose();
    Some(DualConic::new(c).frobenius_normalized())
}

fn residual(target: &Matrix3<f64>, e: &Ellipsoid, r: &Matrix3<f64>, c: &Vector3<f64>) -> Option<[f64; 6]> {
    let m = normalized_projection(e, r, c)?;
    let d = target - m;
    let s = std::f64::consts::SQRT_2;
    Some([d[(0, 0)], s * d[(0, 1)], s * d[(0, 2)], d[(1, 1)], s * d[(1, 2)], d[(2, 2)]])
}

fn cost(r: &[f64; 6]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Result of [`position_from_orientation`] along with its final residual norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionSolution {
    pub pose: Pose,
    pub residual: f64,
    pub iterations: usize,
}

/// Camera position from one correspondence given the camera rotation, by damped least
/// squares on the discrepancy between observed and predicted normalized dual conics.
pub fn position_from_orientation(
    c: &Correspondence,
    rotation: &Matrix3<f64>,
    k: &CameraIntrinsics,
) -> Result<PositionSolution> {
    crate::quadric::check_rotation(rotation, 1e-9)?;
    let kinv = k.inverse_matrix();
    let obs = kinv * DualConic::from(&c.ellipse).matrix() * kinv.transpose();
    let target = DualConic::new(obs).frobenius_normalized();
    let e = &c.ellipsoid;

    // Initial guess: depth from apparent size along the ray through the ellipse center.
    let ray = k.unproject(&c.ellipse.center()).normalize();
    let dist = (k.focal() * e.max_axis() / c.ellipse.alpha()).max(1.05 * e.max_axis());
    let mut center = e.center() - rotation.transpose() * (ray * dist);

    let mut res = residual(&target, e, rotation, &center).ok_or(Error::NonConvergence {
        residual: f64::INFINITY,
    })?;
    let mut lambda = 1e-3;
    for it in 0..POSITION_MAX_ITERATIONS {
        let h = 1e-7 * (1.0 + dist);
        let mut jac = nalgebra::Matrix6x3::zeros();
        for a in 0..3 {
            let mut plus = center;
            let mut minus = center;
            plus[a] += h;
            minus[a] -= h;
            let (Some(rp), Some(rm)) = (
                residual(&target, e, rotation, &plus),
                residual(&target, e, rotation, &minus),
            ) else {
                return Err(Error::NonConvergence { residual: cost(&res).sqrt() });
            };
            for i in 0..6 {
                jac[(i, a)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = nalgebra::Vector6::from_row_slice(&res);
        let jtj = jac.transpose() * jac;
        let g = jac.transpose() * rv;
        let current = cost(&res);
        let mut accepted = false;
        while lambda < 1e12 {
            let damped = jtj + Matrix3::from_diagonal(&jtj.diagonal()) * lambda
                + Matrix3::identity() * (1e-30 + 1e-12 * jtj.trace() * lambda);
            let Some(step) = damped.try_inverse().map(|m| -(m * g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = center + step;
            match residual(&target, e, rotation, &trial) {
                Some(r) if cost(&r) <= current => {
                    center = trial;
                    res = r;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    if step.norm() < POSITION_STEP_TOL {
                        return Ok(PositionSolution {
                            pose: Pose::from_center(*rotation, center)?,
                            residual: cost(&res).sqrt(),
                            iterations: it + 1,
                        });
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No descent direction left: stationary point.
            return Ok(PositionSolution {
                pose: Pose::from_center(*rotation, center)?,
                residual: cost(&res).sqrt(),
                iterations: it + 1,
            });
        }
    }
    Err(Error::NonConvergence {
        residual: cost(&res).sqrt(),
    })
}
