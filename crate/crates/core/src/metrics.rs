//! Pose accuracy metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadric::{project_point, CameraIntrinsics, Ellipsoid, Pose};

/// Default thresholds of a valid pose.
pub const VALID_POSITION_M: f64 = 0.20;
pub const VALID_ORIENTATION_DEG: f64 = 20.0;

/// Number of surface samples standing in for an object point cloud.
pub const SURFACE_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// Camera center distance, meters.
    pub position: f64,
    /// Geodesic rotation distance, degrees.
    pub orientation: f64,
}

/// Rotation angle of `r` in radians, stable near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c)
}

pub fn rotation_distance_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a * b.transpose())).to_degrees()
}

pub fn pose_error(est: &Pose, gt: &Pose) -> PoseError {
    PoseError {
        position: (est.center() - gt.center()).norm(),
        orientation: rotation_distance_deg(&est.rotation(), &gt.rotation()),
    }
}

pub fn valid_pose(e: &PoseError, pos_thresh: f64, rot_thresh: f64) -> bool {
    e.position <= pos_thresh && e.orientation <= rot_thresh
}

/// Mean pixel distance between the projections of `points` under both poses.
pub fn reprojection_error(points: &[Vector3<f64>], est: &Pose, gt: &Pose, k: &CameraIntrinsics) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut sum = 0.0;
    for x in points {
        sum += (project_point(x, est, k)? - project_point(x, gt, k)?).norm();
    }
    Ok(sum / points.len() as f64)
}

/// Mean distance between `points` mapped by both poses.
pub fn add_error(points: &[Vector3<f64>], est: &Pose, gt: &Pose) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let sum: f64 = points
        .iter()
        .map(|x| (est.transform_point(x) - gt.transform_point(x)).norm())
        .sum();
    Ok(sum / points.len() as f64)
}

/// Largest pairwise distance.
pub fn diameter(points: &[Vector3<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max((a - b).norm());
        }
    }
    d
}

/// ADD below `fraction` of the point-set diameter (0.1 is the usual choice).
pub fn add_valid(add: f64, points: &[Vector3<f64>], fraction: f64) -> bool {
    add < fraction * diameter(points)
}

/// Deterministic, roughly uniform points on the ellipsoid surface (Fibonacci sphere
/// mapped through the ellipsoid frame).
pub fn ellipsoid_surface_points(e: &Ellipsoid, n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            e.surface_point(&Vector3::new(r * phi.cos(), r * phi.sin(), z))
        })
        .collect()
}

/// Fraction of errors at or below each threshold.
pub fn accuracy_curve(errors: &[f64], thresholds: &[f64]) -> Vec<f64> {
    if errors.is_empty() {
        return vec![0.0; thresholds.len()];
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    thresholds
        .iter()
        .map(|t| sorted.partition_point(|e| e <= t) as f64 / sorted.len() as f64)
        .collect()
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// One evaluated frame, as written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: String,
    pub pos_err_m: f64,
    pub rot_err_deg: f64,
    pub valid: bool,
    pub n_detected: usize,
    pub solver: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadric::rotation_from_vector;
    use nalgebra::UnitQuaternion;

    #[test]
    fn identical_poses() {
        let p = Pose::look_at(Vector3::new(2.0, 1.0, 1.0), Vector3::zeros(), Vector3::z()).unwrap();
        let e = pose_error(&p, &p);
        assert_eq!((e.position, e.orientation), (0.0, 0.0));
        assert!(valid_pose(&e, VALID_POSITION_M, VALID_ORIENTATION_DEG));
    }

    #[test]
    fn right_angle() {
        for axis in [Vector3::x(), Vector3::y(), Vector3::new(1.0, 2.0, -1.0).normalize()] {
            let r = rotation_from_vector(axis * std::f64::consts::FRAC_PI_2);
            assert!((rotation_distance_deg(&r, &Matrix3::identity()) - 90.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_quaternion_distance() {
        let a = rotation_from_vector(Vector3::new(0.3, -1.2, 0.8));
        let b = rotation_from_vector(Vector3::new(-2.0, 0.1, 0.4));
        let qa = UnitQuaternion::from_matrix(&a);
        let qb = UnitQuaternion::from_matrix(&b);
        let oracle = 2.0 * (qa.inverse() * qb).quaternion().w.abs().min(1.0).acos();
        assert!((rotation_distance_deg(&a, &b) - oracle.to_degrees()).abs() < 1e-9);
    }

    #[test]
    fn validity_thresholds() {
        let ok = PoseError { position: 0.19, orientation: 19.0 };
        let far = PoseError { position: 0.21, orientation: 1.0 };
        assert!(valid_pose(&ok, VALID_POSITION_M, VALID_ORIENTATION_DEG));
        assert!(!valid_pose(&far, VALID_POSITION_M, VALID_ORIENTATION_DEG));
    }

    #[test]
    fn add_of_translation() {
        let gt = Pose::identity();
        let est = Pose::new(Matrix3::identity(), Vector3::new(0.3, 0.0, -0.4)).unwrap();
        let pts = vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(1.0, -1.0, 3.0)];
        assert!((add_error(&pts, &est, &gt).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(add_error(&[], &est, &gt), Err(Error::EmptyPointSet));
    }

    #[test]
    fn curve_counts() {
        assert_eq!(accuracy_curve(&[1.0, 3.0], &[2.0, 4.0]), vec![0.5, 1.0]);
        assert_eq!(accuracy_curve(&[0.0; 4], &[0.0, 1.0]), vec![1.0, 1.0]);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
    }

    #[test]
    fn surface_points_lie_on_surface() {
        let e = Ellipsoid::new(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.3, 0.2, 0.1),
            rotation_from_vector(Vector3::new(0.4, 0.1, 0.2)),
        )
        .unwrap();
        let pts = ellipsoid_surface_points(&e, SURFACE_POINTS);
        assert_eq!(pts.len(), SURFACE_POINTS);
        let inv = e.shape_matrix().try_inverse().unwrap();
        for p in &pts {
            let d = p - e.center();
            assert!(((d.transpose() * inv * d)[0] - 1.0).abs() < 1e-12);
        }
        assert!((diameter(&pts) - 0.6).abs() < 0.01);
    }
}
