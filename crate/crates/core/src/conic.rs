//! Image ellipses, their dual-conic matrices, bounding boxes and ellipse IoU.
//!
//! Dual conics are stored normalized so that the bottom-right entry is `-1`:
//!
//! ```text
//! C* = [ S - c cᵀ   -c ]      S = R(θ) diag(α², β²) R(θ)ᵀ
//!      [   -cᵀ      -1 ]
//! ```
//!
//! Its inverse is the point conic, which vanishes exactly on the ellipse boundary.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Matrix3, Vector2};

use crate::error::{Error, Result};
use crate::polygon;

/// Smallest accepted ratio between the minor and major eigenvalue of a conic's shape block.
pub const DEGENERACY_RATIO: f64 = 1e-10;

/// Number of vertices of the polygonal ellipse approximation used by [`ellipse_iou`].
pub const IOU_POLYGON_VERTICES: usize = 64;

/// Wrap an angle into `[-π/2, π/2)`.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let mut t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    if t < -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// An image ellipse: center, semi-axes `alpha >= beta > 0` and orientation of the
/// major axis in `[-π/2, π/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    center: Vector2<f64>,
    alpha: f64,
    beta: f64,
    theta: f64,
}

impl Ellipse {
    /// Build an ellipse from arbitrary positive semi-axes and any angle.
    ///
    /// Axes are swapped (and the angle rotated by a quarter turn) when `a < b`, the angle is
    /// wrapped into `[-π/2, π/2)`, and circles get `theta = 0`. None of this changes the
    /// represented point set.
    pub fn new(center: Vector2<f64>, a: f64, b: f64, theta: f64) -> Result<Self> {
        if !(center.x.is_finite() && center.y.is_finite()) {
            return Err(Error::InvalidEllipse("non-finite center".into()));
        }
        if !(a.is_finite() && b.is_finite() && theta.is_finite()) {
            return Err(Error::InvalidEllipse("non-finite parameter".into()));
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::InvalidEllipse(format!(
                "semi-axes must be positive, got ({a}, {b})"
            )));
        }
        let (alpha, beta, theta) = if a >= b {
            (a, b, theta)
        } else {
            (b, a, theta + FRAC_PI_2)
        };
        let theta = if alpha - beta <= 1e-12 * alpha {
            0.0
        } else {
            wrap_half_turn(theta)
        };
        Ok(Self {
            center,
            alpha,
            beta,
            theta,
        })
    }

    pub fn circle(center: Vector2<f64>, radius: f64) -> Result<Self> {
        Self::new(center, radius, radius, 0.0)
    }

    pub fn center(&self) -> Vector2<f64> {
        self.center
    }

    /// Semi-major axis.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Semi-minor axis.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `[cx, cy, alpha, beta, theta]`.
    pub fn params(&self) -> [f64; 5] {
        [
            self.center.x,
            self.center.y,
            self.alpha,
            self.beta,
            self.theta,
        ]
    }

    pub fn area(&self) -> f64 {
        PI * self.alpha * self.beta
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// `R(θ) diag(α², β²) R(θ)ᵀ`.
    pub fn shape_matrix(&self) -> Matrix2<f64> {
        let r = self.rotation();
        r * Matrix2::new(self.alpha * self.alpha, 0.0, 0.0, self.beta * self.beta) * r.transpose()
    }

    /// Point on the boundary at parametric angle `t`.
    pub fn boundary_point(&self, t: f64) -> Vector2<f64> {
        let (s, c) = t.sin_cos();
        self.center + self.rotation() * Vector2::new(self.alpha * c, self.beta * s)
    }

    /// Homogeneous point conic `C`, with `xᵀ C x = 0` on the boundary and `C[2,2] < 0`
    /// at the center.
    pub fn point_conic(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let m = r
            * Matrix2::new(
                1.0 / (self.alpha * self.alpha),
                0.0,
                0.0,
                1.0 / (self.beta * self.beta),
            )
            * r.transpose();
        let mc = m * self.center;
        let k = self.center.dot(&mc) - 1.0;
        Matrix3::new(
            m[(0, 0)],
            m[(0, 1)],
            -mc.x,
            m[(1, 0)],
            m[(1, 1)],
            -mc.y,
            -mc.x,
            -mc.y,
            k,
        )
    }

    /// Counter-clockwise polygon with the same area as the ellipse.
    pub fn polygon(&self, n: usize) -> Vec<nalgebra::Vector2<f64>> {
        let step = 2.0 * PI / n as f64;
        // Inflate so the inscribed n-gon keeps the exact ellipse area.
        let k = (step / step.sin()).sqrt();
        let r = self.rotation();
        (0..n)
            .map(|i| {
                let (s, c) = (i as f64 * step).sin_cos();
                self.center + r * Vector2::new(k * self.alpha * c, k * self.beta * s)
            })
            .collect()
    }
}

/// A homogeneous symmetric 3×3 dual conic matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConic(Matrix3<f64>);

impl DualConic {
    /// Wrap a matrix, symmetrizing it.
    pub fn new(m: Matrix3<f64>) -> Self {
        Self(0.5 * (m + m.transpose()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rescale so that the bottom-right entry is `-1`.
    pub fn normalized(&self) -> Result<Self> {
        let m22 = self.0[(2, 2)];
        let scale = self.0.abs().max();
        if !scale.is_finite() || scale == 0.0 || m22.abs() <= 1e-14 * scale {
            return Err(Error::DegenerateConic);
        }
        Ok(Self(self.0 * (-1.0 / m22)))
    }

    /// Scale to unit Frobenius norm with a negative bottom-right entry.
    pub fn frobenius_normalized(&self) -> Matrix3<f64> {
        let n = self.0.norm();
        let sign = if self.0[(2, 2)] > 0.0 { -1.0 } else { 1.0 };
        self.0 * (sign / n)
    }
}

impl From<&Ellipse> for DualConic {
    fn from(e: &Ellipse) -> Self {
        ellipse_to_dual_conic(e)
    }
}

pub fn ellipse_to_dual_conic(e: &Ellipse) -> DualConic {
    let c = e.center;
    let s = e.shape_matrix() - c * c.transpose();
    DualConic(Matrix3::new(
        s[(0, 0)],
        s[(0, 1)],
        -c.x,
        s[(1, 0)],
        s[(1, 1)],
        -c.y,
        -c.x,
        -c.y,
        -1.0,
    ))
}

/// Eigen-decomposition of a symmetric 2×2 matrix: `(λ_max, λ_min, angle of λ_max eigenvector)`.
pub(crate) fn symmetric_eigen2(m: &Matrix2<f64>) -> (f64, f64, f64) {
    let a = m[(0, 0)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let c = m[(1, 1)];
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    (mean + radius, mean - radius, angle)
}

pub fn dual_conic_to_ellipse(m: &DualConic) -> Result<Ellipse> {
    let n = m.normalized()?.0;
    let c = Vector2::new(-n[(0, 2)], -n[(1, 2)]);
    let s = Matrix2::new(n[(0, 0)], n[(0, 1)], n[(1, 0)], n[(1, 1)]) + c * c.transpose();
    let (l_max, l_min, angle) = symmetric_eigen2(&s);
    if !(l_max > 0.0) || !(l_min > DEGENERACY_RATIO * l_max) {
        return Err(Error::DegenerateConic);
    }
    Ellipse::new(c, l_max.sqrt(), l_min.sqrt(), angle)
}

/// Axis-aligned pixel box with `min < max` component-wise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    min: Vector2<f64>,
    max: Vector2<f64>,
}

impl BBox {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Result<Self> {
        let finite = min.iter().chain(max.iter()).all(|v| v.is_finite());
        if !finite || min.x >= max.x || min.y >= max.y {
            return Err(Error::InvalidBox(format!(
                "need min < max, got ({}, {})-({}, {})",
                min.x, min.y, max.x, max.y
            )));
        }
        Ok(Self { min, max })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(Vector2::new(x0, y0), Vector2::new(x1, y1))
    }

    pub fn min(&self) -> Vector2<f64> {
        self.min
    }

    pub fn max(&self) -> Vector2<f64> {
        self.max
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vector2<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min.x < other.max.x
            && other.min.x < self.max.x
            && self.min.y < other.max.y
            && other.min.y < self.max.y
    }

    /// Smallest square box sharing this box's center, with side `max(w, h)`.
    pub fn squared(&self) -> BBox {
        let half = 0.5 * self.width().max(self.height());
        let c = self.center();
        BBox {
            min: c - Vector2::new(half, half),
            max: c + Vector2::new(half, half),
        }
    }
}

/// Axis-aligned ellipse inscribed in a box.
pub fn inscribed_ellipse(b: &BBox) -> Ellipse {
    Ellipse::new(b.center(), 0.5 * b.width(), 0.5 * b.height(), 0.0)
        .expect("a valid box has positive extents")
}

/// Tight axis-aligned box around an ellipse.
pub fn ellipse_bbox(e: &Ellipse) -> BBox {
    let (s, c) = e.theta.sin_cos();
    let (a2, b2) = (e.alpha * e.alpha, e.beta * e.beta);
    let hx = (a2 * c * c + b2 * s * s).sqrt();
    let hy = (a2 * s * s + b2 * c * c).sqrt();
    BBox {
        min: e.center - Vector2::new(hx, hy),
        max: e.center + Vector2::new(hx, hy),
    }
}

/// Intersection-over-union of two elliptical regions.
///
/// Each ellipse is replaced by an area-preserving 64-gon and the pair is intersected by
/// convex clipping. Against dense sampling the estimate stays within `1e-3`.
pub fn ellipse_iou(a: &Ellipse, b: &Ellipse) -> f64 {
    if a == b {
        return 1.0;
    }
    if !ellipse_bbox(a).intersects(&ellipse_bbox(b)) {
        return 0.0;
    }
    // Fixed operand order keeps the estimate exactly symmetric.
    let (a, b) = if a.params() <= b.params() { (a, b) } else { (b, a) };
    let pa = a.polygon(IOU_POLYGON_VERTICES);
    let pb = b.polygon(IOU_POLYGON_VERTICES);
    let area_a = polygon::signed_area(&pa);
    let area_b = polygon::signed_area(&pb);
    let inter = polygon::intersection_area(&pa, &pb);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
