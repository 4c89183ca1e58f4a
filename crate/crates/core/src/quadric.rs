//! Ellipsoids, dual quadrics, pinhole cameras and the projection `C* = P Q* Pᵀ`.
//!
//! Poses are world-to-camera throughout: a world point `x` maps to `R x + t` in the
//! camera frame, whose `z` axis points forward, `x` right and `y` down.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, SymmetricEigen, UnitQuaternion, Vector2, Vector3};

use crate::conic::{dual_conic_to_ellipse, DualConic, Ellipse};
use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-10;

pub(crate) fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if dev > tol {
        return Err(Error::InvalidRotation(format!(
            "not orthonormal (deviation {dev:e})"
        )));
    }
    if r.determinant() < 0.0 {
        return Err(Error::InvalidRotation("determinant is -1".into()));
    }
    Ok(())
}

/// Rotation matrix from a rotation vector (axis times angle).
pub fn rotation_from_vector(v: Vector3<f64>) -> Matrix3<f64> {
    *nalgebra::Rotation3::new(v).matrix()
}

/// A solid ellipsoid: center, positive semi-axes and an orientation whose columns are the
/// axis directions in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    center: Vector3<f64>,
    axes: Vector3<f64>,
    rotation: Matrix3<f64>,
}

impl Ellipsoid {
    pub fn new(center: Vector3<f64>, axes: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidEllipsoid("non-finite center".into()));
        }
        if !axes.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidEllipsoid(format!(
                "semi-axes must be positive, got {:?}",
                axes.as_slice()
            )));
        }
        check_rotation(&rotation, ORTHONORMAL_TOL)?;
        Ok(Self {
            center,
            axes,
            rotation,
        })
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self> {
        Self::new(
            center,
            Vector3::repeat(radius),
            Matrix3::identity(),
        )
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn axes(&self) -> Vector3<f64> {
        self.axes
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.rotation
    }

    pub fn max_axis(&self) -> f64 {
        self.axes.max()
    }

    /// `R diag(a²) Rᵀ`; the ellipsoid is `{x : (x-c)ᵀ S⁻¹ (x-c) <= 1}`.
    pub fn shape_matrix(&self) -> Matrix3<f64> {
        self.rotation
            * Matrix3::from_diagonal(&self.axes.component_mul(&self.axes))
            * self.rotation.transpose()
    }

    /// Surface point for the unit direction `u` expressed in the ellipsoid's own frame.
    pub fn surface_point(&self, u: &Vector3<f64>) -> Vector3<f64> {
        self.center + self.rotation * self.axes.component_mul(u)
    }

    /// Same solid with semi-axes sorted descending and a canonical rotation.
    pub fn canonical(&self) -> Ellipsoid {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| self.axes[j].total_cmp(&self.axes[i]));
        let axes = Vector3::new(self.axes[order[0]], self.axes[order[1]], self.axes[order[2]]);
        let cols: Vec<Vector3<f64>> = order
            .iter()
            .map(|&i| self.rotation.column(i).into_owned())
            .collect();
        Ellipsoid {
            center: self.center,
            axes,
            rotation: canonical_frame(&axes, cols[0], cols[1]),
        }
    }

    /// Apply the rigid motion `x -> r x + t`.
    pub fn transformed(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Ellipsoid {
        Ellipsoid {
            center: r * self.center + t,
            axes: self.axes,
            rotation: r * self.rotation,
        }
    }
}

/// Sign convention for the axis frame: the first clearly nonzero entry of the first two
/// columns is positive, the third column completes a right-handed frame. Spheres and
/// spheroids get the most axis-aligned frame available.
fn canonical_frame(axes: &Vector3<f64>, c0: Vector3<f64>, c1: Vector3<f64>) -> Matrix3<f64> {
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.max(b);
    if tie(axes[0], axes[1]) && tie(axes[1], axes[2]) {
        return Matrix3::identity();
    }
    let fix = |v: Vector3<f64>| {
        let lead = v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        if lead < 0.0 {
            -v
        } else {
            v
        }
    };
    let c0 = fix(c0);
    let c1 = fix(c1);
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Homogeneous symmetric 4×4 dual quadric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuadric(Matrix4<f64>);

impl DualQuadric {
    pub fn new(m: Matrix4<f64>) -> Self {
        Self(0.5 * (m + m.transpose()))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn normalized(&self) -> Result<Self> {
        let m33 = self.0[(3, 3)];
        let scale = self.0.abs().max();
        if !scale.is_finite() || scale == 0.0 || m33.abs() <= 1e-14 * scale {
            return Err(Error::NotAnEllipsoid);
        }
        Ok(Self(self.0 * (-1.0 / m33)))
    }
}

pub fn ellipsoid_to_dual_quadric(e: &Ellipsoid) -> DualQuadric {
    let c = e.center;
    let s = e.shape_matrix() - c * c.transpose();
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&s);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&-c);
    m.fixed_view_mut::<1, 3>(3, 0).copy_from(&-c.transpose());
    m[(3, 3)] = -1.0;
    DualQuadric(m)
}

pub fn dual_quadric_to_ellipsoid(q: &DualQuadric) -> Result<Ellipsoid> {
    let n = q.normalized()?.0;
    let c = -n.fixed_view::<3, 1>(0, 3).into_owned();
    let s = n.fixed_view::<3, 3>(0, 0).into_owned() + c * c.transpose();
    let eig = SymmetricEigen::new(0.5 * (s + s.transpose()));
    let vals = eig.eigenvalues;
    let l_max = vals.max();
    if !(l_max > 0.0) || !(vals.min() > crate::conic::DEGENERACY_RATIO * l_max) {
        return Err(Error::NotAnEllipsoid);
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    let axes = Vector3::new(
        vals[order[0]].sqrt(),
        vals[order[1]].sqrt(),
        vals[order[2]].sqrt(),
    );
    let c0 = eig.eigenvectors.column(order[0]).normalize();
    // Re-orthogonalize the second axis against the first.
    let v1 = eig.eigenvectors.column(order[1]).into_owned();
    let c1 = (v1 - c0 * c0.dot(&v1)).normalize();
    let rotation = canonical_frame(&axes, c0, c1);
    Ok(Ellipsoid {
        center: c,
        axes,
        rotation,
    })
}

/// Pinhole intrinsics, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite principal point".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Unit-depth ray `(x, y, 1)` through an image point.
    pub fn unproject(&self, p: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ORTHONORMAL_TOL)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pose from a world-to-camera rotation and the camera center in world coordinates.
    pub fn from_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        Self::new(rotation, -rotation * center)
    }

    /// Camera at `eye` looking at `target`, with its x axis horizontal w.r.t. `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = target - eye;
        let n = z.norm();
        if n == 0.0 {
            return Err(Error::InvalidRotation("eye coincides with target".into()));
        }
        let z = z / n;
        let x = z.cross(&up);
        let xn = x.norm();
        if xn < 1e-12 {
            return Err(Error::InvalidRotation("viewing direction parallel to up".into()));
        }
        let x = x / xn;
        let y = z.cross(&x);
        // Rows of the world-to-camera rotation are the camera axes in world coordinates.
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::from_center(r, eye)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `[R | t]`.
    pub fn extrinsic_matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `K [R | t]`.
    pub fn projection_matrix(&self, k: &CameraIntrinsics) -> Matrix3x4<f64> {
        k.matrix() * self.extrinsic_matrix()
    }

    /// The same camera after the world is moved by `x -> r x + t` (i.e. `self ∘ M⁻¹`).
    pub fn after_world_motion(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Pose {
        let rot = self.rotation * r.transpose();
        Pose {
            rotation: rot,
            translation: self.translation - rot * t,
        }
    }
}

/// A calibrated camera with image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub width: u32,
    pub height: u32,
}

/// Conservative visibility test: the center is ahead of the camera by more than the
/// largest semi-axis.
pub fn in_front(e: &Ellipsoid, pose: &Pose) -> bool {
    let depth = pose.transform_point(&e.center).z;
    depth > 0.0 && depth - e.max_axis() > 0.0
}

pub fn project_point(x: &Vector3<f64>, pose: &Pose, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    let pc = pose.transform_point(x);
    if !(pc.z > 0.0) {
        return Err(Error::BehindCamera);
    }
    Ok(Vector2::new(
        k.fx * pc.x / pc.z + k.cx,
        k.fy * pc.y / pc.z + k.cy,
    ))
}

/// Image ellipse of an ellipsoid, `C* = P Q* Pᵀ`.
pub fn project_ellipsoid(e: &Ellipsoid, pose: &Pose, k: &CameraIntrinsics) -> Result<Ellipse> {
    if !in_front(e, pose) {
        return Err(Error::BehindCamera);
    }
    let p = pose.projection_matrix(k);
    let q = ellipsoid_to_dual_quadric(e);
    let c = p * q.matrix() * p.transpose();
    dual_conic_to_ellipse(&DualConic::new(c))
}

/// Projection of a dual quadric; the quadric must describe an ellipsoid.
pub fn project_dual_quadric(q: &DualQuadric, pose: &Pose, k: &CameraIntrinsics) -> Result<Ellipse> {
    project_ellipsoid(&dual_quadric_to_ellipsoid(q)?, pose, k)
}

/// Pixel distance between the projected ellipse center and the projected ellipsoid center.
pub fn center_gap(e: &Ellipsoid, pose: &Pose, k: &CameraIntrinsics) -> Result<f64> {
    let ellipse = project_ellipsoid(e, pose, k)?;
    let p = project_point(&e.center, pose, k)?;
    Ok((ellipse.center() - p).norm())
}
