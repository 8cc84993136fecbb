//! SO(3) and the direct-product group R^3 x SO(3).
//!
//! Rotations are validated when built from an arbitrary matrix and never
//! re-orthonormalized afterwards: any drift produced by an integrator stays
//! visible to [`orthogonality_error`].

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating a matrix as an element of SO(3).
pub const ROTATION_TOL: f64 = 1e-10;
/// Tolerance on `|A + A^T|_F` accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-8;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(a: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let sym = (a + a.transpose()).norm();
    if sym > SKEW_TOL {
        return Err(Error::NotSkew(sym));
    }
    Ok(vee_unchecked(a))
}

/// Vee of the skew part of `a`, without the symmetry check.
pub fn vee_unchecked(a: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (a[(2, 1)] - a[(1, 2)]),
        0.5 * (a[(0, 2)] - a[(2, 0)]),
        0.5 * (a[(1, 0)] - a[(0, 1)]),
    )
}

/// `|M^T M - I|_F`.
pub fn orthogonality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// Element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3<f64>", into = "Matrix3<f64>")]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let orth = orthogonality_error(&m);
        let det = m.determinant();
        if !(orth <= ROTATION_TOL) || !((det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::NotRotation { orth, det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix without validation. Only used to carry the drifted
    /// attitudes of non-geometric integrators for diagnostics.
    pub(crate) fn from_raw_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.0)
    }

    /// Rotation vector with norm in [0, pi].
    pub fn log(&self) -> Vector3<f64> {
        log_so3(&self.0)
    }
}

impl From<Rotation> for Matrix3<f64> {
    fn from(r: Rotation) -> Self {
        r.0
    }
}

impl TryFrom<Matrix3<f64>> for Rotation {
    type Error = Error;
    fn try_from(m: Matrix3<f64>) -> Result<Self> {
        Rotation::new(m)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, v: Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2)` of the Rodrigues formula.
fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < 1e-6 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Matrix exponential of `hat(v)`.
pub fn exp_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = rodrigues_coefficients(v.norm());
    let k = hat(v);
    Matrix3::identity() + k * a + k * k * b
}

pub fn exp_so3(v: &Vector3<f64>) -> Rotation {
    Rotation(exp_matrix(v))
}

/// Inverse of [`exp_so3`] on rotations with angle below pi.
pub fn log_so3(m: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = vee_unchecked(m);
    if theta < 1e-6 {
        // sin(t)/t ~ 1 - t^2/6
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // near pi: axis from the symmetric part
        let s = (m + Matrix3::identity()) * 0.5;
        let mut axis = Vector3::new(
            s[(0, 0)].max(0.0).sqrt(),
            s[(1, 1)].max(0.0).sqrt(),
            s[(2, 2)].max(0.0).sqrt(),
        );
        let i = axis.imax();
        for j in 0..3 {
            if j != i && s[(i, j)] < 0.0 {
                axis[j] = -axis[j];
            }
        }
        return axis.normalize() * theta;
    }
    w * (theta / theta.sin())
}

/// `1/2 (R_d^T R - R^T R_d)^vee`.
pub fn attitude_error(r: &Rotation, r_d: &Rotation) -> Vector3<f64> {
    attitude_error_matrix(r.matrix(), r_d.matrix())
}

pub(crate) fn attitude_error_matrix(r: &Matrix3<f64>, r_d: &Matrix3<f64>) -> Vector3<f64> {
    let e = r_d.transpose() * r;
    // vee_unchecked already halves the antisymmetric part
    vee_unchecked(&e)
}

/// Element of the direct product R^3 x SO(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub x: Vector3<f64>,
    pub r: Rotation,
}

impl GroupElement {
    pub fn identity() -> Self {
        Self { x: Vector3::zeros(), r: Rotation::identity() }
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement { x: self.x + other.x, r: self.r * other.r }
    }

    /// Exponential of a twist on the product group.
    pub fn exp(t: &Twist) -> GroupElement {
        GroupElement { x: t.v, r: exp_so3(&t.w) }
    }
}

/// Velocity `(x_dot, Omega)`; `w` is resolved in the body frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { v, w }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|c| c.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let y = hat(&Vector3::x()) * Vector3::y();
        assert_eq!(y, Vector3::z());
        let v = Vector3::new(0.3, -1.2, 2.5);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
    }

    #[test]
    fn vee_rejects_symmetric() {
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
        assert_eq!(vee(&hat(&Vector3::new(1.0, 2.0, 3.0))).unwrap(), Vector3::new(1.0, 2.0, 3.0));
        let sym = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 3.0);
        assert!(matches!(vee(&sym), Err(Error::NotSkew(_))));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&Vector3::zeros()).matrix(), Matrix3::identity());
        let q = exp_so3(&Vector3::new(PI / 2.0, 0.0, 0.0));
        assert_relative_eq!(q * Vector3::y(), Vector3::z(), epsilon = 1e-15);
        let v = Vector3::new(0.1, 0.7, -0.4);
        let p = exp_so3(&v) * exp_so3(&(-v));
        assert_relative_eq!(*p.matrix(), Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(exp_so3(&v) * v, v, epsilon = 1e-15);
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let axis = Vector3::new(0.2, -0.5, 0.8).normalize();
        let below = exp_matrix(&(axis * 0.999_999e-6));
        let above = exp_matrix(&(axis * 1.000_001e-6));
        assert!((below - above).norm() < 1e-11);
        assert!(orthogonality_error(&below) < 1e-15);
    }

    #[test]
    fn attitude_error_examples() {
        let r = exp_so3(&Vector3::new(0.4, -0.2, 0.9));
        assert_eq!(attitude_error(&r, &r), Vector3::zeros());
        let eps = 0.05_f64;
        let e = attitude_error(&exp_so3(&Vector3::new(eps, 0.0, 0.0)), &Rotation::identity());
        assert_relative_eq!(e, Vector3::new(eps.sin(), 0.0, 0.0), epsilon = 1e-16);
        let e = attitude_error(&exp_so3(&Vector3::new(0.0, 0.0, 0.2)), &Rotation::identity());
        assert_relative_eq!(e, Vector3::new(0.0, 0.0, 0.2_f64.sin()), epsilon = 1e-16);
    }

    #[test]
    fn orthogonality_examples() {
        assert_eq!(orthogonality_error(&Matrix3::identity()), 0.0);
        assert_relative_eq!(orthogonality_error(&(Matrix3::identity() * 2.0)), 27f64.sqrt(), epsilon = 1e-14);
        assert!(exp_so3(&Vector3::new(0.3, 0.1, -0.2)).orthogonality_error() <= 1e-14);
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::new(Matrix3::identity() * 2.0).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(matches!(Rotation::new(reflect), Err(Error::NotRotation { .. })));
        let json = serde_json::to_string(&exp_so3(&Vector3::new(0.1, 0.2, 0.3))).unwrap();
        let back: Rotation = serde_json::from_str(&json).unwrap();
        assert!(back.orthogonality_error() < 1e-14);
    }

    #[test]
    fn group_composition() {
        let a = GroupElement { x: Vector3::new(1.0, 0.0, 2.0), r: exp_so3(&Vector3::new(0.1, 0.0, 0.0)) };
        let b = GroupElement { x: Vector3::new(0.0, -1.0, 0.5), r: exp_so3(&Vector3::new(0.0, 0.3, 0.0)) };
        let c = GroupElement { x: Vector3::new(2.0, 2.0, 2.0), r: exp_so3(&Vector3::new(0.0, 0.0, -0.7)) };
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        assert_relative_eq!(l.x, r.x);
        assert_relative_eq!(*l.r.matrix(), *r.r.matrix(), epsilon = 1e-15);
        let id = GroupElement::identity();
        assert_eq!(a.compose(&id), a);
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn hat_is_antisymmetric(v in vec3()) {
            let k = hat(&v);
            prop_assert_eq!(k + k.transpose(), Matrix3::zeros());
        }

        #[test]
        fn log_inverts_exp(v in vec3()) {
            prop_assume!(v.norm() < PI - 1e-3);
            let back = log_so3(exp_so3(&v).matrix());
            prop_assert!((back - v).norm() < 1e-9);
        }

        #[test]
        fn attitude_error_is_left_invariant(a in vec3(), eta in vec3()) {
            let rd = exp_so3(&a);
            let r = rd * exp_so3(&eta);
            let reference = attitude_error(&exp_so3(&eta), &Rotation::identity());
            prop_assert!((attitude_error(&r, &rd) - reference).norm() < 1e-10);
        }
    }
}
