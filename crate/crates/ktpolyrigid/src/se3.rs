//! Lie group operations on SE(3): hat/vee, exponential, principal logarithm,
//! composition and inversion.
//!
//! Rotations are stored as 3x3 matrices because all blending happens on
//! matrix logarithms. The logarithm refuses rotation angles within
//! `epsilon_branch` of pi instead of silently picking a branch; callers that
//! blend relative transforms rely on this to surface kinematically
//! implausible configurations.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Default guard band around the injectivity radius (radians).
pub const DEFAULT_BRANCH_EPSILON: f64 = 1e-4;

/// Below this rotation norm the closed-form trig ratios are replaced by
/// second-order series; keeps relative error under 1e-12 in f64.
const SMALL_ANGLE: f64 = 1e-6;

/// Element of se(3): rotational part `omega` (radians * unit axis) and
/// translational part `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Twist { omega, v }
    }

    pub fn zero() -> Self {
        Twist { omega: Vector3::zeros(), v: Vector3::zeros() }
    }

    /// Euclidean norm of the stacked 6-vector.
    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist { omega: self.omega * s, v: self.v * s }
    }

    pub fn add(&self, other: &Twist) -> Self {
        Twist { omega: self.omega + other.omega, v: self.v + other.v }
    }

    /// Coordinates in the order [omega, v].
    pub fn coords(&self) -> [f64; 6] {
        [self.omega.x, self.omega.y, self.omega.z, self.v.x, self.v.y, self.v.z]
    }

    pub fn from_coords(c: &[f64; 6]) -> Self {
        Twist {
            omega: Vector3::new(c[0], c[1], c[2]),
            v: Vector3::new(c[3], c[4], c[5]),
        }
    }
}

/// Element of SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation by the angle-axis vector `theta` about the pivot point `p`:
    /// x -> R (x - p) + p.
    pub fn from_rotation_about(theta: Vector3<f64>, pivot: Vector3<f64>) -> Self {
        let r = so3_exp(&theta);
        RigidTransform { rotation: r, translation: pivot - r * pivot }
    }

    /// Homogeneous 4x4 matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Principal rotation angle in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        let c = (self.rotation.trace() - 1.0) * 0.5;
        c.clamp(-1.0, 1.0).acos()
    }

    /// Frobenius norm of R^T R - I; zero for exact elements of SO(3).
    pub fn orthonormality_defect(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

/// Skew-symmetric matrix of a 3-vector.
pub fn so3_hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// se(3) matrix form of a twist: [[omega]x, v; 0, 0].
pub fn hat(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&so3_hat(&xi.omega));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v);
    m
}

/// Inverse of [`hat`]; reads the skew part and last column.
pub fn vee(m: &Matrix4<f64>) -> Twist {
    Twist {
        omega: Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
        v: Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
    }
}

/// Coefficients (sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3) via trig.
fn exp_coeffs_exact(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    let s = theta.sin();
    let c = theta.cos();
    (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
}

/// Same coefficients by second-order series, stable near zero.
fn exp_coeffs_series(theta2: f64) -> (f64, f64, f64) {
    (
        1.0 - theta2 / 6.0,
        0.5 - theta2 / 24.0,
        1.0 / 6.0 - theta2 / 120.0,
    )
}

fn exp_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        exp_coeffs_series(theta * theta)
    } else {
        exp_coeffs_exact(theta)
    }
}

/// Rodrigues rotation from an angle-axis vector.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (a, b, _) = exp_coeffs(theta);
    let o = so3_hat(omega);
    Matrix3::identity() + o * a + o * o * b
}

/// Left Jacobian of SO(3); also the V matrix coupling translation in the
/// SE(3) exponential.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (_, b, c) = exp_coeffs(theta);
    let o = so3_hat(omega);
    Matrix3::identity() + o * b + o * o * c
}

/// Exponential map se(3) -> SE(3).
pub fn se3_exp(xi: &Twist) -> RigidTransform {
    let theta = xi.omega.norm();
    let (a, b, c) = exp_coeffs(theta);
    let o = so3_hat(&xi.omega);
    let o2 = o * o;
    let rotation = Matrix3::identity() + o * a + o2 * b;
    let v_mat = Matrix3::identity() + o * b + o2 * c;
    RigidTransform { rotation, translation: v_mat * xi.v }
}

/// Principal logarithm SE(3) -> se(3) with the default branch guard.
pub fn se3_log(t: &RigidTransform) -> Result<Twist> {
    se3_log_with_epsilon(t, DEFAULT_BRANCH_EPSILON)
}

/// Principal logarithm with an explicit guard band: rotation angles in
/// [pi - epsilon_branch, pi] are refused with [`Error::BranchAmbiguity`].
pub fn se3_log_with_epsilon(t: &RigidTransform, epsilon_branch: f64) -> Result<Twist> {
    let theta = t.rotation_angle();
    if theta >= std::f64::consts::PI - epsilon_branch {
        return Err(Error::BranchAmbiguity { angle: theta, epsilon: epsilon_branch });
    }
    let omega = rotation_log(&t.rotation, theta);

    // V^{-1} = I - 1/2 O + A O^2 with A = (1 - theta sin / (2 (1-cos))) / theta^2.
    let o = so3_hat(&omega);
    let a_coef = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        let s = theta.sin();
        let c = theta.cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - o * 0.5 + o * o * a_coef;
    Ok(Twist { omega, v: v_inv * t.translation })
}

/// Angle-axis vector of a rotation matrix with known principal angle.
///
/// Uses the skew part for angles up to 3pi/4 and the symmetric part beyond,
/// where the skew part loses precision.
fn rotation_log(r: &Matrix3<f64>, theta: f64) -> Vector3<f64> {
    // vee of the skew part equals sin(theta) * axis.
    let s = Vector3::new(
        (r[(2, 1)] - r[(1, 2)]) * 0.5,
        (r[(0, 2)] - r[(2, 0)]) * 0.5,
        (r[(1, 0)] - r[(0, 1)]) * 0.5,
    );
    if theta < SMALL_ANGLE {
        return s * (1.0 + theta * theta / 6.0);
    }
    if theta <= 3.0 * std::f64::consts::FRAC_PI_4 {
        return s * (theta / theta.sin());
    }
    // Symmetric part: (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) n n^T.
    let cos_t = theta.cos();
    let one_minus_cos = 1.0 - cos_t;
    let b = (r + r.transpose()) * 0.5;
    let diag = [b[(0, 0)] - cos_t, b[(1, 1)] - cos_t, b[(2, 2)] - cos_t];
    let k = if diag[0] >= diag[1] && diag[0] >= diag[2] {
        0
    } else if diag[1] >= diag[2] {
        1
    } else {
        2
    };
    let mut n = Vector3::zeros();
    n[k] = (diag[k].max(0.0) / one_minus_cos).sqrt();
    for j in 0..3 {
        if j != k {
            n[j] = b[(j, k)] / (one_minus_cos * n[k]);
        }
    }
    // sin(theta) > 0 on (0, pi), so the skew part fixes the overall sign.
    if n.dot(&s) < 0.0 {
        n = -n;
    }
    n * theta
}

/// Composition: (A . B)(x) = A(B(x)).
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform { rotation: rt, translation: -(rt * t.translation) }
}

pub fn apply(t: &RigidTransform, x: &Vector3<f64>) -> Vector3<f64> {
    t.rotation * x + t.translation
}
