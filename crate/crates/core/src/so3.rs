//! SO(3) primitives.
//!
//! Rotations are plain `Matrix3<f64>` values and tangent vectors are
//! `Vector3<f64>` in angle-axis form (axis scaled by angle). The logarithm is
//! only defined on the open ball of radius pi; anything at or numerically next
//! to the cut locus is reported as [`Error::AngleAtPi`] instead of being
//! silently resolved to one of the two antipodal axes.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle exp/log switch to their second-order Taylor branches.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Margin below pi at which the logarithm is rejected.
pub const PI_MARGIN: f64 = 1e-9;

/// Tolerance accepted by [`vee`] on `|S + S^T|_F`.
pub const SKEW_TOL: f64 = 1e-9;

/// Orthonormality drift above which [`reorthonormalize`] projects back.
pub const DRIFT_TOL: f64 = 1e-12;

pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Inverse of [`hat`]. Rejects matrices that are not skew-symmetric.
pub fn vee(s: &Mat3) -> Result<Vec3> {
    let asymmetry = (s + s.transpose()).norm();
    if asymmetry > SKEW_TOL {
        return Err(Error::NonSkewInput { asymmetry });
    }
    Ok(Vec3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]))
}

/// `(M - M^T)^vee` without the skew check; exact for any square input.
pub fn vee_antisym(m: &Mat3) -> Vec3 {
    Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
}

/// Rodrigues' formula.
pub fn exp_map(v: &Vec3) -> Mat3 {
    let theta_sq = v.norm_squared();
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    let k = hat(v);
    Mat3::identity() + k * a + k * k * b
}

/// Rotation angle in `[0, pi]`, accurate across the whole range.
///
/// Uses `atan2(sin, cos)` from the antisymmetric part and the trace instead of
/// `acos` of the trace alone, which loses half the digits near 0 and pi.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let sin = 0.5 * vee_antisym(r).norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

pub fn log_map(r: &Mat3) -> Result<Vec3> {
    let w = vee_antisym(r);
    let sin = 0.5 * w.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    let theta = sin.atan2(cos);
    if theta >= std::f64::consts::PI - PI_MARGIN {
        return Err(Error::AngleAtPi {
            angle: theta,
            edge: None,
        });
    }
    let scale = if theta < SMALL_ANGLE {
        0.5 * (1.0 + theta * theta / 6.0)
    } else {
        theta / (2.0 * sin)
    };
    Ok(w * scale)
}

/// `|log(a^T b)^vee|`.
pub fn geodesic_distance(a: &Mat3, b: &Mat3) -> Result<f64> {
    Ok(log_map(&(a.transpose() * b))?.norm())
}

/// Frobenius norm of `a - b`.
pub fn chordal_distance(a: &Mat3, b: &Mat3) -> f64 {
    (a - b).norm()
}

/// Haar-uniform rotation drawn from `rng` (normalized Gaussian quaternion).
pub fn random_rotation_with<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let q = Quaternion::new(w, x, y, z);
        if q.norm() > 1e-12 {
            return UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
        }
    }
}

pub fn random_rotation(seed: u64) -> Mat3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rotation_with(&mut rng)
}

/// Time derivative of `1/2 |log(R)^vee|^2` given the body rate `R^T dR/dt`.
pub fn geodesic_sq_derivative(r: &Mat3, r_dot_body: &Mat3) -> Result<f64> {
    let x = log_map(r)?;
    Ok(x.dot(&vee(r_dot_body)?))
}

pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    (m.transpose() * m - Mat3::identity()).norm() <= tol && (m.determinant() - 1.0).abs() <= tol
}

/// Nearest rotation in Frobenius norm (polar factor with determinant fix).
pub fn project_to_so3(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Projects back onto SO(3) only when drift exceeds [`DRIFT_TOL`].
pub fn reorthonormalize(m: Mat3) -> Mat3 {
    if (m.transpose() * m - Mat3::identity()).norm() > DRIFT_TOL {
        project_to_so3(&m)
    } else {
        m
    }
}

/// Scalar-last quaternion `[qx, qy, qz, qw]` to a rotation matrix. The
/// quaternion is normalized first.
pub fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let q = Quaternion::new(q[3], q[0], q[1], q[2]);
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Rotation matrix to a scalar-last quaternion with `qw >= 0`.
pub fn matrix_to_quat(r: &Mat3) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    let q = q.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.i, s * q.j, s * q.k, s * q.w]
}

/// Rotation of `angle` radians about the z axis.
pub fn rot_z(angle: f64) -> Mat3 {
    exp_map(&Vec3::new(0.0, 0.0, angle))
}
