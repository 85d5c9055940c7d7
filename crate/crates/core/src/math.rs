//! Small geometric helpers shared by the simulator and the linearization code.
//!
//! Orientation perturbations are always applied on the right, `q ⊗ Exp(δθ)`,
//! so every tangent vector for an attitude lives in the body frame.

use nalgebra::{DMatrix, Matrix3, Quaternion, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Quaternion exponential of a rotation vector (angle times unit axis).
pub fn exp_map(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = phi.norm();
    if angle < 1e-8 {
        // second-order series, normalized
        let q = Quaternion::new(1.0 - angle * angle / 8.0, 0.5 * phi.x, 0.5 * phi.y, 0.5 * phi.z);
        UnitQuaternion::from_quaternion(q)
    } else {
        let half = 0.5 * angle;
        let s = half.sin() / angle;
        UnitQuaternion::new_unchecked(Quaternion::new(half.cos(), s * phi.x, s * phi.y, s * phi.z))
    }
}

/// Rotation vector of `q`, taking the short way around (|angle| <= π).
pub fn log_map(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < 1e-12 {
        return v * (2.0 / w.max(1e-300));
    }
    let angle = 2.0 * n.atan2(w);
    v * (angle / n)
}

/// Right Jacobian of the rotation exponential: Exp(φ + δ) ≈ Exp(φ) Exp(J_r(φ) δ).
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    Matrix3::identity() - ((1.0 - theta.cos()) / t2) * k + ((theta - theta.sin()) / (t2 * theta)) * k * k
}

pub fn sign_canonical(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// 2-norm condition number via SVD; `f64::INFINITY` for an exactly singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest elementwise relative error `|a - b| / (1 + |b|)`.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in relative error");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}

/// Unit vectors spanning the plane orthogonal to `axis`.
pub fn orthonormal_complement(axis: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let a = axis.normalize();
    let seed = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = (seed - a * a.dot(&seed)).normalize();
    let b2 = a.cross(&b1);
    [b1, b2]
}

/// Wrap an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Whether an LU factor has a numerically negligible pivot relative to the largest one.
pub fn lu_is_singular(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, rel_tol: f64) -> bool {
    let u = lu.u();
    let n = u.nrows().min(u.ncols());
    if n == 0 {
        return false;
    }
    let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    !(max.is_finite()) || max == 0.0 || min <= rel_tol * max
}
