//! Small rotation and linear-algebra helpers shared by the kinematic and
//! energy modules.
//!
//! Rotation increments are world-frame (left) exponential coordinates:
//! `R(w) = exp(w) * R0`. Perturbing `w` by `dw` perturbs `R` by
//! `exp(J_l(w) dw)` on the left, so any world-space vector `y = R b`
//! has `dy/dw = -[y]x J_l(w)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

const SMALL_ANGLE: f64 = 1e-5;

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of exponential coordinates `w`.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    Rotation3::new(*w).into_inner()
}

/// Principal logarithm of a rotation matrix, angle in `[0, pi]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    log_quat(&q)
}

/// Principal logarithm of a unit quaternion (picks the `w >= 0` hemisphere).
pub fn log_quat(q: &Quat) -> Vec3 {
    let mut c = *q.quaternion();
    if c.w < 0.0 {
        c = -c;
    }
    let v = c.imag();
    let s = v.norm();
    if s < 1e-300 {
        return Vec3::zeros();
    }
    let angle = 2.0 * s.atan2(c.w);
    v * (angle / s)
}

/// Left Jacobian of SO(3).
pub fn left_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let k2 = k * k;
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() + k * 0.5 + k2 * (1.0 / 6.0);
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Mat3::identity() + k * a + k2 * b
}

/// Right Jacobian of SO(3); `J_r(w) = J_l(-w) = J_l(w)^T`.
pub fn right_jacobian(w: &Vec3) -> Mat3 {
    left_jacobian(w).transpose()
}

/// Inverse of the left Jacobian.
pub fn left_jacobian_inv(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let k2 = k * k;
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() - k * 0.5 + k2 * (1.0 / 12.0);
    }
    let theta = theta2.sqrt();
    let c = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() - k * 0.5 + k2 * c
}

pub fn right_jacobian_inv(w: &Vec3) -> Mat3 {
    left_jacobian_inv(w).transpose()
}

/// Closest point parameter on segment `[a, b]` to `p`, clamped to `[0, 1]`.
pub fn segment_parameter(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let s = segment_parameter(p, a, b);
    (p - (a + (b - a) * s)).norm()
}

/// Closest points between segments `[p0, p1]` and `[q0, q1]`, returned as the
/// two segment parameters.
pub fn segment_segment_parameters(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> (f64, f64) {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-14;
    if a <= eps && e <= eps {
        return (0.0, 0.0);
    }
    if a <= eps {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= eps {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > eps * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

pub fn tet_signed_volume(p: [&Vec3; 4]) -> f64 {
    (p[1] - p[0]).dot(&(p[2] - p[0]).cross(&(p[3] - p[0]))) / 6.0
}

/// Relative error `|a - b| / max(|b|, floor)`, used by checks and tests.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_inverts_exp_on_principal_branch() {
        let w = Vec3::new(0.3, -1.2, 0.7);
        let back = log_so3(&exp_so3(&w));
        assert!((back - w).norm() < 1e-12);
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        let w = Vec3::new(0.4, 0.1, -0.9);
        let y0 = Vec3::new(0.2, -0.5, 1.0);
        let jl = left_jacobian(&w);
        let analytic = -skew(&(exp_so3(&w) * y0)) * jl;
        let h = 1e-6;
        for k in 0..3 {
            let mut wp = w;
            wp[k] += h;
            let mut wm = w;
            wm[k] -= h;
            let fd = (exp_so3(&wp) * y0 - exp_so3(&wm) * y0) / (2.0 * h);
            assert!((fd - analytic.column(k)).norm() < 1e-8);
        }
    }

    #[test]
    fn jacobian_inverses() {
        for w in [Vec3::new(1e-8, 0.0, 0.0), Vec3::new(0.5, 1.0, -2.0)] {
            let e = left_jacobian(&w) * left_jacobian_inv(&w) - Mat3::identity();
            assert!(e.norm() < 1e-12);
            let e = right_jacobian(&w) * right_jacobian_inv(&w) - Mat3::identity();
            assert!(e.norm() < 1e-12);
        }
    }

    #[test]
    fn segment_segment_crossing() {
        let (s, t) = segment_segment_parameters(
            &Vec3::new(-1.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.0, -1.0, 1.0),
            &Vec3::new(0.0, 1.0, 1.0),
        );
        assert!((s - 0.5).abs() < 1e-15 && (t - 0.5).abs() < 1e-15);
    }
}
