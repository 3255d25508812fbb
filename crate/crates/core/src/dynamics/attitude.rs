//! Attitude parameterizations: quaternions, modified Rodrigues parameters and
//! the direction cosine matrix they map to.
//!
//! Conventions held throughout the crate:
//! - a rotation matrix `Γ` maps vector components from the reference frame
//!   into the body frame (`v_body = Γ v_ref`);
//! - quaternions carry the vector part first and the scalar part last;
//! - MRPs are `p = q̄ / (1 + q4) = n̂ tan(φ/4)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Unit quaternion with vector part `(q1, q2, q3)` and scalar part `q4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub vector: Vector3<f64>,
    pub scalar: f64,
}

impl Quaternion {
    pub const NORM_TOLERANCE: f64 = 1e-9;

    pub fn new(vector: Vector3<f64>, scalar: f64) -> Self {
        Self { vector, scalar }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), 1.0)
    }

    /// Rotation of `angle` radians about the unit axis `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.normalize();
        Self::new(n * (0.5 * angle).sin(), (0.5 * angle).cos())
    }

    pub fn norm(&self) -> f64 {
        (self.vector.norm_squared() + self.scalar * self.scalar).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.vector / n, self.scalar / n)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= Self::NORM_TOLERANCE
    }

    /// Direction cosine matrix `(q4² − q̄ᵀq̄) I + 2 q̄q̄ᵀ − 2 q4 [q̄∧]`.
    pub fn to_rotation(&self) -> Matrix3<f64> {
        let q = &self.vector;
        let s = self.scalar;
        Matrix3::identity() * (s * s - q.norm_squared()) + q * q.transpose() * 2.0
            - cross_matrix(q) * (2.0 * s)
    }

    /// Inverse of [`Quaternion::to_rotation`] (Shepperd's method); the result
    /// has a non-negative scalar part.
    pub fn from_rotation(m: &Matrix3<f64>) -> Self {
        let tr = m.trace();
        // Candidates for 4·q_i² (scalar first), choose the largest for stability.
        let cands = [
            1.0 + tr,
            1.0 + 2.0 * m[(0, 0)] - tr,
            1.0 + 2.0 * m[(1, 1)] - tr,
            1.0 + 2.0 * m[(2, 2)] - tr,
        ];
        let (idx, &big) = cands
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let r = 0.5 * big.sqrt();
        let f = 0.25 / r;
        let (s, x, y, z) = match idx {
            0 => (
                r,
                (m[(1, 2)] - m[(2, 1)]) * f,
                (m[(2, 0)] - m[(0, 2)]) * f,
                (m[(0, 1)] - m[(1, 0)]) * f,
            ),
            1 => (
                (m[(1, 2)] - m[(2, 1)]) * f,
                r,
                (m[(0, 1)] + m[(1, 0)]) * f,
                (m[(2, 0)] + m[(0, 2)]) * f,
            ),
            2 => (
                (m[(2, 0)] - m[(0, 2)]) * f,
                (m[(0, 1)] + m[(1, 0)]) * f,
                r,
                (m[(1, 2)] + m[(2, 1)]) * f,
            ),
            _ => (
                (m[(0, 1)] - m[(1, 0)]) * f,
                (m[(2, 0)] + m[(0, 2)]) * f,
                (m[(1, 2)] + m[(2, 1)]) * f,
                r,
            ),
        };
        let q = Self::new(Vector3::new(x, y, z), s);
        if q.scalar < 0.0 {
            Self::new(-q.vector, -q.scalar)
        } else {
            q
        }
    }

    /// Kinematic rate `q̇` for body angular velocity `omega`.
    pub fn derivative(&self, omega: &Vector3<f64>) -> (Vector3<f64>, f64) {
        let dv = (omega * self.scalar + self.vector.cross(omega)) * 0.5;
        let ds = -0.5 * self.vector.dot(omega);
        (dv, ds)
    }
}

/// Skew-symmetric matrix with `cross_matrix(a) * b == a × b`.
pub fn cross_matrix(p: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0)
}

/// Rotation matrix `Γ(p) = I − ε₁[p∧] + ε₂[p∧]²`.
pub fn mrp_to_rotation(p: &Vector3<f64>) -> Matrix3<f64> {
    let s2 = p.norm_squared();
    let den = (1.0 + s2) * (1.0 + s2);
    let eps1 = 4.0 * (1.0 - s2) / den;
    let eps2 = 8.0 / den;
    let px = cross_matrix(p);
    Matrix3::identity() - px * eps1 + px * px * eps2
}

pub fn mrp_from_quaternion(q: &Quaternion) -> Result<Vector3<f64>> {
    if !q.is_unit() {
        return Err(Error::Domain(format!(
            "quaternion norm {} is not unit",
            q.norm()
        )));
    }
    let den = 1.0 + q.scalar;
    if den.abs() < 1e-12 {
        return Err(Error::Domain(
            "quaternion scalar part is -1 (360 degree MRP singularity)".into(),
        ));
    }
    Ok(q.vector / den)
}

pub fn quaternion_from_mrp(p: &Vector3<f64>) -> Quaternion {
    let s2 = p.norm_squared();
    Quaternion::new(p * (2.0 / (1.0 + s2)), (1.0 - s2) / (1.0 + s2))
}

/// The shadow set `−p / (pᵀp)`, which encodes the same rotation.
pub fn mrp_shadow(p: &Vector3<f64>) -> Vector3<f64> {
    -p / p.norm_squared()
}

/// Jacobian of the shadow map, used to carry covariances across a switch.
pub fn mrp_shadow_jacobian(p: &Vector3<f64>) -> Matrix3<f64> {
    let s2 = p.norm_squared();
    (p * p.transpose() * 2.0 - Matrix3::identity() * s2) / (s2 * s2)
}

/// Shadow-switch when `pᵀp > 1`; returns whether a switch happened.
pub fn mrp_switch_if_needed(p: &mut Vector3<f64>) -> bool {
    if p.norm_squared() > 1.0 {
        *p = mrp_shadow(p);
        true
    } else {
        false
    }
}

/// Express `p` on the chart (regular or shadow) closest to `reference`.
pub fn mrp_closest_to(p: &Vector3<f64>, reference: &Vector3<f64>) -> Vector3<f64> {
    if p.norm_squared() < 1e-300 {
        return *p;
    }
    let shadow = mrp_shadow(p);
    if (shadow - reference).norm() < (p - reference).norm() {
        shadow
    } else {
        *p
    }
}

/// MRP time derivative `¼[(1 − pᵀp)I₃ + 2ppᵀ + 2[p∧]] ω`.
pub fn mrp_derivs(p: &Vector3<f64>, omega: &Vector3<f64>) -> Vector3<f64> {
    let b = Matrix3::identity() * (1.0 - p.norm_squared())
        + p * p.transpose() * 2.0
        + cross_matrix(p) * 2.0;
    b * omega * 0.25
}

/// Direction cosine matrix of a 3-2-1 (yaw, pitch, roll) Euler sequence:
/// `Γ = R₁(roll) R₂(pitch) R₃(yaw)`.
pub fn euler321_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (s1, c1) = roll.sin_cos();
    let (s2, c2) = pitch.sin_cos();
    let (s3, c3) = yaw.sin_cos();
    let r1 = Matrix3::new(1.0, 0.0, 0.0, 0.0, c1, s1, 0.0, -s1, c1);
    let r2 = Matrix3::new(c2, 0.0, -s2, 0.0, 1.0, 0.0, s2, 0.0, c2);
    let r3 = Matrix3::new(c3, s3, 0.0, -s3, c3, 0.0, 0.0, 0.0, 1.0);
    r1 * r2 * r3
}

/// MRP (with `pᵀp ≤ 1`) for a 3-2-1 Euler attitude.
pub fn euler321_to_mrp(roll: f64, pitch: f64, yaw: f64) -> Vector3<f64> {
    let q = Quaternion::from_rotation(&euler321_to_rotation(roll, pitch, yaw));
    q.vector / (1.0 + q.scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_8};

    /// Reference-to-body matrix for a rotation of `angle` about `axis`,
    /// written from the axis-angle (Rodrigues) formula.
    fn axis_angle_dcm(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        let n = axis.normalize();
        Matrix3::identity() * angle.cos() + n * n.transpose() * (1.0 - angle.cos())
            - cross_matrix(&n) * angle.sin()
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    #[test]
    fn cross_matrix_zero_and_unit() {
        assert_eq!(cross_matrix(&Vector3::zeros()), Matrix3::zeros());
        let a = Vector3::x();
        let b = Vector3::y();
        assert_eq!(cross_matrix(&a) * b, Vector3::z());
    }

    #[test]
    fn identity_mrp_is_identity_rotation() {
        assert_eq!(mrp_to_rotation(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = Vector3::new(0.0, 0.0, FRAC_PI_8.tan());
        let g = mrp_to_rotation(&p);
        let oracle = axis_angle_dcm(&Vector3::z(), FRAC_PI_2);
        assert_relative_eq!(g, oracle, epsilon = 1e-12);
    }

    #[test]
    fn mrp_from_identity_quaternion() {
        let p = mrp_from_quaternion(&Quaternion::identity()).unwrap();
        assert_eq!(p, Vector3::zeros());
    }

    #[test]
    fn mrp_half_angle() {
        let q = Quaternion::new(Vector3::new(0.0, 0.0, FRAC_PI_8.sin()), FRAC_PI_8.cos());
        let p = mrp_from_quaternion(&q).unwrap();
        let expected = FRAC_PI_8.sin() / (1.0 + FRAC_PI_8.cos());
        assert_relative_eq!(p.z, expected, epsilon = 1e-15);
        // Half-angle identity: sin(a)/(1 + cos(a)) = tan(a/2).
        assert_relative_eq!(p.z, (FRAC_PI_8 / 2.0).tan(), epsilon = 1e-15);
    }

    #[test]
    fn mrp_singularity_is_an_error() {
        let q = Quaternion::new(Vector3::zeros(), -1.0);
        assert!(matches!(mrp_from_quaternion(&q), Err(Error::Domain(_))));
        let not_unit = Quaternion::new(Vector3::new(0.1, 0.0, 0.0), 1.0);
        assert!(mrp_from_quaternion(&not_unit).is_err());
    }

    #[test]
    fn mrp_derivs_examples() {
        let w = Vector3::new(0.3, -0.2, 0.1);
        assert_eq!(mrp_derivs(&Vector3::new(0.2, 0.1, -0.4), &Vector3::zeros()), Vector3::zeros());
        let d = mrp_derivs(&Vector3::zeros(), &Vector3::new(w.x, 0.0, 0.0));
        assert_relative_eq!(d, Vector3::new(w.x / 4.0, 0.0, 0.0), epsilon = 1e-16);
    }

    #[test]
    fn quaternion_and_mrp_rotations_agree() {
        let q = Quaternion::from_axis_angle(&Vector3::new(1.0, -2.0, 0.5), 1.3);
        let p = mrp_from_quaternion(&q).unwrap();
        assert_relative_eq!(q.to_rotation(), mrp_to_rotation(&p), epsilon = 1e-13);
        assert_relative_eq!(
            q.to_rotation(),
            axis_angle_dcm(&Vector3::new(1.0, -2.0, 0.5), 1.3),
            epsilon = 1e-13
        );
    }

    #[test]
    fn euler_sequence_matches_elementary_rotations() {
        let (r, p, y) = (1.66, 2.27, -0.38);
        let m = euler321_to_rotation(r, p, y);
        let oracle = axis_angle_dcm(&Vector3::x(), r)
            * axis_angle_dcm(&Vector3::y(), p)
            * axis_angle_dcm(&Vector3::z(), y);
        assert_relative_eq!(m, oracle, epsilon = 1e-14);
        let mrp = euler321_to_mrp(r, p, y);
        assert!(mrp.norm_squared() <= 1.0);
        assert_relative_eq!(mrp_to_rotation(&mrp), m, epsilon = 1e-12);
    }

    #[test]
    fn shadow_jacobian_matches_finite_differences() {
        let p = Vector3::new(0.7, -0.5, 0.6);
        let j = mrp_shadow_jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut dp = Vector3::zeros();
            dp[k] = h;
            let fd = (mrp_shadow(&(p + dp)) - mrp_shadow(&(p - dp))) / (2.0 * h);
            assert_relative_eq!(j.column(k).into_owned(), fd, epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn rotation_group_membership(p in vec3()) {
            let g = mrp_to_rotation(&p);
            prop_assert!(crate::linalg::is_rotation(&g, 1e-12));
        }

        #[test]
        fn cross_matrix_matches_component_formula(a in vec3(), b in vec3()) {
            let c = cross_matrix(&a) * b;
            let oracle = Vector3::new(
                a.y * b.z - a.z * b.y,
                a.z * b.x - a.x * b.z,
                a.x * b.y - a.y * b.x,
            );
            prop_assert!((c - oracle).norm() < 1e-15);
        }

        #[test]
        fn quaternion_round_trip(v in vec3(), s in 0.05..1.0f64) {
            let q = Quaternion::new(v, s).normalized();
            let p = mrp_from_quaternion(&q).unwrap();
            let back = quaternion_from_mrp(&p);
            prop_assert!((back.vector - q.vector).norm() < 1e-12);
            prop_assert!((back.scalar - q.scalar).abs() < 1e-12);
        }

        #[test]
        fn shadow_encodes_same_rotation(v in vec3()) {
            prop_assume!(v.norm() > 1e-3);
            let g = mrp_to_rotation(&v);
            let gs = mrp_to_rotation(&mrp_shadow(&v));
            prop_assert!((g - gs).abs().max() < 1e-12 * (1.0 + 1.0 / v.norm_squared()));
        }

        #[test]
        fn dcm_quaternion_round_trip(v in vec3(), s in -1.0..1.0f64) {
            prop_assume!(v.norm() + s.abs() > 1e-3);
            let q = Quaternion::new(v, s).normalized();
            let m = q.to_rotation();
            let back = Quaternion::from_rotation(&m);
            prop_assert!((back.to_rotation() - m).abs().max() < 1e-12);
        }
    }
}
