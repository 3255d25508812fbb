//! Rotational dynamics: torque-free chaser attitude and the relative angular
//! velocity of the target expressed in the target body frame.

use nalgebra::{Matrix3, Vector3};

use super::BodyProperties;
use crate::error::{Error, Result};

fn invert_inertia(j: &Matrix3<f64>, which: &str) -> Result<Matrix3<f64>> {
    j.try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Domain(format!("{which} inertia matrix is singular")))
}

/// Torque-free Euler equations `ω̇ = −J⁻¹(ω × Jω)`.
pub fn chaser_attitude_derivs(omega_c: &Vector3<f64>, j_c: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let inv = invert_inertia(j_c, "chaser")?;
    Ok(-(inv * omega_c.cross(&(j_c * omega_c))))
}

/// Relative angular acceleration in the target body frame.
///
/// `J_t ω̇_r + ω_r × J_t ω_r = M_app − M_g − M_ci` with
/// - `M_app = J_t (ω_r × Γω_c)`
/// - `M_g   = Γω_c × J_t Γω_c + ω_r × J_t Γω_c + Γω_c × J_t ω_r`
/// - `M_ci  = J_t Γ ω̇_c`
pub fn relative_rotation_derivs(
    omega_r: &Vector3<f64>,
    gamma: &Matrix3<f64>,
    bodies: &BodyProperties,
) -> Result<Vector3<f64>> {
    let j = &bodies.j_t;
    let inv = invert_inertia(j, "target")?;
    let wc = gamma * bodies.omega_c;
    let m_app = j * omega_r.cross(&wc);
    let m_g = wc.cross(&(j * wc)) + omega_r.cross(&(j * wc)) + wc.cross(&(j * omega_r));
    let m_ci = j * (gamma * bodies.omega_c_dot);
    Ok(inv * (m_app - m_g - m_ci - omega_r.cross(&(j * omega_r))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::attitude::Quaternion;
    use approx::assert_relative_eq;

    fn bodies(j_t: Matrix3<f64>, omega_c: Vector3<f64>) -> BodyProperties {
        BodyProperties {
            j_t,
            j_c: Matrix3::from_diagonal(&Vector3::new(300.0, 400.0, 500.0)),
            omega_c,
            omega_c_dot: Vector3::zeros(),
        }
    }

    #[test]
    fn resting_chaser_is_zero() {
        let j = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(chaser_attitude_derivs(&Vector3::zeros(), &j).unwrap(), Vector3::zeros());
    }

    #[test]
    fn spherical_chaser_keeps_rate() {
        let j = Matrix3::identity() * 7.0;
        let d = chaser_attitude_derivs(&Vector3::new(0.3, -1.0, 2.0), &j).unwrap();
        assert!(d.norm() < 1e-15);
    }

    #[test]
    fn hand_evaluated_euler_equations() {
        let j = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        let d = chaser_attitude_derivs(&Vector3::new(1.0, 1.0, 1.0), &j).unwrap();
        // ω̇ᵢ = −(J_k − J_j) ω_j ω_k / J_i, evaluated component by component.
        let expected = Vector3::new(-(3.0 - 2.0) / 1.0, -(1.0 - 3.0) / 2.0, -(2.0 - 1.0) / 3.0);
        assert_relative_eq!(d, expected, epsilon = 1e-15);
        assert_relative_eq!(d, Vector3::new(-1.0, 1.0, -1.0 / 3.0), epsilon = 1e-15);
    }

    #[test]
    fn singular_inertia_is_rejected() {
        assert!(chaser_attitude_derivs(&Vector3::x(), &Matrix3::zeros()).is_err());
        let b = bodies(Matrix3::zeros(), Vector3::zeros());
        assert!(relative_rotation_derivs(&Vector3::x(), &Matrix3::identity(), &b).is_err());
    }

    #[test]
    fn spherical_target_torque_free() {
        let b = bodies(Matrix3::identity() * 5.0, Vector3::zeros());
        let d = relative_rotation_derivs(&Vector3::new(0.02, 0.02, 0.04), &Matrix3::identity(), &b)
            .unwrap();
        assert!(d.norm() < 1e-18);
    }

    #[test]
    fn principal_axis_spin_is_steady() {
        let b = bodies(Matrix3::from_diagonal(&Vector3::new(10.0, 20.0, 30.0)), Vector3::zeros());
        let d = relative_rotation_derivs(&Vector3::new(0.0, 0.05, 0.0), &Matrix3::identity(), &b)
            .unwrap();
        assert_eq!(d, Vector3::zeros());
    }

    #[test]
    fn reduces_to_target_euler_when_chaser_rests() {
        let j = Matrix3::new(17023.3, 397.1, -2164.6, 397.1, 124825.7, 179.8, -2164.6, 179.8, 129112.2);
        let b = bodies(j, Vector3::zeros());
        let w = Vector3::new(0.02, 0.02, 0.04);
        let d = relative_rotation_derivs(&w, &Matrix3::identity(), &b).unwrap();
        let euler = -(j.try_inverse().unwrap() * w.cross(&(j * w)));
        assert_relative_eq!(d, euler, epsilon = 1e-15);
    }

    /// Propagate the chaser and target absolute attitudes independently and
    /// differentiate `ω_r = ω_t − Γ ω_c` numerically.
    #[test]
    fn matches_absolute_attitude_oracle() {
        let j_t = Matrix3::new(17023.3, 397.1, -2164.6, 397.1, 124825.7, 179.8, -2164.6, 179.8, 129112.2);
        let j_c = Matrix3::from_diagonal(&Vector3::new(300.0, 450.0, 520.0));

        // Absolute state: (q_c, ω_c, q_t, ω_t); attitudes relative to inertial.
        #[derive(Clone, Copy)]
        struct Abs {
            qc: Quaternion,
            wc: Vector3<f64>,
            qt: Quaternion,
            wt: Vector3<f64>,
        }
        let euler = |j: &Matrix3<f64>, w: &Vector3<f64>| -(j.try_inverse().unwrap() * w.cross(&(j * w)));
        let deriv = |s: &Abs| {
            let (dqc_v, dqc_s) = s.qc.derivative(&s.wc);
            let (dqt_v, dqt_s) = s.qt.derivative(&s.wt);
            (dqc_v, dqc_s, euler(&j_c, &s.wc), dqt_v, dqt_s, euler(&j_t, &s.wt))
        };
        let step = |s: &Abs, h: f64| {
            let add = |s: &Abs, k: &(Vector3<f64>, f64, Vector3<f64>, Vector3<f64>, f64, Vector3<f64>), a: f64| Abs {
                qc: Quaternion::new(s.qc.vector + k.0 * a, s.qc.scalar + k.1 * a),
                wc: s.wc + k.2 * a,
                qt: Quaternion::new(s.qt.vector + k.3 * a, s.qt.scalar + k.4 * a),
                wt: s.wt + k.5 * a,
            };
            let k1 = deriv(s);
            let k2 = deriv(&add(s, &k1, h / 2.0));
            let k3 = deriv(&add(s, &k2, h / 2.0));
            let k4 = deriv(&add(s, &k3, h));
            let comb = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) * h / 6.0;
            Abs {
                qc: Quaternion::new(
                    s.qc.vector + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (h / 6.0),
                    s.qc.scalar + comb(k1.1, k2.1, k3.1, k4.1),
                ),
                wc: s.wc + (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * (h / 6.0),
                qt: Quaternion::new(
                    s.qt.vector + (k1.3 + k2.3 * 2.0 + k3.3 * 2.0 + k4.3) * (h / 6.0),
                    s.qt.scalar + comb(k1.4, k2.4, k3.4, k4.4),
                ),
                wt: s.wt + (k1.5 + k2.5 * 2.0 + k3.5 * 2.0 + k4.5) * (h / 6.0),
            }
        };
        let relative = |s: &Abs| {
            let gamma = s.qt.to_rotation() * s.qc.to_rotation().transpose();
            (gamma, s.wt - gamma * s.wc)
        };

        let s0 = Abs {
            qc: Quaternion::from_axis_angle(&Vector3::new(0.3, 1.0, -0.2), 0.7),
            wc: Vector3::new(0.01, -0.03, 0.02),
            qt: Quaternion::from_axis_angle(&Vector3::new(-1.0, 0.4, 0.9), 2.1),
            wt: Vector3::new(0.02, 0.02, 0.04),
        };
        let h = 1e-3;
        let sub = 10;
        let advance = |mut s: Abs, sign: f64| {
            for _ in 0..sub {
                s = step(&s, sign * h / sub as f64);
            }
            s
        };
        let (gamma0, wr0) = relative(&s0);
        let (_, wr_plus) = relative(&advance(s0, 1.0));
        let (_, wr_minus) = relative(&advance(s0, -1.0));
        let fd = (wr_plus - wr_minus) / (2.0 * h);

        let b = BodyProperties {
            j_t,
            j_c,
            omega_c: s0.wc,
            omega_c_dot: euler(&j_c, &s0.wc),
        };
        let analytic = relative_rotation_derivs(&wr0, &gamma0, &b).unwrap();
        assert!(
            (analytic - fd).norm() < 1e-9 * (1.0 + fd.norm()),
            "analytic {analytic} vs finite difference {fd}"
        );
        // Sanity: the relative rotation really does see chaser coupling here.
        let uncoupled = -(j_t.try_inverse().unwrap() * wr0.cross(&(j_t * wr0)));
        assert!((uncoupled - fd).norm() > 1e-6);
    }
}
