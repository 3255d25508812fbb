//! Planar chaser orbit and the nonlinear relative translational motion of the
//! target in the chaser's LVLH frame (x radial, y along-track, z orbit normal).

use nalgebra::Vector3;

use super::{ChaserOrbitState, PhysicalConstants};
use crate::error::{Error, Result};

/// Time derivative `(ṙ, r̈, θ̇, θ̈)` of the chaser's polar orbit state.
pub fn chaser_orbit_derivs(s: &ChaserOrbitState, c: &PhysicalConstants) -> Result<[f64; 4]> {
    if !(s.r_bar > 0.0) {
        return Err(Error::Domain(format!(
            "chaser radius must be positive, got {}",
            s.r_bar
        )));
    }
    let r_ddot = s.r_bar * s.theta_dot * s.theta_dot - c.mu / (s.r_bar * s.r_bar);
    let theta_ddot = -2.0 * s.r_bar_dot * s.theta_dot / s.r_bar;
    Ok([s.r_bar_dot, r_ddot, s.theta_dot, theta_ddot])
}

/// Relative acceleration `(ẍ, ÿ, z̈)` of the target.
pub fn relative_translation_derivs(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    chaser: &ChaserOrbitState,
    c: &PhysicalConstants,
) -> Result<Vector3<f64>> {
    let [_, _, theta_dot, theta_ddot] = chaser_orbit_derivs(chaser, c)?;
    let (x, y, z) = (position.x, position.y, position.z);
    let r = chaser.r_bar;
    let rx = r + x;
    if !(rx * rx + y * y + z * z > 0.0) {
        return Err(Error::Domain("target located at the Earth's centre".into()));
    }
    // Differential gravity written without the μ/r̄² − μ(r̄+x)/d³ cancellation:
    // d² = r̄²(1 + q) and (1 + q)^(-3/2) = 1 + g.
    let q = (2.0 * r * x + x * x + y * y + z * z) / (r * r);
    let g = (-1.5 * q.ln_1p()).exp_m1();
    let k = c.mu / (r * r * r);
    let scale = 1.0 + g;
    let ax = 2.0 * theta_dot * velocity.y + theta_ddot * y + theta_dot * theta_dot * x
        - k * (x * scale + r * g);
    let ay = -2.0 * theta_dot * velocity.x - theta_ddot * x + theta_dot * theta_dot * y - k * y * scale;
    let az = -k * z * scale;
    Ok(Vector3::new(ax, ay, az))
}

/// Specific orbital energy `v²/2 − μ/r`.
pub fn specific_energy(s: &ChaserOrbitState, c: &PhysicalConstants) -> f64 {
    let v2 = s.r_bar_dot * s.r_bar_dot + (s.r_bar * s.theta_dot).powi(2);
    0.5 * v2 - c.mu / s.r_bar
}

/// Specific angular momentum `r̄²θ̇`.
pub fn specific_angular_momentum(s: &ChaserOrbitState) -> f64 {
    s.r_bar * s.r_bar * s.theta_dot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rk4_step;

    fn circular(c: &PhysicalConstants) -> ChaserOrbitState {
        ChaserOrbitState::circular(7.1449e6, c)
    }

    #[test]
    fn circular_orbit_is_an_equilibrium() {
        let c = PhysicalConstants::default();
        let d = chaser_orbit_derivs(&circular(&c), &c).unwrap();
        assert_eq!(d[0], 0.0);
        assert!(d[1].abs() < 1e-12);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn outward_motion_slows_the_anomaly_rate() {
        let c = PhysicalConstants::default();
        let mut s = circular(&c);
        s.r_bar_dot = 5.0;
        let d = chaser_orbit_derivs(&s, &c).unwrap();
        assert!(d[3] < 0.0);
    }

    #[test]
    fn non_positive_radius_is_rejected() {
        let c = PhysicalConstants::default();
        let mut s = circular(&c);
        s.r_bar = 0.0;
        assert!(chaser_orbit_derivs(&s, &c).is_err());
    }

    #[test]
    fn orbit_closes_after_one_period() {
        let c = PhysicalConstants::default();
        let s0 = circular(&c);
        let period = 2.0 * std::f64::consts::PI * (s0.r_bar.powi(3) / c.mu).sqrt();
        let steps = 6000;
        let dt = period / steps as f64;
        let mut x = s0.to_array().to_vec();
        for k in 0..steps {
            x = rk4_step(&x, k as f64 * dt, dt, |_, y, out| {
                let d = chaser_orbit_derivs(&ChaserOrbitState::from_slice(y), &c)?;
                out.copy_from_slice(&d);
                Ok(())
            })
            .unwrap();
        }
        assert!((x[0] - s0.r_bar).abs() / s0.r_bar < 1e-10);
        assert!((x[2] - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn co_located_target_feels_no_relative_acceleration() {
        let c = PhysicalConstants::default();
        let mut s = circular(&c);
        s.r_bar_dot = 3.0;
        let a = relative_translation_derivs(&Vector3::zeros(), &Vector3::zeros(), &s, &c).unwrap();
        assert!(a.norm() < 1e-12, "{a}");
    }

    #[test]
    fn out_of_plane_offset_is_restored() {
        let c = PhysicalConstants::default();
        let s = circular(&c);
        let a = relative_translation_derivs(&Vector3::new(0.0, 0.0, 10.0), &Vector3::zeros(), &s, &c)
            .unwrap();
        assert!(a.z < 0.0);
        let expected = -c.mu * 10.0 / s.r_bar.powi(3);
        assert!((a.z - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn matches_clohessy_wiltshire_for_small_offsets() {
        let c = PhysicalConstants::default();
        let s = circular(&c);
        let n = s.theta_dot;
        let offsets = [
            (Vector3::new(30.0, 0.0, 0.0), Vector3::zeros()),
            (Vector3::new(-0.002, -31.17, 0.0), Vector3::new(-3.5e-6, -2.0e-6, 0.0)),
            (Vector3::new(12.0, -20.0, 17.0), Vector3::new(0.01, -0.02, 0.005)),
        ];
        for (r, v) in offsets {
            let a = relative_translation_derivs(&r, &v, &s, &c).unwrap();
            // Linearized Clohessy–Wiltshire accelerations.
            let cw = Vector3::new(
                2.0 * n * v.y + 3.0 * n * n * r.x,
                -2.0 * n * v.x,
                -n * n * r.z,
            );
            // Deviation relative to the size of the individual CW terms.
            let scale = n * n * r.norm() + n * v.norm();
            let rel = (a - cw).norm() / scale;
            assert!(rel < 1e-4, "relative deviation {rel:e}");
        }
    }

    #[test]
    fn target_at_earth_centre_is_rejected() {
        let c = PhysicalConstants::default();
        let s = circular(&c);
        let r = Vector3::new(-s.r_bar, 0.0, 0.0);
        assert!(relative_translation_derivs(&r, &Vector3::zeros(), &s, &c).is_err());
    }
}
