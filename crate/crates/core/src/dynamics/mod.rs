//! Coupled chaser/target dynamics.
//!
//! The truth model carries the chaser's planar polar orbit `(r̄, ṙ̄, θ, θ̇)`,
//! the chaser body rate `ω_c` and the twelve relative states of the target:
//! LVLH position and velocity, the MRP attitude of the target body relative
//! to the chaser body, and the relative angular velocity in the target frame.

pub mod attitude;
mod integrator;
mod rotation;
mod translation;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use attitude::{
    cross_matrix, euler321_to_mrp, euler321_to_rotation, mrp_closest_to, mrp_derivs,
    mrp_from_quaternion, mrp_shadow, mrp_shadow_jacobian, mrp_switch_if_needed, mrp_to_rotation,
    quaternion_from_mrp, Quaternion,
};
pub use integrator::rk4_step;
pub use rotation::{chaser_attitude_derivs, relative_rotation_derivs};
pub use translation::{
    chaser_orbit_derivs, relative_translation_derivs, specific_angular_momentum, specific_energy,
};

use crate::error::{Error, Result};

/// Number of relative states estimated by the filter.
pub const STATE_DIM: usize = 12;

/// Index ranges of the relative state blocks.
pub mod idx {
    use std::ops::Range;
    pub const POS: Range<usize> = 0..3;
    pub const VEL: Range<usize> = 3..6;
    pub const MRP: Range<usize> = 6..9;
    pub const OMEGA: Range<usize> = 9..12;
}

/// WGS-84 value of the Earth's gravitational parameter.
pub const EARTH_MU: f64 = 3.986004418e14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Earth gravitational parameter (m³/s²).
    pub mu: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { mu: EARTH_MU }
    }
}

/// Planar polar state of the chaser about the Earth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaserOrbitState {
    pub r_bar: f64,
    pub r_bar_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl ChaserOrbitState {
    pub fn circular(radius: f64, c: &PhysicalConstants) -> Self {
        Self {
            r_bar: radius,
            r_bar_dot: 0.0,
            theta: 0.0,
            theta_dot: (c.mu / radius.powi(3)).sqrt(),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.r_bar, self.r_bar_dot, self.theta, self.theta_dot]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            r_bar: s[0],
            r_bar_dot: s[1],
            theta: s[2],
            theta_dot: s[3],
        }
    }
}

/// The twelve estimated relative states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub mrp: Vector3<f64>,
    pub omega_r: Vector3<f64>,
}

impl RelativeState {
    pub fn zeros() -> Self {
        Self {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            mrp: Vector3::zeros(),
            omega_r: Vector3::zeros(),
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        out[idx::POS].copy_from_slice(self.position.as_slice());
        out[idx::VEL].copy_from_slice(self.velocity.as_slice());
        out[idx::MRP].copy_from_slice(self.mrp.as_slice());
        out[idx::OMEGA].copy_from_slice(self.omega_r.as_slice());
        out
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            position: Vector3::from_column_slice(&s[idx::POS]),
            velocity: Vector3::from_column_slice(&s[idx::VEL]),
            mrp: Vector3::from_column_slice(&s[idx::MRP]),
            omega_r: Vector3::from_column_slice(&s[idx::OMEGA]),
        }
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.to_array())
    }

    /// Rotation `Γ(p)` mapping chaser-frame components into the target frame.
    pub fn rotation(&self) -> Matrix3<f64> {
        mrp_to_rotation(&self.mrp)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Inertia and rate inputs of the relative rotational dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyProperties {
    pub j_t: Matrix3<f64>,
    pub j_c: Matrix3<f64>,
    pub omega_c: Vector3<f64>,
    pub omega_c_dot: Vector3<f64>,
}

/// Complete simulated truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub chaser: ChaserOrbitState,
    /// Chaser body angular velocity (rad/s).
    pub chaser_rate: Vector3<f64>,
    pub relative: RelativeState,
    pub time: f64,
}

/// Length of the flat vector integrated by [`DynamicsModel`].
const FULL_DIM: usize = 4 + 3 + STATE_DIM;

/// Physical model shared by the truth simulator and the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsModel {
    pub constants: PhysicalConstants,
    pub target_inertia: Matrix3<f64>,
    pub chaser_inertia: Matrix3<f64>,
}

impl DynamicsModel {
    /// Derivative of the flat `[chaser(4), ω_c(3), relative(12)]` vector.
    fn full_derivs(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let chaser = ChaserOrbitState::from_slice(&y[0..4]);
        let omega_c = Vector3::new(y[4], y[5], y[6]);
        let rel = RelativeState::from_slice(&y[7..]);

        out[0..4].copy_from_slice(&chaser_orbit_derivs(&chaser, &self.constants)?);
        let omega_c_dot = chaser_attitude_derivs(&omega_c, &self.chaser_inertia)?;
        out[4..7].copy_from_slice(omega_c_dot.as_slice());

        let acc = relative_translation_derivs(&rel.position, &rel.velocity, &chaser, &self.constants)?;
        let gamma = rel.rotation();
        let bodies = BodyProperties {
            j_t: self.target_inertia,
            j_c: self.chaser_inertia,
            omega_c,
            omega_c_dot,
        };
        let omega_dot = relative_rotation_derivs(&rel.omega_r, &gamma, &bodies)?;
        let p_dot = mrp_derivs(&rel.mrp, &rel.omega_r);

        let o = &mut out[7..];
        o[idx::POS].copy_from_slice(rel.velocity.as_slice());
        o[idx::VEL].copy_from_slice(acc.as_slice());
        o[idx::MRP].copy_from_slice(p_dot.as_slice());
        o[idx::OMEGA].copy_from_slice(omega_dot.as_slice());
        Ok(())
    }

    /// One RK4 step of the coupled model. No shadow switching is applied.
    pub fn step(
        &self,
        chaser: &ChaserOrbitState,
        chaser_rate: &Vector3<f64>,
        relative: &RelativeState,
        t: f64,
        dt: f64,
    ) -> Result<(ChaserOrbitState, Vector3<f64>, RelativeState)> {
        let mut y = [0.0; FULL_DIM];
        y[0..4].copy_from_slice(&chaser.to_array());
        y[4..7].copy_from_slice(chaser_rate.as_slice());
        y[7..].copy_from_slice(&relative.to_array());
        let next = rk4_step(&y, t, dt, |_, x, out| self.full_derivs(x, out))?;
        Ok((
            ChaserOrbitState::from_slice(&next[0..4]),
            Vector3::new(next[4], next[5], next[6]),
            RelativeState::from_slice(&next[7..]),
        ))
    }

    /// Advance all truth states by `dt`, shadow-switching the MRP if needed.
    pub fn propagate_truth(&self, s: &TruthState, dt: f64) -> Result<TruthState> {
        let (chaser, chaser_rate, mut relative) =
            self.step(&s.chaser, &s.chaser_rate, &s.relative, s.time, dt)?;
        if !relative.is_finite() {
            return Err(Error::Propagation { time: s.time + dt });
        }
        mrp_switch_if_needed(&mut relative.mrp);
        Ok(TruthState {
            chaser,
            chaser_rate,
            relative,
            time: s.time + dt,
        })
    }
}
