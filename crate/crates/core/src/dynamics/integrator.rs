//! Classical fourth-order Runge–Kutta.

use crate::error::{Error, Result};

/// Advance `state` from `t` to `t + dt` with one classical RK4 step.
///
/// `derivs(t, x, out)` writes the time derivative of `x` into `out`.
pub fn rk4_step<F>(state: &[f64], t: f64, dt: f64, mut derivs: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {dt}")));
    }
    let n = state.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    let mut eval = |tt: f64, x: &[f64], out: &mut [f64]| -> Result<()> {
        derivs(tt, x, out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Propagation { time: tt });
        }
        Ok(())
    };

    eval(t, state, &mut k1)?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    eval(t + 0.5 * dt, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    eval(t + 0.5 * dt, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    eval(t + dt, &tmp, &mut k4)?;

    Ok((0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}
