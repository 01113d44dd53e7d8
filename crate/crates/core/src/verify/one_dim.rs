//! Concentration at the origin in one space dimension.
//!
//! With `a = q/s~` and `b = 1/s~` the 1D characteristic system becomes linear,
//! `a' = k - k c b`, `b' = a`, and the density concentrates exactly when `b`
//! reaches zero.

use std::f64::consts::PI;

use crate::error::{EpError, Result};
use crate::ode::{integrate, BlowupPolicy, Direction, Event, IvpProblem, Tolerances};

fn check_inputs(s_tilde0: f64, k: f64, c: f64) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(EpError::InvalidParams(format!("k must be positive, got {k}")));
    }
    if !(c >= 0.0) || !c.is_finite() {
        return Err(EpError::InvalidParams(format!("c must be nonnegative, got {c}")));
    }
    if !(s_tilde0 > 0.0) || !s_tilde0.is_finite() {
        return Err(EpError::Domain(format!("s_tilde0 must be positive, got {s_tilde0}")));
    }
    Ok(())
}

/// Whether the 1D characteristic through `(q0, s~0)` concentrates.
///
/// For c > 0, `b` oscillates about `1/c` and touches zero iff
/// `q0^2 >= k(2 s~0 - c)`. For c = 0, `b = b0 + a0 t + k t^2/2` has a
/// positive root iff `q0 < 0` and `q0^2 >= 2 k s~0`. Grazing counts as concentration.
pub fn one_dim_concentration_check(q0: f64, s_tilde0: f64, k: f64, c: f64) -> Result<bool> {
    check_inputs(s_tilde0, k, c)?;
    if !q0.is_finite() {
        return Err(EpError::Domain(format!("q0 must be finite, got {q0}")));
    }
    let threshold = k * (2.0 * s_tilde0 - c);
    Ok(if c > 0.0 { q0 * q0 >= threshold } else { q0 < 0.0 && q0 * q0 >= threshold })
}

/// Smallest `b / b0` reached by the integrated `(a, b)` system, stopping at
/// the first zero of `b`. Covers one oscillation for c > 0 and runs past the
/// vertex of the parabola for c = 0.
pub fn one_dim_min_b(q0: f64, s_tilde0: f64, k: f64, c: f64, tol: Tolerances) -> Result<f64> {
    check_inputs(s_tilde0, k, c)?;
    let (a0, b0) = (q0 / s_tilde0, 1.0 / s_tilde0);
    let horizon = if c > 0.0 { 2.0 * PI / (k * c).sqrt() } else { 2.0 * (a0.abs() / k).max(1.0) };
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = k - k * c * y[1];
        dy[1] = y[0];
    };
    let problem = IvpProblem::new(rhs, 0.0, vec![a0, b0], horizon)
        .tolerances(tol)
        .blowup(BlowupPolicy { norm_threshold: f64::INFINITY, ..BlowupPolicy::default() })
        .event(Event::new(|_t, y: &[f64]| y[1], Direction::Falling, true))
        // b is smallest where a changes sign from negative to positive
        .event(Event::new(|_t, y: &[f64]| y[0], Direction::Rising, false));
    let sol = integrate(&problem)?;
    if sol.events_of(0).next().is_some() {
        return Ok(0.0);
    }
    let lowest = sol
        .events_of(1)
        .map(|e| e.y[1])
        .chain(sol.ys.iter().map(|y| y[1]))
        .fold(f64::INFINITY, f64::min);
    Ok(lowest / b0)
}
