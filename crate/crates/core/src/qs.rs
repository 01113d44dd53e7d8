//! The decoupled `(q, s~)` subsystem: invariant, orbit extrema, period and
//! the Gamma relation.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{EpError, Result};
use crate::model::ModelParams;
use crate::numerics::{adaptive_gauss, brent, geometric_bracket};
use crate::ode::characteristic::format_num;
use crate::ode::{integrate, Direction, Event, IvpProblem, IvpSolution, Termination, Tolerances};

/// Relative closeness to the minimum of the q = 0 section at which an
/// orbit is treated as the equilibrium point itself.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSState {
    pub q: f64,
    pub s_tilde: f64,
}

impl QSState {
    pub fn new(q: f64, s_tilde: f64) -> Self {
        Self { q, s_tilde }
    }

    pub fn from_s(q: f64, s: f64, params: &ModelParams) -> Self {
        Self { q, s_tilde: s + params.c_over_n() }
    }

    pub fn s(&self, params: &ModelParams) -> f64 {
        self.s_tilde - params.c_over_n()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitGeometry {
    #[serde(rename = "R")]
    pub r: f64,
    pub s_tilde_min: f64,
    pub s_tilde_max: f64,
    /// Period; absent for c = 0, where orbits are not closed.
    pub period: Option<f64>,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub degenerate: bool,
}

impl OrbitGeometry {
    pub fn new(state: QSState, params: &ModelParams) -> Result<Self> {
        let r = trajectory_invariant(state, params)?;
        let (lo, hi) = s_extrema(r, params)?;
        let degenerate = params.c > 0.0 && lo == hi;
        let period = if params.c > 0.0 {
            Some(if degenerate { linear_period(params) } else { period_from_extrema(r, lo, hi, params)? })
        } else {
            None
        };
        let nf = params.nf();
        Ok(Self {
            r,
            s_tilde_min: lo,
            s_tilde_max: hi,
            period,
            gamma_min: (lo / state.s_tilde).powf(1.0 / nf),
            gamma_max: (hi / state.s_tilde).powf(1.0 / nf),
            degenerate,
        })
    }
}

fn check_positive(s_tilde: f64) -> Result<()> {
    if !(s_tilde > 0.0) || !s_tilde.is_finite() {
        return Err(EpError::Domain(format!("s_tilde must be positive, got {s_tilde}")));
    }
    Ok(())
}

/// Conserved quantity `R_N(q, s~)` of the q–s flow.
pub fn trajectory_invariant(state: QSState, params: &ModelParams) -> Result<f64> {
    check_positive(state.s_tilde)?;
    let QSState { q, s_tilde: x } = state;
    let ModelParams { k, c, .. } = *params;
    let nf = params.nf();
    Ok(if params.n == 2 {
        q * q / x + k * x.ln() + k * c / (2.0 * x)
    } else {
        x.powf(-2.0 / nf) * (q * q + k * c / nf + 2.0 * k * x / (nf - 2.0))
    })
}

/// Magnitude scale of the invariant for relative drift measurements.
pub fn invariant_scale(state: QSState, params: &ModelParams) -> f64 {
    let QSState { q, s_tilde: x } = state;
    let ModelParams { k, c, .. } = *params;
    if params.n == 2 {
        q * q / x + k * x.ln().abs() + k * c / (2.0 * x)
    } else {
        trajectory_invariant(state, params).unwrap_or(f64::NAN).abs()
    }
}

/// The q = 0 section `g(s~) = R_N(0, s~)`.
pub fn section(s_tilde: f64, params: &ModelParams) -> f64 {
    trajectory_invariant(QSState::new(0.0, s_tilde), params).unwrap_or(f64::INFINITY)
}

/// `q^2` on the orbit with invariant `r` at height `s~`.
pub fn q_squared(r: f64, s_tilde: f64, params: &ModelParams) -> f64 {
    let ModelParams { k, c, .. } = *params;
    let nf = params.nf();
    if params.n == 2 {
        s_tilde * (r - k * s_tilde.ln()) - k * c / 2.0
    } else {
        r * s_tilde.powf(2.0 / nf) - k * c / nf - 2.0 * k * s_tilde / (nf - 2.0)
    }
}

/// The two roots of `g(s~) = R` bracketing `c/N`.
///
/// For c = 0 the lower end is 0 (orbits decay to the origin) and only the apex is computed.
pub fn s_extrema(r: f64, params: &ModelParams) -> Result<(f64, f64)> {
    params.validate()?;
    if !r.is_finite() {
        return Err(EpError::Domain(format!("invariant must be finite, got {r}")));
    }
    let h = |x: f64| section(x, params) - r;
    if params.c == 0.0 {
        if params.n > 2 && r <= 0.0 {
            return Err(EpError::Domain(format!("invariant {r} admits no orbit")));
        }
        let start = 1.0;
        let (a, b) = if h(start) < 0.0 {
            geometric_bracket(h, start, 2.0, 2000)?
        } else {
            geometric_bracket(h, start, 0.5, 2000)?
        };
        let top = brent(h, a.min(b), a.max(b), 0.0, 4.0 * f64::EPSILON, 300)?;
        return Ok((0.0, top));
    }
    let mid = params.c_over_n();
    let gmin = section(mid, params);
    let tol = DEGENERATE_TOL * gmin.abs().max(1.0);
    if r < gmin - tol {
        return Err(EpError::Domain(format!(
            "invariant {r} below the section minimum {gmin}; no real orbit"
        )));
    }
    if r <= gmin + tol {
        return Ok((mid, mid));
    }
    let (a_in, a_out) = geometric_bracket(h, mid, 0.5, 2000)?;
    let lo = brent(h, a_out, a_in, 0.0, 4.0 * f64::EPSILON, 300)?;
    let (b_in, b_out) = geometric_bracket(h, mid, 2.0, 2000)?;
    let hi = brent(h, b_in, b_out, 0.0, 4.0 * f64::EPSILON, 300)?;
    Ok((lo, hi))
}

/// `(s~/s~0)^{1/N}`.
pub fn gamma_of_s(s_tilde: f64, s_tilde0: f64, n: u32) -> Result<f64> {
    check_positive(s_tilde)?;
    check_positive(s_tilde0)?;
    if n == 0 {
        return Err(EpError::Domain("dimension must be positive".into()));
    }
    Ok((s_tilde / s_tilde0).powf(1.0 / n as f64))
}

/// Whether q leaves every bounded set in finite time: `s0 <= -c/N`.
pub fn qs_blowup_check(s0: f64, params: &ModelParams) -> bool {
    s0 <= -params.c_over_n()
}

/// As [`qs_blowup_check`], but also resolves `c = 0, s0 = 0`, where
/// `q' = -q^2` blows up only for `q0 < 0`.
pub fn qs_blowup_check_exact(q0: f64, s0: f64, params: &ModelParams) -> bool {
    if params.c == 0.0 && s0 == 0.0 {
        return q0 < 0.0;
    }
    qs_blowup_check(s0, params)
}

/// Period of the linearisation about the equilibrium, `2 pi / sqrt(k c)`.
pub fn linear_period(params: &ModelParams) -> f64 {
    2.0 * PI / (params.k * params.c).sqrt()
}

/// Period of the closed orbit through `(q0, s~0)` from the quadrature
/// `T = (2/N) ∫ ds~ / (s~ sqrt(q^2(s~)))` between the extrema.
pub fn period(q0: f64, s_tilde0: f64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if params.c == 0.0 {
        return Err(EpError::Domain("orbits are not periodic for c = 0".into()));
    }
    let r = trajectory_invariant(QSState::new(q0, s_tilde0), params)?;
    let (lo, hi) = s_extrema(r, params)?;
    if lo == hi {
        return Ok(linear_period(params));
    }
    period_from_extrema(r, lo, hi, params)
}

fn period_from_extrema(_r: f64, lo: f64, hi: f64, params: &ModelParams) -> Result<f64> {
    let nf = params.nf();
    let width = hi - lo;
    // s~ = lo + width sin^2(theta) removes both inverse-square-root endpoints.
    // q^2 = s~^{2/N} (g(end) - g(s~)) is evaluated from the nearer endpoint
    // with the offset known exactly, which keeps it accurate near the turning points.
    let integrand = |theta: f64| {
        let (sn, cs) = theta.sin_cos();
        let (base, d) = if sn * sn <= 0.5 { (lo, width * sn * sn) } else { (hi, -width * cs * cs) };
        let x = base + d;
        let q2 = x.powf(2.0 / nf) * -section_increment(base, d, params);
        if !(q2 > 0.0) {
            return 0.0;
        }
        2.0 * width * sn * cs / (x * q2.sqrt())
    };
    let t = adaptive_gauss(integrand, 0.0, PI / 2.0, 1e-12)?;
    Ok(2.0 / nf * t)
}

/// `g(base + d) - g(base)` for the q = 0 section, without cancellation in `d`.
fn section_increment(base: f64, d: f64, params: &ModelParams) -> f64 {
    let ModelParams { k, c, .. } = *params;
    let nf = params.nf();
    let l = (d / base).ln_1p();
    if params.n == 2 {
        k * l - 0.5 * k * c * d / ((base + d) * base)
    } else {
        let a = k * c / nf * base.powf(-2.0 / nf) * ((-2.0 / nf) * l).exp_m1();
        let b = 2.0 * k / (nf - 2.0) * base.powf(1.0 - 2.0 / nf) * ((1.0 - 2.0 / nf) * l).exp_m1();
        a + b
    }
}

/// Integrated q–s orbit with q = 0 and s = 0 crossing times.
#[derive(Debug, Clone)]
pub struct QsTrajectory {
    pub solution: IvpSolution,
    pub s_tilde0: f64,
    pub r0: f64,
    pub q_zero_times: Vec<f64>,
    pub s_zero_times: Vec<f64>,
    /// Crossing times of each level passed to [`integrate_qs_levels`].
    pub level_times: Vec<Vec<f64>>,
    /// Largest relative deviation of the invariant over accepted steps.
    pub max_r_drift: f64,
}

impl QsTrajectory {
    pub fn state(&self, t: f64) -> Option<QSState> {
        self.solution.eval(t).map(|y| QSState::new(y[0], y[1]))
    }

    /// Period estimate from successive q = 0 crossings of the same sense.
    pub fn event_period(&self) -> Option<f64> {
        let t = &self.q_zero_times;
        if t.len() >= 3 {
            Some(t[2] - t[0])
        } else {
            None
        }
    }

    /// Rows `t,q,s,s_tilde,gamma,R_drift` on `n` evenly spaced samples.
    pub fn phase_rows(&self, n: usize, params: &ModelParams) -> Vec<[f64; 6]> {
        let nf = params.nf();
        let scale = invariant_scale(QSState::new(self.solution.ys[0][0], self.s_tilde0), params);
        self.solution
            .sample(n)
            .into_iter()
            .map(|(t, y)| {
                let st = QSState::new(y[0], y[1]);
                let r = trajectory_invariant(st, params).unwrap_or(f64::NAN);
                [
                    t,
                    y[0],
                    st.s(params),
                    y[1],
                    (y[1] / self.s_tilde0).powf(1.0 / nf),
                    (r - self.r0) / scale,
                ]
            })
            .collect()
    }
}

/// Integrates `q' = k s~ - kc/N - q^2`, `s~' = -N q s~` over `[t0, t1]`.
pub fn integrate_qs(
    state0: QSState,
    t_span: (f64, f64),
    params: &ModelParams,
    tol: Tolerances,
) -> Result<QsTrajectory> {
    integrate_qs_levels(state0, t_span, params, tol, &[])
}

/// As [`integrate_qs`], also recording the times `s~` crosses each of `levels`.
pub fn integrate_qs_levels(
    state0: QSState,
    t_span: (f64, f64),
    params: &ModelParams,
    tol: Tolerances,
    levels: &[f64],
) -> Result<QsTrajectory> {
    params.validate()?;
    check_positive(state0.s_tilde)?;
    let ModelParams { k, c, .. } = *params;
    let nf = params.nf();
    let cn = params.c_over_n();
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = k * y[1] - k * c / nf - y[0] * y[0];
        dy[1] = -nf * y[0] * y[1];
    };
    let problem = IvpProblem::new(rhs, t_span.0, vec![state0.q, state0.s_tilde], t_span.1)
        .tolerances(tol)
        .event(Event::new(|_t, y: &[f64]| y[0], Direction::Any, false))
        .event(Event::new(move |_t, y: &[f64]| y[1] - cn, Direction::Any, false));
    let problem = levels.iter().fold(problem, |p, &lv| {
        p.event(Event::new(move |_t, y: &[f64]| y[1] - lv, Direction::Any, false))
    });
    let solution = integrate(&problem)?;
    if solution.termination != Termination::ReachedEnd {
        return Err(EpError::Integration(format!(
            "q-s integration ended with {:?}: {}",
            solution.termination,
            solution.message.clone().unwrap_or_default()
        )));
    }
    let r0 = trajectory_invariant(state0, params)?;
    let scale = invariant_scale(state0, params);
    let max_r_drift = solution
        .ys
        .iter()
        .map(|y| match trajectory_invariant(QSState::new(y[0], y[1]), params) {
            Ok(r) => (r - r0).abs() / scale,
            Err(_) => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    let q_zero_times = solution.events_of(0).map(|e| e.t).collect();
    let s_zero_times = solution.events_of(1).map(|e| e.t).collect();
    let level_times = (0..levels.len())
        .map(|i| solution.events_of(2 + i).map(|e| e.t).collect())
        .collect();
    Ok(QsTrajectory {
        solution,
        s_tilde0: state0.s_tilde,
        r0,
        q_zero_times,
        s_zero_times,
        level_times,
        max_r_drift,
    })
}

/// Writes the phase table `t,q,s,s_tilde,gamma,R_drift`; `orbit` labels rows when several orbits share a file.
pub fn write_phase_csv<W: Write>(writer: W, orbits: &[(usize, Vec<[f64; 6]>)], with_orbit: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t", "q", "s", "s_tilde", "gamma", "R_drift"];
    if with_orbit {
        header.insert(0, "orbit");
    }
    w.write_record(&header)?;
    for (id, rows) in orbits {
        for row in rows {
            let mut rec: Vec<String> = row.iter().map(|v| format_num(*v)).collect();
            if with_orbit {
                rec.insert(0, id.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(k: f64, c: f64, n: u32) -> ModelParams {
        ModelParams::new(k, c, n).unwrap()
    }

    #[test]
    fn invariant_examples() {
        let pr = p(1.0, 1.0, 4);
        assert_relative_eq!(trajectory_invariant(QSState::new(0.0, 0.25), &pr).unwrap(), 1.0, epsilon = 1e-15);
        let r = trajectory_invariant(QSState::new(0.1, 0.15), &pr).unwrap();
        // 0.15^{-1/2} (0.01 + 0.25 + 0.15); the quoted value 1.05863 is rounded
        assert_relative_eq!(r, 0.41 / 0.15f64.sqrt(), max_relative = 1e-15);
        assert!((r - 1.05863).abs() < 2e-5, "R={r}");
        let r2 = trajectory_invariant(QSState::new(0.0, 0.5), &p(1.0, 1.0, 2)).unwrap();
        assert_relative_eq!(r2, 0.5f64.ln() + 1.0, epsilon = 1e-15);
        assert!(trajectory_invariant(QSState::new(0.0, 0.0), &pr).is_err());
    }

    #[test]
    fn extrema_examples() {
        let pr = p(1.0, 1.0, 4);
        assert_eq!(s_extrema(1.0, &pr).unwrap(), (0.25, 0.25));
        let r = trajectory_invariant(QSState::new(0.1, 0.15), &pr).unwrap();
        let (lo, hi) = s_extrema(r, &pr).unwrap();
        // x = sqrt(s~) solves x^2 - R x + 1/4 = 0
        let disc = (r * r - 1.0).sqrt();
        assert_relative_eq!(lo, ((r - disc) / 2.0).powi(2), max_relative = 1e-12);
        assert_relative_eq!(hi, ((r + disc) / 2.0).powi(2), max_relative = 1e-12);
        assert!((lo - 0.126452).abs() < 5e-5 && (hi - 0.494247).abs() < 5e-5);
        assert!(0.25 - lo < hi - 0.25);
        assert!(s_extrema(0.9, &pr).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_of_s(0.3, 0.3, 4).unwrap(), 1.0);
        assert_relative_eq!(gamma_of_s(0.494247, 0.15, 4).unwrap(), (0.494247f64 / 0.15).sqrt().sqrt());
        assert!((gamma_of_s(0.494247, 0.15, 4).unwrap() - 1.34731).abs() < 2e-5);
        assert!((gamma_of_s(0.126452, 0.15, 4).unwrap() - 0.95823).abs() < 5e-5);
        assert!(gamma_of_s(-0.1, 0.15, 4).is_err());
    }

    #[test]
    fn blowup_check_examples() {
        assert!(qs_blowup_check(-0.5, &p(1.0, 1.0, 2)));
        assert!(!qs_blowup_check(-0.1, &p(1.0, 1.0, 4)));
        assert!(!qs_blowup_check(0.5, &p(1.0, 0.0, 3)));
        assert!(qs_blowup_check_exact(-1.0, 0.0, &p(1.0, 0.0, 3)));
        assert!(!qs_blowup_check_exact(1.0, 0.0, &p(1.0, 0.0, 3)));
    }

    #[test]
    fn near_equilibrium_period_is_linear() {
        let t = period(1e-4, 0.25, &p(1.0, 1.0, 4)).unwrap();
        assert!((t / (2.0 * PI) - 1.0).abs() < 1e-3, "T={t}");
        assert_eq!(period(0.0, 0.25, &p(1.0, 1.0, 4)).unwrap(), 2.0 * PI);
    }

    #[test]
    fn quadrature_period_matches_events() {
        let pr = p(1.0, 1.0, 4);
        let t = period(0.1, 0.15, &pr).unwrap();
        let traj = integrate_qs(QSState::new(0.1, 0.15), (0.0, 2.5 * t), &pr, Tolerances::CLASSIFY).unwrap();
        let te = traj.event_period().unwrap();
        assert_relative_eq!(t, te, max_relative = 1e-6);
        // s-extrema are the q-zeros, half a period apart
        let qz = &traj.q_zero_times;
        assert_relative_eq!(2.0 * (qz[1] - qz[0]), t, max_relative = 1e-6);
    }

    #[test]
    fn equilibrium_trajectory_constant() {
        let pr = p(1.0, 1.0, 3);
        let traj = integrate_qs(QSState::new(0.0, 1.0 / 3.0), (0.0, 10.0), &pr, Tolerances::CLASSIFY).unwrap();
        for y in &traj.solution.ys {
            assert!(y[0].abs() < 1e-14 && (y[1] - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_background_apex() {
        let pr = p(1.0, 0.0, 4);
        let r = trajectory_invariant(QSState::new(-5.0, 1.0), &pr).unwrap();
        let (lo, hi) = s_extrema(r, &pr).unwrap();
        assert_eq!(lo, 0.0);
        // R = 26, apex where s^{1/2} = R
        assert_relative_eq!(hi, 676.0, max_relative = 1e-12);
    }

    #[test]
    fn phase_csv_shape() {
        let pr = p(1.0, 1.0, 4);
        let traj = integrate_qs(QSState::new(0.1, 0.15), (0.0, 1.0), &pr, Tolerances::CLASSIFY).unwrap();
        let mut buf = Vec::new();
        write_phase_csv(&mut buf, &[(0, traj.phase_rows(4, &pr))], false).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,q,s,s_tilde,gamma,R_drift\n"));
        assert_eq!(s.lines().count(), 5);
    }
}
