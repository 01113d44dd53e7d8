//! The characteristic system in `(rho, p, q, s)` and its linearised
//! `(q, s, eta, w)` form.

use std::io::Write;

use super::{integrate, IvpProblem, IvpSolution, Termination, Tolerances};
use crate::error::Result;
use crate::model::{CharData, ModelParams};

/// State layout of [`solve_characteristic`].
pub const RHO: usize = 0;
pub const P: usize = 1;
pub const Q: usize = 2;
pub const S: usize = 3;

/// `rho' = -(N-1) rho q - p rho`, `p' = -p^2 - k(N-1)s + k(rho - c)`,
/// `q' = k s - q^2`, `s' = -q(c + N s)`.
pub fn characteristic_rhs(params: ModelParams) -> impl Fn(f64, &[f64], &mut [f64]) {
    let ModelParams { k, c, .. } = params;
    let nf = params.nf();
    move |_t, y, dy| {
        let (rho, p, q, s) = (y[0], y[1], y[2], y[3]);
        dy[0] = -(nf - 1.0) * rho * q - p * rho;
        dy[1] = -p * p - k * (nf - 1.0) * s + k * (rho - c);
        dy[2] = k * s - q * q;
        dy[3] = -q * (c + nf * s);
    }
}

/// `(q, s, eta, w)` with `eta' = w`, `w' = -k eta (c + (N-1)s) + k Gamma^{N-1}`,
/// where `Gamma = ((s + c/N)/s_tilde0)^{1/N}`.
pub fn eta_w_rhs(params: ModelParams, s_tilde0: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
    let ModelParams { k, c, .. } = params;
    let nf = params.nf();
    let cn = params.c_over_n();
    move |_t, y, dy| {
        let (q, s, eta, w) = (y[0], y[1], y[2], y[3]);
        let g = gamma_pow(s + cn, s_tilde0, nf);
        dy[0] = k * s - q * q;
        dy[1] = -q * (c + nf * s);
        dy[2] = w;
        dy[3] = -k * eta * (c + (nf - 1.0) * s) + k * g;
    }
}

/// `Gamma^{N-1}` from the state formula.
#[inline]
pub(crate) fn gamma_pow(s_tilde: f64, s_tilde0: f64, nf: f64) -> f64 {
    (s_tilde / s_tilde0).max(0.0).powf((nf - 1.0) / nf)
}

/// Integrates `(rho, p, q, s)` from the characteristic's initial state to `horizon`.
pub fn solve_characteristic(
    data: &CharData,
    params: &ModelParams,
    horizon: f64,
    tol: Tolerances,
) -> Result<IvpSolution> {
    params.validate()?;
    let y0 = vec![data.rho0, data.p0, data.q0, data.s0];
    let problem = IvpProblem::new(characteristic_rhs(*params), 0.0, y0, horizon).tolerances(tol);
    let sol = integrate(&problem)?;
    if let Termination::BlowupDetected(_) = sol.termination {
        // density and velocity gradient diverge together
        let y = sol.y_final();
        debug_assert!(
            y[P].abs() > 1.0 || y[Q].abs() > 1.0,
            "blow-up without divergence of p or q"
        );
    }
    Ok(sol)
}

/// Writes `t,rho,p,q,s,eta,w,A,Gamma` with derived columns computed per row.
pub fn write_trajectory_csv<W: Write>(
    writer: W,
    samples: &[(f64, Vec<f64>)],
    data: &CharData,
    params: &ModelParams,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "rho", "p", "q", "s", "eta", "w", "A", "Gamma"])?;
    let nf = params.nf();
    for (t, y) in samples {
        let (rho, p, q, s) = (y[RHO], y[P], y[Q], y[S]);
        let s_tilde = s + params.c_over_n();
        let gamma = if s_tilde > 0.0 && data.s_tilde0 > 0.0 {
            (s_tilde / data.s_tilde0).powf(1.0 / nf)
        } else {
            f64::NAN
        };
        let eta = gamma.powf(nf - 1.0) / rho;
        let wv = p * eta;
        let a = q * wv - params.k * eta * s;
        w.write_record(
            [*t, rho, p, q, s, eta, wv, a, gamma].iter().map(|v| format_num(*v)),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn format_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else {
        v.to_string()
    }
}
