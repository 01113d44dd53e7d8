//! Brute-force answer to "does this characteristic break down?" by direct
//! integration, independent of the envelope construction.

use std::cell::Cell;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{EpError, Result};
use crate::model::{CharData, ModelParams};
use crate::ode::characteristic::{eta_w_rhs, gamma_pow, solve_characteristic, P, Q, S};
use crate::ode::{integrate, Direction, Event, IvpProblem, IvpSolution, Termination, Tolerances};
use crate::qs::{linear_period, OrbitGeometry, QSState};
use crate::threshold::HorizonPolicy;

const ETA: usize = 2;
const W: usize = 3;
/// Relative slack on the `A > 0` certificate, well above the integrator's
/// relative tolerance.
const CERTIFICATE_SLACK: f64 = 1e-6;

/// What direct integration observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleOutcome {
    /// No breakdown up to `horizon`. `certified` means the state entered a
    /// region from which global existence is guaranteed (c = 0 only; for c > 0
    /// periodicity over two full periods is the certificate).
    GlobalWithinHorizon { horizon: f64, certified: bool },
    Blowup { tc: f64 },
    /// Nothing conclusive within the search cap.
    Inconclusive { horizon: f64 },
}

impl OracleOutcome {
    pub fn is_blowup(&self) -> bool {
        matches!(self, OracleOutcome::Blowup { .. })
    }

    pub fn is_global(&self) -> bool {
        matches!(self, OracleOutcome::GlobalWithinHorizon { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            OracleOutcome::GlobalWithinHorizon { .. } => "GlobalWithinHorizon",
            OracleOutcome::Blowup { .. } => "Blowup",
            OracleOutcome::Inconclusive { .. } => "Inconclusive",
        }
    }
}

/// Log-log slopes of `|q|` and `s` against `t + 1` over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub window: [f64; 2],
    pub q_exponent: f64,
    /// For N = 2 this is the slope of `s (1 + ln(t+1))`.
    pub s_exponent: f64,
    pub confirmed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub outcome: OracleOutcome,
    /// c = 0 only.
    pub decay: Option<DecayFit>,
    /// Smallest η seen over the run divided by the largest.
    pub eta_ratio: Option<f64>,
    /// Largest `|w|` seen before `tc` or the horizon.
    pub max_abs_w: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OraclePolicy {
    pub tol: Tolerances,
    /// Full periods integrated for c > 0.
    pub periods: f64,
    /// Extra fraction of a period on top of `periods`.
    pub period_margin: f64,
    /// η below `positivity_floor * max η` counts as reaching zero.
    pub positivity_floor: f64,
    pub horizon: HorizonPolicy,
    /// For c = 0 the horizon is stretched by 10x until a certificate shows
    /// up or this cap is hit.
    pub search_cap: f64,
    pub rate_window: [f64; 2],
    /// Allowed relative error of the fitted exponents, N ≥ 3 and N = 2.
    pub rate_tolerance: f64,
    pub rate_tolerance_n2: f64,
}

impl Default for OraclePolicy {
    fn default() -> Self {
        Self {
            tol: Tolerances::CLASSIFY,
            periods: 2.0,
            period_margin: 0.1,
            positivity_floor: 1e-9,
            horizon: HorizonPolicy::default(),
            search_cap: 1e8,
            rate_window: [50.0, 200.0],
            rate_tolerance: 0.10,
            rate_tolerance_n2: 0.15,
        }
    }
}

impl OraclePolicy {
    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }
}

pub fn oracle_outcome(data: &CharData, params: &ModelParams, policy: &OraclePolicy) -> Result<OracleReport> {
    params.validate()?;
    if params.zero_background() {
        if !(data.s0 > 0.0) {
            return Err(EpError::Domain(format!("c = 0 needs s0 > 0, got {}", data.s0)));
        }
        // huge excursions (N = 2 with large q0^2/s0) can overflow the fit run
        let decay = decay_fit(data.q0, data.s0, params, policy).ok();
        let mut report = if data.zero_density() {
            zero_density_zero_bg(data, params, policy)?
        } else {
            zero_bg(data, params, policy)?
        };
        report.decay = decay;
        if let OracleOutcome::GlobalWithinHorizon { horizon, certified: false } = report.outcome {
            if !decay.is_some_and(|d| d.confirmed) {
                report.outcome = OracleOutcome::Inconclusive { horizon };
            }
        }
        Ok(report)
    } else if data.zero_density() {
        // p' <= -p^2 - kc/N, so breakdown comes before pi / sqrt(kc/N)
        let horizon = 1.05 * PI / (params.k * params.c / params.nf()).sqrt();
        let sol = solve_characteristic(data, params, horizon, policy.tol)?;
        let outcome = match sol.blowup_time() {
            Some(tc) => OracleOutcome::Blowup { tc },
            None => OracleOutcome::Inconclusive { horizon },
        };
        Ok(OracleReport { outcome, decay: None, eta_ratio: None, max_abs_w: None })
    } else {
        positive_bg(data, params, policy)
    }
}

fn eta_w_start(data: &CharData) -> Result<Vec<f64>> {
    match (data.eta0, data.w0) {
        (Some(e), Some(w)) => Ok(vec![data.q0, data.s0, e, w]),
        _ => Err(EpError::ZeroDensity("eta0/w0")),
    }
}

/// Min and max of component `i` over step points plus interior dense samples,
/// with the time of the minimum.
fn scan(sol: &IvpSolution, i: usize, per_step: usize) -> (f64, f64, f64) {
    let (mut lo, mut hi, mut t_lo) = (f64::INFINITY, f64::NEG_INFINITY, sol.t_start());
    let mut visit = |t: f64, v: f64| {
        if v < lo {
            lo = v;
            t_lo = t;
        }
        hi = hi.max(v);
    };
    for (j, w) in sol.ts.windows(2).enumerate() {
        visit(w[0], sol.ys[j][i]);
        for m in 1..per_step {
            let t = w[0] + (w[1] - w[0]) * m as f64 / per_step as f64;
            if let Some(y) = sol.eval(t) {
                visit(t, y[i]);
            }
        }
    }
    visit(sol.t_final(), sol.y_final()[i]);
    (lo, hi, t_lo)
}

fn max_abs(sol: &IvpSolution, i: usize) -> f64 {
    sol.ys.iter().map(|y| y[i].abs()).fold(0.0, f64::max)
}

fn positive_bg(data: &CharData, params: &ModelParams, policy: &OraclePolicy) -> Result<OracleReport> {
    let geom = OrbitGeometry::new(QSState::from_s(data.q0, data.s0, params), params)?;
    let period = if geom.degenerate { linear_period(params) } else { geom.period.unwrap_or(linear_period(params)) };
    let horizon = (policy.periods + policy.period_margin) * period;
    let problem = IvpProblem::new(eta_w_rhs(*params, data.s_tilde0), 0.0, eta_w_start(data)?, horizon)
        .tolerances(policy.tol)
        .monitor(vec![ETA, W])
        .event(Event::new(|_t, y: &[f64]| y[ETA], Direction::Falling, true));
    let sol = integrate(&problem)?;
    let (lo, hi, t_lo) = scan(&sol, ETA, 8);
    let max_abs_w = Some(max_abs(&sol, W));
    let eta_ratio = Some(lo / hi);
    let outcome = if let Some(e) = sol.events_of(0).next() {
        OracleOutcome::Blowup { tc: e.t }
    } else if lo <= policy.positivity_floor * hi {
        // grazing: η touches zero without changing sign
        OracleOutcome::Blowup { tc: t_lo }
    } else {
        match sol.termination {
            Termination::ReachedEnd => OracleOutcome::GlobalWithinHorizon { horizon, certified: true },
            Termination::BlowupDetected(tc) => OracleOutcome::Blowup { tc },
            _ => OracleOutcome::Inconclusive { horizon: sol.t_final() },
        }
    };
    Ok(OracleReport { outcome, decay: None, eta_ratio, max_abs_w })
}

/// c = 0: once `q > 0`, `A >= 0` and `η > 0` hold together they hold for
/// good (q stays positive, Γ falls, so A climbs and η' = (A + kηs)/q > 0).
fn zero_bg(data: &CharData, params: &ModelParams, policy: &OraclePolicy) -> Result<OracleReport> {
    let k = params.k;
    let st0 = data.s_tilde0;
    // A = q w - k η s loses digits once w decays: a constant error of order
    // tol * max|w| in w turns into q times that in A, so demand A clear it.
    let w_peak = Cell::new(data.w0.unwrap_or(0.0).abs());
    let a_floor = |y: &[f64]| y[0] * (CERTIFICATE_SLACK * w_peak.get() + 1e3 * policy.tol.abs);
    let certificate = |y: &[f64]| {
        w_peak.set(w_peak.get().max(y[W].abs()));
        y[0] > 0.0 && y[ETA] > 0.0 && y[0] * y[W] - k * y[ETA] * y[1] > a_floor(y)
    };
    let mut start = eta_w_start(data)?;
    let mut t0 = 0.0;
    let mut horizon = policy.horizon.horizon(data, params);
    let (mut lo, mut hi, mut t_lo) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let mut max_w: f64 = 0.0;
    let mut certified = certificate(&start);
    while !certified {
        let problem = IvpProblem::new(eta_w_rhs(*params, st0), t0, start.clone(), horizon)
            .tolerances(policy.tol)
            .monitor(vec![ETA, W])
            .halt_when(|_t, y| certificate(y))
            .event(Event::new(|_t, y: &[f64]| y[ETA], Direction::Falling, true));
        let sol = integrate(&problem)?;
        let (l, h, tl) = scan(&sol, ETA, 8);
        if l < lo {
            lo = l;
            t_lo = tl;
        }
        hi = hi.max(h);
        max_w = max_w.max(max_abs(&sol, W));
        let report = |outcome| OracleReport { outcome, decay: None, eta_ratio: Some(lo / hi), max_abs_w: Some(max_w) };
        if let Some(e) = sol.events_of(0).next() {
            return Ok(report(OracleOutcome::Blowup { tc: e.t }));
        }
        if lo <= policy.positivity_floor * hi {
            return Ok(report(OracleOutcome::Blowup { tc: t_lo }));
        }
        match sol.termination {
            Termination::Halted => certified = true,
            Termination::ReachedEnd if horizon < policy.search_cap => {
                start = sol.y_final().to_vec();
                t0 = horizon;
                horizon = (10.0 * horizon).min(policy.search_cap);
            }
            Termination::ReachedEnd => {
                return Ok(report(OracleOutcome::GlobalWithinHorizon { horizon, certified: false }));
            }
            Termination::BlowupDetected(tc) => return Ok(report(OracleOutcome::Blowup { tc })),
            _ => return Ok(report(OracleOutcome::Inconclusive { horizon: sol.t_final() })),
        }
    }
    let eta_ratio = if hi.is_finite() { Some(lo / hi) } else { None };
    Ok(OracleReport {
        outcome: OracleOutcome::GlobalWithinHorizon { horizon: t0.max(horizon), certified: true },
        decay: None,
        eta_ratio,
        max_abs_w: Some(max_w),
    })
}

/// c = 0, ρ0 = 0: `X = q p - k s` obeys `X' = -X (p + q)`, so `q > 0` with
/// `X >= 0` is a global certificate.
fn zero_density_zero_bg(data: &CharData, params: &ModelParams, policy: &OraclePolicy) -> Result<OracleReport> {
    let k = params.k;
    let certificate = move |y: &[f64]| y[Q] > 0.0 && y[Q] * y[P] - k * y[S] >= 0.0;
    let mut start = vec![data.rho0, data.p0, data.q0, data.s0];
    let mut t0 = 0.0;
    let mut horizon = policy.horizon.horizon(data, params);
    let report = |outcome| OracleReport { outcome, decay: None, eta_ratio: None, max_abs_w: None };
    if certificate(&start) {
        return Ok(report(OracleOutcome::GlobalWithinHorizon { horizon: 0.0, certified: true }));
    }
    loop {
        let problem = IvpProblem::new(crate::ode::characteristic::characteristic_rhs(*params), t0, start, horizon)
            .tolerances(policy.tol)
            .sparse()
            .halt_when(move |_t, y| certificate(y));
        let sol = integrate(&problem)?;
        match sol.termination {
            Termination::Halted => {
                return Ok(report(OracleOutcome::GlobalWithinHorizon { horizon: sol.t_final(), certified: true }))
            }
            Termination::BlowupDetected(tc) => return Ok(report(OracleOutcome::Blowup { tc })),
            Termination::ReachedEnd if horizon < policy.search_cap => {
                start = sol.y_final().to_vec();
                t0 = horizon;
                horizon = (10.0 * horizon).min(policy.search_cap);
            }
            Termination::ReachedEnd => {
                return Ok(report(OracleOutcome::GlobalWithinHorizon { horizon, certified: false }))
            }
            _ => return Ok(report(OracleOutcome::Inconclusive { horizon: sol.t_final() })),
        }
    }
}

/// Fits the c = 0 decay of q and s over `policy.rate_window`: q should fall
/// like `(t+1)^-1` and s like `(t+1)^-N`, with an extra `1/ln` on s for N = 2.
pub fn decay_fit(q0: f64, s0: f64, params: &ModelParams, policy: &OraclePolicy) -> Result<DecayFit> {
    let [a, b] = policy.rate_window;
    if !(a >= 0.0 && b > a) {
        return Err(EpError::Config(format!("rate window must satisfy 0 <= a < b, got [{a}, {b}]")));
    }
    let k = params.k;
    let nf = params.nf();
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = k * y[1] - y[0] * y[0];
        dy[1] = -nf * y[0] * y[1];
    };
    let sol = integrate(&IvpProblem::new(rhs, 0.0, vec![q0, s0], b).tolerances(policy.tol))?;
    if sol.termination != Termination::ReachedEnd {
        return Err(EpError::Integration(format!("q-s decay run stopped early: {:?}", sol.termination)));
    }
    let n_pts = 64;
    let mut xs = Vec::with_capacity(n_pts);
    let mut lq = Vec::with_capacity(n_pts);
    let mut ls = Vec::with_capacity(n_pts);
    let mut positive = true;
    for i in 0..n_pts {
        let x = (1.0 + a).ln() + ((1.0 + b).ln() - (1.0 + a).ln()) * i as f64 / (n_pts - 1) as f64;
        let t = x.exp() - 1.0;
        let y = sol.eval(t).expect("inside span");
        positive &= y[0] > 0.0 && y[1] > 0.0;
        let s = if params.n == 2 { y[1] * (1.0 + x) } else { y[1] };
        xs.push(x);
        lq.push(y[0].abs().ln());
        ls.push(s.abs().ln());
    }
    let q_exponent = slope(&xs, &lq);
    let s_exponent = slope(&xs, &ls);
    let tol = if params.n == 2 { policy.rate_tolerance_n2 } else { policy.rate_tolerance };
    let confirmed = positive && (q_exponent + 1.0).abs() <= tol && (s_exponent + nf).abs() <= tol * nf;
    Ok(DecayFit { window: [a, b], q_exponent, s_exponent, confirmed })
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `A = q w - k η s` along an `(q, s, η, w)` state.
pub fn a_of_state(y: &[f64], params: &ModelParams) -> f64 {
    y[0] * y[W] - params.k * y[ETA] * y[1]
}

/// `Γ^{N-1}` along an `(q, s, η, w)` state.
pub fn gamma_pow_of_state(y: &[f64], s_tilde0: f64, params: &ModelParams) -> f64 {
    gamma_pow(y[1] + params.c_over_n(), s_tilde0, params.nf())
}
