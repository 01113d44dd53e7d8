//! The envelopes η₁, η₂: solutions of `η'' + kη(c + (N-1)s) = kΓ^{N-1}`
//! pinned by `η = η' = 0` at the zeros of A.

use serde::{Deserialize, Serialize};

use super::{a0_lower_bound, a_of_gamma, kappa, HorizonPolicy};
use crate::error::{EpError, Result};
use crate::model::{CharData, ModelParams};
use crate::ode::characteristic::eta_w_rhs;
use crate::ode::{integrate, BlowupPolicy, IvpProblem, IvpSolution, Termination, Tolerances};
use crate::qs::{integrate_qs_levels, trajectory_invariant, OrbitGeometry, QSState, QsTrajectory};

const ETA: usize = 2;
const DETA: usize = 3;

/// Residual allowed between Γ at a located A-zero and κ.
const CROSSING_RESIDUAL: f64 = 1e-9;
/// Positivity floor relative to the envelope's maximum.
const POSITIVITY_FLOOR: f64 = 1e-9;
/// Numerical noise allowed in the positivity and `η_i = -A/(ks)` checks, as a
/// multiple of the relative tolerance times the envelope's size. Near a q-zero
/// the envelope is a small difference of large values and integrating across
/// it amplifies the step error by several orders of magnitude.
const CONSISTENCY: f64 = 1e5;
/// Farthest time searched for an A-zero when c = 0.
const ZERO_BG_SEARCH_CAP: f64 = 1e9;

/// One envelope, integrated backward from its pin time to 0 and forward to the horizon.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub t_a: f64,
    pub eta_at_0: f64,
    pub deta_at_0: f64,
    backward: Option<IvpSolution>,
    forward: Option<IvpSolution>,
}

impl Envelope {
    /// `(q, s, η, η')` at `t`, `None` outside `[0, horizon]`.
    pub fn state(&self, t: f64) -> Option<Vec<f64>> {
        let part = if t < self.t_a { self.backward.as_ref() } else { self.forward.as_ref() };
        part.or(self.backward.as_ref()).and_then(|s| s.eval(t))
    }

    pub fn eta(&self, t: f64) -> Option<f64> {
        self.state(t).map(|y| y[ETA])
    }

    pub fn deta(&self, t: f64) -> Option<f64> {
        self.state(t).map(|y| y[DETA])
    }

    fn pin(
        t_a: f64,
        q_a: f64,
        s_a: f64,
        t_end: f64,
        s_tilde0: f64,
        params: &ModelParams,
        tol: Tolerances,
    ) -> Result<Self> {
        Self::through(t_a, [q_a, s_a, 0.0, 0.0], t_a, t_end, s_tilde0, params, tol)
    }

    /// An envelope pinned so late that it exceeds the floating-point range
    /// wherever it could be integrated. It is then dominated by a homogeneous
    /// solution that vanishes at the q-zero and is positive after it, so only
    /// the signs at t = 0 are known: `η(0) = +∞` on an expanding orbit, `-∞` on
    /// an inward one, and `η'(0) = +∞` when `q0 = 0`, where every η shares `η(0)`.
    fn unbounded(q0: f64, t_a: f64) -> Self {
        let (eta_at_0, deta_at_0) = if q0.abs() < super::ZERO_VELOCITY {
            (f64::NAN, f64::INFINITY)
        } else {
            (q0.signum() * f64::INFINITY, f64::NAN)
        };
        Self { t_a, eta_at_0, deta_at_0, backward: None, forward: None }
    }

    /// The envelope through `(q, s, η, η')` = `y` at `t_from`, for a pin at
    /// `t_a` that may lie beyond the integrated span.
    fn through(
        t_from: f64,
        y: [f64; 4],
        t_a: f64,
        t_end: f64,
        s_tilde0: f64,
        params: &ModelParams,
        tol: Tolerances,
    ) -> Result<Self> {
        let run = |to: f64| -> Result<IvpSolution> {
            // linear in η: large values are growth, not blow-up
            let problem = IvpProblem::new(eta_w_rhs(*params, s_tilde0), t_from, y.to_vec(), to)
                .tolerances(tol)
                .blowup(BlowupPolicy { norm_threshold: f64::INFINITY, ..BlowupPolicy::default() });
            let sol = integrate(&problem)?;
            if sol.termination != Termination::ReachedEnd {
                return Err(EpError::Integration(format!(
                    "envelope pinned at {t_a} stopped with {:?} at t={}",
                    sol.termination,
                    sol.t_final()
                )));
            }
            Ok(sol)
        };
        let backward = if t_from > 0.0 { Some(run(0.0)?) } else { None };
        let forward = if t_end > t_from { Some(run(t_end)?) } else { None };
        let y0 = match &backward {
            Some(b) => b.y_final().to_vec(),
            None => y.to_vec(),
        };
        Ok(Self { t_a, eta_at_0: y0[ETA], deta_at_0: y0[DETA], backward, forward })
    }
}

/// Values of the envelopes at t = 0.
///
/// For c > 0 it also carries two diagnostics of the construction: `floor`,
/// the lowest envelope value over one period relative to its maximum (negative
/// when an envelope dips through zero away from its pin), and
/// `periodicity_defect`, `max |η1(t+T) - η1(t)|` relative to `max |η1|`.
/// Both come out clean only when the η equation has T-periodic solutions,
/// which in practice means N = 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeValues {
    pub eta1_0: f64,
    pub eta2_0: Option<f64>,
    pub deta1_0: f64,
    pub deta2_0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodicity_defect: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSample {
    pub t: f64,
    pub eta1: f64,
    pub deta1: f64,
    pub eta2: Option<f64>,
    pub deta2: Option<f64>,
}

/// One or two envelopes over `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct EnvelopePair {
    pub first: Envelope,
    pub second: Option<Envelope>,
    /// Orbit period when c > 0.
    pub period: Option<f64>,
    pub horizon: f64,
    /// q = 0 times of the underlying orbit inside `[0, horizon]`.
    pub q_zero_times: Vec<f64>,
}

impl EnvelopePair {
    pub fn t_a1(&self) -> f64 {
        self.first.t_a
    }

    pub fn t_a2(&self) -> Option<f64> {
        self.second.as_ref().map(|e| e.t_a)
    }

    pub fn values(&self) -> EnvelopeValues {
        EnvelopeValues {
            eta1_0: self.first.eta_at_0,
            eta2_0: self.second.as_ref().map(|e| e.eta_at_0),
            deta1_0: self.first.deta_at_0,
            deta2_0: self.second.as_ref().map(|e| e.deta_at_0),
            floor: self.floor(),
            periodicity_defect: self.periodicity_defect(),
        }
    }

    /// Lowest envelope value over `[0, T]` relative to the envelope's maximum.
    pub fn floor(&self) -> Option<f64> {
        let period = self.period?;
        self.envelopes().map(|e| relative_floor(e, 0.0, period)).reduce(f64::min)
    }

    /// `max |η1(t+T) - η1(t)|` over `[0, T]`, relative to `max |η1|`.
    pub fn periodicity_defect(&self) -> Option<f64> {
        let period = self.period?;
        if self.horizon < 2.0 * period * (1.0 - 1e-12) {
            return None;
        }
        let (mut top, mut worst) = (0.0f64, 0.0f64);
        for t in probes(0.0, period) {
            let (a, b) = (self.first.eta(t)?, self.first.eta((t + period).min(self.horizon))?);
            top = top.max(a.abs());
            worst = worst.max((b - a).abs());
        }
        Some(if top > 0.0 { worst / top } else { worst })
    }

    pub fn envelopes(&self) -> impl Iterator<Item = &Envelope> {
        std::iter::once(&self.first).chain(self.second.as_ref())
    }

    /// `(min, max)` of `η_i(0)`; needs both envelopes.
    pub fn eta_window(&self) -> Option<(f64, f64)> {
        let b = self.second.as_ref()?;
        let (x, y) = (self.first.eta_at_0, b.eta_at_0);
        Some((x.min(y), x.max(y)))
    }

    /// `(min, max)` of `η_i'(0)`; needs both envelopes.
    pub fn deta_window(&self) -> Option<(f64, f64)> {
        let b = self.second.as_ref()?;
        let (x, y) = (self.first.deta_at_0, b.deta_at_0);
        Some((x.min(y), x.max(y)))
    }

    /// `n` evenly spaced samples over `[0, horizon]`.
    pub fn samples(&self, n: usize) -> Vec<EnvelopeSample> {
        let n = n.max(2);
        (0..n)
            .filter_map(|i| {
                let t = self.horizon * i as f64 / (n - 1) as f64;
                let a = self.first.state(t)?;
                let b = self.second.as_ref().and_then(|e| e.state(t));
                Some(EnvelopeSample {
                    t,
                    eta1: a[ETA],
                    deta1: a[DETA],
                    eta2: b.as_ref().map(|y| y[ETA]),
                    deta2: b.as_ref().map(|y| y[DETA]),
                })
            })
            .collect()
    }
}

/// A crossing of Γ through κ, with the orbit state there.
#[derive(Debug, Clone, Copy)]
struct Crossing {
    t: f64,
    q: f64,
    s_tilde: f64,
}

fn crossings(traj: &QsTrajectory) -> Vec<Crossing> {
    traj.solution
        .events_of(2)
        .map(|e| Crossing { t: e.t, q: e.y[0], s_tilde: e.y[1] })
        .collect()
}

fn check_crossing(cr: &Crossing, kp: f64, data: &CharData, params: &ModelParams) -> Result<()> {
    let gamma = (cr.s_tilde / data.s_tilde0).powf(1.0 / params.nf());
    if (gamma - kp).abs() > CROSSING_RESIDUAL * kp.max(1.0) {
        return Err(EpError::Envelope(format!(
            "A-zero at t={} has |Gamma - kappa| = {:e}",
            cr.t,
            (gamma - kp).abs()
        )));
    }
    let scale = data.q0.abs().max((params.k * cr.s_tilde).sqrt());
    if cr.q.abs() <= super::ZERO_VELOCITY * scale {
        return Err(EpError::Envelope(format!("A and q vanish together at t={}", cr.t)));
    }
    Ok(())
}

fn probes(t_start: f64, t_end: f64) -> impl Iterator<Item = f64> {
    const PROBES: usize = 2001;
    (0..PROBES).map(move |i| t_start + (t_end - t_start) * i as f64 / (PROBES - 1) as f64)
}

/// `(min, max)` of an envelope over `[t_start, t_end]`.
fn range(env: &Envelope, t_start: f64, t_end: f64) -> (f64, f64) {
    probes(t_start, t_end)
        .filter_map(|t| env.eta(t))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn relative_floor(env: &Envelope, t_start: f64, t_end: f64) -> f64 {
    let (low, top) = range(env, t_start, t_end);
    if top > 0.0 {
        low / top
    } else {
        low
    }
}

fn positivity_check(env: &Envelope, t_start: f64, t_end: f64, what: &str, tol: Tolerances) -> Result<()> {
    let (low, top) = range(env, t_start, t_end);
    if low < -POSITIVITY_FLOOR.max(CONSISTENCY * tol.rel) * top {
        return Err(EpError::Envelope(format!(
            "{what} envelope pinned at {} dips to {low:e} (max {top:e})",
            env.t_a
        )));
    }
    Ok(())
}

fn q_zero_check(pair: &EnvelopePair, data: &CharData, params: &ModelParams, upto: f64, tol: Tolerances) -> Result<()> {
    let allowed = (CONSISTENCY * tol.rel).max(1e-9);
    for &tq in pair.q_zero_times.iter().filter(|&&t| t <= upto) {
        let y = pair.first.state(tq).ok_or_else(|| EpError::Envelope(format!("no state at t={tq}")))?;
        let s = y[1];
        let gamma = ((s + params.c_over_n()) / data.s_tilde0).powf(1.0 / params.nf());
        let a = a_of_gamma(gamma, data.a0.unwrap_or(0.0), params)?;
        let target = -a / (params.k * s);
        for env in pair.envelopes() {
            let eta = env.eta(tq).unwrap_or(f64::NAN);
            // the mismatch is bounded by the tolerance on the envelope's own size
            let (low, top) = range(env, 0.0, pair.horizon);
            let scale = target.abs().max(1.0).max(low.abs()).max(top);
            if !((eta - target).abs() <= allowed * scale) {
                return Err(EpError::Envelope(format!(
                    "at q-zero t={tq}: envelope eta={eta}, -A/(ks)={target}"
                )));
            }
        }
    }
    Ok(())
}

/// The first two times in `[0, T)` at which A vanishes, i.e. `Γ(t) = κ`.
/// Empty when κ is absent or outside the Γ window.
pub fn a_zero_times(data: &CharData, geom: &OrbitGeometry, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(positive_bg_crossings(data, geom, params, Tolerances::CLASSIFY, 1.0)?
        .map(|(c, _)| c.iter().map(|x| x.t).collect())
        .unwrap_or_default())
}

fn positive_bg_crossings(
    data: &CharData,
    geom: &OrbitGeometry,
    params: &ModelParams,
    tol: Tolerances,
    periods: f64,
) -> Result<Option<(Vec<Crossing>, QsTrajectory)>> {
    if !(params.c > 0.0) {
        return Err(EpError::Domain("A-zero times within a period need c > 0".into()));
    }
    let a0 = data.a0.ok_or(EpError::ZeroDensity("A0"))?;
    let kp = match kappa(a0, params) {
        Some(kp) if kp > geom.gamma_min && kp < geom.gamma_max => kp,
        _ => return Ok(None),
    };
    let period = geom.period.ok_or_else(|| EpError::Domain("orbit has no period".into()))?;
    let level = data.s_tilde0 * kp.powf(params.nf());
    let state0 = QSState::new(data.q0, data.s_tilde0);
    let traj = integrate_qs_levels(state0, (0.0, periods * period * 1.02), params, tol, &[level])?;
    let mut hits = crossings(&traj);
    if level == data.s_tilde0 {
        // Γ(0) = κ: the start is itself an A-zero
        hits.insert(0, Crossing { t: 0.0, q: data.q0, s_tilde: data.s_tilde0 });
    }
    hits.truncate(2);
    if hits.len() < 2 || hits[1].t >= period * (1.0 + 1e-9) {
        return Err(EpError::Envelope(format!(
            "expected two A-zeros in one period T={period}, found {:?}",
            hits.iter().map(|c| c.t).collect::<Vec<_>>()
        )));
    }
    for cr in &hits {
        if cr.t > 0.0 {
            check_crossing(cr, kp, data, params)?;
        }
    }
    Ok(Some((hits, traj)))
}

/// Envelopes for c > 0, covering `[0, 2T]` so periodicity can be probed.
pub fn build_envelopes(data: &CharData, params: &ModelParams) -> Result<EnvelopePair> {
    build_envelopes_with(data, params, Tolerances::CLASSIFY)
}

pub fn build_envelopes_with(data: &CharData, params: &ModelParams, tol: Tolerances) -> Result<EnvelopePair> {
    params.validate()?;
    let geom = OrbitGeometry::new(QSState::from_s(data.q0, data.s0, params), params)?;
    build_envelopes_geom(data, &geom, params, tol)
}

pub(crate) fn build_envelopes_geom(
    data: &CharData,
    geom: &OrbitGeometry,
    params: &ModelParams,
    tol: Tolerances,
) -> Result<EnvelopePair> {
    if geom.degenerate {
        return Err(EpError::Envelope("orbit is the equilibrium point; no envelopes".into()));
    }
    let period = geom.period.ok_or_else(|| EpError::Domain("orbit has no period".into()))?;
    let (hits, traj) = positive_bg_crossings(data, geom, params, tol, 2.0)?
        .ok_or_else(|| EpError::Envelope("kappa outside the Gamma window; no envelopes".into()))?;
    let t_end = 2.0 * period;
    let cn = params.c_over_n();
    let mut envs = hits
        .iter()
        .map(|h| Envelope::pin(h.t, h.q, h.s_tilde - cn, t_end, data.s_tilde0, params, tol))
        .collect::<Result<Vec<_>>>()?;
    let second = envs.pop();
    let first = envs.pop().expect("two crossings");
    let pair = EnvelopePair {
        first,
        second,
        period: Some(period),
        horizon: t_end,
        q_zero_times: traj.q_zero_times.iter().cloned().filter(|&t| t <= t_end).collect(),
    };
    q_zero_check(&pair, data, params, period, tol)?;
    // positivity on [0, T] rests on the envelopes being T-periodic, which
    // fails off N = 4; it is reported through `floor` rather than enforced
    Ok(pair)
}

/// q = 0 apex `s_max` of a c = 0 orbit from its invariant:
/// `(R(N-2)/2k)^{N/(N-2)}`, and `e^{R/k}` when N = 2.
pub fn s_max_zero_bg(r: f64, params: &ModelParams) -> Result<f64> {
    let k = params.k;
    if params.n == 2 {
        return Ok((r / k).exp());
    }
    let nf = params.nf();
    if !(r > 0.0) {
        return Err(EpError::Domain(format!("invariant {r} admits no c = 0 orbit")));
    }
    Ok((r * (nf - 2.0) / (2.0 * k)).powf(nf / (nf - 2.0)))
}

/// Envelopes for c = 0: one when A changes sign once along the orbit, two when
/// `q0 < 0`, `A0 >= 0` and κ lies below `(s_max/s0)^{1/N}`.
pub fn build_envelopes_zero_bg(data: &CharData, params: &ModelParams) -> Result<EnvelopePair> {
    build_envelopes_zero_bg_with(data, params, Tolerances::CLASSIFY, &HorizonPolicy::default())
}

pub fn build_envelopes_zero_bg_with(
    data: &CharData,
    params: &ModelParams,
    tol: Tolerances,
    policy: &HorizonPolicy,
) -> Result<EnvelopePair> {
    params.validate()?;
    if params.c != 0.0 {
        return Err(EpError::Domain("zero-background envelopes need c = 0".into()));
    }
    if !(data.s0 > 0.0) {
        return Err(EpError::Domain(format!("c = 0 requires s0 > 0, got {}", data.s0)));
    }
    let a0 = data.a0.ok_or(EpError::ZeroDensity("A0"))?;
    if a0_lower_bound(params).is_some_and(|lb| a0 <= lb) {
        return Err(EpError::Envelope("A stays negative; no envelope exists".into()));
    }
    let kp = kappa(a0, params).expect("kappa exists above the lower bound");
    let inward = data.q0 < 0.0 && data.q0.abs() >= super::ZERO_VELOCITY;
    let expected = if a0 >= 0.0 {
        if !inward {
            return Err(EpError::Envelope("A stays nonnegative on an expanding orbit; no envelope".into()));
        }
        let r = trajectory_invariant(QSState::new(data.q0, data.s0), params)?;
        let gmax = (s_max_zero_bg(r, params)? / data.s0).powf(1.0 / params.nf());
        if kp >= gmax {
            return Err(EpError::Envelope("kappa beyond the apex of Gamma; no envelopes".into()));
        }
        2
    } else {
        1
    };
    let level = data.s0 * kp.powf(params.nf());
    let state0 = QSState::new(data.q0, data.s0);
    let mut horizon = policy.horizon(data, params);
    let (hits, traj) = loop {
        let traj = integrate_qs_levels(state0, (0.0, horizon), params, tol, &[level])?;
        let mut hits = crossings(&traj);
        if level == data.s0 {
            hits.insert(0, Crossing { t: 0.0, q: data.q0, s_tilde: data.s0 });
        }
        if a0 < 0.0 {
            // kappa < 1 is met only while Γ falls; a level that rounds to s0
            // must not pin at t = 0
            hits.retain(|h| h.q > 0.0);
        }
        if hits.len() >= expected {
            hits.truncate(expected);
            break (hits, traj);
        }
        let end = traj.solution.y_final();
        if expected == 1 && end[0] > 0.0 {
            // past any q-zero, and Γ decays only like 1/t: the pin is far
            // away, so reach it on the clock u = -ln Γ instead
            let (t_hat, q_hat, s_hat) = (traj.solution.t_final(), end[0], end[1]);
            let (eta, w, t_a) = late_pin(data, params, t_hat, q_hat, s_hat, pin_clock(a0, params), tol)?;
            if !eta.is_finite() {
                // the envelope outgrows every representable value before its pin
                let first = Envelope::unbounded(data.q0, t_a);
                let pair = EnvelopePair { first, second: None, period: None, horizon: t_hat, q_zero_times: vec![] };
                return Ok(pair);
            }
            let first = Envelope::through(t_hat, [q_hat, s_hat, eta, w], t_a, t_hat, data.s0, params, tol)?;
            let q_zero_times = traj.q_zero_times.clone();
            let pair = EnvelopePair { first, second: None, period: None, horizon: t_hat, q_zero_times };
            q_zero_check(&pair, data, params, t_hat, tol)?;
            let tq = pair.q_zero_times.first().copied().unwrap_or(0.0);
            positivity_check(&pair.first, tq, t_hat, "first", tol)?;
            return Ok(pair);
        }
        if horizon >= ZERO_BG_SEARCH_CAP {
            return Err(EpError::Envelope(format!(
                "found {} of {expected} A-zeros before t={horizon}",
                hits.len()
            )));
        }
        horizon = (horizon * 8.0).min(ZERO_BG_SEARCH_CAP);
    };
    for cr in hits.iter().filter(|c| c.t > 0.0) {
        check_crossing(cr, kp, data, params)?;
    }
    let last = hits.last().expect("at least one crossing").t;
    let t_end = policy.horizon(data, params).max(2.0 * last);
    let mut envs = hits
        .iter()
        .map(|h| Envelope::pin(h.t, h.q, h.s_tilde, t_end, data.s0, params, tol))
        .collect::<Result<Vec<_>>>()?;
    let second = if envs.len() == 2 { envs.pop() } else { None };
    let first = envs.pop().expect("one crossing");
    for env in std::iter::once(&first).chain(second.as_ref()) {
        // the pin is a strict minimum: η'' = kΓ^{N-1} > 0 there
        let y = env.state(env.t_a).expect("pin inside the span");
        let g = (y[1] / data.s0).powf((params.nf() - 1.0) / params.nf());
        if !(params.k * g > 0.0) {
            return Err(EpError::Envelope(format!("envelope pinned at {} is not a minimum", env.t_a)));
        }
    }
    let q_zero_times = traj.q_zero_times.iter().cloned().filter(|&t| t <= t_end).collect();
    let pair = EnvelopePair { first, second, period: None, horizon: t_end, q_zero_times };
    q_zero_check(&pair, data, params, t_end, tol)?;
    // the sign of A/q keeps an envelope nonnegative only on the side of the
    // q-zero where it is the lower one: η1 before it and η2 after it when
    // there are two, the single envelope after it on an inward orbit
    let tq = pair.q_zero_times.first().copied().unwrap_or(0.0);
    match &pair.second {
        Some(second) => {
            positivity_check(&pair.first, 0.0, tq, "first", tol)?;
            positivity_check(second, tq, t_end, "second", tol)?;
        }
        None => positivity_check(&pair.first, tq, t_end, "first", tol)?,
    }
    Ok(pair)
}

/// `-ln κ`, computed without forming κ, which underflows for very negative A0.
fn pin_clock(a0: f64, params: &ModelParams) -> f64 {
    if params.n == 2 {
        -a0 / params.k
    } else {
        let nm2 = params.nf() - 2.0;
        -(a0 * nm2 / params.k).ln_1p() / nm2
    }
}

/// `(η, η', t_A)` at `t_hat` of the envelope pinned where Γ reaches κ = e^{-u_a},
/// for c = 0 and q > 0 from `t_hat` on.
///
/// With `Q = q/Γ` and `H = ηΓ`, the first-order form reads
/// `dH/du = (Â + k s0 e^{(2-N)u} H)/Q² - H` in `u = -ln Γ`, where `Â = A/Γ` and
/// `Q²` follow in closed form from A and the invariant. Both stay of order one
/// however late the pin, so it is integrated backward from `H(u_a) = 0`.
fn late_pin(
    data: &CharData,
    params: &ModelParams,
    t_hat: f64,
    q_hat: f64,
    s_hat: f64,
    u_a: f64,
    tol: Tolerances,
) -> Result<(f64, f64, f64)> {
    let ModelParams { k, .. } = *params;
    let nf = params.nf();
    let (s0, a0) = (data.s0, data.a0.ok_or(EpError::ZeroDensity("A0"))?);
    let r = trajectory_invariant(QSState::new(data.q0, s0), params)?;
    let u_hat = (s0 / s_hat).ln() / nf;
    if !(u_a > u_hat) {
        return Err(EpError::Envelope(format!("A-zero at u={u_a} is not ahead of u={u_hat}")));
    }
    let a_hat = move |u: f64| {
        if params.n == 2 {
            a0 + k * u
        } else {
            let m = k / (nf - 2.0);
            (a0 + m) - m * (-(nf - 2.0) * u).exp()
        }
    };
    let q_sq = move |u: f64| {
        if params.n == 2 {
            s0 * (r - k * s0.ln() + 2.0 * k * u)
        } else {
            r * s0.powf(2.0 / nf) - 2.0 * k * s0 * ((2.0 - nf) * u).exp() / (nf - 2.0)
        }
    };
    // H itself grows like e^{u_a - u} going back, so carry G = H e^{u - u_a}
    let g_rhs = move |u: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = ((u - u_a).exp() * a_hat(u) + k * s0 * ((2.0 - nf) * u).exp() * y[0]) / q_sq(u);
    };
    let sol = integrate(&IvpProblem::new(g_rhs, u_a, vec![0.0], u_hat).tolerances(tol).sparse())?;
    if sol.termination != Termination::ReachedEnd {
        return Err(EpError::Integration(format!("late envelope stopped with {:?}", sol.termination)));
    }
    // η = H e^{u} = G e^{u_a}, which may exceed the floating-point range
    let eta = sol.y_final()[0] * u_a.exp();
    if !eta.is_finite() {
        return Ok((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY));
    }
    let a = a_hat(u_hat) * (-u_hat).exp();
    let w = (a + k * eta * s_hat) / q_hat;
    // ln t along the clock: d(ln t)/du = e^{u - ln t}/Q
    let l_rhs = move |u: f64, y: &[f64], dy: &mut [f64]| dy[0] = (u - y[0]).exp() / q_sq(u).sqrt();
    let sol = integrate(&IvpProblem::new(l_rhs, u_hat, vec![t_hat.ln()], u_a).tolerances(tol).sparse())?;
    Ok((eta, w, sol.y_final()[0].exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::qs::s_extrema;

    fn p(k: f64, c: f64, n: u32) -> ModelParams {
        ModelParams::new(k, c, n).unwrap()
    }

    /// Characteristic with the given `(q0, s0)`, `rho0` and `A0`.
    pub(crate) fn with_a0(q0: f64, s0: f64, rho0: f64, a0: f64, pr: &ModelParams) -> CharData {
        // A0 = (q0 p0 - k s0)/rho0
        let p0 = if q0 != 0.0 { (a0 * rho0 + pr.k * s0) / q0 } else { 0.0 };
        CharData::new(1.0, q0, s0, p0, rho0, pr).unwrap()
    }

    #[test]
    fn two_a_zeros_in_a_period() {
        let pr = p(1.0, 1.0, 4);
        let d = with_a0(0.1, -0.1, 1.0, 0.15, &pr);
        let geom = OrbitGeometry::new(QSState::from_s(0.1, -0.1, &pr), &pr).unwrap();
        let ts = a_zero_times(&d, &geom, &pr).unwrap();
        assert_eq!(ts.len(), 2);
        assert!(0.0 < ts[0] && ts[0] < ts[1] && ts[1] < geom.period.unwrap());
        let bad = with_a0(0.1, -0.1, 1.0, -0.6, &pr);
        assert!(a_zero_times(&bad, &geom, &pr).unwrap().is_empty());
    }

    #[test]
    fn envelope_periodicity_holds_only_for_n4() {
        let pr = p(1.0, 1.0, 4);
        let v = build_envelopes(&with_a0(0.1, -0.1, 1.0, 0.15, &pr), &pr).unwrap().values();
        assert!(v.periodicity_defect.unwrap() < 1e-6);
        assert!(v.floor.unwrap() > -1e-9);
        // for N = 2 the period depends on the orbit, the η equation picks up
        // a secular drift and the first envelope crosses zero before T
        let pr = p(1.0, 1.0, 2);
        let d = CharData::new(1.0, 1.710659520461972, 0.8509819114195163, -0.21514434444459063, 35.122136751540545, &pr)
            .unwrap();
        let v = build_envelopes(&d, &pr).unwrap().values();
        assert!(v.periodicity_defect.unwrap() > 0.1, "{v:?}");
        assert!(v.floor.unwrap() < -0.1, "{v:?}");
    }

    #[test]
    fn late_pin_matches_direct_pin() {
        let pr = p(1.0, 0.0, 2);
        // inward orbit whose A-zero comes at t ≈ 598, past the default horizon
        let d = CharData::new(1.0, -2.7799259976904667, 0.579132504565123, 2.469736226840629, 0.9589183515355135, &pr)
            .unwrap();
        let late = build_envelopes_zero_bg(&d, &pr).unwrap();
        let long = HorizonPolicy { min_time: 1e4, ..HorizonPolicy::default() };
        let direct = build_envelopes_zero_bg_with(&d, &pr, Tolerances::CLASSIFY, &long).unwrap();
        assert!(late.horizon < direct.first.t_a);
        assert_relative_eq!(late.first.eta_at_0, direct.first.eta_at_0, max_relative = 1e-6);
        assert_relative_eq!(late.first.t_a, direct.first.t_a, max_relative = 1e-6);
        // inward and so late that η1 overflows: η1(0) = -∞ leaves nothing global
        let d = CharData::new(1.0, -2.387082510603168, 0.7651533719616626, 3.0131642861719836, 0.010104863251189977, &pr)
            .unwrap();
        assert_eq!(build_envelopes_zero_bg(&d, &pr).unwrap().first.eta_at_0, f64::NEG_INFINITY);
    }

    #[test]
    fn positive_background_envelopes() {
        let pr = p(1.0, 1.0, 4);
        let d = with_a0(0.1, -0.1, 1.0, 0.15, &pr);
        let env = build_envelopes(&d, &pr).unwrap();
        let v = env.values();
        let e2 = v.eta2_0.unwrap();
        assert!(v.eta1_0 > 0.0 && e2 > 0.0);
        assert!((v.eta1_0 - e2).abs() > 1e-3);
        let t = env.period.unwrap();
        for e in env.envelopes() {
            assert!(e.eta(e.t_a).unwrap().abs() < 1e-12);
            for i in 0..10 {
                let x = t * (i as f64 + 0.5) / 10.0;
                assert!((e.eta(x + t).unwrap() - e.eta(x).unwrap()).abs() < 1e-6);
            }
        }
        assert!(env.q_zero_times.iter().filter(|&&x| x <= t).count() >= 2);
    }

    #[test]
    fn envelope_at_start_when_a0_vanishes() {
        let pr = p(1.0, 1.0, 3);
        let d = with_a0(0.2, 0.1, 1.0, 0.0, &pr);
        let env = build_envelopes(&d, &pr).unwrap();
        assert_eq!(env.t_a1(), 0.0);
        assert_eq!(env.values().eta1_0, 0.0);
    }

    #[test]
    fn zero_background_apex() {
        let pr = p(1.0, 0.0, 4);
        let r = trajectory_invariant(QSState::new(0.0, 1.0), &pr).unwrap();
        assert_relative_eq!(s_max_zero_bg(r, &pr).unwrap(), 1.0, epsilon = 1e-14);
        let r = trajectory_invariant(QSState::new(-5.0, 1.0), &pr).unwrap();
        assert_relative_eq!(r, 26.0, epsilon = 1e-13);
        let top = s_max_zero_bg(r, &pr).unwrap();
        assert_relative_eq!(top, 676.0, max_relative = 1e-13);
        assert_relative_eq!(s_extrema(r, &pr).unwrap().1, top, max_relative = 1e-12);
        let p2 = p(1.0, 0.0, 2);
        let r2 = trajectory_invariant(QSState::new(1.0, 1.0), &p2).unwrap();
        assert_relative_eq!(s_max_zero_bg(r2, &p2).unwrap(), std::f64::consts::E, epsilon = 1e-14);
    }

    #[test]
    fn zero_background_single_envelope() {
        let pr = p(1.0, 0.0, 4);
        let d = with_a0(0.1, 1.0, 1.0, -0.4, &pr);
        let env = build_envelopes_zero_bg(&d, &pr).unwrap();
        assert!(env.second.is_none());
        let e = &env.first;
        assert!(e.t_a > 0.0);
        assert!(e.eta(e.t_a).unwrap().abs() < 1e-12 && e.deta(e.t_a).unwrap().abs() < 1e-12);
        assert!(e.eta_at_0 > 0.0);
        let y = e.state(e.t_a).unwrap();
        let kp = kappa(-0.4, &pr).unwrap();
        assert!((y[1] - kp.powi(4)).abs() <= 1e-9);
    }

    #[test]
    fn zero_background_two_envelopes() {
        let pr = p(1.0, 0.0, 4);
        let d = with_a0(-5.0, 1.0, 1.0, 1.0, &pr);
        let env = build_envelopes_zero_bg(&d, &pr).unwrap();
        let (lo, hi) = env.eta_window().unwrap();
        assert!(0.0 < lo && lo < hi);
        assert_eq!(env.q_zero_times.len(), 1);
        let tq = env.q_zero_times[0];
        assert!(env.t_a1() < tq && tq < env.t_a2().unwrap());
    }

    #[test]
    fn zero_background_no_envelope_cases() {
        let pr = p(1.0, 0.0, 4);
        assert!(build_envelopes_zero_bg(&with_a0(0.5, 1.0, 1.0, 0.3, &pr), &pr).is_err());
        assert!(build_envelopes_zero_bg(&with_a0(0.5, 1.0, 1.0, -0.6, &pr), &pr).is_err());
        // q0 = -0.1, s0 = 1: kappa large compared with the apex
        assert!(build_envelopes_zero_bg(&with_a0(-0.1, 1.0, 1.0, 50.0, &pr), &pr).is_err());
    }

    #[test]
    fn tiny_negative_a0_pins_after_the_turn() {
        let pr = p(1.0, 0.0, 2);
        let near = |a0| build_envelopes_zero_bg(&with_a0(-0.797, 0.42, 1.16, a0, &pr), &pr).unwrap().first;
        // kappa = exp(A0/k) rounds to 1 here, but A0 < 0 is never zero at t = 0
        let (tiny, small) = (near(-4.8e-17), near(-1e-8));
        assert!(tiny.t_a > 1.0);
        assert_relative_eq!(tiny.eta_at_0, small.eta_at_0, max_relative = 1e-6);
    }
}
