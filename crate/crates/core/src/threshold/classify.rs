//! Per-characteristic classification for c > 0 and c = 0.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::envelopes::{build_envelopes_geom, build_envelopes_zero_bg_with, s_max_zero_bg, EnvelopeValues};
use super::{a0_lower_bound, kappa, kappa_window_margin, HorizonPolicy, MarginPolicy, ZERO_VELOCITY};
use crate::error::{EpError, Result};
use crate::model::{CharData, Classification, ModelParams, Reason, Verdict};
use crate::ode::characteristic::{eta_w_rhs, solve_characteristic};
use crate::ode::{integrate, Direction, Event, IvpProblem, Tolerances};
use crate::qs::{trajectory_invariant, OrbitGeometry, QSState};

/// Supporting quantities behind a classification.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub kappa: Option<f64>,
    pub gamma_window: Option<[f64; 2]>,
    pub envelopes: Option<EnvelopeValues>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub classification: Classification,
    pub evidence: Evidence,
}

/// One line of a classification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub beta: f64,
    pub q0: f64,
    pub s0: f64,
    pub p0: f64,
    pub rho0: f64,
    #[serde(rename = "A0")]
    pub a0: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma_window: Option<[f64; 2]>,
    pub envelopes: Option<EnvelopeValues>,
    pub verdict: Verdict,
    pub reason: Reason,
    pub tc_estimate: Option<f64>,
    pub margin: f64,
}

impl ClassificationReport {
    pub fn new(data: &CharData, a: &Assessment) -> Self {
        let c = a.classification;
        Self {
            beta: data.beta,
            q0: data.q0,
            s0: data.s0,
            p0: data.p0,
            rho0: data.rho0,
            a0: data.a0,
            kappa: a.evidence.kappa,
            gamma_window: a.evidence.gamma_window,
            envelopes: a.evidence.envelopes,
            verdict: c.verdict,
            reason: c.reason,
            tc_estimate: c.tc_estimate,
            margin: c.margin,
        }
    }
}

/// Classifier settings shared across many characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classifier {
    pub params: ModelParams,
    pub tol: Tolerances,
    pub margin: MarginPolicy,
    pub horizon: HorizonPolicy,
    /// Integrate to the first zero of η for breakdown verdicts.
    pub estimate_tc: bool,
}

impl Classifier {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            tol: Tolerances::CLASSIFY,
            margin: MarginPolicy::default(),
            horizon: HorizonPolicy::default(),
            estimate_tc: true,
        }
    }

    pub fn with_margin(mut self, margin: MarginPolicy) -> Self {
        self.margin = margin;
        self
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn without_tc(mut self) -> Self {
        self.estimate_tc = false;
        self
    }

    pub fn classify(&self, data: &CharData) -> Result<Classification> {
        self.assess(data).map(|a| a.classification)
    }

    pub fn assess(&self, data: &CharData) -> Result<Assessment> {
        self.params.validate()?;
        if self.params.zero_background() {
            self.assess_zero_background(data)
        } else {
            self.assess_positive_background(data)
        }
    }

    fn outcome(&self, verdict: Verdict, reason: Reason, margin: f64, tc: impl FnOnce() -> Option<f64>) -> Classification {
        let tc_estimate = if verdict == Verdict::Breakdown && self.estimate_tc { tc() } else { None };
        Classification { verdict, reason, tc_estimate, margin }
    }

    /// Verdict for an open window `(lo, hi)`: inside is Global, outside
    /// Breakdown, and within the band of either end Marginal.
    fn window(&self, x: f64, lo: f64, hi: f64, scale: f64) -> (Verdict, Reason, f64) {
        let margin = (x - lo).abs().min((x - hi).abs()) / scale;
        let inside = lo < x && x < hi;
        let reason = if inside { Reason::EnvelopeContainment } else { Reason::EnvelopeViolation };
        let verdict = if margin < self.margin.relative {
            Verdict::Marginal
        } else if inside {
            Verdict::Global
        } else {
            Verdict::Breakdown
        };
        (verdict, reason, margin)
    }

    /// Verdict for a one-sided inequality `x > b` (or `x < b` when `above` is false).
    fn one_sided(&self, x: f64, b: f64, above: bool, scale: f64) -> (Verdict, Reason, f64) {
        let margin = if b.is_finite() { (x - b).abs() / scale } else { 1.0 };
        let holds = if above { x > b } else { x < b };
        let reason = if holds { Reason::EnvelopeContainment } else { Reason::EnvelopeViolation };
        let verdict = if margin < self.margin.relative {
            Verdict::Marginal
        } else if holds {
            Verdict::Global
        } else {
            Verdict::Breakdown
        };
        (verdict, reason, margin)
    }

    fn zero_density_tc(&self, data: &CharData, horizon: f64) -> Option<f64> {
        solve_characteristic(data, &self.params, horizon, self.tol).ok()?.blowup_time()
    }

    /// First zero of η along the characteristic, searched up to `horizon`.
    pub fn first_eta_zero(&self, data: &CharData, horizon: f64) -> Result<Option<f64>> {
        let (eta0, w0) = match (data.eta0, data.w0) {
            (Some(e), Some(w)) => (e, w),
            _ => return Err(EpError::ZeroDensity("eta0/w0")),
        };
        let y0 = vec![data.q0, data.s0, eta0, w0];
        let problem = IvpProblem::new(eta_w_rhs(self.params, data.s_tilde0), 0.0, y0, horizon)
            .tolerances(self.tol)
            .monitor(vec![2, 3])
            .sparse()
            .event(Event::new(|_t, y: &[f64]| y[2], Direction::Falling, true));
        let sol = integrate(&problem)?;
        let t = sol.events_of(0).next().map(|e| e.t);
        Ok(t)
    }

    fn assess_positive_background(&self, data: &CharData) -> Result<Assessment> {
        let pr = &self.params;
        if data.zero_density() {
            // with rho = 0, p' = -p^2 - k(N-1)s - kc stays below a Riccati bound
            let horizon = 2.0 * PI / (pr.k * pr.c / pr.nf()).sqrt();
            let c = self.outcome(Verdict::Breakdown, Reason::ZeroDensity, 1.0, || self.zero_density_tc(data, horizon));
            return Ok(Assessment { classification: c, evidence: Evidence::default() });
        }
        let (eta0, w0) = (data.eta0.expect("rho0 > 0"), data.w0.expect("rho0 > 0"));
        let a0 = data.a0.expect("rho0 > 0");
        let kp = kappa(a0, pr);
        let geom = OrbitGeometry::new(QSState::from_s(data.q0, data.s0, pr), pr)?;
        if data.is_equilibrium() || geom.degenerate {
            return Ok(Assessment {
                classification: self.equilibrium(eta0, w0),
                evidence: Evidence { kappa: kp, gamma_window: Some([1.0, 1.0]), envelopes: None },
            });
        }
        let period = geom.period.expect("c > 0 orbits are periodic");
        let tc = || self.first_eta_zero(data, 3.0 * period).ok().flatten();
        let mut evidence = Evidence { kappa: kp, gamma_window: Some([geom.gamma_min, geom.gamma_max]), envelopes: None };
        let Some(kp) = kp else {
            let margin = (1.0 + a0 * (pr.nf() - 2.0) / pr.k).abs();
            let c = self.outcome(Verdict::Breakdown, Reason::AZeroSignCondition, margin, tc);
            return Ok(Assessment { classification: c, evidence });
        };
        let kmargin = kappa_window_margin(kp, geom.gamma_min, geom.gamma_max);
        if kp <= geom.gamma_min || kp >= geom.gamma_max {
            let c = self.outcome(Verdict::Breakdown, Reason::KappaOutsideWindow, kmargin, tc);
            return Ok(Assessment { classification: c, evidence });
        }
        let env = match build_envelopes_geom(data, &geom, pr, self.tol) {
            Ok(env) => env,
            Err(EpError::Envelope(_)) if kmargin < 1e3 * self.margin.relative.max(1e-9) => {
                // κ grazes an end of the window: the envelopes merge at a q-zero
                let c = Classification { verdict: Verdict::Marginal, reason: Reason::KappaOutsideWindow, tc_estimate: None, margin: kmargin };
                return Ok(Assessment { classification: c, evidence });
            }
            Err(e) => return Err(e),
        };
        evidence.envelopes = Some(env.values());
        let (verdict, reason, margin) = if data.q0.abs() < ZERO_VELOCITY {
            let (lo, hi) = env.deta_window().expect("two envelopes");
            let scale = lo.abs().max(hi.abs()).max(eta0 * (pr.k * pr.c).sqrt());
            self.window(w0, lo, hi, scale)
        } else {
            let (lo, hi) = env.eta_window().expect("two envelopes");
            self.window(eta0, lo, hi, hi)
        };
        let c = self.outcome(verdict, reason, margin, tc);
        Ok(Assessment { classification: c, evidence })
    }

    /// `(q0, s0) = (0, 0)`: η solves `η'' + kcη = k`, so
    /// η = 1/c + (η0 - 1/c) cos(ωt) + (w0/ω) sin(ωt) with ω = sqrt(kc).
    fn equilibrium(&self, eta0: f64, w0: f64) -> Classification {
        let ModelParams { k, c, .. } = self.params;
        let margin = equilibrium_margin(eta0, w0, k, c);
        let global = (eta0 - 1.0 / c).powi(2) + w0 * w0 / (k * c) < 1.0 / (c * c);
        let verdict = if margin < self.margin.relative {
            Verdict::Marginal
        } else if global {
            Verdict::Global
        } else {
            Verdict::Breakdown
        };
        self.outcome(verdict, Reason::Equilibrium, margin, || equilibrium_tc(eta0, w0, k, c))
    }

    fn assess_zero_background(&self, data: &CharData) -> Result<Assessment> {
        let pr = &self.params;
        let k = pr.k;
        if !(data.s0 > 0.0) {
            return Err(EpError::Domain(format!("c = 0 requires s0 > 0, got {}", data.s0)));
        }
        let horizon = self.horizon.horizon(data, pr);
        if data.zero_density() {
            return Ok(Assessment { classification: self.zero_density_zero_bg(data, horizon), evidence: Evidence::default() });
        }
        let (eta0, w0) = (data.eta0.expect("rho0 > 0"), data.w0.expect("rho0 > 0"));
        let a0 = data.a0.expect("rho0 > 0");
        let kp = kappa(a0, pr);
        let r = trajectory_invariant(QSState::new(data.q0, data.s0), pr)?;
        let gmax = (s_max_zero_bg(r, pr)? / data.s0).powf(1.0 / pr.nf());
        let inward = data.q0 < 0.0 && data.q0.abs() >= ZERO_VELOCITY;
        let window = if inward { Some([0.0, gmax]) } else { Some([0.0, 1.0]) };
        let mut evidence = Evidence { kappa: kp, gamma_window: window, envelopes: None };
        let tc_horizon = |t_a: f64| horizon.max(2.0 * t_a).min(self.horizon.cap.max(horizon));
        if let Some(lb) = a0_lower_bound(pr) {
            let margin = (a0 - lb).abs() / lb.abs();
            if a0 <= lb {
                // strict inequality: A < 0 throughout; equality: Riccati growth of the density
                let c = self.outcome(Verdict::Breakdown, Reason::AZeroSignCondition, margin, || {
                    self.first_eta_zero(data, tc_horizon(0.0)).ok().flatten()
                });
                return Ok(Assessment { classification: c, evidence });
            }
            if margin < self.margin.relative {
                let c = Classification { verdict: Verdict::Marginal, reason: Reason::AZeroSignCondition, tc_estimate: None, margin };
                return Ok(Assessment { classification: c, evidence });
            }
        }
        let kp = kp.expect("kappa exists above the lower bound");
        if !inward && a0 >= 0.0 && data.q0.abs() >= ZERO_VELOCITY {
            let c = Classification { verdict: Verdict::Global, reason: Reason::NonnegativeA, tc_estimate: None, margin: 1.0 };
            return Ok(Assessment { classification: c, evidence });
        }
        if inward && a0 >= 0.0 && kp >= gmax {
            let margin = (kp - gmax).abs() / gmax;
            let c = self.outcome(Verdict::Breakdown, Reason::KappaOutsideWindow, margin, || {
                self.first_eta_zero(data, tc_horizon(0.0)).ok().flatten()
            });
            return Ok(Assessment { classification: c, evidence });
        }
        let env = build_envelopes_zero_bg_with(data, pr, self.tol, &self.horizon)?;
        evidence.envelopes = Some(env.values());
        let e1 = &env.first;
        let (verdict, reason, margin) = if data.q0.abs() < ZERO_VELOCITY {
            let scale = e1.deta_at_0.abs().max(eta0 * (k * data.s0).sqrt());
            self.one_sided(w0, e1.deta_at_0, true, scale)
        } else if !inward {
            self.one_sided(eta0, e1.eta_at_0, true, e1.eta_at_0)
        } else if a0 >= 0.0 {
            // ordered: the envelope pinned after the q-zero can start below
            // the first one, and then nothing is global
            let e2 = env.second.as_ref().expect("two envelopes").eta_at_0;
            let e1 = e1.eta_at_0;
            self.window(eta0, e1, e2, e1.abs().max(e2.abs()))
        } else {
            // η1(0) may be negative here, which leaves no global η0
            self.one_sided(eta0, e1.eta_at_0, false, e1.eta_at_0.abs().max(eta0))
        };
        let t_last = env.t_a2().unwrap_or(env.t_a1());
        let c = self.outcome(verdict, reason, margin, || self.first_eta_zero(data, tc_horizon(t_last)).ok().flatten());
        Ok(Assessment { classification: c, evidence })
    }

    /// ρ0 = 0 with c = 0: p stays bounded iff `q0 > 0` and `p0 >= k s0/q0`.
    fn zero_density_zero_bg(&self, data: &CharData, horizon: f64) -> Classification {
        let k = self.params.k;
        let tc = || self.zero_density_tc(data, horizon);
        if !(data.q0 > 0.0) || data.q0.abs() < ZERO_VELOCITY {
            return self.outcome(Verdict::Breakdown, Reason::ZeroDensity, 1.0, tc);
        }
        let b = k * data.s0 / data.q0;
        let margin = (data.p0 - b).abs() / b;
        if data.p0 >= b {
            // the boundary itself is attained by bounded solutions
            Classification { verdict: Verdict::Global, reason: Reason::RhoZeroGlobalBranch, tc_estimate: None, margin }
        } else if margin < self.margin.relative {
            Classification { verdict: Verdict::Marginal, reason: Reason::ZeroDensity, tc_estimate: None, margin }
        } else {
            self.outcome(Verdict::Breakdown, Reason::ZeroDensity, margin, tc)
        }
    }
}

/// Relative distance of `(η0, w0)` from the ellipse `(η0 - 1/c)^2 + w0^2/(kc) = 1/c^2`.
pub fn equilibrium_margin(eta0: f64, w0: f64, k: f64, c: f64) -> f64 {
    let lhs = (eta0 - 1.0 / c).powi(2) + w0 * w0 / (k * c);
    (1.0 - c * c * lhs).abs()
}

/// First zero of the harmonic η about the equilibrium, if it reaches zero.
fn equilibrium_tc(eta0: f64, w0: f64, k: f64, c: f64) -> Option<f64> {
    let om = (k * c).sqrt();
    let (a, b) = (eta0 - 1.0 / c, w0 / om);
    let amp = a.hypot(b);
    if amp * c < 1.0 {
        return None;
    }
    // η = 1/c + amp cos(ωt - φ)
    let phi = b.atan2(a);
    let th = (-1.0 / (c * amp)).acos();
    let tau = 2.0 * PI;
    let first = [phi - th, phi + th]
        .iter()
        .map(|x| x.rem_euclid(tau))
        .filter(|&x| x > 0.0)
        .fold(tau, f64::min);
    Some(first / om)
}

/// Classifies with default tolerances and horizon (c > 0).
pub fn classify_positive_background(data: &CharData, params: &ModelParams, margin: MarginPolicy) -> Result<Classification> {
    if params.zero_background() {
        return Err(EpError::Domain("positive-background classifier needs c > 0".into()));
    }
    Classifier::new(*params).with_margin(margin).classify(data)
}

/// Classifies with default tolerances and horizon (c = 0).
pub fn classify_zero_background(data: &CharData, params: &ModelParams, margin: MarginPolicy) -> Result<Classification> {
    if !params.zero_background() {
        return Err(EpError::Domain("zero-background classifier needs c = 0".into()));
    }
    Classifier::new(*params).with_margin(margin).classify(data)
}

/// Dispatches on the background.
pub fn classify(data: &CharData, params: &ModelParams, margin: MarginPolicy) -> Result<Classification> {
    Classifier::new(*params).with_margin(margin).classify(data)
}
