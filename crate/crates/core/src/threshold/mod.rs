//! The decision kernel: the A (and N = 2 B) quantity, its root κ, the
//! sufficient blow-up tests, the η₁/η₂ envelopes and the classifiers.

mod classify;
mod envelopes;

pub use classify::{
    classify, classify_positive_background, classify_zero_background, equilibrium_margin, Assessment,
    ClassificationReport, Classifier, Evidence,
};
pub use envelopes::{
    a_zero_times, build_envelopes, build_envelopes_with, build_envelopes_zero_bg, build_envelopes_zero_bg_with,
    s_max_zero_bg, Envelope, EnvelopePair, EnvelopeSample, EnvelopeValues,
};

use serde::{Deserialize, Serialize};

use crate::error::{EpError, Result};
use crate::model::{CharData, ModelParams};
use crate::ode::characteristic::gamma_pow;
use crate::qs::OrbitGeometry;

/// Velocities below this magnitude are treated as `q0 = 0`, which switches
/// the envelope comparison from `eta0` to `w0`.
pub const ZERO_VELOCITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// N = 2, where the closed form is `B(Γ) = (A0 - k ln Γ) Γ`.
    N2,
    N3Plus,
}

/// `A0` together with the positive root of its closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AQuantity {
    pub a0: f64,
    pub kappa: Option<f64>,
    pub branch: Branch,
}

impl AQuantity {
    pub fn new(a0: f64, params: &ModelParams) -> Self {
        let branch = if params.n == 2 { Branch::N2 } else { Branch::N3Plus };
        Self { a0, kappa: kappa(a0, params), branch }
    }

    pub fn at(&self, gamma: f64, params: &ModelParams) -> Result<f64> {
        a_of_gamma(gamma, self.a0, params)
    }
}

/// `A(Γ) = (A0 + k/(N-2)) Γ - k/(N-2) Γ^{N-1}` for N ≥ 3, `(A0 - k ln Γ) Γ` for N = 2.
pub fn a_of_gamma(gamma: f64, a0: f64, params: &ModelParams) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(EpError::Domain(format!("Gamma must be positive, got {gamma}")));
    }
    let k = params.k;
    Ok(if params.n == 2 {
        (a0 - k * gamma.ln()) * gamma
    } else {
        let m = k / (params.nf() - 2.0);
        (a0 + m) * gamma - m * gamma.powi(params.n as i32 - 1)
    })
}

/// Positive root of the closed-form A; absent for N ≥ 3 when `1 + A0(N-2)/k <= 0`.
pub fn kappa(a0: f64, params: &ModelParams) -> Option<f64> {
    let k = params.k;
    if params.n == 2 {
        return Some((a0 / k).exp());
    }
    let nm2 = params.nf() - 2.0;
    let base = 1.0 + a0 * nm2 / k;
    if base > 0.0 {
        Some(base.powf(1.0 / nm2))
    } else {
        None
    }
}

/// The value `-k/(N-2)` below which A stays negative for all time (N ≥ 3).
pub fn a0_lower_bound(params: &ModelParams) -> Option<f64> {
    if params.n == 2 {
        None
    } else {
        Some(-params.k / (params.nf() - 2.0))
    }
}

/// Whether breakdown is certain from `(q0, s0, A0)` alone: κ is absent or lies
/// outside the open window `(gamma_min, gamma_max)` swept by Γ along the orbit.
///
/// Zero density always breaks down and returns `true`.
pub fn blowup_sufficient(data: &CharData, geom: &OrbitGeometry, params: &ModelParams) -> bool {
    let Some(a0) = data.a0 else {
        return true;
    };
    match kappa(a0, params) {
        None => true,
        Some(kp) => kp <= geom.gamma_min || kp >= geom.gamma_max,
    }
}

/// Relative distance of κ to the nearer end of the Γ window.
pub fn kappa_window_margin(kp: f64, gamma_min: f64, gamma_max: f64) -> f64 {
    let lo = if gamma_min > 0.0 { (kp - gamma_min).abs() / gamma_min } else { f64::INFINITY };
    let hi = (kp - gamma_max).abs() / gamma_max;
    lo.min(hi)
}

/// `(q, s~, A)` with `A' = -q A + k q Γ^{N-1}`, for checking the closed form.
pub fn a_evolution_rhs(params: ModelParams, s_tilde0: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
    let ModelParams { k, c, .. } = params;
    let nf = params.nf();
    move |_t, y, dy| {
        let (q, st, a) = (y[0], y[1], y[2]);
        dy[0] = k * st - k * c / nf - q * q;
        dy[1] = -nf * q * st;
        dy[2] = -q * a + k * q * gamma_pow(st, s_tilde0, nf);
    }
}

/// Relative width of the band around a deciding inequality inside which the
/// verdict is `Marginal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginPolicy {
    pub relative: f64,
}

impl Default for MarginPolicy {
    fn default() -> Self {
        Self { relative: 1e-6 }
    }
}

impl MarginPolicy {
    pub fn new(relative: f64) -> Result<Self> {
        if !(relative >= 0.0) || !relative.is_finite() {
            return Err(EpError::Config(format!("margin must be a nonnegative number, got {relative}")));
        }
        Ok(Self { relative })
    }
}

/// Integration horizon for c = 0, where orbits decay instead of repeating:
/// `max(min_time, decay_multiple * tau)` with `tau = 1/sqrt(q0^2 + k s0)`,
/// stretched to cover the A-zero times and capped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonPolicy {
    pub min_time: f64,
    pub decay_multiple: f64,
    pub cap: f64,
}

impl Default for HorizonPolicy {
    fn default() -> Self {
        Self { min_time: 200.0, decay_multiple: 50.0, cap: 1e6 }
    }
}

impl HorizonPolicy {
    pub fn decay_scale(&self, data: &CharData, params: &ModelParams) -> f64 {
        1.0 / (data.q0 * data.q0 + params.k * data.s0.max(0.0)).sqrt()
    }

    pub fn horizon(&self, data: &CharData, params: &ModelParams) -> f64 {
        self.min_time.max(self.decay_multiple * self.decay_scale(data, params)).min(self.cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qs::QSState;
    use approx::assert_relative_eq;

    fn p(k: f64, c: f64, n: u32) -> ModelParams {
        ModelParams::new(k, c, n).unwrap()
    }

    #[test]
    fn a_of_gamma_examples() {
        let pr = p(1.0, 1.0, 4);
        assert_eq!(a_of_gamma(1.0, 0.37, &pr).unwrap(), 0.37);
        assert_eq!(a_of_gamma(1.0, -0.2, &p(1.0, 1.0, 2)).unwrap(), -0.2);
        assert_relative_eq!(a_of_gamma(1.2, 0.15, &pr).unwrap(), -0.084, epsilon = 1e-14);
        assert!(a_of_gamma(0.0, 0.1, &pr).is_err());
    }

    #[test]
    fn kappa_examples() {
        for n in [2, 3, 4, 6] {
            assert_relative_eq!(kappa(0.0, &p(1.0, 1.0, n)).unwrap(), 1.0, epsilon = 1e-15);
        }
        let pr = p(1.0, 1.0, 4);
        let kp = kappa(0.15, &pr).unwrap();
        assert_relative_eq!(kp, 1.3f64.sqrt(), epsilon = 1e-15);
        assert!((kp - 1.14018).abs() < 1e-5);
        assert!(kappa(-0.6, &pr).is_none());
        // equality 1 + A0(N-2)/k = 0 gives kappa = 0, reported as absent
        assert!(kappa(-0.5, &pr).is_none());
        assert_relative_eq!(kappa(-2.0, &p(2.0, 1.0, 2)).unwrap(), (-1.0f64).exp());
    }

    #[test]
    fn kappa_is_a_root() {
        for (n, a0) in [(2, -0.7), (2, 0.4), (3, 0.3), (4, -0.2), (6, 1.5)] {
            let pr = p(1.3, 0.5, n);
            let kp = kappa(a0, &pr).unwrap();
            assert!(a_of_gamma(kp, a0, &pr).unwrap().abs() < 1e-12);
            assert!(a_of_gamma(0.5 * kp, a0, &pr).unwrap() > 0.0);
            assert!(a_of_gamma(1.5 * kp, a0, &pr).unwrap() < 0.0);
        }
    }

    #[test]
    fn blowup_sufficient_examples() {
        let pr = p(1.0, 1.0, 4);
        let base = CharData::new(1.0, 0.1, -0.1, 0.0, 1.0, &pr).unwrap();
        let geom = OrbitGeometry::new(QSState::from_s(0.1, -0.1, &pr), &pr).unwrap();
        // A0 = q0 p0 - k s0 with rho0 = 1; p0 chosen so that A0 hits the target
        let with_a0 = |a0: f64| CharData::new(1.0, 0.1, -0.1, (a0 - 0.1) / 0.1, 1.0, &pr).unwrap();
        assert!(blowup_sufficient(&with_a0(-0.6), &geom, &pr));
        let d = with_a0(0.15);
        assert_relative_eq!(d.a0.unwrap(), 0.15, epsilon = 1e-12);
        assert!(!blowup_sufficient(&d, &geom, &pr));
        assert!(geom.gamma_min < 1.14018 && 1.14018 < geom.gamma_max);
        assert!(blowup_sufficient(&base.with_rho0(0.0, &pr).unwrap(), &geom, &pr));
    }

    #[test]
    fn horizon_policy() {
        let pr = p(1.0, 0.0, 3);
        let d = CharData::new(1.0, 0.0, 1e-6, 0.0, 1.0, &pr).unwrap();
        let h = HorizonPolicy::default();
        assert_eq!(h.horizon(&d, &pr), 50.0 * 1e3);
        let d = CharData::new(1.0, 3.0, 1.0, 0.0, 1.0, &pr).unwrap();
        assert_eq!(h.horizon(&d, &pr), 200.0);
    }
}
