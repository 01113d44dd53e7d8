//! Threshold sharpness for c > 0: data just inside and just outside the
//! envelope window on base points whose A-zero lies in the Γ window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::invariants::draw_window_point;
use super::sweep::{agreement_on, AgreementReport, SweepSettings};
use crate::error::{EpError, Result};
use crate::model::{CharData, ModelParams};
use crate::threshold::build_envelopes_with;

/// Where `eta0` sits relative to the envelope window `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    Midpoint,
    /// `1.05 max`.
    AboveMax,
    /// `0.95 min`.
    BelowMin,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::Midpoint, Placement::AboveMax, Placement::BelowMin];

    fn eta0(self, lo: f64, hi: f64) -> f64 {
        match self {
            Placement::Midpoint => 0.5 * (lo + hi),
            Placement::AboveMax => 1.05 * hi,
            Placement::BelowMin => 0.95 * lo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub base_points: usize,
    /// Per placement, in `Placement::ALL` order.
    pub placements: Vec<(Placement, AgreementReport)>,
}

impl SharpnessReport {
    pub fn agree(&self) -> usize {
        self.placements.iter().map(|(_, r)| r.agree).sum()
    }

    pub fn decided(&self) -> usize {
        self.placements.iter().map(|(_, r)| r.agree + r.disagree.len()).sum()
    }

    pub fn agreement_rate(&self) -> f64 {
        let d = self.decided();
        if d == 0 {
            1.0
        } else {
            self.agree() as f64 / d as f64
        }
    }
}

/// `n` base points, each re-placed at the three `eta0` positions with `A0`
/// and `(q0, s0)` held fixed. Placements with `eta0 <= 0` are skipped.
pub fn sharpness_points(params: &ModelParams, seed: u64, n: usize) -> Result<Vec<(Placement, CharData)>> {
    if params.zero_background() {
        return Err(EpError::InvalidParams("threshold sharpness needs c > 0".into()));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(11);
    let mut out = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let base = draw_window_point(&mut r, params)?;
        let pair = build_envelopes_with(&base, params, crate::ode::Tolerances::CLASSIFY)?;
        let (lo, hi) = pair
            .eta_window()
            .ok_or_else(|| EpError::Domain("window point without an envelope window".into()))?;
        let a0 = base.a0.expect("window points have rho0 > 0");
        for pl in Placement::ALL {
            let eta0 = pl.eta0(lo, hi);
            if !(eta0 > 0.0) {
                continue;
            }
            let w0 = (a0 + params.k * eta0 * base.s0) / base.q0;
            out.push((pl, base.with_eta_w(eta0, w0, params)?));
        }
    }
    Ok(out)
}

/// Classifier against oracle on [`sharpness_points`].
pub fn threshold_sharpness(params: &ModelParams, seed: u64, n: usize, settings: &SweepSettings) -> Result<SharpnessReport> {
    let points = sharpness_points(params, seed, n)?;
    let mut placements = Vec::new();
    for pl in Placement::ALL {
        let these: Vec<CharData> = points.iter().filter(|(p, _)| *p == pl).map(|(_, d)| *d).collect();
        if !these.is_empty() {
            placements.push((pl, agreement_on(&these, params, settings, seed)?));
        }
    }
    Ok(SharpnessReport { base_points: n, placements })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharpness_holds_at_n4() {
        let p = ModelParams::new(1.0, 1.0, 4).unwrap();
        let rep = threshold_sharpness(&p, 3, 6, &SweepSettings::default()).unwrap();
        assert_eq!(rep.placements.len(), 3);
        assert_eq!(rep.agreement_rate(), 1.0, "{rep:?}");
        assert!(rep.decided() >= 15);
    }

    #[test]
    fn rejects_zero_background() {
        let p = ModelParams::new(1.0, 0.0, 3).unwrap();
        assert!(sharpness_points(&p, 0, 1).is_err());
    }
}
