//! Targeted draws for every branch of the zero-background decision tree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sweep::{agreement_on, AgreementReport, SweepSettings};
use crate::error::{EpError, Result};
use crate::model::{CharData, ModelParams, Verdict};
use crate::qs::{trajectory_invariant, QSState};
use crate::threshold::{a0_lower_bound, s_max_zero_bg, Classifier};

/// Region of `(q0, A0, rho0)` the c = 0 thresholds treat separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZeroBgBranch {
    /// `A0 < -k/(N-2)`, N >= 3.
    BelowCutoff,
    NegativeAOutward,
    NegativeAInward,
    NegativeAAtRest,
    ZeroAOutward,
    ZeroAInward,
    PositiveAOutward,
    /// `0 < A0 < a*`, where `kappa(a*)` equals the largest attainable Γ.
    PositiveAInward,
    /// `A0 >= a*`.
    LargeAInward,
    ZeroDensityOutward,
    /// `rho0 = 0` with `p0 = k s0 / q0` exactly.
    ZeroDensityBoundary,
    ZeroDensityCollapsing,
}

impl ZeroBgBranch {
    pub const ALL: [ZeroBgBranch; 12] = [
        ZeroBgBranch::BelowCutoff,
        ZeroBgBranch::NegativeAOutward,
        ZeroBgBranch::NegativeAInward,
        ZeroBgBranch::NegativeAAtRest,
        ZeroBgBranch::ZeroAOutward,
        ZeroBgBranch::ZeroAInward,
        ZeroBgBranch::PositiveAOutward,
        ZeroBgBranch::PositiveAInward,
        ZeroBgBranch::LargeAInward,
        ZeroBgBranch::ZeroDensityOutward,
        ZeroBgBranch::ZeroDensityBoundary,
        ZeroBgBranch::ZeroDensityCollapsing,
    ];

    /// Branches that exist for dimension `n`.
    pub fn applicable(n: u32) -> impl Iterator<Item = ZeroBgBranch> {
        Self::ALL.into_iter().filter(move |b| n >= 3 || *b != ZeroBgBranch::BelowCutoff)
    }

    /// The verdict the branch forces, if it forces one.
    pub fn forced(self) -> Option<Verdict> {
        use ZeroBgBranch::*;
        match self {
            BelowCutoff | LargeAInward | ZeroDensityCollapsing => Some(Verdict::Breakdown),
            ZeroAOutward | PositiveAOutward | ZeroDensityOutward | ZeroDensityBoundary => Some(Verdict::Global),
            _ => None,
        }
    }
}

/// Largest attainable Γ along an inward orbit, `(s_max/s0)^{1/N}`.
fn gamma_max(q0: f64, s0: f64, params: &ModelParams) -> Result<f64> {
    let r = trajectory_invariant(QSState::new(q0, s0), params)?;
    Ok((s_max_zero_bg(r, params)? / s0).powf(1.0 / params.nf()))
}

/// `A0` whose root of A sits at `gamma`.
fn a0_with_root(gamma: f64, params: &ModelParams) -> f64 {
    if params.n == 2 {
        params.k * gamma.ln()
    } else {
        params.k / (params.nf() - 2.0) * (gamma.powf(params.nf() - 2.0) - 1.0)
    }
}

/// A negative `A0` above the cutoff.
fn negative_a(r: &mut ChaCha8Rng, params: &ModelParams) -> f64 {
    match a0_lower_bound(params) {
        Some(lb) => lb * r.random_range(0.05..0.95),
        None => -r.random_range(0.05..2.0),
    }
}

/// One point of `branch`, with `q0`, `s0` in moderate ranges.
pub fn draw_branch_point(branch: ZeroBgBranch, r: &mut ChaCha8Rng, params: &ModelParams) -> Result<CharData> {
    use ZeroBgBranch::*;
    if !params.zero_background() {
        return Err(EpError::InvalidParams("branch draws need c = 0".into()));
    }
    let k = params.k;
    loop {
        let speed = r.random_range(0.1..2.0);
        let s0 = r.random_range(0.1..2.0);
        let rho0 = r.random_range(0.1f64.ln()..10.0f64.ln()).exp();
        let q0 = match branch {
            NegativeAAtRest => 0.0,
            NegativeAOutward | ZeroAOutward | PositiveAOutward | ZeroDensityOutward | ZeroDensityBoundary => speed,
            NegativeAInward | ZeroAInward | PositiveAInward | LargeAInward => -speed,
            BelowCutoff | ZeroDensityCollapsing => {
                if r.random::<bool>() {
                    speed
                } else {
                    -speed
                }
            }
        };
        if q0 < 0.0 && gamma_max(q0, s0, params)?.powi(params.n as i32) > 1e3 {
            continue;
        }
        let with_a = |a0: f64| CharData::new(1.0, q0, s0, (a0 * rho0 + k * s0) / q0, rho0, params);
        let boundary = k * s0 / q0;
        return match branch {
            BelowCutoff => {
                let lb = a0_lower_bound(params).ok_or_else(|| EpError::InvalidParams("no A0 cutoff for N = 2".into()))?;
                with_a(lb - r.random_range(0.05..1.5))
            }
            NegativeAOutward | NegativeAInward => with_a(negative_a(r, params)),
            NegativeAAtRest => {
                // A0 = -k s0 / rho0, so rho0 sets A0
                let a0 = negative_a(r, params);
                CharData::new(1.0, 0.0, s0, r.random_range(-3.0..3.0), -k * s0 / a0, params)
            }
            ZeroAOutward | ZeroAInward => with_a(0.0),
            PositiveAOutward => with_a(r.random_range(0.05..3.0)),
            PositiveAInward | LargeAInward => {
                let a_star = a0_with_root(gamma_max(q0, s0, params)?, params);
                if !(a_star > 1e-6) {
                    continue;
                }
                let f = if branch == PositiveAInward { r.random_range(0.05..0.95) } else { r.random_range(1.05..2.0) };
                with_a(f * a_star)
            }
            ZeroDensityOutward => CharData::new(1.0, q0, s0, boundary * r.random_range(1.05..2.0), 0.0, params),
            ZeroDensityBoundary => CharData::new(1.0, q0, s0, boundary, 0.0, params),
            ZeroDensityCollapsing => {
                let p0 = if q0 > 0.0 { boundary * r.random_range(-1.0..0.95) } else { r.random_range(-3.0..3.0) };
                CharData::new(1.0, q0, s0, p0, 0.0, params)
            }
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub branch: ZeroBgBranch,
    pub points: usize,
    /// Points whose verdict contradicts the branch's forced verdict.
    pub forced_mismatch: usize,
    pub agreement: AgreementReport,
}

/// `per_branch` points of every branch applicable to `params`, classified
/// and checked against the oracle. Boundary points sit at zero margin by
/// construction and are judged without an exclusion band.
pub fn branch_coverage(params: &ModelParams, seed: u64, per_branch: usize, settings: &SweepSettings) -> Result<Vec<BranchReport>> {
    let classifier = Classifier::new(*params).with_tolerances(settings.tol).with_margin(settings.margin).without_tc();
    let mut out = Vec::new();
    for (i, branch) in ZeroBgBranch::applicable(params.n).enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(100 + i as u64);
        let points: Vec<CharData> = (0..per_branch).map(|_| draw_branch_point(branch, &mut r, params)).collect::<Result<_>>()?;
        let mut forced_mismatch = 0;
        if let Some(v) = branch.forced() {
            for d in &points {
                forced_mismatch += usize::from(classifier.classify(d)?.verdict != v);
            }
        }
        let s = if branch == ZeroBgBranch::ZeroDensityBoundary {
            SweepSettings { exclusion_band: 0.0, ..*settings }
        } else {
            *settings
        };
        out.push(BranchReport { branch, points: points.len(), forced_mismatch, agreement: agreement_on(&points, params, &s, seed)? });
    }
    Ok(out)
}
