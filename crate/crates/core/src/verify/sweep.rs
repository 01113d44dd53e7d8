//! Randomized classifier-versus-oracle agreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::{oracle_outcome, OracleOutcome, OraclePolicy};
use crate::error::{EpError, Result};
use crate::model::{CharData, Classification, ModelParams, Verdict};
use crate::ode::Tolerances;
use crate::qs::{s_extrema, trajectory_invariant, QSState};
use crate::threshold::{s_max_zero_bg, Classifier, MarginPolicy};

/// Caps worker threads for sweeps when set.
pub const THREADS_ENV: &str = "EP_CRITICAL_THREADS";

/// Ranges the sweep draws initial data from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub q0: [f64; 2],
    /// `s0` is drawn from `(-c/N + s0_offset, s0_max]`.
    pub s0_offset: f64,
    pub s0_max: f64,
    /// Log-uniform.
    pub rho0: [f64; 2],
    pub p0: [f64; 2],
    /// Share of draws with `rho0 = 0`.
    pub zero_density_fraction: f64,
    /// Draws whose orbit swells `s~` beyond this factor of `s~0` are redrawn;
    /// past roughly 1e6 the state leaves what double precision can follow.
    pub max_excursion: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            q0: [-3.0, 3.0],
            s0_offset: 0.01,
            s0_max: 3.0,
            rho0: [1e-2, 1e2],
            p0: [-5.0, 5.0],
            zero_density_fraction: 0.1,
            max_excursion: 1e6,
        }
    }
}

impl SamplerSpec {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let ordered = |[a, b]: [f64; 2]| a.is_finite() && b.is_finite() && a < b;
        let s_lo = -params.c_over_n() + self.s0_offset;
        if !ordered(self.q0) || !ordered(self.p0) || !ordered(self.rho0) || !(self.rho0[0] > 0.0) {
            return Err(EpError::Config("sampler ranges must be finite with lo < hi and rho0 > 0".into()));
        }
        if !(self.s0_offset > 0.0) || !(self.s0_max > s_lo) {
            return Err(EpError::Config(format!("empty s0 range ({s_lo}, {}]", self.s0_max)));
        }
        if !(0.0..=1.0).contains(&self.zero_density_fraction) {
            return Err(EpError::Config("zero_density_fraction must lie in [0, 1]".into()));
        }
        if !(self.max_excursion > 1.0) {
            return Err(EpError::Config("max_excursion must exceed 1".into()));
        }
        Ok(())
    }

    /// Draw number `index` of the stream seeded by `seed`; independent of
    /// how many other draws exist or which thread makes them.
    pub fn draw(&self, params: &ModelParams, seed: u64, index: u64) -> Result<CharData> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let s_lo = -params.c_over_n() + self.s0_offset;
        loop {
            let q0 = rng.random_range(self.q0[0]..=self.q0[1]);
            // (s_lo, s0_max]: flip a half-open draw
            let s0 = self.s0_max - rng.random_range(0.0..(self.s0_max - s_lo));
            let p0 = rng.random_range(self.p0[0]..=self.p0[1]);
            let (lr0, lr1) = (self.rho0[0].ln(), self.rho0[1].ln());
            let rho0 = if rng.random::<f64>() < self.zero_density_fraction {
                0.0
            } else {
                rng.random_range(lr0..=lr1).exp()
            };
            let state = QSState::from_s(q0, s0, params);
            if excursion(state, params)? <= self.max_excursion {
                return CharData::new(1.0, q0, s0, p0, rho0, params);
            }
        }
    }
}

/// `s~_max / s~0` along the q-s orbit.
fn excursion(state: QSState, params: &ModelParams) -> Result<f64> {
    let hi = if params.zero_background() {
        s_max_zero_bg(trajectory_invariant(state, params)?, params)?
    } else {
        s_extrema(trajectory_invariant(state, params)?, params)?.1
    };
    Ok(hi / state.s_tilde)
}

/// One point on which classifier and oracle did not agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub index: u64,
    pub data: CharData,
    pub classifier: Option<Classification>,
    pub oracle: Option<OracleOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub total: usize,
    pub agree: usize,
    pub disagree: Vec<Disagreement>,
    /// Inside the exclusion band or classified Marginal.
    pub excluded_marginal: usize,
    /// Oracle could not settle the point within its search cap.
    pub inconclusive: usize,
    pub seed: u64,
}

impl AgreementReport {
    /// `agree / (agree + |disagree|)`, the share among decided points.
    pub fn agreement_rate(&self) -> f64 {
        let decided = self.agree + self.disagree.len();
        if decided == 0 {
            1.0
        } else {
            self.agree as f64 / decided as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    /// Points whose deciding margin is below this are left out.
    pub exclusion_band: f64,
    pub tol: Tolerances,
    pub margin: MarginPolicy,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { exclusion_band: 1e-3, tol: Tolerances::SWEEP, margin: MarginPolicy::default() }
    }
}

enum PointOutcome {
    Agree,
    Excluded,
    Inconclusive,
    Disagree(Disagreement),
}

/// Compares classifier and oracle on a single point.
fn judge(
    index: u64,
    data: CharData,
    params: &ModelParams,
    settings: &SweepSettings,
    oracle: &OraclePolicy,
) -> PointOutcome {
    let fail = |classifier, oracle, error: String| {
        PointOutcome::Disagree(Disagreement { index, data, classifier, oracle, error: Some(error) })
    };
    let classifier = Classifier::new(*params).with_tolerances(settings.tol).with_margin(settings.margin).without_tc();
    let c = match classifier.classify(&data) {
        Ok(c) => c,
        Err(e) => return fail(None, None, format!("classifier: {e}")),
    };
    if c.verdict == Verdict::Marginal || c.margin < settings.exclusion_band {
        return PointOutcome::Excluded;
    }
    let o = match oracle_outcome(&data, params, oracle) {
        Ok(r) => r.outcome,
        Err(e) => return fail(Some(c), None, format!("oracle: {e}")),
    };
    let agree = match (c.verdict, o) {
        (_, OracleOutcome::Inconclusive { .. }) => return PointOutcome::Inconclusive,
        (Verdict::Global, OracleOutcome::GlobalWithinHorizon { .. }) => true,
        (Verdict::Breakdown, OracleOutcome::Blowup { .. }) => true,
        _ => false,
    };
    if agree {
        PointOutcome::Agree
    } else {
        PointOutcome::Disagree(Disagreement { index, data, classifier: Some(c), oracle: Some(o), error: None })
    }
}

/// Agreement over explicit points, in the given order.
pub fn agreement_on(
    points: &[CharData],
    params: &ModelParams,
    settings: &SweepSettings,
    seed: u64,
) -> Result<AgreementReport> {
    params.validate()?;
    if points.is_empty() {
        return Err(EpError::Config("agreement needs at least one point".into()));
    }
    let oracle = OraclePolicy::default().with_tolerances(settings.tol);
    let outcomes: Vec<PointOutcome> = with_pool(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, d)| judge(i as u64, *d, params, settings, &oracle))
            .collect()
    })?;
    Ok(tally(outcomes, seed))
}

/// Draws `count` points from `sampler` and compares classifier with oracle.
pub fn agreement_sweep(
    sampler: &SamplerSpec,
    params: &ModelParams,
    count: usize,
    seed: u64,
    settings: &SweepSettings,
) -> Result<AgreementReport> {
    params.validate()?;
    sampler.validate(params)?;
    if count == 0 {
        return Err(EpError::Config("sweep count must be at least 1".into()));
    }
    let points: Vec<CharData> = with_pool(|| {
        (0..count as u64).into_par_iter().map(|i| sampler.draw(params, seed, i)).collect::<Result<Vec<_>>>()
    })??;
    agreement_on(&points, params, settings, seed)
}

fn tally(outcomes: Vec<PointOutcome>, seed: u64) -> AgreementReport {
    let mut r = AgreementReport {
        total: outcomes.len(),
        agree: 0,
        disagree: Vec::new(),
        excluded_marginal: 0,
        inconclusive: 0,
        seed,
    };
    for o in outcomes {
        match o {
            PointOutcome::Agree => r.agree += 1,
            PointOutcome::Excluded => r.excluded_marginal += 1,
            PointOutcome::Inconclusive => r.inconclusive += 1,
            PointOutcome::Disagree(d) => r.disagree.push(d),
        }
    }
    r
}

/// Runs `f` on a pool capped by `EP_CRITICAL_THREADS`, or on rayon's global
/// pool when the variable is unset.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| EpError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(EpError::Config(format!("{THREADS_ENV} must be at least 1")));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| EpError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(k: f64, c: f64, n: u32) -> ModelParams {
        ModelParams::new(k, c, n).unwrap()
    }

    #[test]
    fn draws_are_reproducible_and_in_range() {
        let pr = p(1.0, 1.0, 4);
        let s = SamplerSpec::default();
        for i in 0..200 {
            let a = s.draw(&pr, 7, i).unwrap();
            assert_eq!(a, s.draw(&pr, 7, i).unwrap());
            assert!(a.q0 >= -3.0 && a.q0 <= 3.0);
            assert!(a.s0 > -0.25 + 0.01 - 1e-15 && a.s0 <= 3.0);
            assert!(a.rho0 == 0.0 || (a.rho0 >= 1e-2 && a.rho0 <= 1e2));
        }
        assert_ne!(s.draw(&pr, 7, 0).unwrap(), s.draw(&pr, 8, 0).unwrap());
    }

    #[test]
    fn count_zero_is_rejected() {
        let pr = p(1.0, 1.0, 4);
        assert!(agreement_sweep(&SamplerSpec::default(), &pr, 0, 1, &SweepSettings::default()).is_err());
    }

    #[test]
    fn single_subcritical_point_agrees() {
        let pr = p(1.0, 1.0, 4);
        let d = CharData::new(1.0, 0.0, 0.0, 0.1, 1.2, &pr).unwrap();
        let r = agreement_on(&[d], &pr, &SweepSettings::default(), 0).unwrap();
        assert_eq!((r.total, r.agree), (1, 1));
    }

    #[test]
    fn small_sweep_is_deterministic_and_balanced() {
        let pr = p(1.0, 1.0, 4);
        let s = SweepSettings::default();
        let a = agreement_sweep(&SamplerSpec::default(), &pr, 24, 3, &s).unwrap();
        let b = agreement_sweep(&SamplerSpec::default(), &pr, 24, 3, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total, a.agree + a.disagree.len() + a.excluded_marginal + a.inconclusive);
    }
}
