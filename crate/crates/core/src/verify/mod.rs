//! Direct-integration oracle, classifier agreement sweeps and the invariant suite.

mod branches;
mod invariants;
mod one_dim;
mod oracle;
mod sharpness;
mod sweep;

pub use branches::{branch_coverage, draw_branch_point, BranchReport, ZeroBgBranch};
pub use invariants::{
    decay_check, envelope_structure, extrema_checks, full_suite, invariant_suite, invariant_suite_with, orbit_checks,
    zero_density_checks, CheckRecord, EnvelopeStructure, SuiteSettings, VerifyLedger,
};
pub use one_dim::{one_dim_concentration_check, one_dim_min_b};
pub use oracle::{a_of_state, decay_fit, gamma_pow_of_state, oracle_outcome, DecayFit, OracleOutcome, OraclePolicy, OracleReport};
pub use sharpness::{sharpness_points, threshold_sharpness, Placement, SharpnessReport};
pub use sweep::{
    agreement_on, agreement_sweep, with_pool, AgreementReport, Disagreement, SamplerSpec, SweepSettings, THREADS_ENV,
};
