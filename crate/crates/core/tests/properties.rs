//! Property tests for the invariants each module promises.

use proptest::prelude::*;

use ep_critical::io::{exit_code, RunConfig, EXIT_BREAKDOWN, EXIT_GLOBAL, EXIT_MARGINAL};
use ep_critical::model::{compute_a0, radial_to_characteristic, CharData, ModelParams, RadialProfile, Verdict};
use ep_critical::ode::{integrate, Direction, Event, IvpProblem, Tolerances};
use ep_critical::qs::{integrate_qs, trajectory_invariant, OrbitGeometry, QSState};
use ep_critical::threshold::{a_of_gamma, kappa, Classifier, MarginPolicy};
use ep_critical::verify::{agreement_sweep, SamplerSpec, SweepSettings};

fn dims() -> impl Strategy<Value = u32> {
    prop_oneof![Just(2u32), Just(3), Just(4), Just(6)]
}

/// `(q0, s~0)` with `s~0 > 0` for `k = c = 1`.
fn orbit_start() -> impl Strategy<Value = (f64, f64)> {
    (-1.5..1.5f64, 0.05..1.5f64)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn s_tilde_positive_for_nonnegative_profiles(
        amp in 0.0..3.0f64, width in 0.2..2.0f64, flow in -1.0..1.0f64, beta in 0.05..2.9f64, c in 0.0..2.0f64, n in dims(),
    ) {
        let pr = ModelParams::new(1.0, c, n).unwrap();
        let radii: Vec<f64> = (0..400).map(|i| 0.01 + 2.99 * i as f64 / 399.0).collect();
        let prof = RadialProfile::from_fn(&radii, |r| amp * (-(r / width).powi(2)).exp(), |r| flow * r).unwrap();
        let d = radial_to_characteristic(&prof, beta, &pr).unwrap();
        prop_assert!(d.s_tilde0 > -1e-10, "s~0 = {}", d.s_tilde0);
    }

    #[test]
    fn a0_matches_its_formula(q0 in -3.0..3.0f64, s0 in -0.2..3.0f64, p0 in -5.0..5.0f64, rho0 in 0.01..100.0f64) {
        let pr = ModelParams::new(1.0, 1.0, 4).unwrap();
        let d = CharData::new(1.0, q0, s0, p0, rho0, &pr).unwrap();
        let expect = (q0 * p0 - s0) / rho0;
        prop_assert!((compute_a0(&d, &pr).unwrap() - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }

    #[test]
    fn invariant_conserved_over_three_periods((q0, st0) in orbit_start(), n in dims()) {
        let pr = ModelParams::new(1.0, 1.0, n).unwrap();
        let state = QSState::new(q0, st0);
        let geom = OrbitGeometry::new(state, &pr).unwrap();
        prop_assume!(geom.s_tilde_max <= 1e3 * st0);
        let t = geom.period.unwrap();
        let traj = integrate_qs(state, (0.0, 3.0 * t), &pr, Tolerances::CLASSIFY).unwrap();
        prop_assert!(traj.max_r_drift <= 100.0 * Tolerances::CLASSIFY.rel, "drift {}", traj.max_r_drift);
    }

    #[test]
    fn orbits_stay_positive_clockwise_and_periodic((q0, st0) in orbit_start(), n in dims()) {
        let pr = ModelParams::new(1.0, 1.0, n).unwrap();
        let state = QSState::new(q0, st0);
        let geom = OrbitGeometry::new(state, &pr).unwrap();
        prop_assume!(geom.s_tilde_max <= 1e3 * st0 && !geom.degenerate);
        let t = geom.period.unwrap();
        let traj = integrate_qs(state, (0.0, 2.0 * t), &pr, Tolerances::CLASSIFY).unwrap();
        let sol = &traj.solution;
        for i in 0..400 {
            let ti = 2.0 * t * i as f64 / 400.0;
            let y = sol.eval(ti).unwrap();
            prop_assert!(y[1] > 0.0);
            // s~' = -N q s~
            if y[0].abs() > 1e-3 && ti > 1e-4 {
                let (a, b) = (sol.eval(ti - 1e-4).unwrap(), sol.eval(ti + 1e-4).unwrap());
                prop_assert_eq!((b[1] - a[1]).signum(), -y[0].signum());
            }
        }
        for i in 0..10 {
            let ti = t * i as f64 / 10.0;
            let (a, b) = (sol.eval(ti).unwrap(), sol.eval(ti + t).unwrap());
            prop_assert!((b[0] - a[0]).abs() + (b[1] - a[1]).abs() <= 1e-6);
        }
    }

    #[test]
    fn extrema_are_asymmetric_about_equilibrium((q0, st0) in orbit_start(), n in dims()) {
        let pr = ModelParams::new(1.0, 1.0, n).unwrap();
        let geom = OrbitGeometry::new(QSState::new(q0, st0), &pr).unwrap();
        prop_assume!(!geom.degenerate);
        let cn = pr.c_over_n();
        prop_assert!(cn - geom.s_tilde_min > 0.0);
        prop_assert!(cn - geom.s_tilde_min < geom.s_tilde_max - cn);
        prop_assert!((geom.gamma_min - (geom.s_tilde_min / st0).powf(1.0 / pr.nf())).abs() < 1e-14);
    }

    #[test]
    fn kappa_is_the_sign_change_of_a(f in -0.95..5.0f64, n in dims()) {
        let pr = ModelParams::new(1.0, 0.0, n).unwrap();
        // in units of k/(N-2), so always above the cutoff
        let a0 = if n == 2 { f } else { f / (n as f64 - 2.0) };
        let kp = kappa(a0, &pr).unwrap();
        prop_assert!(a_of_gamma(kp, a0, &pr).unwrap().abs() <= 1e-12 * (1.0 + kp.powf(pr.nf() - 1.0)));
        prop_assert!(a_of_gamma(0.5 * kp, a0, &pr).unwrap() > 0.0);
        prop_assert!(a_of_gamma(2.0 * kp, a0, &pr).unwrap() < 0.0);
    }

    #[test]
    fn verdicts_carry_consistent_margins(
        q0 in -3.0..3.0f64, s0 in -0.2..3.0f64, p0 in -5.0..5.0f64, rho0 in 0.01..100.0f64, margin in 1e-8..1e-3f64,
    ) {
        let pr = ModelParams::new(1.0, 1.0, 4).unwrap();
        let d = CharData::new(1.0, q0, s0, p0, rho0, &pr).unwrap();
        let c = Classifier::new(pr).with_tolerances(Tolerances::SWEEP).with_margin(MarginPolicy::new(margin).unwrap()).without_tc();
        let got = c.classify(&d).unwrap();
        if got.verdict == Verdict::Marginal {
            prop_assert!(got.margin < margin);
        } else {
            prop_assert!(got.margin >= 0.0);
        }
    }

    #[test]
    fn forward_then_backward_returns(y0 in -2.0..2.0f64, v0 in -2.0..2.0f64, t_end in 0.5..3.0f64) {
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let tol = Tolerances::CLASSIFY;
        let fwd = integrate(&IvpProblem::new(rhs, 0.0, vec![y0, v0], t_end).tolerances(tol)).unwrap();
        let back = integrate(&IvpProblem::new(rhs, t_end, fwd.y_final().to_vec(), 0.0).tolerances(tol)).unwrap();
        let e = back.y_final();
        prop_assert!((e[0] - y0).abs() + (e[1] - v0).abs() <= 100.0 * (tol.rel * 2.0 + tol.abs));
    }

    #[test]
    fn events_are_refined(y0 in 0.5..2.0f64) {
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let p = IvpProblem::new(rhs, 0.0, vec![y0, 0.0], 10.0)
            .tolerances(Tolerances::CLASSIFY)
            .event(Event::new(|_t, y: &[f64]| y[0], Direction::Any, false));
        let sol = integrate(&p).unwrap();
        let hits: Vec<_> = sol.events_of(0).collect();
        prop_assert_eq!(hits.len(), 3);
        for h in hits {
            prop_assert!(h.y[0].abs() <= 1e-10 * y0);
        }
    }

    #[test]
    fn sweeps_are_reproducible_and_account_for_every_point(seed in 0u64..1000) {
        let pr = ModelParams::new(1.0, 1.0, 4).unwrap();
        let run = || agreement_sweep(&SamplerSpec::default(), &pr, 6, seed, &SweepSettings::default()).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.total, a.agree + a.disagree.len() + a.excluded_marginal + a.inconclusive);
    }
}

proptest! {
    #[test]
    fn exit_code_reflects_worst_verdict(vs in proptest::collection::vec(prop_oneof![
        Just(Verdict::Global), Just(Verdict::Breakdown), Just(Verdict::Marginal)
    ], 1..12)) {
        let code = exit_code(vs.iter().copied());
        let expect = if vs.contains(&Verdict::Breakdown) {
            EXIT_BREAKDOWN
        } else if vs.contains(&Verdict::Marginal) {
            EXIT_MARGINAL
        } else {
            EXIT_GLOBAL
        };
        prop_assert_eq!(code, expect);
    }

    #[test]
    fn unknown_config_keys_are_rejected(key in "[a-z]{3,10}") {
        prop_assume!(!["params", "tolerances", "margin", "horizon", "sampler", "seed", "output"].contains(&key.as_str()));
        let text = format!("{{\"{key}\": 1}}");
        prop_assert!(RunConfig::from_json(&text).is_err());
    }
}

#[test]
fn trajectory_invariant_matches_geometry_extrema() {
    let pr = ModelParams::new(1.0, 1.0, 3).unwrap();
    let state = QSState::new(0.4, 0.9);
    let geom = OrbitGeometry::new(state, &pr).unwrap();
    let r = trajectory_invariant(state, &pr).unwrap();
    let at_min = trajectory_invariant(QSState::new(0.0, geom.s_tilde_min), &pr).unwrap();
    let at_max = trajectory_invariant(QSState::new(0.0, geom.s_tilde_max), &pr).unwrap();
    assert!((at_min - r).abs() <= 1e-10 * r.abs() && (at_max - r).abs() <= 1e-10 * r.abs());
}
