//! Dormand–Prince 5(4) with Hairer's fifth-order continuous extension.

use super::{DenseStep, EventRecord, IvpProblem, IvpSolution, SolverStats, StepMode, Termination};
use crate::error::{EpError, Result};
use crate::numerics::brent;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EVENT_SUBDIVISIONS: usize = 4;

struct Workspace {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
        }
    }
}

/// Integrates the problem from `t0` to `t_end` (either direction).
///
/// Returns `Err` only for malformed problems; numerical failure is reported
/// through [`Termination`].
pub fn integrate(p: &IvpProblem<'_>) -> Result<IvpSolution> {
    let n = p.dimension();
    if n == 0 {
        return Err(EpError::Integration("empty state vector".into()));
    }
    if !(p.t0.is_finite() && p.t_end.is_finite()) || p.t0 == p.t_end {
        return Err(EpError::Integration(format!(
            "invalid time span [{}, {}]",
            p.t0, p.t_end
        )));
    }
    if !p.tol.is_valid() {
        return Err(EpError::Integration("tolerances must be positive and finite".into()));
    }
    if p.y0.iter().any(|v| !v.is_finite()) {
        return Err(EpError::Integration("non-finite initial state".into()));
    }
    let monitored: Vec<usize> = match &p.blowup.monitored {
        Some(m) => {
            if m.iter().any(|&i| i >= n) {
                return Err(EpError::Integration("monitored component out of range".into()));
            }
            m.clone()
        }
        None => (0..n).collect(),
    };

    let dir = (p.t_end - p.t0).signum();
    let span = (p.t_end - p.t0).abs();
    let h_floor = p.blowup.step_floor * span;
    let mut ws = Workspace::new(n);
    let mut stats = SolverStats::default();

    let mut t = p.t0;
    let mut y = p.y0.clone();
    (p.rhs)(t, &y, &mut ws.k[0]);
    stats.rhs_evals += 1;
    if ws.k[0].iter().any(|v| !v.is_finite()) {
        return Err(EpError::Integration("right-hand side not finite at the initial state".into()));
    }

    let mut sol = IvpSolution {
        ts: vec![t],
        ys: vec![y.clone()],
        events: Vec::new(),
        termination: Termination::ReachedEnd,
        message: None,
        stats: SolverStats::default(),
        dense: Vec::new(),
    };

    let mut g_prev: Vec<f64> = p.events.iter().map(|e| (e.g)(t, &y)).collect();

    let mut h = match p.mode {
        StepMode::Fixed(h) => {
            if !(h > 0.0) {
                return Err(EpError::Integration("fixed step must be positive".into()));
            }
            h * dir
        }
        StepMode::Adaptive => initial_step(p, t, &y, dir, &mut ws, &mut stats),
    };
    let adaptive = matches!(p.mode, StepMode::Adaptive);
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= p.max_steps {
            sol.termination = Termination::ToleranceFailure;
            sol.message = Some(format!("step limit {} reached at t={t}", p.max_steps));
            break;
        }
        let remaining = p.t_end - t;
        let mut last = false;
        if (h.abs() >= remaining.abs()) || (t + h - p.t_end) * dir >= 0.0 {
            h = remaining;
            last = true;
        }

        if adaptive && h.abs() < h_floor && !last && last_rejected {
            apply_collapse(&mut sol, dir, &monitored, t, &y, &ws.k[0], p.blowup.norm_threshold);
            break;
        }

        stage_step(p, t, &y, h, &mut ws);
        stats.rhs_evals += 6;

        let err = if adaptive { error_norm(p, &y, h, &ws) } else { 0.0 };
        if !err.is_finite() || ws.ynew.iter().any(|v| !v.is_finite()) {
            if !adaptive {
                sol.termination = Termination::ToleranceFailure;
                sol.message = Some(format!("non-finite state at t={}", t + h));
                break;
            }
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            let t_new = if last { p.t_end } else { t + h };
            let step = dense_coeffs(&y, &ws, h, t);
            stats.accepted += 1;

            // event scan over sub-intervals of the accepted step
            let mut stop: Option<(f64, Vec<f64>)> = None;
            if !p.events.is_empty() {
                if let Some(hit) = scan_events(p, &step, t, t_new, &mut g_prev, &mut sol.events) {
                    stop = Some(hit);
                }
            }

            if let Some((te, ye)) = stop {
                if p.keep_dense {
                    sol.dense.push(step);
                }
                sol.ts.push(te);
                sol.ys.push(ye);
                sol.termination = Termination::EventStop;
                break;
            }

            std::mem::swap(&mut y, &mut ws.ynew);
            t = t_new;
            // FSAL: stage 7 is the derivative at the new point
            ws.k.swap(0, 6);
            if p.keep_dense {
                sol.dense.push(step);
            }
            sol.ts.push(t);
            sol.ys.push(y.clone());

            if let Some(hit) = blowup_hit(&monitored, &y, p.blowup.norm_threshold) {
                let tc = t + dir * (y[hit] / ws.k[0][hit]).abs();
                sol.termination = Termination::BlowupDetected(tc);
                break;
            }
            if let Some(halt) = &p.halt {
                if halt(t, &y) {
                    sol.termination = Termination::Halted;
                    break;
                }
            }
            if last {
                sol.termination = Termination::ReachedEnd;
                break;
            }

            if adaptive {
                let fac11 = err.powf(0.2 - BETA * 0.75);
                let mut fac = fac11 / fac_old.powf(BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if last_rejected {
                    h_new = dir * h_new.abs().min(h.abs());
                }
                fac_old = err.max(1e-4);
                h = h_new;
                last_rejected = false;
            }
        } else {
            stats.rejected += 1;
            let fac11 = err.powf(0.2 - BETA * 0.75);
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }

    sol.stats = stats;
    Ok(sol)
}

fn stage_step(p: &IvpProblem<'_>, t: f64, y: &[f64], h: f64, ws: &mut Workspace) {
    let n = y.len();
    let Workspace { k, ytmp, ynew, .. } = ws;
    for i in 0..n {
        ytmp[i] = y[i] + h * A21 * k[0][i];
    }
    (p.rhs)(t + C2 * h, ytmp, &mut k[1]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    (p.rhs)(t + C3 * h, ytmp, &mut k[2]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    (p.rhs)(t + C4 * h, ytmp, &mut k[3]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    (p.rhs)(t + C5 * h, ytmp, &mut k[4]);
    for i in 0..n {
        ytmp[i] = y[i]
            + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    (p.rhs)(t + h, ytmp, &mut k[5]);
    for i in 0..n {
        ynew[i] = y[i]
            + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    (p.rhs)(t + h, ynew, &mut k[6]);
}

fn error_norm(p: &IvpProblem<'_>, y: &[f64], h: f64, ws: &Workspace) -> f64 {
    let n = y.len();
    let k = &ws.k;
    let mut acc = 0.0;
    for i in 0..n {
        let e = E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
            + E7 * k[6][i];
        let sk = p.tol.abs + p.tol.rel * y[i].abs().max(ws.ynew[i].abs());
        let r = e / sk;
        acc += r * r;
    }
    h.abs() * (acc / n as f64).sqrt()
}

fn dense_coeffs(y: &[f64], ws: &Workspace, h: f64, t: f64) -> DenseStep {
    let n = y.len();
    let k = &ws.k;
    let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let ydiff = ws.ynew[i] - y[i];
        let bspl = h * k[0][i] - ydiff;
        r[0][i] = y[i];
        r[1][i] = ydiff;
        r[2][i] = bspl;
        r[3][i] = ydiff - h * k[6][i] - bspl;
        r[4][i] = h
            * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i]
                + D7 * k[6][i]);
    }
    DenseStep { t, h, r }
}

fn blowup_hit(monitored: &[usize], y: &[f64], threshold: f64) -> Option<usize> {
    monitored
        .iter()
        .copied()
        .filter(|&i| y[i].abs() > threshold)
        .max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs()))
}

// Step size collapsed: decide between blow-up and a plain tolerance failure
// by looking for a component whose derivative grows like its square.
fn apply_collapse(
    sol: &mut IvpSolution,
    dir: f64,
    monitored: &[usize],
    t: f64,
    y: &[f64],
    f: &[f64],
    threshold: f64,
) {
    let riccati = monitored
        .iter()
        .copied()
        .filter(|&i| y[i].abs() > 1.0 && f[i].abs() >= 0.1 * y[i] * y[i])
        .max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs()));
    match riccati {
        Some(i) => {
            let tc = t + dir * (y[i] / f[i]).abs();
            sol.termination = Termination::BlowupDetected(tc);
            sol.message = Some(format!(
                "step size collapsed at t={t}; component {i} grows quadratically (|y|={:.3e}, threshold {threshold:e})",
                y[i].abs()
            ));
        }
        None => {
            sol.termination = Termination::ToleranceFailure;
            sol.message = Some(format!("step size collapsed at t={t} without a blow-up signature"));
        }
    }
}

fn scan_events(
    p: &IvpProblem<'_>,
    step: &DenseStep,
    t_left: f64,
    t_right: f64,
    g_prev: &mut [f64],
    records: &mut Vec<EventRecord>,
) -> Option<(f64, Vec<f64>)> {
    let n = step.r[0].len();
    let mut buf = vec![0.0; n];
    let mut first_terminal: Option<(f64, Vec<f64>)> = None;
    let mut found: Vec<EventRecord> = Vec::new();

    for (idx, ev) in p.events.iter().enumerate() {
        let mut ta = t_left;
        let mut ga = g_prev[idx];
        for j in 1..=EVENT_SUBDIVISIONS {
            let tb = if j == EVENT_SUBDIVISIONS {
                t_right
            } else {
                t_left + (t_right - t_left) * j as f64 / EVENT_SUBDIVISIONS as f64
            };
            step.eval_into(tb, &mut buf);
            let gb = (ev.g)(tb, &buf);
            if ev.direction.crossing(ga, gb) {
                let te = if gb == 0.0 {
                    tb
                } else {
                    let mut tmp = vec![0.0; n];
                    let f = |s: f64| {
                        step.eval_into(s, &mut tmp);
                        (ev.g)(s, &tmp)
                    };
                    let xtol = 4.0 * f64::EPSILON * ta.abs().max(tb.abs()).max(1.0);
                    brent(f, ta, tb, xtol, 0.0, 200).unwrap_or(tb)
                };
                let mut ye = vec![0.0; n];
                step.eval_into(te, &mut ye);
                found.push(EventRecord { t: te, index: idx, y: ye });
                if ev.terminal {
                    // later sub-intervals of this event are irrelevant
                    break;
                }
            }
            ta = tb;
            ga = gb;
        }
        g_prev[idx] = ga;
    }

    let forward = t_right >= t_left;
    found.sort_by(|a, b| {
        if forward {
            a.t.total_cmp(&b.t)
        } else {
            b.t.total_cmp(&a.t)
        }
    });
    for rec in found {
        let terminal = p.events[rec.index].terminal;
        if first_terminal.is_some() {
            break;
        }
        if terminal {
            first_terminal = Some((rec.t, rec.y.clone()));
        }
        records.push(rec);
    }
    first_terminal
}

fn initial_step(
    p: &IvpProblem<'_>,
    t: f64,
    y: &[f64],
    dir: f64,
    ws: &mut Workspace,
    stats: &mut SolverStats,
) -> f64 {
    let n = y.len();
    let sk = |i: usize| p.tol.abs + p.tol.rel * y[i].abs();
    let dnf: f64 = (0..n).map(|i| (ws.k[0][i] / sk(i)).powi(2)).sum::<f64>() / n as f64;
    let dny: f64 = (0..n).map(|i| (y[i] / sk(i)).powi(2)).sum::<f64>() / n as f64;
    let span = (p.t_end - p.t0).abs();
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(span);
    for ((yt, &yi), &ki) in ws.ytmp.iter_mut().zip(y).zip(&ws.k[0]) {
        *yt = yi + dir * h * ki;
    }
    let mut f1 = vec![0.0; n];
    (p.rhs)(t + dir * h, &ws.ytmp, &mut f1);
    stats.rhs_evals += 1;
    let der2: f64 = ((0..n)
        .map(|i| ((f1[i] - ws.k[0][i]) / sk(i)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if !der12.is_finite() {
        h * 1e-3
    } else if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    dir * (100.0 * h).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{BlowupPolicy, Direction, Event, Tolerances};
    use std::f64::consts::PI;

    fn oscillator() -> impl Fn(f64, &[f64], &mut [f64]) {
        |_t, y, dy| {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn forced_fixed_point_stays_put() {
        // eta'' + eta = 1 with eta(0) = 1, eta'(0) = 0
        let p = IvpProblem::new(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = 1.0 - y[0];
            },
            0.0,
            vec![1.0, 0.0],
            50.0,
        );
        let sol = integrate(&p).unwrap();
        assert_eq!(sol.termination, Termination::ReachedEnd);
        assert!(sol.ys.iter().all(|y| (y[0] - 1.0).abs() <= 1e-12 && y[1].abs() <= 1e-12));
    }

    #[test]
    fn riccati_blowup_time() {
        let p = IvpProblem::new(|_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0] * y[0], 0.0, vec![-1.0], 5.0);
        let sol = integrate(&p).unwrap();
        let tc = sol.blowup_time().expect("blow-up detected");
        assert!((tc - 1.0).abs() < 1e-3, "tc={tc}");
    }

    #[test]
    fn riccati_blowup_time_stable_under_tolerance() {
        let run = |tol: Tolerances| {
            let p = IvpProblem::new(|_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0] * y[0], 0.0, vec![-1.0], 5.0)
                .tolerances(tol);
            integrate(&p).unwrap().blowup_time().unwrap()
        };
        let a = run(Tolerances::new(1e-8, 1e-10));
        let b = run(Tolerances::new(1e-9, 1e-11));
        assert!(((a - b) / a).abs() < 1e-3);
    }

    #[test]
    fn collapse_with_riccati_signature_is_blowup() {
        // threshold too high for the norm test to fire first
        let p = IvpProblem::new(|_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0], 0.0, vec![1.0], 2.0)
            .blowup(BlowupPolicy { norm_threshold: 1e300, monitored: None, step_floor: 1e-13 });
        let sol = integrate(&p).unwrap();
        let tc = sol.blowup_time().expect("collapse diagnosed as blow-up");
        assert!((tc - 1.0).abs() < 1e-3);
    }

    #[test]
    fn oscillator_period_from_events() {
        let p = IvpProblem::new(oscillator(), 0.0, vec![0.0, 1.0], 20.0)
            .event(Event::new(|_t, y: &[f64]| y[0], Direction::Rising, false));
        let sol = integrate(&p).unwrap();
        let times: Vec<f64> = sol.events_of(0).map(|e| e.t).collect();
        assert!(times.len() >= 3);
        for w in times.windows(2) {
            assert!((w[1] - w[0] - 2.0 * PI).abs() < 1e-8);
        }
        for e in &sol.events {
            assert!(e.y[0].abs() <= 1e-10);
        }
    }

    #[test]
    fn terminal_event_stops() {
        let p = IvpProblem::new(oscillator(), 0.0, vec![1.0, 0.0], 20.0)
            .event(Event::new(|_t, y: &[f64]| y[0], Direction::Falling, true));
        let sol = integrate(&p).unwrap();
        assert_eq!(sol.termination, Termination::EventStop);
        assert!((sol.t_final() - PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn direction_filter() {
        let p = IvpProblem::new(oscillator(), 0.0, vec![1.0, 0.0], 7.0)
            .event(Event::new(|_t, y: &[f64]| y[0], Direction::Rising, false));
        let sol = integrate(&p).unwrap();
        let t: Vec<f64> = sol.events.iter().map(|e| e.t).collect();
        assert_eq!(t.len(), 1);
        assert!((t[0] - 1.5 * PI).abs() < 1e-9);
    }

    #[test]
    fn dense_output_accuracy() {
        let p = IvpProblem::new(oscillator(), 0.0, vec![0.0, 1.0], 10.0);
        let sol = integrate(&p).unwrap();
        for i in 0..200 {
            let t = 10.0 * i as f64 / 199.0;
            let y = sol.eval(t).unwrap();
            assert!((y[0] - t.sin()).abs() < 1e-8, "t={t}");
        }
        assert!(sol.eval(10.5).is_none());
    }

    #[test]
    fn backward_then_forward() {
        let fwd = integrate(&IvpProblem::new(oscillator(), 0.0, vec![0.3, -0.7], PI)).unwrap();
        let back = integrate(&IvpProblem::new(oscillator(), PI, fwd.y_final().to_vec(), 0.0)).unwrap();
        let y = back.y_final();
        assert!((y[0] - 0.3).abs() < 1e-9 && (y[1] + 0.7).abs() < 1e-9);
        assert!(back.ts.windows(2).all(|w| w[1] < w[0]));
        let mid = back.eval(1.0).unwrap();
        assert!((mid[0] - fwd.eval(1.0).unwrap()[0]).abs() < 1e-9);
    }

    #[test]
    fn fixed_step_fifth_order() {
        let err = |h: f64| {
            let p = IvpProblem::new(oscillator(), 0.0, vec![0.0, 1.0], 10.0).fixed_step(h);
            let sol = integrate(&p).unwrap();
            let y = sol.y_final();
            (y[0] - 10f64.sin()).hypot(y[1] - 10f64.cos())
        };
        let (e1, e2, e3) = (err(0.2), err(0.1), err(0.05));
        for slope in [(e1 / e2).log2(), (e2 / e3).log2()] {
            assert!((slope - 5.0).abs() < 0.5, "observed order {slope}");
        }
    }

    #[test]
    fn rejects_degenerate_span() {
        let p = IvpProblem::new(oscillator(), 1.0, vec![0.0, 1.0], 1.0);
        assert!(integrate(&p).is_err());
    }
}
