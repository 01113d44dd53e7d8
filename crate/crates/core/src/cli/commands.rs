use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use ep_critical::io::{
    exit_code, grid, parse_range, parse_reals, write_classification_csv, write_json, write_sweep_csv, Format,
    RunConfig, SweepCell, EXIT_CHECK_FAILED, EXIT_GLOBAL,
};
use ep_critical::model::{a0_from_fields, radial_to_characteristic, CharData, RadialProfile};
use ep_critical::ode::characteristic::{solve_characteristic, write_trajectory_csv};
use ep_critical::ode::Termination;
use ep_critical::qs::{integrate_qs, linear_period, write_phase_csv, OrbitGeometry, QSState};
use ep_critical::threshold::{ClassificationReport, Classifier};
use ep_critical::verify::{full_suite, invariant_suite_with, with_pool, SuiteSettings};
use ep_critical::{EpError, Result};

fn output(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.output.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| EpError::Io(format!("{}: {e}", path.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn classifier(cfg: &RunConfig) -> Classifier {
    let mut c = Classifier::new(cfg.params).with_tolerances(cfg.tolerances).with_margin(cfg.margin);
    c.horizon = cfg.horizon;
    c
}

fn point(spec: &str, cfg: &RunConfig) -> Result<CharData> {
    let v = parse_reals(spec, 5, "--point r,u0,phi0r,u0r,rho0")?;
    CharData::from_point(v[0], v[1], v[2], v[3], v[4], &cfg.params)
}

pub fn classify(
    cfg: &RunConfig,
    point_spec: Option<&str>,
    profile: Option<&Path>,
    radii: Option<&str>,
    radii_grid: Option<usize>,
) -> Result<i32> {
    let data: Vec<CharData> = match (point_spec, profile) {
        (Some(spec), None) => vec![point(spec, cfg)?],
        (None, Some(path)) => {
            let prof = RadialProfile::load(path)?;
            let betas = match (radii, radii_grid) {
                (Some(list), None) => {
                    let n = list.split(',').count();
                    parse_reals(list, n, "--radii")?
                }
                (None, Some(n)) if n > 0 => grid(prof.r_min(), prof.r_max(), n, false),
                (None, Some(_)) => return Err(EpError::Config("--radii-grid needs at least one radius".into())),
                _ => return Err(EpError::Config("--profile needs --radii or --radii-grid".into())),
            };
            betas
                .iter()
                .map(|&b| radial_to_characteristic(&prof, b, &cfg.params))
                .collect::<Result<_>>()?
        }
        _ => return Err(EpError::Config("give either --point or --profile".into())),
    };
    let clf = classifier(cfg);
    let rows: Vec<ClassificationReport> = with_pool(|| {
        data.par_iter()
            .map(|d| clf.assess(d).map(|a| ClassificationReport::new(d, &a)))
            .collect::<Result<Vec<_>>>()
    })??;
    match cfg.format() {
        Format::Json => write_json(output(cfg)?, &rows)?,
        Format::Csv => write_classification_csv(output(cfg)?, &rows)?,
    }
    let count = |v| rows.iter().filter(|r| r.verdict == v).count();
    use ep_critical::model::Verdict::*;
    eprintln!(
        "{} characteristic(s): {} Global, {} Breakdown, {} Marginal",
        rows.len(),
        count(Global),
        count(Breakdown),
        count(Marginal)
    );
    Ok(exit_code(rows.iter().map(|r| r.verdict)))
}

pub fn sweep(
    cfg: &RunConfig,
    base: &str,
    u0r_spec: Option<&str>,
    rho0_spec: &str,
    log_rho: bool,
    a_line: Option<f64>,
) -> Result<i32> {
    let b = parse_reals(base, 3, "--base r,u0,phi0r")?;
    let (r, u0, phi0r) = (b[0], b[1], b[2]);
    let (lo, hi, n) = parse_range(rho0_spec, "--rho0")?;
    if log_rho && !(lo > 0.0) {
        return Err(EpError::Config("--log-rho needs rho0 > 0".into()));
    }
    let rhos = grid(lo, hi, n, log_rho);
    let k = cfg.params.k;
    // row-major over (u0r, rho0); a-line cells have one u0r per rho0
    let cells: Vec<(f64, f64)> = match (u0r_spec, a_line) {
        (Some(spec), None) => {
            let (ulo, uhi, un) = parse_range(spec, "--u0r")?;
            grid(ulo, uhi, un, false).into_iter().flat_map(|u| rhos.iter().map(move |&rho| (u, rho))).collect()
        }
        (None, Some(a)) => {
            if u0 == 0.0 {
                return Err(EpError::Config("--a-line needs u0 != 0".into()));
            }
            rhos.iter().map(|&rho| ((a * r * rho - k * phi0r) / u0, rho)).collect()
        }
        _ => return Err(EpError::Config("give either --u0r or --a-line".into())),
    };
    let clf = classifier(cfg);
    let out: Vec<SweepCell> = with_pool(|| {
        cells
            .par_iter()
            .map(|&(u0r, rho0)| {
                let data = CharData::from_point(r, u0, phi0r, u0r, rho0, &cfg.params)?;
                let c = clf.without_tc().classify(&data)?;
                let a = a0_from_fields(r, u0, phi0r, u0r, rho0, k).ok();
                Ok(SweepCell { u0r, rho0, a, verdict: c.verdict, margin: c.margin })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    match cfg.output.format.unwrap_or(Format::Csv) {
        Format::Csv => write_sweep_csv(output(cfg)?, &out)?,
        Format::Json => write_json(output(cfg)?, &out)?,
    }
    eprintln!("{} cell(s)", out.len());
    Ok(EXIT_GLOBAL)
}

#[derive(Serialize)]
struct SimulationReport {
    termination: &'static str,
    tc: Option<f64>,
    t_final: f64,
    horizon: f64,
    accepted_steps: usize,
    data: CharData,
    /// Rows `t,rho,p,q,s`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    samples: Vec<[f64; 5]>,
}

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::ReachedEnd => "ReachedEnd",
        Termination::EventStop => "EventStop",
        Termination::Halted => "Halted",
        Termination::BlowupDetected(_) => "BlowupDetected",
        Termination::ToleranceFailure => "ToleranceFailure",
    }
}

pub fn simulate(cfg: &RunConfig, spec: &str, horizon: Option<f64>, samples: usize) -> Result<i32> {
    let data = point(spec, cfg)?;
    let params = &cfg.params;
    let horizon = match horizon {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(EpError::Config(format!("--horizon must be positive, got {h}"))),
        None if params.c > 0.0 => {
            let geom = OrbitGeometry::new(QSState::from_s(data.q0, data.s0, params), params);
            2.1 * geom.ok().and_then(|g| g.period).unwrap_or_else(|| linear_period(params))
        }
        None => cfg.horizon.horizon(&data, params),
    };
    let sol = solve_characteristic(&data, params, horizon, cfg.tolerances)?;
    let rows = sol.sample(samples.max(2));
    let report = SimulationReport {
        termination: termination_label(sol.termination),
        tc: sol.blowup_time(),
        t_final: sol.t_final(),
        horizon,
        accepted_steps: sol.stats.accepted,
        data,
        samples: match cfg.format() {
            Format::Json => rows.iter().map(|(t, y)| [*t, y[0], y[1], y[2], y[3]]).collect(),
            Format::Csv => Vec::new(),
        },
    };
    match cfg.format() {
        Format::Json => write_json(output(cfg)?, &report)?,
        Format::Csv => {
            write_trajectory_csv(output(cfg)?, &rows, &data, params)?;
            eprintln!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(EXIT_GLOBAL)
}

#[derive(Serialize)]
struct PhaseOrbit {
    orbit: usize,
    q0: f64,
    s0: f64,
    period: Option<f64>,
    /// Rows `t,q,s,s_tilde,gamma,R_drift`.
    rows: Vec<[f64; 6]>,
}

pub fn phase(cfg: &RunConfig, specs: &[String], periods: f64, horizon: f64, samples: usize) -> Result<i32> {
    let params = &cfg.params;
    if !(periods > 0.0 && horizon > 0.0) {
        return Err(EpError::Config("--periods and --horizon must be positive".into()));
    }
    let starts: Vec<(f64, f64)> = if specs.is_empty() {
        // nested orbits through q = 0 around the equilibrium
        let cn = params.c_over_n();
        if params.c > 0.0 {
            (1..=5).map(|j| (0.0, cn * 0.3 * j as f64)).collect()
        } else {
            [0.25, 0.5, 1.0, 2.0].iter().map(|&s| (0.0, s)).collect()
        }
    } else {
        specs
            .iter()
            .map(|s| parse_reals(s, 2, "--orbit q0,s0").map(|v| (v[0], v[1])))
            .collect::<Result<_>>()?
    };
    let orbits: Vec<PhaseOrbit> = starts
        .iter()
        .enumerate()
        .map(|(i, &(q0, s0))| {
            let state = QSState::from_s(q0, s0, params);
            let period = if params.c > 0.0 { OrbitGeometry::new(state, params)?.period } else { None };
            let t_end = period.map_or(horizon, |t| periods * t);
            let traj = integrate_qs(state, (0.0, t_end), params, cfg.tolerances)?;
            Ok(PhaseOrbit { orbit: i, q0, s0, period, rows: traj.phase_rows(samples.max(2), params) })
        })
        .collect::<Result<_>>()?;
    match cfg.output.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let table: Vec<(usize, Vec<[f64; 6]>)> = orbits.into_iter().map(|o| (o.orbit, o.rows)).collect();
            let many = table.len() > 1;
            write_phase_csv(output(cfg)?, &table, many)?;
        }
        Format::Json => write_json(output(cfg)?, &orbits)?,
    }
    Ok(EXIT_GLOBAL)
}

pub fn verify(cfg: &RunConfig, suite: &str) -> Result<i32> {
    let settings = SuiteSettings { sampler: cfg.sampler, ..SuiteSettings::default() };
    let ledger = match suite {
        "invariants" => invariant_suite_with(&cfg.params, cfg.seed, &settings)?,
        "all" => full_suite(&cfg.params, cfg.seed, &settings)?,
        other => return Err(EpError::Config(format!("unknown suite {other:?}"))),
    };
    write_json(output(cfg)?, &ledger)?;
    let failed: Vec<&str> = ledger.failures().map(|c| c.name.as_str()).collect();
    eprintln!("{} check(s), {} failed{}", ledger.checks.len(), failed.len(), if failed.is_empty() {
        String::new()
    } else {
        format!(": {}", failed.join(", "))
    });
    Ok(if ledger.passed { EXIT_GLOBAL } else { EXIT_CHECK_FAILED })
}
