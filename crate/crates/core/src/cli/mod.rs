//! Argument parsing and configuration merging for the `ep-critical` binary.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use ep_critical::io::{parse_params, Format, RunConfig};
use ep_critical::ode::Tolerances;
use ep_critical::threshold::MarginPolicy;
use ep_critical::Result;

#[derive(Debug, Parser)]
#[command(name = "ep-critical", version, about = "Critical thresholds for radial pressureless Euler-Poisson flows")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model parameters, e.g. `k=1,c=1,N=4`.
    #[arg(long, global = true)]
    pub params: Option<String>,
    #[arg(long, global = true)]
    pub tol_rel: Option<f64>,
    #[arg(long, global = true)]
    pub tol_abs: Option<f64>,
    /// Relative width of the Marginal band.
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `csv` or `json`.
    #[arg(long, global = true)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one point or a profile at chosen radii.
    Classify {
        /// `r,u0,phi0r,u0r,rho0`.
        #[arg(long, conflicts_with = "profile", allow_hyphen_values = true)]
        point: Option<String>,
        /// Profile file, CSV `r,rho0,u0` or JSON.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Comma-separated radii.
        #[arg(long, requires = "profile", conflicts_with = "radii_grid", allow_hyphen_values = true)]
        radii: Option<String>,
        /// Number of evenly spaced radii across the profile's range.
        #[arg(long, requires = "profile")]
        radii_grid: Option<usize>,
    },
    /// Verdict per cell of a `(u0r, rho0)` grid at fixed `(r, u0, phi0r)`.
    Sweep {
        /// `r,u0,phi0r`.
        #[arg(long, allow_hyphen_values = true)]
        base: String,
        /// `lo:hi:n`.
        #[arg(long, conflicts_with = "a_line", allow_hyphen_values = true)]
        u0r: Option<String>,
        /// `lo:hi:n`.
        #[arg(long, allow_hyphen_values = true)]
        rho0: String,
        /// Space the rho0 cells logarithmically.
        #[arg(long)]
        log_rho: bool,
        /// Hold `a` fixed and derive `u0r` from each rho0.
        #[arg(long, allow_hyphen_values = true)]
        a_line: Option<f64>,
    },
    /// Integrate the characteristic system through one point.
    Simulate {
        /// `r,u0,phi0r,u0r,rho0`.
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        /// End time; defaults to 2.1 periods (c > 0) or the decay horizon (c = 0).
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 401)]
        samples: usize,
    },
    /// Sample q-s orbits.
    Phase {
        /// `q0,s0`; repeatable. Defaults to a family of orbits through q = 0.
        #[arg(long = "orbit", allow_hyphen_values = true)]
        orbits: Vec<String>,
        /// Periods per orbit when c > 0.
        #[arg(long, default_value_t = 1.0)]
        periods: f64,
        /// End time when c = 0.
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Run the verification suites.
    Verify {
        #[arg(long, default_value = "invariants", value_parser = ["invariants", "all"])]
        suite: String,
    },
}

impl Common {
    /// Config file (or defaults) with flags applied on top, validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(spec) = &self.params {
            cfg.params = parse_params(spec, cfg.params)?;
        }
        cfg.tolerances = Tolerances::new(
            self.tol_rel.unwrap_or(cfg.tolerances.rel),
            self.tol_abs.unwrap_or(cfg.tolerances.abs),
        );
        if let Some(m) = self.margin {
            cfg.margin = MarginPolicy::new(m)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.out = Some(out.clone());
        }
        if let Some(f) = self.format {
            cfg.output.format = Some(f);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let cfg = cli.common.resolve()?;
    match cli.command {
        Command::Classify { point, profile, radii, radii_grid } => {
            commands::classify(&cfg, point.as_deref(), profile.as_deref(), radii.as_deref(), radii_grid)
        }
        Command::Sweep { base, u0r, rho0, log_rho, a_line } => {
            commands::sweep(&cfg, &base, u0r.as_deref(), &rho0, log_rho, a_line)
        }
        Command::Simulate { point, horizon, samples } => commands::simulate(&cfg, &point, horizon, samples),
        Command::Phase { orbits, periods, horizon, samples } => commands::phase(&cfg, &orbits, periods, horizon, samples),
        Command::Verify { suite } => commands::verify(&cfg, &suite),
    }
}
