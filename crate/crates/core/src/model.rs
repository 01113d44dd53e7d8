//! Model parameters, radial initial profiles and per-characteristic data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EpError, Result};
use crate::numerics::{adaptive_simpson, Pchip};

/// Densities below this are treated as exactly zero.
pub const ZERO_DENSITY: f64 = 1e-14;

/// Absolute tolerance for the enclosed-mass integral.
pub const MASS_QUADRATURE_TOL: f64 = 1e-10;

/// Forcing coefficient `k`, background `c` and dimension `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub k: f64,
    pub c: f64,
    #[serde(rename = "N")]
    pub n: u32,
}

impl ModelParams {
    pub fn new(k: f64, c: f64, n: u32) -> Result<Self> {
        let p = Self { k, c, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(EpError::InvalidParams(format!("k must be positive, got {}", self.k)));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(EpError::InvalidParams(format!("c must be nonnegative, got {}", self.c)));
        }
        if self.n < 2 {
            return Err(EpError::InvalidParams(format!("N must be at least 2, got {}", self.n)));
        }
        Ok(())
    }

    /// `N` as a float.
    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn c_over_n(&self) -> f64 {
        self.c / self.nf()
    }

    pub fn is_critical_dim(&self) -> bool {
        self.n == 2
    }

    pub fn zero_background(&self) -> bool {
        self.c == 0.0
    }
}

/// Radial initial data `(r, rho0(r), u0(r))` sampled on increasing radii.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    r: Vec<f64>,
    rho0: Vec<f64>,
    u0: Vec<f64>,
    rho_interp: Pchip,
    u_interp: Pchip,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileRow {
    r: f64,
    rho0: f64,
    u0: f64,
}

impl RadialProfile {
    pub fn new(r: Vec<f64>, rho0: Vec<f64>, u0: Vec<f64>) -> Result<Self> {
        if r.len() != rho0.len() || r.len() != u0.len() {
            return Err(EpError::InvalidProfile("column lengths differ".into()));
        }
        if r.len() < 2 {
            return Err(EpError::InvalidProfile("need at least two samples".into()));
        }
        if r.iter().any(|&v| !(v > 0.0)) {
            return Err(EpError::InvalidProfile("radii must be positive".into()));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EpError::InvalidProfile("radii must be strictly increasing".into()));
        }
        if let Some(v) = rho0.iter().find(|v| !(**v >= 0.0)) {
            return Err(EpError::InvalidProfile(format!("negative or invalid density {v}")));
        }
        let rho_interp = Pchip::new(&r, &rho0)?;
        let u_interp = Pchip::new(&r, &u0)?;
        Ok(Self { r, rho0, u0, rho_interp, u_interp })
    }

    /// Samples analytic profile functions on the given radii.
    pub fn from_fn(radii: &[f64], rho0: impl Fn(f64) -> f64, u0: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            radii.to_vec(),
            radii.iter().map(|&r| rho0(r)).collect(),
            radii.iter().map(|&r| u0(r)).collect(),
        )
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn r_min(&self) -> f64 {
        self.r[0]
    }

    pub fn r_max(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn rho_at(&self, r: f64) -> f64 {
        if r <= self.r_min() {
            return self.rho0[0];
        }
        self.rho_interp.eval(r).max(0.0)
    }

    pub fn u_at(&self, r: f64) -> f64 {
        self.u_interp.eval(r)
    }

    pub fn du_at(&self, r: f64) -> f64 {
        self.u_interp.derivative(r)
    }

    fn from_rows(rows: Vec<ProfileRow>) -> Result<Self> {
        let r = rows.iter().map(|x| x.r).collect();
        let rho = rows.iter().map(|x| x.rho0).collect();
        let u = rows.iter().map(|x| x.u0).collect();
        Self::new(r, rho, u)
    }

    fn rows(&self) -> Vec<ProfileRow> {
        (0..self.r.len())
            .map(|i| ProfileRow { r: self.r[i], rho0: self.rho0[i], u0: self.u0[i] })
            .collect()
    }

    /// Reads CSV with header `r,rho0,u0`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["r", "rho0", "u0"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(a, b)| a != b) {
            return Err(EpError::InvalidProfile(format!(
                "expected header r,rho0,u0, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<ProfileRow>, _>>()?;
        Self::from_rows(rows)
    }

    /// Reads a JSON array of `{"r":..,"rho0":..,"u0":..}`.
    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let rows: Vec<ProfileRow> = serde_json::from_reader(reader)?;
        Self::from_rows(rows)
    }

    /// Loads a profile, choosing the format from the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| EpError::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::read_json(file),
            _ => Self::read_csv(file),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.rows())?;
        Ok(())
    }

    /// `β^{-N} ∫₀^β ρ₀(ξ) ξ^{N-1} dξ`, with ρ₀ held constant below the first sample.
    pub fn mean_mass(&self, beta: f64, n: u32) -> Result<f64> {
        let nf = n as f64;
        let r0 = self.r_min();
        let mut total = self.rho0[0] * r0.powf(nf) / nf;
        let knots: Vec<f64> = self
            .r
            .iter()
            .copied()
            .take_while(|&x| x < beta)
            .chain(std::iter::once(beta))
            .collect();
        let segments = (knots.len() - 1).max(1);
        let tol = MASS_QUADRATURE_TOL * beta.powf(nf) / segments as f64;
        for w in knots.windows(2) {
            total += adaptive_simpson(|x| self.rho_at(x) * x.powi(n as i32 - 1), w[0], w[1], tol)?;
        }
        Ok(total / beta.powf(nf))
    }
}

/// Initial state of one characteristic plus the quantities derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharData {
    pub beta: f64,
    pub q0: f64,
    pub s0: f64,
    pub p0: f64,
    pub rho0: f64,
    pub s_tilde0: f64,
    pub eta0: Option<f64>,
    pub w0: Option<f64>,
    pub a0: Option<f64>,
}

impl CharData {
    pub fn new(beta: f64, q0: f64, s0: f64, p0: f64, rho0: f64, params: &ModelParams) -> Result<Self> {
        for (name, v) in [("beta", beta), ("q0", q0), ("s0", s0), ("p0", p0), ("rho0", rho0)] {
            if !v.is_finite() {
                return Err(EpError::Domain(format!("{name} must be finite, got {v}")));
            }
        }
        if !(beta > 0.0) {
            return Err(EpError::Domain(format!("beta must be positive, got {beta}")));
        }
        if rho0 < 0.0 {
            return Err(EpError::Domain(format!("rho0 must be nonnegative, got {rho0}")));
        }
        let rho0 = if rho0 < ZERO_DENSITY { 0.0 } else { rho0 };
        let s_tilde0 = s0 + params.c_over_n();
        let (eta0, w0, a0) = if rho0 > 0.0 {
            (Some(1.0 / rho0), Some(p0 / rho0), Some((q0 * p0 - params.k * s0) / rho0))
        } else {
            (None, None, None)
        };
        Ok(Self { beta, q0, s0, p0, rho0, s_tilde0, eta0, w0, a0 })
    }

    /// Builds data from the coordinates `(r, u0, phi0_r, u0_r, rho0)`.
    pub fn from_point(r: f64, u0: f64, phi0r: f64, u0r: f64, rho0: f64, params: &ModelParams) -> Result<Self> {
        if !(r > 0.0) {
            return Err(EpError::Domain(format!("radius must be positive, got {r}")));
        }
        Self::new(r, u0 / r, -phi0r / r, u0r, rho0, params)
    }

    /// Same characteristic with another initial density.
    pub fn with_rho0(&self, rho0: f64, params: &ModelParams) -> Result<Self> {
        Self::new(self.beta, self.q0, self.s0, self.p0, rho0, params)
    }

    /// Same characteristic with `eta0`, keeping `w0` fixed.
    pub fn with_eta_w(&self, eta0: f64, w0: f64, params: &ModelParams) -> Result<Self> {
        if !(eta0 > 0.0) {
            return Err(EpError::Domain(format!("eta0 must be positive, got {eta0}")));
        }
        Self::new(self.beta, self.q0, self.s0, w0 / eta0, 1.0 / eta0, params)
    }

    pub fn zero_density(&self) -> bool {
        self.rho0 == 0.0
    }

    pub fn is_equilibrium(&self) -> bool {
        self.q0 == 0.0 && self.s0 == 0.0
    }
}

pub fn radial_to_characteristic(profile: &RadialProfile, beta: f64, params: &ModelParams) -> Result<CharData> {
    params.validate()?;
    let (lo, hi) = (profile.r_min(), profile.r_max());
    if !(beta >= lo && beta <= hi) {
        return Err(EpError::RadiusOutOfRange { beta, min: lo, max: hi });
    }
    let mass = profile.mean_mass(beta, params.n)?;
    let s0 = mass - params.c_over_n();
    let q0 = profile.u_at(beta) / beta;
    let p0 = profile.du_at(beta);
    let mut data = CharData::new(beta, q0, s0, p0, profile.rho_at(beta), params)?;
    // the mean mass is the more accurate value of s0 + c/N
    data.s_tilde0 = mass;
    Ok(data)
}

/// `(q0 p0 - k s0) / rho0`.
pub fn compute_a0(data: &CharData, params: &ModelParams) -> Result<f64> {
    if data.zero_density() {
        return Err(EpError::ZeroDensity("A0"));
    }
    Ok((data.q0 * data.p0 - params.k * data.s0) / data.rho0)
}

/// `(u0 u0_r + k phi0_r) / (r rho0)` evaluated from profile-level fields.
pub fn a0_from_fields(r: f64, u0: f64, phi0r: f64, u0r: f64, rho0: f64, k: f64) -> Result<f64> {
    if rho0 < ZERO_DENSITY {
        return Err(EpError::ZeroDensity("A0"));
    }
    Ok((u0 * u0r + k * phi0r) / (r * rho0))
}

/// `(eta0, w0) = (1/rho0, p0/rho0)`.
pub fn to_eta_w(data: &CharData) -> Result<(f64, f64)> {
    if data.zero_density() {
        return Err(EpError::ZeroDensity("eta0/w0"));
    }
    Ok((1.0 / data.rho0, data.p0 / data.rho0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Global,
    Breakdown,
    Marginal,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Global => "Global",
            Verdict::Breakdown => "Breakdown",
            Verdict::Marginal => "Marginal",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The rule that decided a classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    /// Vanishing density: breakdown when c > 0, or the zero-density test failed when c = 0.
    ZeroDensity,
    /// Zero density with outward flow strong enough to stay bounded (c = 0).
    RhoZeroGlobalBranch,
    /// Equilibrium (q0, s0) = (0, 0) decided by the harmonic closed form.
    Equilibrium,
    /// A never changes sign, forcing breakdown.
    AZeroSignCondition,
    /// The root of A lies outside the attainable Gamma window.
    KappaOutsideWindow,
    /// A stays nonnegative along an expanding characteristic (c = 0).
    NonnegativeA,
    /// eta0 (or w0) lies inside the envelope window.
    EnvelopeContainment,
    /// eta0 (or w0) lies outside the envelope window.
    EnvelopeViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub reason: Reason,
    pub tc_estimate: Option<f64>,
    /// Relative distance to the deciding inequality.
    pub margin: f64,
}
