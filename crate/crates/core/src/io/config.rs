//! Run configuration: one JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EpError, Result};
use crate::model::ModelParams;
use crate::ode::Tolerances;
use crate::threshold::{HorizonPolicy, MarginPolicy};
use crate::verify::SamplerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
}

impl std::str::FromStr for Format {
    type Err = EpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(EpError::Config(format!("format must be csv or json, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Main artifact; stdout when absent.
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: ModelParams,
    pub tolerances: Tolerances,
    pub margin: MarginPolicy,
    pub horizon: HorizonPolicy,
    pub sampler: SamplerSpec,
    pub seed: u64,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ModelParams { k: 1.0, c: 1.0, n: 4 },
            tolerances: Tolerances::CLASSIFY,
            margin: MarginPolicy::default(),
            horizon: HorizonPolicy::default(),
            sampler: SamplerSpec::default(),
            seed: 0,
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| EpError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EpError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EpError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !self.tolerances.is_valid() {
            return Err(EpError::Config(format!(
                "tolerances must be positive and finite, got rel={} abs={}",
                self.tolerances.rel, self.tolerances.abs
            )));
        }
        MarginPolicy::new(self.margin.relative)?;
        let h = &self.horizon;
        if !(h.min_time > 0.0 && h.decay_multiple > 0.0 && h.cap >= h.min_time && h.cap.is_finite()) {
            return Err(EpError::Config("horizon needs min_time > 0, decay_multiple > 0 and a finite cap >= min_time".into()));
        }
        self.sampler.validate(&self.params)
    }

    pub fn format(&self) -> Format {
        self.output.format.unwrap_or_default()
    }
}

/// Parses `k=1,c=0.5,N=3`; keys may appear in any order, missing ones keep `base`.
pub fn parse_params(spec: &str, base: ModelParams) -> Result<ModelParams> {
    let mut p = base;
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| EpError::Config(format!("expected key=value in --params, got {part:?}")))?;
        let bad = |e: &dyn std::fmt::Display| EpError::Config(format!("bad value for {key}: {e}"));
        match key.trim() {
            "k" => p.k = value.trim().parse().map_err(|e| bad(&e))?,
            "c" => p.c = value.trim().parse().map_err(|e| bad(&e))?,
            "N" | "n" => p.n = value.trim().parse().map_err(|e| bad(&e))?,
            other => return Err(EpError::Config(format!("unknown parameter {other:?}, expected k, c or N"))),
        }
    }
    p.validate()?;
    Ok(p)
}

/// Comma-separated reals with an exact expected count.
pub fn parse_reals(spec: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| EpError::Config(format!("{what}: {s:?}: {e}"))))
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(EpError::Config(format!("{what} needs {expected} values, got {}", vals.len())));
    }
    if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
        return Err(EpError::Config(format!("{what}: values must be finite, got {v}")));
    }
    Ok(vals)
}

/// `lo:hi:n` grid bounds.
pub fn parse_range(spec: &str, what: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(EpError::Config(format!("{what} must look like lo:hi:n, got {spec:?}")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| EpError::Config(format!("{what}: {s:?}: {e}")));
    let (lo, hi) = (num(lo)?, num(hi)?);
    let n: usize = n.trim().parse().map_err(|e| EpError::Config(format!("{what}: count {n:?}: {e}")))?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(EpError::Config(format!("{what}: bounds must be finite")));
    }
    if n == 0 {
        return Err(EpError::Config(format!("{what}: empty grid")));
    }
    if n > 1 && !(hi > lo) {
        return Err(EpError::Config(format!("{what}: need lo < hi for more than one cell")));
    }
    Ok((lo, hi, n))
}

/// `n` points from `lo` to `hi`, endpoints included; a single point sits at `lo`.
pub fn grid(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
    let (a, b) = if log { (lo.ln(), hi.ln()) } else { (lo, hi) };
    (0..n)
        .map(|i| match i {
            0 => lo,
            _ if i == n - 1 => hi,
            _ => {
                let x = a + (b - a) * i as f64 / (n - 1) as f64;
                if log {
                    x.exp()
                } else {
                    x
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 3}"#).is_ok());
        assert!(RunConfig::from_json(r#"{"sed": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"params": {"k": 1, "c": 1, "N": 4, "x": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"tolerances": {"rel": 1e-9, "abs": 1e-12, "extra": 1}}"#).is_err());
    }

    #[test]
    fn round_trip_and_validation() {
        let cfg = RunConfig { seed: 9, ..RunConfig::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
        let bad = RunConfig { tolerances: Tolerances::new(-1.0, 1e-12), ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn params_flag() {
        let base = ModelParams { k: 1.0, c: 1.0, n: 4 };
        assert_eq!(parse_params("k=2,c=0,N=3", base).unwrap(), ModelParams { k: 2.0, c: 0.0, n: 3 });
        assert_eq!(parse_params("N=6", base).unwrap().n, 6);
        assert!(parse_params("N=1", base).is_err());
        assert!(parse_params("q=1", base).is_err());
        assert!(parse_params("k", base).is_err());
    }

    #[test]
    fn ranges_and_grids() {
        assert_eq!(parse_range("0:1:3", "x").unwrap(), (0.0, 1.0, 3));
        assert!(parse_range("0:1:0", "x").is_err());
        assert!(parse_range("1:0:2", "x").is_err());
        assert!(parse_range("0:1", "x").is_err());
        assert_eq!(grid(0.0, 1.0, 3, false), vec![0.0, 0.5, 1.0]);
        let g = grid(0.01, 100.0, 5, true);
        assert!((g[2] - 1.0).abs() < 1e-12 && g[4] == 100.0);
        assert_eq!(grid(2.0, 3.0, 1, false), vec![2.0]);
        assert_eq!(parse_reals("1, 2,3", 3, "p").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_reals("1,2", 3, "p").is_err());
    }
}
