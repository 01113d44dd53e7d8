//! Report files and the exit-code contract.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Verdict;
use crate::ode::characteristic::format_num;
use crate::threshold::ClassificationReport;

pub const EXIT_GLOBAL: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_BREAKDOWN: i32 = 2;
pub const EXIT_MARGINAL: i32 = 3;
/// A verification run finished but some check failed.
pub const EXIT_CHECK_FAILED: i32 = 4;

/// 2 if any verdict is Breakdown, else 3 if any is Marginal, else 0.
pub fn exit_code<I: IntoIterator<Item = Verdict>>(verdicts: I) -> i32 {
    let (mut breakdown, mut marginal) = (false, false);
    for v in verdicts {
        breakdown |= v == Verdict::Breakdown;
        marginal |= v == Verdict::Marginal;
    }
    if breakdown {
        EXIT_BREAKDOWN
    } else if marginal {
        EXIT_MARGINAL
    } else {
        EXIT_GLOBAL
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut writer: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(format_num).unwrap_or_default()
}

pub fn write_classification_csv<W: Write>(writer: W, rows: &[ClassificationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "beta", "q0", "s0", "p0", "rho0", "A0", "kappa", "gamma_min", "gamma_max", "eta1_0", "eta2_0", "deta1_0",
        "deta2_0", "verdict", "reason", "tc_estimate", "margin",
    ])?;
    for r in rows {
        let env = r.envelopes.as_ref();
        w.write_record([
            format_num(r.beta),
            format_num(r.q0),
            format_num(r.s0),
            format_num(r.p0),
            format_num(r.rho0),
            opt(r.a0),
            opt(r.kappa),
            opt(r.gamma_window.map(|g| g[0])),
            opt(r.gamma_window.map(|g| g[1])),
            opt(env.map(|e| e.eta1_0)),
            opt(env.and_then(|e| e.eta2_0)),
            opt(env.map(|e| e.deta1_0)),
            opt(env.and_then(|e| e.deta2_0)),
            r.verdict.to_string(),
            format!("{:?}", r.reason),
            opt(r.tc_estimate),
            format_num(r.margin),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One cell of a region sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub u0r: f64,
    pub rho0: f64,
    /// `(u0 u0_r + k phi0_r) / (r rho0)`, absent when rho0 = 0.
    pub a: Option<f64>,
    pub verdict: Verdict,
    pub margin: f64,
}

/// CSV `u0r,rho0,a,verdict,margin`.
pub fn write_sweep_csv<W: Write>(writer: W, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["u0r", "rho0", "a", "verdict", "margin"])?;
    for c in cells {
        w.write_record([format_num(c.u0r), format_num(c.rho0), opt(c.a), c.verdict.to_string(), format_num(c.margin)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop_oneof![Just(Verdict::Global), Just(Verdict::Breakdown), Just(Verdict::Marginal)]
    }

    proptest! {
        #[test]
        fn exit_code_contract(vs in proptest::collection::vec(verdict(), 0..20)) {
            let code = exit_code(vs.iter().copied());
            if vs.contains(&Verdict::Breakdown) {
                prop_assert_eq!(code, EXIT_BREAKDOWN);
            } else if vs.contains(&Verdict::Marginal) {
                prop_assert_eq!(code, EXIT_MARGINAL);
            } else {
                prop_assert_eq!(code, EXIT_GLOBAL);
            }
            // order never matters
            let mut rev = vs.clone();
            rev.reverse();
            prop_assert_eq!(exit_code(rev), code);
        }
    }

    #[test]
    fn sweep_csv_layout() {
        let cells = [
            SweepCell { u0r: 0.5, rho0: 1.0, a: Some(0.15), verdict: Verdict::Global, margin: 0.2 },
            SweepCell { u0r: 0.5, rho0: 0.0, a: None, verdict: Verdict::Breakdown, margin: 1.0 },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &cells).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "u0r,rho0,a,verdict,margin");
        assert!(lines[1].ends_with("Global,2.000000000000e-1"));
        assert!(lines[2].contains(",,Breakdown,"));
    }
}
