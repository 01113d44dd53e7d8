//! Bracketed scalar root finding.

use crate::error::{EpError, Result};

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite sign.
///
/// Converges when the bracket is narrower than `xtol + rtol * |x|`.
pub fn brent<F>(mut f: F, a: f64, b: f64, xtol: f64, rtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) {
        return Err(EpError::Root(format!("non-finite bracket values f({a})={fa}, f({b})={fb}")));
    }
    if fa.signum() == fb.signum() {
        return Err(EpError::Root(format!("no sign change on [{a}, {b}]")));
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * (xtol + rtol * b.abs());
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(EpError::Root(format!("non-finite value at x={b}")));
        }
    }
    Err(EpError::Root(format!("no convergence after {max_iter} iterations")))
}

/// Expands `x = start * factor^k` away from `start` until `f` changes sign
/// relative to `f(start)`. Returns the last pair `(inner, outer)` bracketing the root.
///
/// `factor` above 1 expands upward, below 1 shrinks toward zero.
pub fn geometric_bracket<F>(mut f: F, start: f64, factor: f64, max_iter: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let f0 = f(start);
    let mut inner = start;
    let mut outer = start * factor;
    for _ in 0..max_iter {
        let fo = f(outer);
        if fo.is_nan() {
            return Err(EpError::Root(format!("NaN while bracketing at x={outer}")));
        }
        if fo == 0.0 || fo.signum() != f0.signum() {
            return Ok((inner, outer));
        }
        inner = outer;
        outer *= factor;
    }
    Err(EpError::Root(format!("bracket expansion from {start} failed")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt2() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 0.0, 1e-15, 100).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_bracket() {
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0, 50).is_err());
    }

    #[test]
    fn bracket_expands_both_ways() {
        let (a, b) = geometric_bracket(|x| x - 37.0, 1.0, 2.0, 60).unwrap();
        assert!(a < 37.0 && b >= 37.0);
        let (a, b) = geometric_bracket(|x| x - 1e-3, 1.0, 0.5, 60).unwrap();
        assert!(a > 1e-3 && b <= 1e-3);
    }
}
