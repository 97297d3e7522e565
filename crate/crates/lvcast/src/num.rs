//! Shared numeric helpers: special functions, safeguarded root finding on
//! monotone CDFs, and small vector statistics.

use crate::error::{Error, Result};
use statrs::function::erf;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-(0.5) * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via erfc, accurate in both tails.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. statrs' inverse-erf start, then Newton polish
/// so that |cdf(q) - p| is at machine precision for interior p.
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_quantile requires p in (0,1)");
    let mut q = std::f64::consts::SQRT_2 * erf::erf_inv(2.0 * p - 1.0);
    for _ in 0..2 {
        let f = norm_cdf(q) - p;
        let d = norm_pdf(q);
        if d <= 0.0 {
            break;
        }
        let step = f / d;
        if !step.is_finite() {
            break;
        }
        q -= step;
        if step.abs() < 1e-14 * (1.0 + q.abs()) {
            break;
        }
    }
    q
}

/// Trigamma function psi'(x) for x > 0: recurrence up to x >= 6, then the
/// asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires x > 0");
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9)
    let series = inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)));
    acc + series
}

/// Invert a nondecreasing CDF by safeguarded Newton/bisection.
///
/// `support` bounds the search; brackets are grown geometrically from
/// `(lo, hi)` until they straddle `p`. Terminates when |cdf(q) - p| <= tol_p.
pub fn invert_cdf(
    cdf: &dyn Fn(f64) -> f64,
    pdf: Option<&dyn Fn(f64) -> f64>,
    p: f64,
    mut lo: f64,
    mut hi: f64,
    support: (f64, f64),
    tol_p: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0,1]")));
    }
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    lo = lo.max(support.0);
    hi = hi.min(support.1);

    // Grow the bracket until cdf(lo) <= p <= cdf(hi).
    let mut grow = (hi - lo).abs().max(1.0);
    let mut tries = 0;
    while cdf(lo) > p {
        if lo <= support.0 {
            lo = support.0;
            break;
        }
        lo = (lo - grow).max(support.0);
        grow *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::BracketFailure(format!(
                "lower bracket not found for p={p}"
            )));
        }
    }
    grow = (hi - lo).abs().max(1.0);
    tries = 0;
    while cdf(hi) < p {
        if hi >= support.1 {
            hi = support.1;
            break;
        }
        hi = (hi + grow).min(support.1);
        grow *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::BracketFailure(format!(
                "upper bracket not found for p={p}"
            )));
        }
    }

    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(q) - p;
        if f.abs() <= tol_p {
            return Ok(q);
        }
        if f > 0.0 {
            hi = q;
        } else {
            lo = q;
        }
        let mut next = f64::NAN;
        if let Some(pdf) = pdf {
            let d = pdf(q);
            if d > 0.0 {
                let step = f / d;
                let cand = q - step;
                if cand.is_finite() && cand > lo && cand < hi {
                    next = cand;
                }
            }
        }
        if !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (hi - lo).abs() < f64::EPSILON * (1.0 + q.abs()) {
            return Ok(q);
        }
        q = next;
    }
    Ok(q)
}

/// Adaptive Simpson quadrature on [a, b] with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Arithmetic mean; 0 for empty input.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than 2 values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// p-th sample quantile with linear interpolation (type-7).
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}
