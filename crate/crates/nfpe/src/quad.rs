//! Adaptive quadrature helpers shared by the stationary-state and
//! hypothesis-checking code paths.

use crate::{Error, Result};

/// Budget guard for adaptive refinement.
const MAX_DEPTH: usize = 60;

/// Adaptive Simpson with absolute-error target `tol`.
///
/// Classic recursive scheme with the 1/15 Richardson error estimate. Returns
/// `Error::Quadrature` when the budget runs out before the estimate reaches
/// `tol` (e.g. a non-integrable user coefficient).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut evals = 0usize;
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut evals)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    evals: &mut usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a).abs() < 1e-14 * (a.abs() + b.abs() + 1.0) {
        if depth == 0 && delta.abs() > 15.0 * tol {
            return Err(Error::Quadrature { a, b, tol, estimate: delta.abs() / 15.0 });
        }
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature { a, b, tol, estimate: delta.abs() / 15.0 });
    }
    let l = simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals)?;
    let r = simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, evals)?;
    Ok(l + r)
}

/// Nodes/weights of the 7-point Gauss-Legendre rule on [-1, 1].
const GL7_X: [f64; 7] = [
    -0.949107912342758524526189684048,
    -0.741531185599394439863864773281,
    -0.405845151377397166906606412077,
    0.0,
    0.405845151377397166906606412077,
    0.741531185599394439863864773281,
    0.949107912342758524526189684048,
];
const GL7_W: [f64; 7] = [
    0.129484966168869693270611432679,
    0.279705391489276667901467771424,
    0.381830050505118944950369775489,
    0.417959183673469387755102040816,
    0.381830050505118944950369775489,
    0.279705391489276667901467771424,
    0.129484966168869693270611432679,
];

/// Fixed 7-point Gauss-Legendre quadrature on [a, b]. Used for per-cell
/// averages where the integrand is smooth and the cells are already fine.
pub fn gauss7<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in GL7_X.iter().zip(GL7_W.iter()) {
        s += w * f(c + h * x);
    }
    s * h
}

/// Integrate `f` over [a, ∞) by doubling the upper limit until the increment
/// falls below `tol` (relative). Returns `(value, converged)`.
pub fn tail_integral<F: Fn(f64) -> f64>(f: &F, a: f64, tol: f64) -> Result<(f64, bool)> {
    let mut lo = a;
    let mut hi = (2.0 * a).max(a + 1.0);
    let mut total = 0.0;
    for _ in 0..40 {
        let piece = adaptive_simpson(f, lo, hi, tol * 1e-2)?;
        total += piece;
        if piece.abs() <= tol * (total.abs().max(1e-300)) {
            return Ok((total, true));
        }
        lo = hi;
        hi *= 2.0;
    }
    Ok((total, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_matches_closed_forms() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn simpson_handles_log_singularity_via_substitution() {
        // ∫_0^1 ln(1/x) dx = 1, computed as ∫_0^∞ t e^{-t} dt in t-space.
        let v = adaptive_simpson(&|t: f64| t * (-t).exp(), 0.0, 60.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gauss7_is_exact_on_low_degree_polynomials() {
        let v = gauss7(&|x| x * x * x * x, -1.0, 3.0);
        assert!((v - (3.0f64.powi(5) + 1.0) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn tail_integral_converges_for_decaying_integrand() {
        let (v, ok) = tail_integral(&|x: f64| (-x).exp(), 0.0, 1e-10).unwrap();
        assert!(ok);
        assert!((v - 1.0).abs() < 1e-8);
    }
}
