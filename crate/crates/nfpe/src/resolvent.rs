//! One implicit-Euler step: the nonlinear elliptic solve
//! u + λ(-Δβ_{ε,M}(u) + div(D b(u)u)) = f on the radial finite-volume grid,
//! with zero-flux boundaries. Damped Newton on tridiagonal systems, with a
//! diagonally boosted fallback and ε-continuation for degenerate diffusions.

use std::sync::Arc;

use crate::coefficients::{DiffusionSpec, MobilitySpec, PotentialSpec, RegularizedDiffusion};
use crate::grid::{DensityField, RadialGrid};
use crate::stationary::{GTable, StationaryOptions};
use crate::{Error, Result};

/// How the mobility is evaluated at a face.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Face mobility w = Δβ_ε/Δg_ε (a generalized logarithmic mean of
    /// s·b(s)): the flux is -A·w·[Δ(g_ε(u)+Φ)]/Δr, which vanishes exactly at
    /// the discrete Gibbs state. Falls back to upwinding near vacuum.
    WellBalanced,
    /// Donor-cell mobility chosen by the sign of the drift -φ'.
    Upwind,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    /// Mass-weighted l1 residual target.
    pub solver_tol: f64,
    pub max_iter: usize,
    pub scheme: FluxScheme,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { solver_tol: 1e-10, max_iter: 100, scheme: FluxScheme::WellBalanced }
    }
}

/// Convergence record of one elliptic solve.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ResolventSolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub damping_events: usize,
    pub fallback_used: bool,
}

/// The solve operator for fixed coefficients and grid; precomputes face
/// geometry and the g-table used by the well-balanced flux so repeated
/// applications (time stepping, contraction sweeps) are cheap.
pub struct ResolventOperator {
    pub grid: Arc<RadialGrid>,
    pub reg: RegularizedDiffusion,
    mob: MobilitySpec,
    pub opts: SolverOptions,
    gtable: Option<GTable>,
    /// -φ' Δr at interior faces: the potential increment the well-balanced
    /// flux balances against Δg.
    phi_prime_face: Vec<f64>,
    inv_dr: Vec<f64>,
}

impl ResolventOperator {
    pub fn new(
        diff: &DiffusionSpec,
        mob: &MobilitySpec,
        pot: &PotentialSpec,
        grid: &Arc<RadialGrid>,
        eps: f64,
        m_cap: Option<f64>,
        opts: SolverOptions,
    ) -> Result<Self> {
        let reg = RegularizedDiffusion::new(diff.clone(), eps, m_cap)?;
        let gtable = match opts.scheme {
            FluxScheme::WellBalanced => {
                Some(GTable::for_regularized(&reg, mob, &StationaryOptions::default())?)
            }
            FluxScheme::Upwind => None,
        };
        let n = grid.n_cells();
        let inv_dr: Vec<f64> =
            grid.midpoints.windows(2).map(|w| 1.0 / (w[1] - w[0])).collect();
        // For the balanced flux the face potential gradient must be the
        // difference quotient of Φ at the midpoints: then any state with
        // g_ε(u_i) + Φ(x_i) constant has exactly zero flux. The upwind
        // scheme keeps the pointwise derivative at the face.
        let phi_prime_face: Vec<f64> = match opts.scheme {
            FluxScheme::WellBalanced => grid
                .midpoints
                .windows(2)
                .zip(&inv_dr)
                .map(|(w, &idr)| (pot.phi(w[1]) - pot.phi(w[0])) * idr)
                .collect(),
            FluxScheme::Upwind => {
                grid.edges[1..n].iter().map(|&r| pot.phi_prime(r)).collect()
            }
        };
        Ok(ResolventOperator { grid: grid.clone(), reg, mob: mob.clone(), opts, gtable, phi_prime_face, inv_dr })
    }

    /// Solve u + λ·L_h(u) = f. Warm start from f itself.
    pub fn apply(&self, f: &DensityField, lambda: f64) -> Result<(DensityField, ResolventSolveReport)> {
        self.apply_from(f, lambda, None)
    }

    /// Solve with an explicit initial iterate (used by ε-continuation).
    pub fn apply_from(
        &self,
        f: &DensityField,
        lambda: f64,
        start: Option<&[f64]>,
    ) -> Result<(DensityField, ResolventSolveReport)> {
        if lambda <= 0.0 {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
        }
        if f.grid.as_ref() != self.grid.as_ref() {
            return Err(Error::InvalidParameter("field grid differs from operator grid".into()));
        }
        let mut u: Vec<f64> = start.unwrap_or(&f.values).to_vec();
        // aim well below the contract so per-step mass drift stays tiny
        let hard_tol = self.opts.solver_tol * 1e-3;
        let mut report =
            ResolventSolveReport { iterations: 0, final_residual: f64::NAN, damping_events: 0, fallback_used: false };
        let mut boost = 0.0; // diagonal safeguard, raised when Newton stalls
        let mut boost_norm = f64::INFINITY; // residual when the safeguard was raised
        let (mut res, mut norm) = self.residual(&u, f, lambda);
        loop {
            if norm <= hard_tol {
                break;
            }
            if report.iterations >= self.opts.max_iter {
                if norm <= self.opts.solver_tol {
                    break;
                }
                return Err(Error::NonConvergence {
                    iterations: report.iterations,
                    residual: norm,
                    lambda,
                });
            }
            let (lo, dg, up) = self.jacobian(&u, lambda, boost);
            let delta = solve_tridiagonal(&lo, &dg, &up, &res);
            // line search: halve until the residual actually decreases
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> =
                    u.iter().zip(&delta).map(|(ui, di)| ui - alpha * di).collect();
                let (tres, tnorm) = self.residual(&trial, f, lambda);
                if tnorm < norm * (1.0 - 1e-4 * alpha) {
                    u = trial;
                    res = tres;
                    norm = tnorm;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
                report.damping_events += 1;
            }
            if std::env::var("NFPE_TRACE_NEWTON").is_ok() {
                eprintln!("iter {} norm {:.3e} accepted {} boost {}", report.iterations, norm, accepted, boost);
            }
            report.iterations += 1;
            if accepted {
                // the safeguarded iteration is only linear; once it has
                // pulled the residual well down, hand back to full Newton
                // for the quadratic finish
                if boost > 0.0 && norm < 0.1 * boost_norm {
                    boost = 0.0;
                }
            } else {
                if norm <= self.opts.solver_tol {
                    break;
                }
                if boost == 0.0 && norm < boost_norm {
                    // Newton stalled: retry with a diagonally dominant
                    // (Picard-like) iteration matrix
                    boost = 1.0;
                    boost_norm = norm;
                    report.fallback_used = true;
                } else {
                    return Err(Error::NonConvergence {
                        iterations: report.iterations,
                        residual: norm,
                        lambda,
                    });
                }
            }
        }
        report.final_residual = norm;
        Ok((DensityField::new(u, self.grid.clone())?, report))
    }

    /// Outward flux at interior face k+1 (between cells k and k+1),
    /// div-scaled residual, and its mass-weighted l1 norm.
    fn residual(&self, u: &[f64], f: &DensityField, lambda: f64) -> (Vec<f64>, f64) {
        let n = u.len();
        let mut flux = vec![0.0; n + 1];
        for k in 0..n - 1 {
            flux[k + 1] = self.face_flux(k, u[k], u[k + 1]);
        }
        let mut res = Vec::with_capacity(n);
        let mut norm = 0.0;
        for i in 0..n {
            let v = self.grid.cell_volumes[i];
            let r = u[i] + lambda / v * (flux[i + 1] - flux[i]) - f.values[i];
            norm += v * r.abs();
            res.push(r);
        }
        (res, norm)
    }

    fn face_flux(&self, k: usize, ul: f64, ur: f64) -> f64 {
        let a = self.grid.face_areas[k + 1];
        let dphi = self.phi_prime_face[k];
        let (w, _, _) = self.face_mobility(k, ul, ur);
        -a * ((self.reg.value(ur) - self.reg.value(ul)) * self.inv_dr[k] + dphi * w)
    }

    /// Face mobility together with its exact derivatives (∂w/∂ul, ∂w/∂ur);
    /// the full Jacobian keeps Newton quadratic near degenerate states.
    fn face_mobility(&self, k: usize, ul: f64, ur: f64) -> (f64, f64, f64) {
        let mob_d = |s: f64| self.mob.b(s) + self.mob.b_prime(s) * s;
        if let Some(table) = &self.gtable {
            if ul > 0.0 && ur > 0.0 {
                if (ur - ul).abs() <= 1e-12 * (ul + ur) {
                    let um = 0.5 * (ul + ur);
                    return (um * self.mob.b(um), 0.5 * mob_d(um), 0.5 * mob_d(um));
                }
                // both g evaluations stay on the table's cached segments,
                // so failures can only come from a broken user coefficient
                if let (Ok(gl), Ok(gr)) = (table.g(ul), table.g(ur)) {
                    let dgg = gr - gl;
                    // Δβ and Δg share sign (both increase in u), so the
                    // ratio is a positive mobility either way
                    if dgg.abs() > 1e-300 {
                        let dbb = self.reg.value(ur) - self.reg.value(ul);
                        let w = dbb / dgg;
                        // g'(s) = β'_ε(s)/(s b(s))
                        let gpl = self.reg.deriv(ul) / (ul * self.mob.b(ul));
                        let gpr = self.reg.deriv(ur) / (ur * self.mob.b(ur));
                        // the exact slopes are unbounded as one side drains
                        // to vacuum (log-mean singularity); clamp them to a
                        // safe multiple of the smooth-at-equal-arguments
                        // scale so the Newton matrix stays well conditioned
                        let cap = 8.0 * (mob_d(ul).abs() + mob_d(ur).abs());
                        let dwl = ((-self.reg.deriv(ul) + w * gpl) / dgg).clamp(0.0, cap);
                        let dwr = ((self.reg.deriv(ur) - w * gpr) / dgg).clamp(0.0, cap);
                        return (w, dwl, dwr);
                    }
                }
            }
        }
        // donor cell by drift sign; central average on stagnation faces
        let v = -self.phi_prime_face[k];
        let (up, dwl, dwr) = if v > 0.0 {
            (ul, mob_d(ul), 0.0)
        } else if v < 0.0 {
            (ur, 0.0, mob_d(ur))
        } else {
            let um = 0.5 * (ul + ur);
            (um, 0.5 * mob_d(um), 0.5 * mob_d(um))
        };
        (up * self.mob.b(up), dwl, dwr)
    }

    /// Tridiagonal Jacobian of the residual from the exact flux derivatives.
    fn jacobian(&self, u: &[f64], lambda: f64, boost: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = u.len();
        let mut lo = vec![0.0; n];
        let mut dg = vec![0.0; n];
        let mut up = vec![0.0; n];
        // dF/dul and dF/dur per interior face
        let mut dfl = vec![0.0; n + 1];
        let mut dfr = vec![0.0; n + 1];
        for k in 0..n - 1 {
            let a = self.grid.face_areas[k + 1];
            let dphi = self.phi_prime_face[k];
            let (ul, ur) = (u[k], u[k + 1]);
            let (_, dwl, dwr) = self.face_mobility(k, ul, ur);
            dfl[k + 1] = a * (self.reg.deriv(ul) * self.inv_dr[k] - dphi * dwl);
            dfr[k + 1] = -a * (self.reg.deriv(ur) * self.inv_dr[k] + dphi * dwr);
        }
        for i in 0..n {
            let s = lambda / self.grid.cell_volumes[i];
            dg[i] = 1.0 + s * (dfl[i + 1] - dfr[i]);
            if i + 1 < n {
                up[i] = s * dfr[i + 1];
            }
            if i > 0 {
                lo[i] = -s * dfl[i];
            }
        }
        if boost > 0.0 {
            for i in 0..n {
                dg[i] += boost * (lo[i].abs() + up[i].abs());
            }
        }
        (lo, dg, up)
    }
}

/// Thomas algorithm; `lo[0]` and `up[n-1]` are ignored.
fn solve_tridiagonal(lo: &[f64], dg: &[f64], up: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = dg.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up[0] / dg[0];
    d[0] = rhs[0] / dg[0];
    for i in 1..n {
        let m = dg[i] - lo[i] * c[i - 1];
        c[i] = if i + 1 < n { up[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let xi = x[i] - c[i] * x[i + 1];
        x[i] = xi;
    }
    x
}

/// One-shot solve; for repeated applications build a `ResolventOperator`.
/// Degenerate diffusions (ε = 0) that fail directly are retried with
/// ε-continuation, warm-starting each solve from the previous level.
#[allow(clippy::too_many_arguments)]
pub fn apply_resolvent(
    f: &DensityField,
    lambda: f64,
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    eps: f64,
    m_cap: Option<f64>,
    opts: SolverOptions,
) -> Result<(DensityField, ResolventSolveReport)> {
    let op = ResolventOperator::new(diff, mob, pot, &f.grid, eps, m_cap, opts)?;
    match op.apply(f, lambda) {
        Ok(out) => Ok(out),
        Err(e @ Error::NonConvergence { .. }) if eps == 0.0 => {
            let mut warm = f.values.clone();
            for &ek in &[1e-2, 1e-3, 1e-4, 0.0] {
                let o = ResolventOperator::new(diff, mob, pot, &f.grid, ek, m_cap, opts)?;
                match o.apply_from(f, lambda, Some(&warm)) {
                    Ok((u, rep)) if ek == 0.0 => {
                        return Ok((u, ResolventSolveReport { fallback_used: true, ..rep }))
                    }
                    Ok((u, _)) => warm = u.values,
                    Err(_) => return Err(e),
                }
            }
            unreachable!("continuation ladder ends at eps = 0")
        }
        Err(e) => Err(e),
    }
}
