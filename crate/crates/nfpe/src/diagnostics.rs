//! Free-energy functional V(u) = ∫σ(u) + ∫Φu and trajectory geometry
//! probes: distance-to-equilibrium radii, convergence detection, and the
//! late-time isometry drift.

use crate::coefficients::{DiffusionSpec, MobilitySpec, PotentialSpec};
use crate::grid::DensityField;
use crate::quad::gauss7;
use crate::resolvent::ResolventOperator;
use crate::semigroup::TrajectoryRecord;
use crate::stationary::{GTable, StationaryOptions};
use crate::{Error, Result};

/// Entropy density σ(r) = ∫₀^r g(τ) dτ, tabulated in t = ln τ coordinates
/// (integrand g(e^t)e^t is bounded, so the g-singularity at 0 is harmless)
/// and interpolated with cubic Hermite segments using the exact derivative
/// dσ/dt = g(e^t)e^t.
pub struct SigmaTable {
    t_lo: f64,
    dt: f64,
    sig: Vec<f64>,
    /// dσ/dt at the nodes
    dsig: Vec<f64>,
}

const SIG_T_LO: f64 = -64.0;
const SIG_T_HI: f64 = 24.0;
const SIG_PER_UNIT: f64 = 64.0;

impl SigmaTable {
    pub fn build(
        diff: &DiffusionSpec,
        mob: &MobilitySpec,
        opts: &StationaryOptions,
    ) -> Result<Self> {
        let g = GTable::build(diff, mob, 0.0, opts)?;
        let dt = 1.0 / SIG_PER_UNIT;
        let n = ((SIG_T_HI - SIG_T_LO) * SIG_PER_UNIT) as usize;
        let q = |t: f64| g.g(t.exp()).map(|v| v * t.exp());
        let mut sig = Vec::with_capacity(n + 1);
        let mut dsig = Vec::with_capacity(n + 1);
        // σ(e^{t_lo}) itself is below 1e-26 for any sublinear-in-log g;
        // start the accumulation at 0 there.
        let mut acc = 0.0;
        sig.push(acc);
        dsig.push(q(SIG_T_LO)?);
        for k in 0..n {
            let (a, b) = (SIG_T_LO + k as f64 * dt, SIG_T_LO + (k + 1) as f64 * dt);
            // the integrand is smooth; 7-point Gauss per 1/16-wide panel is
            // far below the table's interpolation error
            acc += gauss7_fallible(&q, a, b)?;
            sig.push(acc);
            dsig.push(q(b)?);
        }
        Ok(SigmaTable { t_lo: SIG_T_LO, dt, sig, dsig })
    }

    /// σ(r) for r ≥ 0; σ(0) = 0.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(Error::InvalidParameter(format!("sigma is defined for r >= 0, got {r}")));
        }
        if r == 0.0 {
            return Ok(0.0);
        }
        let t = r.ln();
        if t <= self.t_lo {
            // below the table σ scales essentially linearly in r and is
            // smaller than 1e-26 in magnitude
            return Ok(self.sig[0] * (t - self.t_lo).exp());
        }
        let last = self.sig.len() - 1;
        let k = (((t - self.t_lo) / self.dt).floor() as usize).min(last - 1);
        let x = (t - (self.t_lo + k as f64 * self.dt)) / self.dt;
        let (s0, s1) = (self.sig[k], self.sig[k + 1]);
        let (d0, d1) = (self.dsig[k] * self.dt, self.dsig[k + 1] * self.dt);
        let h00 = (1.0 + 2.0 * x) * (1.0 - x) * (1.0 - x);
        let h10 = x * (1.0 - x) * (1.0 - x);
        let h01 = x * x * (3.0 - 2.0 * x);
        let h11 = x * x * (x - 1.0);
        Ok(h00 * s0 + h10 * d0 + h01 * s1 + h11 * d1)
    }
}

/// Direct quadrature of σ(r) = ∫₀^r g(τ)dτ (reference path; the table is the
/// fast path).
pub fn sigma_eval(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    r: f64,
    opts: &StationaryOptions,
) -> Result<f64> {
    if r < 0.0 {
        return Err(Error::InvalidParameter(format!("sigma is defined for r >= 0, got {r}")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let g = GTable::build(diff, mob, 0.0, opts)?;
    let q = |t: f64| g.g(t.exp()).map(|v| v * t.exp());
    // composite Gauss on [ln r - 64, ln r] in fixed panels
    let t_hi = r.ln();
    let t_lo = (t_hi - 64.0).min(SIG_T_LO);
    let n = ((t_hi - t_lo) * SIG_PER_UNIT).ceil() as usize;
    let dt = (t_hi - t_lo) / n as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let (a, b) = (t_lo + k as f64 * dt, t_lo + (k + 1) as f64 * dt);
        acc += gauss7_fallible(&q, a, b)?;
    }
    Ok(acc)
}

/// 7-point Gauss through an error-carrying integrand.
fn gauss7_fallible<F: Fn(f64) -> Result<f64>>(q: &F, a: f64, b: f64) -> Result<f64> {
    let err = std::cell::RefCell::new(None);
    let value = gauss7(
        &|t| match q(t) {
            Ok(v) => v,
            Err(e) => {
                *err.borrow_mut() = Some(e);
                f64::NAN
            }
        },
        a,
        b,
    );
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct FreeEnergyBreakdown {
    /// ∫σ(u)
    pub entropy: f64,
    /// ∫Φu
    pub internal: f64,
    pub total: f64,
}

/// Cell-midpoint quadrature of V(u) = ∫σ(u) + ∫Φu for u ≥ 0.
pub fn free_energy(
    u: &DensityField,
    sigma: &SigmaTable,
    pot: &PotentialSpec,
) -> Result<FreeEnergyBreakdown> {
    let mut entropy = 0.0;
    let mut internal = 0.0;
    for (cell, ((&ui, &vi), &ri)) in
        u.values.iter().zip(&u.grid.cell_volumes).zip(&u.grid.midpoints).enumerate()
    {
        if ui < -1e-12 {
            return Err(Error::NegativeDensity { cell, value: ui });
        }
        let ui = ui.max(0.0);
        entropy += vi * sigma.eval(ui)?;
        internal += vi * pot.phi(ri) * ui;
    }
    Ok(FreeEnergyBreakdown { entropy, internal, total: entropy + internal })
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct OmegaProbeReport {
    /// |u(t_n) - a|₁ at the stored snapshots.
    pub radii: Vec<f64>,
    /// Mean over the last quartile of snapshots.
    pub limit_radius: f64,
    pub monotone_violations: usize,
    pub max_violation: f64,
    /// Max over tracked late-time pairs of ||S(t)v - S(t)w|₁ - |v - w|₁|.
    pub isometry_drift: f64,
    pub converged: bool,
}

/// Radius sequence, convergence verdict and isometry drift for a stored
/// trajectory. The drift is measured by restarting the evolution from the
/// two snapshots bracketing the last quartile and tracking how much their
/// pairwise distance moves over `restart_horizon`.
pub fn omega_probe(
    traj: &TrajectoryRecord,
    a: &DensityField,
    op: &ResolventOperator,
    restart_horizon: f64,
    conv_tol: f64,
) -> Result<OmegaProbeReport> {
    let radii: Vec<f64> =
        traj.snapshots.iter().map(|s| s.field.l1_distance(a)).collect();
    let slack = 1e-8 + traj.snapshots.len() as f64 * op.opts.solver_tol;
    let mut monotone_violations = 0;
    let mut max_violation = 0.0_f64;
    for w in radii.windows(2) {
        let excess = w[1] - w[0] - slack;
        if excess > 0.0 {
            monotone_violations += 1;
            max_violation = max_violation.max(excess);
        }
    }
    let q = (radii.len() / 4).max(1);
    let limit_radius = radii[radii.len() - q..].iter().sum::<f64>() / q as f64;

    let tail = &traj.snapshots[traj.snapshots.len() - q.max(2)..];
    let mut v = tail.first().unwrap().field.clone();
    let mut w = tail.last().unwrap().field.clone();
    let d0 = v.l1_distance(&w);
    let h = traj.h;
    let steps = (restart_horizon / h).ceil() as usize;
    let mut isometry_drift = 0.0_f64;
    for _ in 0..steps {
        v = op.apply(&v, h)?.0;
        w = op.apply(&w, h)?.0;
        isometry_drift = isometry_drift.max((v.l1_distance(&w) - d0).abs());
    }
    Ok(OmegaProbeReport {
        limit_radius,
        monotone_violations,
        max_violation,
        isometry_drift,
        converged: limit_radius <= conv_tol,
        radii,
    })
}
