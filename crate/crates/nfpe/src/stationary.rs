//! The explicit stationary state a_ε = g_ε⁻¹(μ_ε - Φ): evaluation and
//! inversion of g_ε(r) = ∫₁^r (β'(s)+ε)/(s b(s)) ds, the normalization
//! constant μ_ε, the ε → 0 limit, divergence probes for the bijectivity
//! conditions, and the exponential tail-envelope bounds on g⁻¹.

use std::sync::Arc;

use crate::coefficients::{
    sphere_surface_coef, DiffusionSpec, MobilitySpec, PotentialSpec, RegularizedDiffusion,
    ScalarFn,
};
use crate::grid::{DensityField, RadialGrid};
use crate::quad::{adaptive_simpson, tail_integral};
use crate::{Error, Result};

/// Tolerances shared by the routines in this module.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct StationaryOptions {
    /// Absolute quadrature target for g evaluations.
    pub quad_tol: f64,
    /// |g(g⁻¹(y)) - y| target for inversions.
    pub inv_tol: f64,
    /// Normalization residual target |∫a - 1|.
    pub mass_tol: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions { quad_tol: 1e-10, inv_tol: 1e-10, mass_tol: 1e-9 }
    }
}

/// In t = ln r coordinates the integrand of g becomes
/// h(t) = (β'(e^t)+ε)/b(e^t) and the logarithmic singularity at r = 0
/// disappears. Values of g are cached at evenly spaced t-nodes; a point
/// evaluation adds one short local quadrature, and inversion runs a
/// bracketed Newton iteration with the analytic slope dg/dt = h(t).
pub struct GTable {
    /// t-space integrand h(t) = (β'(e^t)+ε)/b(e^t), also the slope dg/dt.
    h: ScalarFn,
    pub eps: f64,
    quad_tol: f64,
    inv_tol: f64,
    t_lo: f64,
    dt: f64,
    cum: Vec<f64>,
}

/// Lowest tabulated t = ln r; e^{-704} is at the edge of normal doubles, so
/// densities whose true value lies below that are representable only as 0.
const T_LO: f64 = -704.0;
const T_HI: f64 = 64.0;
const SEGMENTS_PER_UNIT: f64 = 16.0;

impl GTable {
    pub fn build(
        diff: &DiffusionSpec,
        mob: &MobilitySpec,
        eps: f64,
        opts: &StationaryOptions,
    ) -> Result<Self> {
        if eps < 0.0 {
            return Err(Error::InvalidParameter(format!("eps = {eps} must be >= 0")));
        }
        let h = Self::integrand(diff.clone(), mob.clone(), eps);
        Self::from_integrand(h, eps, opts)
    }

    /// g for the ε,M-regularized diffusion (derivative capped beyond ±M).
    pub fn for_regularized(
        reg: &RegularizedDiffusion,
        mob: &MobilitySpec,
        opts: &StationaryOptions,
    ) -> Result<Self> {
        let eps = reg.eps;
        let reg = reg.clone();
        let mob = mob.clone();
        let h: ScalarFn = Arc::new(move |t: f64| {
            let s = t.exp();
            reg.deriv(s) / mob.b(s)
        });
        Self::from_integrand(h, eps, opts)
    }

    fn from_integrand(h: ScalarFn, eps: f64, opts: &StationaryOptions) -> Result<Self> {
        let dt = 1.0 / SEGMENTS_PER_UNIT;
        let n_seg = ((T_HI - T_LO) * SEGMENTS_PER_UNIT) as usize;
        let mut cum = Vec::with_capacity(n_seg + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        let hf = |t: f64| h(t);
        for k in 0..n_seg {
            let (a, b) = (T_LO + k as f64 * dt, T_LO + (k + 1) as f64 * dt);
            acc += adaptive_simpson(&hf, a, b, 1e-13)?;
            cum.push(acc);
        }
        // anchor g(1) = 0 at the t = 0 node
        let idx0 = ((0.0 - T_LO) * SEGMENTS_PER_UNIT).round() as usize;
        let shift = cum[idx0];
        for c in &mut cum {
            *c -= shift;
        }
        Ok(GTable { h, eps, quad_tol: opts.quad_tol, inv_tol: opts.inv_tol, t_lo: T_LO, dt, cum })
    }

    fn integrand(diff: DiffusionSpec, mob: MobilitySpec, eps: f64) -> ScalarFn {
        Arc::new(move |t: f64| {
            let s = t.exp();
            (diff.beta_prime(s) + eps) / mob.b(s)
        })
    }

    fn g_of_t(&self, t: f64) -> Result<f64> {
        let h = &self.h;
        let last = self.cum.len() - 1;
        let k = (((t - self.t_lo) / self.dt).floor().max(0.0) as usize).min(last);
        let t_k = self.t_lo + k as f64 * self.dt;
        Ok(self.cum[k] + adaptive_simpson(&|t| h(t), t_k, t, self.quad_tol)?)
    }

    /// g_ε(r) for r > 0.
    pub fn g(&self, r: f64) -> Result<f64> {
        if r <= 0.0 {
            return Err(Error::InvalidParameter(format!("g is defined for r > 0, got {r}")));
        }
        self.g_of_t(r.ln())
    }

    pub fn g_min(&self) -> f64 {
        self.cum[0]
    }

    /// r with |g(r) - y| ≤ inv_tol; errors when the bracket expansion budget
    /// is exhausted (g appears bounded on the needed side).
    pub fn g_inverse(&self, y: f64) -> Result<f64> {
        let (mut lo, mut hi) = self.bracket(y)?;
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gv = self.g_of_t(t)?;
            if (gv - y).abs() <= self.inv_tol {
                return Ok(t.exp());
            }
            if gv < y {
                lo = t;
            } else {
                hi = t;
            }
            if hi - lo < 4.0 * f64::EPSILON * (1.0 + t.abs()) {
                // interval at float resolution; g may be steep here
                return Ok((0.5 * (lo + hi)).exp());
            }
            let slope = (self.h)(t);
            let newton = t - (gv - y) / slope;
            t = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(Error::NonConvergence { iterations: 200, residual: f64::NAN, lambda: y })
    }

    /// Like `g_inverse`, but a target below the entire tabulated range maps
    /// to 0: when g diverges at 0⁺ the true preimage is < e^{-704}, i.e. not
    /// a positive double. Callers must have established that divergence.
    pub fn inverse_or_zero(&self, y: f64) -> Result<f64> {
        if y < self.cum[0] {
            Ok(0.0)
        } else {
            self.g_inverse(y)
        }
    }

    fn bracket(&self, y: f64) -> Result<(f64, f64)> {
        let last = self.cum.len() - 1;
        if y < self.cum[0] {
            return Err(Error::RangeExhausted {
                target: y,
                context: "g stays above the target as r -> 0+; \
                          g may have a finite lower limit"
                    .into(),
            });
        }
        if y <= self.cum[last] {
            // cum is nondecreasing; find the segment containing y
            let k = self.cum.partition_point(|&c| c < y).min(last);
            let k = k.saturating_sub(1);
            return Ok((self.t_lo + k as f64 * self.dt, self.t_lo + (k + 1) as f64 * self.dt));
        }
        let mut t = self.t_lo + last as f64 * self.dt;
        let mut width = 1.0;
        for _ in 0..60 {
            let t2 = t + width;
            if self.g_of_t(t2)? >= y {
                return Ok((t, t2));
            }
            t = t2;
            width *= 2.0;
        }
        Err(Error::RangeExhausted {
            target: y,
            context: "g stays below the target as r -> infinity; \
                      g may have a finite upper limit"
                .into(),
        })
    }
}

/// One-shot quadrature evaluation of g_ε(r) (no table).
pub fn g_eval(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    eps: f64,
    r: f64,
    quad_tol: f64,
) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::InvalidParameter(format!("g is defined for r > 0, got {r}")));
    }
    let h = GTable::integrand(diff.clone(), mob.clone(), eps);
    adaptive_simpson(&|t| h(t), 0.0, r.ln(), quad_tol)
}

/// Convenience inversion via a freshly built table.
pub fn g_inverse(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    eps: f64,
    y: f64,
    opts: &StationaryOptions,
) -> Result<f64> {
    GTable::build(diff, mob, eps, opts)?.g_inverse(y)
}

/// Probe values of g at r = 10^{±k} and the divergence verdicts for the two
/// bijectivity conditions (g → +∞ at ∞, g → -∞ at 0⁺). Sampling can never
/// prove a limit; the verdict is "diverges" only when the probes move
/// monotonically past a threshold with non-vanishing increments.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DivergenceReport {
    /// g(10^k), k = 1..k_max
    pub upper_probes: Vec<f64>,
    /// g(10^{-k}), k = 1..k_max
    pub lower_probes: Vec<f64>,
    pub upper_diverges: bool,
    pub lower_diverges: bool,
}

pub fn check_divergence(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    eps: f64,
) -> Result<DivergenceReport> {
    const K_MAX: usize = 8;
    const THRESHOLD: f64 = 3.0;
    const MIN_INCREMENT: f64 = 0.01;
    let mut upper = Vec::with_capacity(K_MAX);
    let mut lower = Vec::with_capacity(K_MAX);
    for k in 1..=K_MAX {
        upper.push(g_eval(diff, mob, eps, 10f64.powi(k as i32), 1e-10)?);
        lower.push(g_eval(diff, mob, eps, 10f64.powi(-(k as i32)), 1e-10)?);
    }
    let diverges = |probes: &[f64], sign: f64| {
        probes.windows(2).all(|w| sign * (w[1] - w[0]) >= MIN_INCREMENT)
            && sign * probes[K_MAX - 1] >= THRESHOLD
    };
    Ok(DivergenceReport {
        upper_diverges: diverges(&upper, 1.0),
        lower_diverges: diverges(&lower, -1.0),
        upper_probes: upper,
        lower_probes: lower,
    })
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MuReport {
    pub iterations: usize,
    pub residual: f64,
    pub bracket: (f64, f64),
}

/// Per-cell quadrature nodes for the radial integral ∫₀^R f(r)·dω_d r^{d-1}dr
/// (7-point Gauss per cell): (radius, weight) pairs.
fn radial_quad_nodes(grid: &RadialGrid) -> Vec<(f64, f64)> {
    // Gauss-Legendre 7 on [-1, 1]
    const X: [f64; 7] = [
        -0.9491079123427585,
        -0.7415311855993945,
        -0.4058451513773972,
        0.0,
        0.4058451513773972,
        0.7415311855993945,
        0.9491079123427585,
    ];
    const W: [f64; 7] = [
        0.1294849661688697,
        0.2797053914892766,
        0.3818300505051189,
        0.4179591836734694,
        0.3818300505051189,
        0.2797053914892766,
        0.1294849661688697,
    ];
    let surf = sphere_surface_coef(grid.d);
    let mut nodes = Vec::with_capacity(7 * grid.n_cells());
    for cell in grid.edges.windows(2) {
        let (a, b) = (cell[0], cell[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in X.iter().zip(&W) {
            let r = mid + half * x;
            nodes.push((r, w * half * surf * r.powi(grid.d as i32 - 1)));
        }
    }
    nodes
}

/// Normalization constant: the μ with ∫ g⁻¹_ε(μ - Φ) dx = 1 over the
/// truncated ball, found by bisection on the monotone mass map.
pub fn solve_mu(
    table: &GTable,
    pot: &PotentialSpec,
    grid: &RadialGrid,
    opts: &StationaryOptions,
) -> Result<(f64, MuReport)> {
    let nodes = radial_quad_nodes(grid);
    let phis: Vec<f64> = nodes.iter().map(|&(r, _)| pot.phi(r)).collect();
    let mass_of = |mu: f64| -> Result<f64> {
        let mut m = 0.0;
        for (&(_, w), &phi) in nodes.iter().zip(&phis) {
            match table.inverse_or_zero(mu - phi) {
                Ok(a) => m += w * a,
                // above the reachable range the density is effectively
                // unbounded; report infinite mass so bisection backs off
                Err(Error::RangeExhausted { .. }) => return Ok(f64::INFINITY),
                Err(e) => return Err(e),
            }
        }
        Ok(m)
    };

    let mut hi = 1.0;
    let mut n = 0;
    while mass_of(hi)? < 1.0 {
        hi = if hi > 0.0 { hi * 2.0 } else { 1.0 };
        n += 1;
        if n > 60 {
            return Err(Error::RangeExhausted {
                target: 1.0,
                context: "no upper bracket for the normalization constant".into(),
            });
        }
    }
    let mut lo = -1.0;
    n = 0;
    while mass_of(lo)? >= 1.0 {
        lo *= 2.0;
        n += 1;
        if n > 60 {
            return Err(Error::RangeExhausted {
                target: 1.0,
                context: "no lower bracket for the normalization constant".into(),
            });
        }
    }
    let bracket = (lo, hi);
    let mut iterations = 0;
    while hi - lo > 1e-13 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mass_of(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
        if iterations > 200 {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    let residual = (mass_of(mu)? - 1.0).abs();
    if residual > opts.mass_tol {
        return Err(Error::NonConvergence { iterations, residual, lambda: mu });
    }
    Ok((mu, MuReport { iterations, residual, bracket }))
}

/// Equilibrium density with its normalization constant and diagnostics.
#[derive(Clone, Debug)]
pub struct StationaryState {
    pub field: DensityField,
    pub mu: f64,
    pub eps: f64,
    pub mass_residual: f64,
    pub mu_report: MuReport,
}

/// Assemble a_ε = g⁻¹_ε(μ_ε - Φ) as exact (7-point Gauss) cell averages, so
/// the discrete mass agrees with the continuum normalization integral.
pub fn stationary_state(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    grid: &Arc<RadialGrid>,
    eps: f64,
    opts: &StationaryOptions,
) -> Result<StationaryState> {
    if eps == 0.0 {
        let div = check_divergence(diff, mob, 0.0)?;
        if !div.upper_diverges || !div.lower_diverges {
            return Err(Error::RangeExhausted {
                target: 0.0,
                context: format!(
                    "g must diverge at both ends for the limit equilibrium \
                     (probes: upper {:?}, lower {:?})",
                    div.upper_diverges, div.lower_diverges
                ),
            });
        }
    }
    let table = GTable::build(diff, mob, eps, opts)?;
    let (mu, mu_report) = solve_mu(&table, pot, grid, opts)?;
    let mut values = Vec::with_capacity(grid.n_cells());
    let nodes = radial_quad_nodes(grid);
    for (i, cell) in nodes.chunks(7).enumerate() {
        let mut cell_mass = 0.0;
        for &(r, w) in cell {
            cell_mass += w * table.inverse_or_zero(mu - pot.phi(r))?;
        }
        values.push(cell_mass / grid.cell_volumes[i]);
    }
    let field = DensityField::new(values, grid.clone())?;
    let mass_residual = (field.mass() - 1.0).abs();
    Ok(StationaryState { field, mu, eps, mass_residual, mu_report })
}

/// Pointwise-midpoint Gibbs profile g⁻¹_ε(μ - Φ(x_i)). This is the exact
/// fixed point of the balanced finite-volume flux (the cell-averaged
/// [`stationary_state`] field sits an O(h²) averaging error away from it),
/// so it is the right reference for discrete contraction statements.
pub fn scheme_equilibrium(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    grid: &Arc<RadialGrid>,
    eps: f64,
    mu: f64,
    opts: &StationaryOptions,
) -> Result<DensityField> {
    let table = GTable::build(diff, mob, eps, opts)?;
    let values: Vec<f64> = grid
        .midpoints
        .iter()
        .map(|&r| table.inverse_or_zero(mu - pot.phi(r)))
        .collect::<Result<_>>()?;
    DensityField::new(values, grid.clone())
}

/// Cauchy record of the ε-ladder a_{ε₀} , a_{ε₀/2}, ...
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LimitReport {
    pub eps_values: Vec<f64>,
    pub mu_values: Vec<f64>,
    /// |a_{ε_k} - a_{ε_{k+1}}|₁ for consecutive rungs.
    pub gaps: Vec<f64>,
    pub strictly_decreasing: bool,
    pub final_gap: f64,
    /// L¹ distance from the last rung to the ε = 0 state.
    pub limit_gap: f64,
}

/// Default ladder ε_k = ε₀·2^{-k}.
pub fn default_eps_ladder(eps0: f64, halvings: usize) -> Vec<f64> {
    (0..=halvings).map(|k| eps0 / (1u64 << k) as f64).collect()
}

/// Descend the ε-ladder, record the consecutive L¹ gaps, and return the
/// ε = 0 state together with the Cauchy record.
pub fn stationary_limit(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    grid: &Arc<RadialGrid>,
    ladder: &[f64],
    opts: &StationaryOptions,
) -> Result<(StationaryState, LimitReport)> {
    if ladder.len() < 2 || ladder.windows(2).any(|w| w[1] >= w[0]) || ladder[0] <= 0.0 {
        return Err(Error::InvalidParameter(
            "eps ladder must be strictly decreasing and positive".into(),
        ));
    }
    let mut states = Vec::with_capacity(ladder.len());
    for &eps in ladder {
        states.push(stationary_state(diff, mob, pot, grid, eps, opts)?);
    }
    let gaps: Vec<f64> =
        states.windows(2).map(|w| w[0].field.l1_distance(&w[1].field)).collect();
    let limit = stationary_state(diff, mob, pot, grid, 0.0, opts)?;
    let limit_gap = states.last().unwrap().field.l1_distance(&limit.field);
    let report = LimitReport {
        eps_values: ladder.to_vec(),
        mu_values: states.iter().map(|s| s.mu).collect(),
        strictly_decreasing: gaps.windows(2).all(|w| w[1] < w[0]),
        final_gap: *gaps.last().unwrap(),
        gaps,
        limit_gap,
    };
    Ok((limit, report))
}

/// Which exponential envelope applies, by the sublinearity exponent ν.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeBranch {
    /// ν ≤ 1: g⁻¹(y) ≤ exp((b₀y + β(1) - μ₁)/μ₂) for y ≤ (μ₁-β(1))/b₀.
    SubLinear,
    /// ν > 1: g⁻¹(y) ≤ exp((b₀y + β(1))/μ₂) for y ≤ -β(1)/b₀.
    SuperLinear,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BoundReport {
    pub branch: EnvelopeBranch,
    /// (y, envelope(y) - g⁻¹(y)); nonnegative when the bound holds.
    pub envelope_margins: Vec<(f64, f64)>,
    /// (r, g(r) - lower(r), upper(r) - g(r)) for the b-weighted sandwich
    /// around g̃(r) = β(r)/r - β(1) + ∫₁^r β(s)/s² ds.
    pub sandwich_margins: Vec<(f64, f64, f64)>,
    /// Envelope-weighted tail integral ∫ e^{-(b₀/μ₂)Φ} Φ dx and whether the
    /// doubling quadrature converged.
    pub weighted_integral: f64,
    pub weighted_converged: bool,
    pub passed: bool,
}

/// g̃(r) = β(r)/r - β(1) + ∫₁^r β(s)/s² ds (log-substituted near 0).
fn g_tilde(diff: &DiffusionSpec, r: f64) -> Result<f64> {
    let integral = if r >= 1.0 {
        adaptive_simpson(&|s: f64| diff.beta(s) / (s * s), 1.0, r, 1e-12)?
    } else {
        // s = e^{-t}: ∫₁^r β(s)/s² ds = -∫₀^{-ln r} β(e^{-t}) e^t dt
        -adaptive_simpson(&|t: f64| diff.beta((-t).exp()) * t.exp(), 0.0, -r.ln(), 1e-12)?
    };
    Ok(diff.beta(r) / r - diff.beta(1.0) + integral)
}

/// Check the exponential envelope on g⁻¹, the b-weighted sandwich between g
/// and g̃, and convergence of the envelope-weighted tail integral.
pub fn envelope_check(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    opts: &StationaryOptions,
) -> Result<BoundReport> {
    let beta1 = diff.beta(1.0);
    let (branch, cap, shift) = if diff.nu <= 1.0 {
        (EnvelopeBranch::SubLinear, (diff.mu1 - beta1) / mob.b0, beta1 - diff.mu1)
    } else {
        (EnvelopeBranch::SuperLinear, -beta1 / mob.b0, beta1)
    };
    let table = GTable::build(diff, mob, 0.0, opts)?;
    let mut envelope_margins = Vec::with_capacity(20);
    for j in 0..20 {
        let y = cap - 0.5 * j as f64;
        let envelope = ((mob.b0 * y + shift) / diff.mu2).exp();
        let inv = table.inverse_or_zero(y)?;
        envelope_margins.push((y, envelope - inv));
    }

    let mut sandwich_margins = Vec::with_capacity(20);
    for j in 0..20 {
        // ten sample radii in (0, 1], ten in (1, ~150)
        let r = ((j as f64 - 9.0).exp()).min(150.0);
        let gt = g_tilde(diff, r)?;
        let g = table.g(r)?;
        let (lower, upper) = if r <= 1.0 {
            (gt / mob.b0, gt / mob.b_sup) // g̃ ≤ 0 here
        } else {
            (gt / mob.b_sup, gt / mob.b0)
        };
        sandwich_margins.push((r, g - lower, upper - g));
    }

    let surf = sphere_surface_coef(pot.d);
    let weight = |r: f64| {
        (-(mob.b0 / diff.mu2) * pot.phi(r)).exp() * pot.phi(r) * surf * r.powi(pot.d as i32 - 1)
    };
    let (weighted_integral, weighted_converged) = tail_integral(&weight, 0.0, 1e-10)?;

    let qslack = 10.0 * opts.inv_tol;
    let passed = envelope_margins.iter().all(|&(_, m)| m >= -qslack)
        && sandwich_margins.iter().all(|&(_, lo, hi)| lo >= -qslack && hi >= -qslack)
        && weighted_converged;
    Ok(BoundReport {
        branch,
        envelope_margins,
        sandwich_margins,
        weighted_integral,
        weighted_converged,
        passed,
    })
}
