//! Problem data: the diffusion nonlinearity β, the mobility b and the
//! confining potential Φ, plus built-in instances and a sampled checker for
//! the structural hypotheses they must satisfy.

use std::fmt;
use std::sync::Arc;

use crate::quad::{adaptive_simpson, tail_integral};
use crate::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Diffusion nonlinearity β with its derivative and structural constants:
/// `μ₁ min(|r|^ν, |r|) ≤ |β(r)| ≤ μ₂ |r|`, β odd, β' > 0 away from 0.
#[derive(Clone)]
pub struct DiffusionSpec {
    beta: ScalarFn,
    beta_prime: ScalarFn,
    pub mu1: f64,
    pub mu2: f64,
    pub nu: f64,
    pub name: String,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("name", &self.name)
            .field("mu1", &self.mu1)
            .field("mu2", &self.mu2)
            .field("nu", &self.nu)
            .finish()
    }
}

impl DiffusionSpec {
    /// Build from a profile on [0, ∞); the negative half-line is the odd
    /// extension β(-r) = -β(r).
    pub fn from_profile(
        name: &str,
        beta_pos: ScalarFn,
        beta_prime_pos: ScalarFn,
        mu1: f64,
        mu2: f64,
        nu: f64,
    ) -> Self {
        let bp = beta_pos.clone();
        let beta = Arc::new(move |r: f64| if r >= 0.0 { bp(r) } else { -bp(-r) });
        let beta_prime = Arc::new(move |r: f64| beta_prime_pos(r.abs()));
        DiffusionSpec { beta, beta_prime, mu1, mu2, nu, name: name.to_string() }
    }

    pub fn beta(&self, r: f64) -> f64 {
        (self.beta)(r)
    }

    pub fn beta_prime(&self, r: f64) -> f64 {
        (self.beta_prime)(r)
    }
}

/// Mobility b with bounds `0 < b₀ ≤ b(r) ≤ b_sup`.
#[derive(Clone)]
pub struct MobilitySpec {
    b: ScalarFn,
    b_prime: ScalarFn,
    pub b0: f64,
    pub b_sup: f64,
}

impl fmt::Debug for MobilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MobilitySpec").field("b0", &self.b0).field("b_sup", &self.b_sup).finish()
    }
}

impl MobilitySpec {
    pub fn new(b: ScalarFn, b_prime: ScalarFn, b0: f64, b_sup: f64) -> Self {
        MobilitySpec { b, b_prime, b0, b_sup }
    }

    pub fn constant_one() -> Self {
        MobilitySpec { b: Arc::new(|_| 1.0), b_prime: Arc::new(|_| 0.0), b0: 1.0, b_sup: 1.0 }
    }

    pub fn b(&self, r: f64) -> f64 {
        (self.b)(r)
    }

    pub fn b_prime(&self, r: f64) -> f64 {
        (self.b_prime)(r)
    }
}

/// Radially symmetric confining potential Φ(x) = φ(|x|) with derivatives,
/// the integrability exponent m (Φ^{-m} ∈ L¹) and the ambient dimension.
#[derive(Clone)]
pub struct PotentialSpec {
    phi: ScalarFn,
    phi_prime: ScalarFn,
    phi_second: ScalarFn,
    pub m: f64,
    pub d: usize,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec").field("m", &self.m).field("d", &self.d).finish()
    }
}

impl PotentialSpec {
    pub fn new(
        phi: ScalarFn,
        phi_prime: ScalarFn,
        phi_second: ScalarFn,
        m: f64,
        d: usize,
    ) -> Result<Self> {
        if d < 3 {
            return Err(Error::InvalidParameter(format!("dimension d = {d} must be >= 3")));
        }
        if m < 2.0 {
            return Err(Error::InvalidParameter(format!("exponent m = {m} must be >= 2")));
        }
        Ok(PotentialSpec { phi, phi_prime, phi_second, m, d })
    }

    /// Φ ≡ 1 (test-only; weighted norm degenerates to the L¹ norm).
    pub fn constant_one(d: usize) -> Self {
        PotentialSpec {
            phi: Arc::new(|_| 1.0),
            phi_prime: Arc::new(|_| 0.0),
            phi_second: Arc::new(|_| 0.0),
            m: 2.0,
            d,
        }
    }

    pub fn phi(&self, r: f64) -> f64 {
        (self.phi)(r)
    }

    pub fn phi_prime(&self, r: f64) -> f64 {
        (self.phi_prime)(r)
    }

    pub fn phi_second(&self, r: f64) -> f64 {
        (self.phi_second)(r)
    }
}

/// β_{ε,M}: β(r) + εr capped by the affine C¹ extension beyond ±M.
#[derive(Clone, Debug)]
pub struct RegularizedDiffusion {
    pub base: DiffusionSpec,
    pub eps: f64,
    /// `None` means M = ∞ (β_ε = β + εI).
    pub m_cap: Option<f64>,
}

impl RegularizedDiffusion {
    pub fn new(base: DiffusionSpec, eps: f64, m_cap: Option<f64>) -> Result<Self> {
        if eps < 0.0 || eps > 1.0 {
            return Err(Error::InvalidParameter(format!("eps = {eps} must lie in [0, 1]")));
        }
        if let Some(m) = m_cap {
            if m <= 0.0 {
                return Err(Error::InvalidParameter(format!("M = {m} must be positive")));
            }
        }
        Ok(RegularizedDiffusion { base, eps, m_cap })
    }

    pub fn value(&self, r: f64) -> f64 {
        match self.m_cap {
            Some(m) if r > m => {
                self.base.beta(m) + self.base.beta_prime(m) * (r - m) + self.eps * r
            }
            Some(m) if r < -m => {
                self.base.beta(-m) + self.base.beta_prime(m) * (r + m) + self.eps * r
            }
            _ => self.base.beta(r) + self.eps * r,
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        match self.m_cap {
            Some(m) if r.abs() > m => self.base.beta_prime(m) + self.eps,
            _ => self.base.beta_prime(r) + self.eps,
        }
    }
}

/// Built-in coefficient families.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinCoefficients {
    /// β(r) = r, b ≡ 1: the linear (Boltzmann-Gibbs) case.
    Boltzmann,
    /// β'(s) = -1/log s on (0, δ], bounded C¹ extension beyond; ν = 2.
    Remark33Log { delta: f64 },
    /// β(r) = μ₁ r^ν on [0, r₀], C¹ linear extension beyond.
    PowerDegenerate { nu: f64, r0: f64, mu1: f64 },
}

/// Exponential integral E₁(x) for x > 0 (series for x ≤ 1, modified Lentz
/// continued fraction beyond).
fn exp_int_e1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x <= 1.0 {
        const EULER_GAMMA: f64 = 0.577215664901532860606512090082;
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..=60 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1.0) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else if x > 700.0 {
        0.0
    } else {
        // E1(x) = e^{-x} * CF, CF = 1/(x+1- 1/(x+3- 4/(x+5- 9/(x+7- ...))))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let a = -(i as f64) * (i as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Construct a built-in (β, b) pair with its structural constants.
pub fn make_builtin(which: &BuiltinCoefficients) -> Result<(DiffusionSpec, MobilitySpec)> {
    match which {
        BuiltinCoefficients::Boltzmann => {
            let diff = DiffusionSpec::from_profile(
                "boltzmann",
                Arc::new(|r| r),
                Arc::new(|_| 1.0),
                1.0,
                1.0,
                1.0,
            );
            Ok((diff, MobilitySpec::constant_one()))
        }
        BuiltinCoefficients::Remark33Log { delta } => {
            let delta = *delta;
            if !(0.0 < delta && delta < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "remark33_log requires delta in (0,1), got {delta}"
                )));
            }
            // θ(s) = -1/log s on (0, δ]; ζ(s) = A - B e^{-(s-δ)/δ} beyond,
            // with A, B fixed by C¹ matching at δ.
            let ln_d = delta.ln();
            let b_coef = 1.0 / (ln_d * ln_d); // δ·θ'(δ)
            let a_coef = -1.0 / ln_d + b_coef;
            let theta = move |s: f64| -> f64 {
                if s <= 0.0 {
                    0.0
                } else if s <= delta {
                    -1.0 / s.ln()
                } else {
                    a_coef - b_coef * (-(s - delta) / delta).exp()
                }
            };
            // β(r) = ∫₀^r θ = E₁(-ln r) on (0, δ]; affine-exponential beyond.
            let beta_delta = exp_int_e1(-ln_d);
            let beta_pos = move |r: f64| -> f64 {
                if r <= 0.0 {
                    0.0
                } else if r <= delta {
                    exp_int_e1(-r.ln())
                } else {
                    beta_delta
                        + a_coef * (r - delta)
                        + b_coef * delta * ((-(r - delta) / delta).exp() - 1.0)
                }
            };
            let mu1 = beta_pos(1.0); // ratio β(r)/min(r²,r) is minimized at r = 1
            let mu2 = a_coef; // sup θ
            let diff = DiffusionSpec::from_profile(
                "remark33_log",
                Arc::new(beta_pos),
                Arc::new(theta),
                mu1,
                mu2,
                2.0,
            );
            Ok((diff, MobilitySpec::constant_one()))
        }
        BuiltinCoefficients::PowerDegenerate { nu, r0, mu1 } => {
            let (nu, r0, mu1) = (*nu, *r0, *mu1);
            // Validity threshold ν > (d-1)/d is worst at d = 3.
            if nu <= 2.0 / 3.0 {
                return Err(Error::InvalidParameter(format!(
                    "power_degenerate requires nu > (d-1)/d >= 2/3, got {nu}"
                )));
            }
            if r0 <= 0.0 || mu1 <= 0.0 {
                return Err(Error::InvalidParameter(
                    "power_degenerate requires r0 > 0 and mu1 > 0".into(),
                ));
            }
            let beta_r0 = mu1 * r0.powf(nu);
            let slope = mu1 * nu * r0.powf(nu - 1.0);
            let beta_pos = move |r: f64| -> f64 {
                if r <= r0 {
                    mu1 * r.powf(nu)
                } else {
                    beta_r0 + slope * (r - r0)
                }
            };
            let beta_prime_pos = move |r: f64| -> f64 {
                if r <= r0 {
                    if r == 0.0 && nu < 1.0 {
                        f64::INFINITY
                    } else {
                        mu1 * nu * r.powf(nu - 1.0)
                    }
                } else {
                    slope
                }
            };
            let mu2 = if nu >= 1.0 { slope.max(mu1 * r0.powf(nu - 1.0)) } else { f64::NAN };
            let diff = DiffusionSpec::from_profile(
                "power_degenerate",
                Arc::new(beta_pos),
                Arc::new(beta_prime_pos),
                mu1.min(beta_pos(1.0)),
                mu2,
                nu,
            );
            Ok((diff, MobilitySpec::constant_one()))
        }
    }
}

/// Confining potential in the shape of the introduction's example:
/// `Φ = |x|² log|x| + μ` inside `δ* = exp(-(d+2)/(2d))`, and
/// `φ(|x|) + η|x| + μ` outside, with φ' = -1/((r/δ*)·Q(r)).
pub fn confining_potential(d: usize, mu: f64, eta: f64, gamma1: f64, m: f64) -> Result<PotentialSpec> {
    if d < 3 {
        return Err(Error::InvalidParameter(format!("dimension d = {d} must be >= 3")));
    }
    if eta <= 0.0 || gamma1 <= 0.0 {
        return Err(Error::InvalidParameter("eta and gamma1 must be positive".into()));
    }
    let df = d as f64;
    let delta = (-(df + 2.0) / (2.0 * df)).exp();
    let k_coef = df / (2.0 * delta + eta * df);
    let c2 = delta / (gamma1 * (df - 2.0));
    let q = move |s: f64| k_coef + c2 * ((s / delta).powi(d as i32 - 2) - 1.0);
    let q_prime = move |s: f64| c2 * (df - 2.0) * (s / delta).powi(d as i32 - 3) / delta;

    // ∫_δ^r ds / ((s/δ) Q(s)); closed form for d = 3, quadrature otherwise.
    let outer_int: ScalarFn = if d == 3 {
        let alpha = k_coef - c2;
        if alpha.abs() > 1e-14 {
            Arc::new(move |r: f64| {
                let x = r / delta;
                let f = |x: f64| (x / (alpha + c2 * x)).ln();
                (delta / alpha) * (f(x) - f(1.0))
            })
        } else {
            Arc::new(move |r: f64| (delta / c2) * (1.0 - delta / r))
        }
    } else {
        Arc::new(move |r: f64| {
            adaptive_simpson(&|s: f64| 1.0 / ((s / delta) * q(s)), delta, r, 1e-12)
                .expect("outer potential integrand is smooth")
        })
    };

    let inner_val = move |r: f64| if r > 0.0 { r * r * r.ln() + mu } else { mu };
    let boundary = delta * delta * delta.ln();
    let phi = Arc::new(move |r: f64| {
        if r <= delta {
            inner_val(r)
        } else {
            boundary - eta * delta - outer_int(r) + eta * r + mu
        }
    });
    let phi_prime = Arc::new(move |r: f64| {
        if r <= 0.0 {
            0.0
        } else if r <= delta {
            r * (2.0 * r.ln() + 1.0)
        } else {
            eta - 1.0 / ((r / delta) * q(r))
        }
    });
    let phi_second = Arc::new(move |r: f64| {
        if r <= 0.0 {
            f64::NEG_INFINITY
        } else if r <= delta {
            2.0 * r.ln() + 3.0
        } else {
            delta * (q(r) + r * q_prime(r)) / (r * q(r)).powi(2)
        }
    });
    PotentialSpec::new(phi, phi_prime, phi_second, m, d)
}

/// How densely each inequality is sampled.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SamplingPlan {
    pub r_min: f64,
    pub r_max: f64,
    pub n_beta: usize,
    pub phi_r_max: f64,
    pub n_phi: usize,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan { r_min: 1e-8, r_max: 1e3, n_beta: 10_000, phi_r_max: 50.0, n_phi: 10_000 }
    }
}

impl SamplingPlan {
    fn log_samples(&self, lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        let (llo, lhi) = (lo.ln(), hi.ln());
        (0..n).map(move |k| (llo + (lhi - llo) * k as f64 / (n - 1) as f64).exp())
    }
}

/// One inequality's verdict; a failure records the witnessing sample point.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Smallest slack observed (negative = violated by that much).
    pub worst_margin: f64,
    pub witness: Option<f64>,
}

impl CheckResult {
    fn from_scan(name: &str, scan: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut worst = f64::INFINITY;
        let mut witness = None;
        for (r, margin) in scan {
            let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
            if margin < worst {
                worst = margin;
                witness = Some(r);
            }
        }
        CheckResult {
            name: name.to_string(),
            passed: worst >= 0.0,
            worst_margin: worst,
            witness: if worst < 0.0 { witness } else { None },
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct HypothesisReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

impl HypothesisReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Sampled verification of the structural hypotheses: the sandwich bound and
/// β' > 0, the mobility bounds, Φ ≥ 1 and confinement, the radial form of
/// the drift inequality `μ₂ΔΦ - b₀|∇Φ|² ≤ 0`, and integrability of Φ^{-m}.
/// Failures are report entries, never errors.
pub fn verify_hypotheses(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    plan: &SamplingPlan,
) -> HypothesisReport {
    let slack = 1e-12;
    let mut checks = Vec::new();

    checks.push(CheckResult {
        name: "beta_zero".into(),
        passed: diff.beta(0.0).abs() <= 1e-14,
        worst_margin: -diff.beta(0.0).abs(),
        witness: None,
    });

    checks.push(CheckResult::from_scan(
        "beta_prime_positive",
        plan.log_samples(plan.r_min, plan.r_max, plan.n_beta)
            .flat_map(|r| [r, -r])
            .map(|r| (r, diff.beta_prime(r))),
    ));

    checks.push(CheckResult::from_scan(
        "sandwich_1_2a",
        plan.log_samples(plan.r_min, plan.r_max, plan.n_beta).flat_map(|r| {
            let lower = diff.mu1 * r.powf(diff.nu).min(r);
            let upper = diff.mu2 * r;
            let b = diff.beta(r).abs();
            let tol = slack * (1.0 + b);
            [(r, b - lower + tol), (r, upper - b + tol)]
        }),
    ));

    checks.push(CheckResult::from_scan(
        "mobility_bounds",
        std::iter::once(0.0)
            .chain(plan.log_samples(plan.r_min, plan.r_max, plan.n_beta))
            .flat_map(|r| {
                let b = mob.b(r);
                let tol = slack * (1.0 + b.abs());
                [(r, b - mob.b0 + tol), (r, mob.b_sup - b + tol)]
            }),
    ));

    checks.push(CheckResult::from_scan(
        "phi_ge_one",
        plan.log_samples(plan.r_min, plan.phi_r_max, plan.n_phi).map(|r| (r, pot.phi(r) - 1.0)),
    ));

    // Confinement: φ increasing over the outermost decade of samples.
    let tail: Vec<f64> =
        plan.log_samples(plan.phi_r_max / 10.0, plan.phi_r_max, 64).map(|r| pot.phi(r)).collect();
    checks.push(CheckResult {
        name: "phi_confining".into(),
        passed: tail.windows(2).all(|w| w[1] > w[0]),
        worst_margin: tail
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min),
        witness: None,
    });

    let d = pot.d as f64;
    checks.push(CheckResult::from_scan(
        "drift_condition_1_3",
        plan.log_samples(plan.r_min, plan.phi_r_max, plan.n_phi).map(|r| {
            let lap = pot.phi_second(r) + (d - 1.0) * pot.phi_prime(r) / r;
            let lhs = diff.mu2 * lap - mob.b0 * pot.phi_prime(r).powi(2);
            (r, -lhs)
        }),
    ));

    let surf = sphere_surface_coef(pot.d);
    let integrand = |r: f64| pot.phi(r).powf(-pot.m) * surf * r.powi(pot.d as i32 - 1);
    let (value, converged) = tail_integral(&integrand, 0.0, 1e-8).unwrap_or((f64::NAN, false));
    checks.push(CheckResult {
        name: "phi_inverse_m_integrable".into(),
        passed: converged && value.is_finite(),
        worst_margin: if converged { value } else { f64::NEG_INFINITY },
        witness: None,
    });

    let all_passed = checks.iter().all(|c| c.passed);
    HypothesisReport { checks, all_passed }
}

/// Volume of the unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    // ω_d = π^{d/2} / Γ(d/2 + 1), via the half-integer recurrence.
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v
}

/// Surface area coefficient d·ω_d (area of the unit sphere S^{d-1}).
pub fn sphere_surface_coef(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}
