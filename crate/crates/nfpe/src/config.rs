//! Strict, versioned JSON run configuration. Unknown keys are errors so a
//! config file is always a complete description of the run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::BuiltinCoefficients;
use crate::resolvent::{FluxScheme, SolverOptions};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub coefficients: BuiltinCoefficients,
    pub potential: PotentialConfig,
    pub grid: GridConfig,
    /// ε used for the dynamics (0 = the degenerate equation itself).
    #[serde(default)]
    pub eps: f64,
    /// Finite cap M of the regularized diffusion; absent = unbounded.
    #[serde(default)]
    pub m_cap: Option<f64>,
    #[serde(default)]
    pub eps_ladder: EpsLadderConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub probes: Vec<ProbeName>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub particles: Option<ParticleConfig>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub mu: f64,
    pub eta: f64,
    #[serde(default = "one")]
    pub gamma1: f64,
    #[serde(default = "four")]
    pub m: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
    /// Explicit truncation radius; if absent, chosen from the equilibrium
    /// tail envelope so the predicted mass beyond R is below tail_tol.
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    /// Optional geometric refinement toward r = 0 (last/first width ratio).
    #[serde(default)]
    pub grading: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsLadderConfig {
    pub eps0: f64,
    pub halvings: usize,
}

impl Default for EpsLadderConfig {
    fn default() -> Self {
        EpsLadderConfig { eps0: 0.1, halvings: 8 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    /// Absent = auto (largest convergent step found by halving from 0.1).
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { t_end: 5.0, h: None, snapshot_stride: 10 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Bump { center: f64, width: f64 },
    Uniform,
    /// Start on the discrete equilibrium for the dynamics ε.
    Stationary,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Bump { center: 2.0, width: 0.8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeName {
    Hypotheses,
    Stationary,
    Evolve,
    Omega,
    A2Bounds,
    Particles,
    Expformula,
}

impl ProbeName {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config { field: "probes".into(), message: format!("unknown probe `{s}`") })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeName::Hypotheses => "hypotheses",
            ProbeName::Stationary => "stationary",
            ProbeName::Evolve => "evolve",
            ProbeName::Omega => "omega",
            ProbeName::A2Bounds => "a2_bounds",
            ProbeName::Particles => "particles",
            ProbeName::Expformula => "expformula",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
    #[serde(default = "default_quad_tol")]
    pub inv_tol: f64,
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    /// Convergence-detection threshold for the ω-limit probe.
    #[serde(default = "default_conv_tol")]
    pub conv_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { quad_tol: 1e-10, inv_tol: 1e-10, mass_tol: 1e-9, conv_tol: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_scheme")]
    pub scheme: FluxScheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { solver_tol: 1e-10, max_iter: 100, scheme: FluxScheme::WellBalanced }
    }
}

impl From<SolverConfig> for SolverOptions {
    fn from(c: SolverConfig) -> Self {
        SolverOptions { solver_tol: c.solver_tol, max_iter: c.max_iter, scheme: c.scheme }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_eps_sigma")]
    pub eps_sigma: f64,
}

fn one() -> f64 {
    1.0
}
fn four() -> f64 {
    4.0
}
fn default_tail_tol() -> f64 {
    1e-8
}
fn default_stride() -> usize {
    10
}
fn default_quad_tol() -> f64 {
    1e-10
}
fn default_mass_tol() -> f64 {
    1e-9
}
fn default_conv_tol() -> f64 {
    1e-3
}
fn default_solver_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    100
}
fn default_scheme() -> FluxScheme {
    FluxScheme::WellBalanced
}
fn default_eps_sigma() -> f64 {
    1e-8
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| -> Result<()> {
            Err(Error::Config { field: field.into(), message })
        };
        if self.schema_version != SCHEMA_VERSION {
            return fail(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        if self.grid.d < 3 {
            return fail("grid.d", format!("dimension must be >= 3, got {}", self.grid.d));
        }
        if self.grid.n < 2 {
            return fail("grid.n", format!("cell count must be >= 2, got {}", self.grid.n));
        }
        if self.grid.tail_tol <= 0.0 {
            return fail("grid.tail_tol", "must be positive".into());
        }
        if let Some(r) = self.grid.r_max {
            if r <= 0.0 {
                return fail("grid.r_max", "must be positive".into());
            }
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return fail("eps", format!("must lie in [0, 1], got {}", self.eps));
        }
        if self.eps_ladder.eps0 <= 0.0 {
            return fail("eps_ladder.eps0", "must be positive".into());
        }
        if self.time.t_end <= 0.0 {
            return fail("time.t_end", "must be positive".into());
        }
        if let Some(h) = self.time.h {
            if h <= 0.0 {
                return fail("time.h", "must be positive".into());
            }
        }
        for (name, v) in [
            ("tolerances.quad_tol", self.tolerances.quad_tol),
            ("tolerances.inv_tol", self.tolerances.inv_tol),
            ("tolerances.mass_tol", self.tolerances.mass_tol),
            ("tolerances.conv_tol", self.tolerances.conv_tol),
            ("solver.solver_tol", self.solver.solver_tol),
        ] {
            if v <= 0.0 {
                return fail(name, format!("tolerance must be positive, got {v}"));
            }
        }
        if let Some(p) = &self.particles {
            if p.n == 0 {
                return fail("particles.n", "must be positive".into());
            }
            if p.dt <= 0.0 || p.t_end <= 0.0 {
                return fail("particles", "dt and t_end must be positive".into());
            }
        }
        Ok(())
    }
}
