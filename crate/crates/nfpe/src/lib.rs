//! Finite-volume laboratory for degenerate nonlinear Fokker-Planck equations
//!
//! Solves `u_t - Δβ(u) + div(D b(u) u) = 0` on a truncated ball in R^d with a
//! radially symmetric confining potential (`D = -∇Φ`), via composed resolvent
//! steps (implicit Euler / mild solution), and constructs the explicit
//! stationary Gibbs-type state `a = g⁻¹(μ - Φ)` together with a battery of
//! structural probes: L¹ contraction, mass/positivity preservation,
//! free-energy decay, ω-limit geometry and a particle cross-check.

pub mod coefficients;
pub mod config;
pub mod diagnostics;
pub mod grid;
pub mod particles;
pub mod quad;
pub mod resolvent;
pub mod run;
pub mod semigroup;
pub mod stationary;

pub use coefficients::{DiffusionSpec, MobilitySpec, PotentialSpec, RegularizedDiffusion};
pub use grid::{DensityField, FieldNorms, RadialGrid};
pub use resolvent::{ResolventSolveReport, SolverOptions};
pub use semigroup::TrajectoryRecord;
pub use stationary::StationaryState;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature failed to reach tolerance {tol:e} (estimate {estimate:e}) on [{a}, {b}]")]
    Quadrature { a: f64, b: f64, tol: f64, estimate: f64 },

    #[error("bracket expansion exhausted for target {target}: {context}")]
    RangeExhausted { target: f64, context: String },

    #[error("resolvent solve did not converge after {iterations} iterations (residual {residual:e}, lambda {lambda:e}); retry with smaller lambda")]
    NonConvergence { iterations: usize, residual: f64, lambda: f64 },

    #[error("evolution failed at step {step} (t = {time}): {source}")]
    EvolveStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("field has non-positive mass {mass:e}; cannot normalize")]
    ZeroMass { mass: f64 },

    #[error("negative density {value:e} at cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("configuration error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
