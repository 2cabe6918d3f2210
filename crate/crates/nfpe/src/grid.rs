//! Radially symmetric finite-volume mesh on a truncated ball in R^d and the
//! density fields living on it.

use std::io::Write;
use std::sync::Arc;

use crate::coefficients::{sphere_surface_coef, unit_ball_volume, PotentialSpec};
use crate::{Error, Result};

/// Cells `[r_{i-1/2}, r_{i+1/2})` covering `[0, R]`; `V_i = ω_d (r_{i+1/2}^d
/// - r_{i-1/2}^d)` and face areas `A_{i+1/2} = d ω_d r_{i+1/2}^{d-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    pub d: usize,
    pub r_max: f64,
    pub edges: Vec<f64>,
    pub cell_volumes: Vec<f64>,
    pub face_areas: Vec<f64>,
    pub midpoints: Vec<f64>,
}

impl RadialGrid {
    /// Uniform edge spacing R/N.
    pub fn build(d: usize, r_max: f64, n: usize) -> Result<Self> {
        let edges = (0..=n).map(|i| r_max * i as f64 / n as f64).collect();
        Self::from_edges(d, edges)
    }

    /// Geometrically refined toward r = 0: edge ratios grade from fine to
    /// coarse with the given ratio > 1 between adjacent cell widths.
    pub fn build_graded(d: usize, r_max: f64, n: usize, ratio: f64) -> Result<Self> {
        if ratio <= 1.0 {
            return Err(Error::InvalidParameter(format!("grading ratio {ratio} must be > 1")));
        }
        let q = ratio.powf(1.0 / (n as f64 - 1.0));
        // widths w, wq, wq², ... summing to R
        let w0 = r_max * (q - 1.0) / (q.powi(n as i32) - 1.0);
        let mut edges = Vec::with_capacity(n + 1);
        let mut r = 0.0;
        let mut w = w0;
        edges.push(0.0);
        for _ in 0..n {
            r += w;
            w *= q;
            edges.push(r);
        }
        *edges.last_mut().unwrap() = r_max;
        Self::from_edges(d, edges)
    }

    fn from_edges(d: usize, edges: Vec<f64>) -> Result<Self> {
        if d < 3 {
            return Err(Error::InvalidParameter(format!("dimension d = {d} must be >= 3")));
        }
        let n = edges.len().saturating_sub(1);
        if n < 2 {
            return Err(Error::InvalidParameter(format!("cell count N = {n} must be >= 2")));
        }
        let r_max = *edges.last().unwrap();
        if r_max <= 0.0 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("grid edges must be strictly increasing".into()));
        }
        let omega = unit_ball_volume(d);
        let surf = sphere_surface_coef(d);
        let pow = |r: f64| r.powi(d as i32);
        let cell_volumes: Vec<f64> =
            edges.windows(2).map(|w| omega * (pow(w[1]) - pow(w[0]))).collect();
        let face_areas: Vec<f64> =
            edges.iter().map(|&r| surf * r.powi(d as i32 - 1)).collect();
        let midpoints: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(RadialGrid { d, r_max, edges, cell_volumes, face_areas, midpoints, })
    }

    pub fn n_cells(&self) -> usize {
        self.cell_volumes.len()
    }

    pub fn total_volume(&self) -> f64 {
        unit_ball_volume(self.d) * self.r_max.powi(self.d as i32)
    }
}

/// Per-cell averages of a radial density on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub grid: Arc<RadialGrid>,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldNorms {
    pub mass: f64,
    pub l1: f64,
    pub linf: f64,
    pub weighted: f64,
}

impl DensityField {
    pub fn new(values: Vec<f64>, grid: Arc<RadialGrid>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidParameter(format!(
                "field length {} does not match grid cell count {}",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value in cell {i}")));
        }
        Ok(DensityField { values, grid })
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        DensityField { values: vec![0.0; grid.n_cells()], grid }
    }

    /// Midpoint-rule cell averages of a radial profile.
    pub fn project(f: &dyn Fn(f64) -> f64, grid: Arc<RadialGrid>) -> Result<Self> {
        let values: Vec<f64> = grid.midpoints.iter().map(|&r| f(r)).collect();
        DensityField::new(values, grid)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().zip(&self.grid.cell_volumes).map(|(u, v)| u * v).sum()
    }

    /// Rescale to unit mass.
    pub fn normalize(&self) -> Result<Self> {
        let m = self.mass();
        if m <= 0.0 {
            return Err(Error::ZeroMass { mass: m });
        }
        let values = self.values.iter().map(|u| u / m).collect();
        Ok(DensityField { values, grid: self.grid.clone() })
    }

    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.grid.cell_volumes)
            .map(|((a, b), v)| (a - b).abs() * v)
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Write the standard dump format: cell_index, r_mid, volume, value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cell_index,r_mid,volume,value")?;
        for (i, ((r, v), u)) in
            self.grid.midpoints.iter().zip(&self.grid.cell_volumes).zip(&self.values).enumerate()
        {
            writeln!(w, "{i},{r:.17e},{v:.17e},{u:.17e}")?;
        }
        Ok(())
    }
}

/// Mass, L¹/L∞ and the Φ-weighted norm ∫Φ|u| with Φ at cell midpoints.
pub fn field_norms(u: &DensityField, pot: &PotentialSpec) -> FieldNorms {
    let mut mass = 0.0;
    let mut l1 = 0.0;
    let mut linf: f64 = 0.0;
    let mut weighted = 0.0;
    for ((&ui, &vi), &ri) in u.values.iter().zip(&u.grid.cell_volumes).zip(&u.grid.midpoints) {
        mass += ui * vi;
        l1 += ui.abs() * vi;
        linf = linf.max(ui.abs());
        weighted += pot.phi(ri) * ui.abs() * vi;
    }
    FieldNorms { mass, l1, linf, weighted }
}
