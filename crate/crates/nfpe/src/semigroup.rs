//! Time evolution by composed resolvent steps (implicit Euler with λ = h)
//! and the exponential-formula consistency probe.

use std::io::Write;

use crate::coefficients::PotentialSpec;
use crate::diagnostics::{free_energy, SigmaTable};
use crate::grid::{field_norms, DensityField};
use crate::resolvent::{ResolventOperator, ResolventSolveReport};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub mass: f64,
    pub l1: f64,
    pub linf: f64,
    pub weighted: f64,
    pub free_energy: f64,
    /// |u(t) - a|₁ when a reference state was supplied.
    pub dist_to_a: Option<f64>,
    pub solver: ResolventSolveReport,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub field: DensityField,
}

/// One stored trajectory: per-step diagnostics plus thinned field snapshots
/// (first and last step always included).
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub h: f64,
    pub times: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub snapshots: Vec<Snapshot>,
}

impl TrajectoryRecord {
    pub fn final_field(&self) -> &DensityField {
        &self.snapshots.last().expect("trajectory stores at least the initial field").field
    }

    /// Diagnostics CSV: t, mass, l1, linf, weighted, V, dist_to_a.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mass,l1,linf,weighted,free_energy,dist_to_a")?;
        for d in &self.diagnostics {
            let dist = d.dist_to_a.map_or(String::from(""), |v| format!("{v:.17e}"));
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                d.t, d.mass, d.l1, d.linf, d.weighted, d.free_energy, dist
            )?;
        }
        Ok(())
    }
}

/// ceil(T/h) resolvent steps with λ = h.
pub fn evolve(
    u0: &DensityField,
    t_end: f64,
    h: f64,
    op: &ResolventOperator,
    pot: &PotentialSpec,
    sigma: &SigmaTable,
    snapshot_stride: usize,
    reference: Option<&DensityField>,
) -> Result<TrajectoryRecord> {
    if h <= 0.0 || t_end <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "horizon T = {t_end} and step h = {h} must be positive"
        )));
    }
    let n_steps = (t_end / h).ceil() as usize;
    let stride = snapshot_stride.max(1);
    let mut u = u0.clone();
    let mut times = vec![0.0];
    let mut diagnostics = Vec::with_capacity(n_steps + 1);
    let record = |u: &DensityField, t: f64, solver: ResolventSolveReport| -> Result<StepDiagnostics> {
        let n = field_norms(u, pot);
        Ok(StepDiagnostics {
            t,
            mass: n.mass,
            l1: n.l1,
            linf: n.linf,
            weighted: n.weighted,
            free_energy: free_energy(u, sigma, pot)?.total,
            dist_to_a: reference.map(|a| u.l1_distance(a)),
            solver,
        })
    };
    let init_report = ResolventSolveReport {
        iterations: 0,
        final_residual: 0.0,
        damping_events: 0,
        fallback_used: false,
    };
    diagnostics.push(record(&u, 0.0, init_report)?);
    let mut snapshots = vec![Snapshot { step: 0, t: 0.0, field: u.clone() }];
    for step in 1..=n_steps {
        let t = step as f64 * h;
        let (next, rep) = op.apply(&u, h).map_err(|e| Error::EvolveStep {
            step,
            time: t,
            source: Box::new(e),
        })?;
        u = next;
        times.push(t);
        diagnostics.push(record(&u, t, rep)?);
        if step % stride == 0 || step == n_steps {
            snapshots.push(Snapshot { step, t, field: u.clone() });
        }
    }
    Ok(TrajectoryRecord { h, times, diagnostics, snapshots })
}

/// Largest step from halving h₀ = 0.1 for which the first implicit step
/// converges on the given data.
pub fn auto_step(u0: &DensityField, op: &ResolventOperator) -> Result<f64> {
    let mut h = 0.1;
    for _ in 0..20 {
        match op.apply(u0, h) {
            Ok(_) => return Ok(h),
            Err(Error::NonConvergence { .. }) => h *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RangeExhausted {
        target: 0.1,
        context: "no convergent implicit step found by halving".into(),
    })
}

/// Consistency gaps |v_n - v_{2n}|₁ for v_n = (I + (t/n)A)^{-n} u₀ over a
/// doubling n-list.
pub fn exponential_formula_probe(
    u0: &DensityField,
    t: f64,
    n_list: &[usize],
    op: &ResolventOperator,
) -> Result<Vec<f64>> {
    let mut iterates = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n == 0 {
            return Err(Error::InvalidParameter("n_list entries must be positive".into()));
        }
        let lambda = t / n as f64;
        let mut u = u0.clone();
        for _ in 0..n {
            u = op.apply(&u, lambda)?.0;
        }
        iterates.push(u);
    }
    Ok(iterates.windows(2).map(|w| w[0].l1_distance(&w[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_builtin, confining_potential, BuiltinCoefficients};
    use crate::grid::RadialGrid;
    use crate::resolvent::SolverOptions;
    use crate::stationary::StationaryOptions;
    use std::sync::Arc;

    fn setup() -> (ResolventOperator, PotentialSpec, SigmaTable, Arc<RadialGrid>) {
        let (diff, mob) = make_builtin(&BuiltinCoefficients::Boltzmann).unwrap();
        let pot = confining_potential(3, 5.0, 2.0, 1.0, 4.0).unwrap();
        let grid = Arc::new(RadialGrid::build(3, 14.0, 100).unwrap());
        let op = ResolventOperator::new(
            &diff, &mob, &pot, &grid, 0.0, None, SolverOptions::default(),
        )
        .unwrap();
        let sigma = SigmaTable::build(&diff, &mob, &StationaryOptions::default()).unwrap();
        (op, pot, sigma, grid)
    }

    fn bump(grid: &Arc<RadialGrid>) -> DensityField {
        DensityField::project(&|r| (-((r - 2.0) / 0.8f64).powi(2)).exp(), grid.clone())
            .unwrap()
            .normalize()
            .unwrap()
    }

    #[test]
    fn conservation_along_trajectory() {
        let (op, pot, sigma, grid) = setup();
        let u0 = bump(&grid);
        let traj = evolve(&u0, 0.5, 0.01, &op, &pot, &sigma, 10, None).unwrap();
        assert_eq!(traj.diagnostics.len(), 51);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        for d in &traj.diagnostics {
            assert!((d.mass - 1.0).abs() < 1e-10, "t = {}: mass {}", d.t, d.mass);
        }
        // weighted norm and free energy non-increasing
        for w in traj.diagnostics.windows(2) {
            assert!(w[1].weighted <= w[0].weighted + 1e-8);
            assert!(w[1].free_energy <= w[0].free_energy + 1e-8);
        }
        // first/last snapshots always present
        assert_eq!(traj.snapshots.first().unwrap().step, 0);
        assert_eq!(traj.snapshots.last().unwrap().step, 50);
    }

    #[test]
    fn discrete_semigroup_composition_is_bit_identical() {
        let (op, pot, sigma, grid) = setup();
        let u0 = bump(&grid);
        let once = evolve(&u0, 0.4, 0.02, &op, &pot, &sigma, 1, None).unwrap();
        let first = evolve(&u0, 0.2, 0.02, &op, &pot, &sigma, 1, None).unwrap();
        let second =
            evolve(first.final_field(), 0.2, 0.02, &op, &pot, &sigma, 1, None).unwrap();
        assert_eq!(once.final_field().values, second.final_field().values);
    }

    #[test]
    fn two_trajectories_contract() {
        let (op, pot, sigma, grid) = setup();
        let u0 = bump(&grid);
        let v0 = DensityField::project(&|r| (-(r / 1.5f64).powi(2)).exp(), grid)
            .unwrap()
            .normalize()
            .unwrap();
        let tu = evolve(&u0, 0.5, 0.02, &op, &pot, &sigma, 1, None).unwrap();
        let tv = evolve(&v0, 0.5, 0.02, &op, &pot, &sigma, 1, None).unwrap();
        let mut last = u0.l1_distance(&v0);
        for (su, sv) in tu.snapshots.iter().zip(&tv.snapshots).skip(1) {
            let d = su.field.l1_distance(&sv.field);
            assert!(d <= last + 1e-10, "distance grew: {d} > {last}");
            last = d;
        }
    }

    #[test]
    fn h_refinement_consistency() {
        let (op, pot, sigma, grid) = setup();
        let u0 = bump(&grid);
        let t_end = 0.5;
        let mut finals = Vec::new();
        for h in [0.05, 0.025, 0.0125, 0.00625] {
            let traj = evolve(&u0, t_end, h, &op, &pot, &sigma, 1000, None).unwrap();
            finals.push(traj.final_field().clone());
        }
        let gaps: Vec<f64> = finals.windows(2).map(|w| w[0].l1_distance(&w[1])).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "gaps {gaps:?}");
    }

    #[test]
    fn exponential_formula_gaps_decrease() {
        let (op, _, _, grid) = setup();
        let u0 = bump(&grid);
        let gaps = exponential_formula_probe(&u0, 1.0, &[8, 16, 32, 64], &op).unwrap();
        assert_eq!(gaps.len(), 3);
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "gaps {gaps:?}");
        let none = exponential_formula_probe(&u0, 1.0, &[8], &op).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn auto_step_finds_convergent_h() {
        let (op, _, _, grid) = setup();
        let u0 = bump(&grid);
        let h = auto_step(&u0, &op).unwrap();
        assert!(h > 0.0 && h <= 0.1);
    }
}
