//! Euler-Maruyama simulation of the associated stochastic dynamics with
//! coefficients frozen from a stored PDE trajectory; the time-marginal law
//! of the particles should reproduce the PDE density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::coefficients::{DiffusionSpec, MobilitySpec, PotentialSpec};
use crate::grid::DensityField;
use crate::semigroup::TrajectoryRecord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ParticleParams {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Density floor for the diffusion coefficient where u ≈ 0.
    pub eps_sigma: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        ParticleParams { n: 100_000, dt: 0.01, t_end: 10.0, seed: 0, eps_sigma: 1e-8 }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ParticleReport {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub threads: usize,
    pub steps: usize,
}

/// Worker count: NFPE_THREADS if set, else the machine's parallelism capped
/// at 8. The histogram is independent of this choice: every particle draws
/// from its own counter-indexed RNG stream and the counts are integers.
fn worker_count() -> usize {
    if let Ok(v) = std::env::var("NFPE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

/// Index of the cell containing radius r.
fn cell_of(grid: &crate::grid::RadialGrid, r: f64) -> usize {
    let n = grid.n_cells();
    grid.edges.partition_point(|&e| e <= r).saturating_sub(1).min(n - 1)
}

struct FrozenField<'a> {
    traj: &'a TrajectoryRecord,
}

impl FrozenField<'_> {
    /// Snapshot nearest in time to t.
    fn at(&self, t: f64) -> &DensityField {
        let snaps = &self.traj.snapshots;
        let k = snaps.partition_point(|s| s.t <= t);
        if k == 0 {
            &snaps[0].field
        } else if k >= snaps.len() {
            &snaps[snaps.len() - 1].field
        } else if (t - snaps[k - 1].t) <= (snaps[k].t - t) {
            &snaps[k - 1].field
        } else {
            &snaps[k].field
        }
    }
}

/// Simulate `n` particles under drift b(u)·(-∇Φ) and diffusion √(2β(u)/u)
/// with u interpolated from the trajectory; initial positions are sampled
/// from the first snapshot by inverse CDF on the radial mass function.
/// Returns the radial histogram at t_end, normalized to mass 1.
pub fn simulate_particles(
    traj: &TrajectoryRecord,
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    params: &ParticleParams,
) -> Result<(DensityField, ParticleReport)> {
    if params.n == 0 {
        return Err(Error::InvalidParameter("particle count must be positive".into()));
    }
    if params.dt <= 0.0 || params.t_end <= 0.0 {
        return Err(Error::InvalidParameter("particle dt and t_end must be positive".into()));
    }
    let t_last = traj.snapshots.last().map(|s| s.t).unwrap_or(0.0);
    if t_last + 1e-12 < params.t_end {
        return Err(Error::InvalidParameter(format!(
            "trajectory covers [0, {t_last}] but particles need t_end = {}",
            params.t_end
        )));
    }
    let grid = traj.snapshots[0].field.grid.clone();
    let d = grid.d;
    let frozen = FrozenField { traj };

    // inverse-CDF sampling table over the initial snapshot
    let u0 = &traj.snapshots[0].field;
    let mut cdf = Vec::with_capacity(grid.n_cells() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for (u, v) in u0.values.iter().zip(&grid.cell_volumes) {
        acc += u.max(0.0) * v;
        cdf.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::ZeroMass { mass: acc });
    }

    let steps = (params.t_end / params.dt).ceil() as usize;
    let threads = worker_count();
    let sigma_floor = 2.0 * diff.beta(params.eps_sigma) / params.eps_sigma;

    let simulate_range = |range: std::ops::Range<usize>| -> Vec<u64> {
        let mut counts = vec![0u64; grid.n_cells()];
        for p in range {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(p as u64);
            // radial inverse CDF, uniform in volume within the cell
            let target: f64 = rng.gen::<f64>() * acc;
            let cell = cdf.partition_point(|&c| c <= target).saturating_sub(1).min(grid.n_cells() - 1);
            let frac = (target - cdf[cell]) / (cdf[cell + 1] - cdf[cell]).max(f64::MIN_POSITIVE);
            let (rl, rr) = (grid.edges[cell], grid.edges[cell + 1]);
            let di = d as i32;
            let mut r = (rl.powi(di) + frac * (rr.powi(di) - rl.powi(di))).powf(1.0 / d as f64);
            // isotropic direction
            let mut x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for v in &mut x {
                *v *= r / nrm;
            }
            for step in 0..steps {
                let t = step as f64 * params.dt;
                let field = frozen.at(t);
                r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let u_here = field.values[cell_of(&grid, r)].max(0.0);
                let drift = if r > 0.0 {
                    -mob.b(u_here) * pot.phi_prime(r) / r
                } else {
                    0.0
                };
                let sigma2 = if u_here > params.eps_sigma {
                    2.0 * diff.beta(u_here) / u_here
                } else {
                    sigma_floor
                };
                let sig = sigma2.max(0.0).sqrt() * params.dt.sqrt();
                for xc in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *xc += drift * *xc * params.dt + sig * z;
                }
                // reflect at the truncation radius
                let rn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rn > grid.r_max {
                    let reflected = (2.0 * grid.r_max - rn).max(1e-12 * grid.r_max);
                    for v in &mut x {
                        *v *= reflected / rn;
                    }
                }
            }
            let rf = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            counts[cell_of(&grid, rf)] += 1;
        }
        counts
    };

    let chunk = params.n.div_ceil(threads);
    let totals: Vec<u64> = if threads == 1 {
        simulate_range(0..params.n)
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let lo = (w * chunk).min(params.n);
                    let hi = ((w + 1) * chunk).min(params.n);
                    let sim = &simulate_range;
                    scope.spawn(move || sim(lo..hi))
                })
                .collect();
            let mut totals = vec![0u64; grid.n_cells()];
            for h in handles {
                for (t, c) in totals.iter_mut().zip(h.join().expect("worker panicked")) {
                    *t += c;
                }
            }
            totals
        })
    };

    let values: Vec<f64> = totals
        .iter()
        .zip(&grid.cell_volumes)
        .map(|(&c, &v)| c as f64 / (params.n as f64 * v))
        .collect();
    let field = DensityField::new(values, grid)?;
    let report = ParticleReport {
        n: params.n,
        dt: params.dt,
        t_end: params.t_end,
        seed: params.seed,
        threads,
        steps,
    };
    Ok((field, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_builtin, confining_potential, BuiltinCoefficients};
    use crate::diagnostics::SigmaTable;
    use crate::grid::RadialGrid;
    use crate::resolvent::{ResolventOperator, SolverOptions};
    use crate::semigroup::{Snapshot, TrajectoryRecord};
    use crate::stationary::{stationary_state, StationaryOptions};
    use std::sync::Arc;

    fn frozen_equilibrium_traj(t_end: f64) -> (TrajectoryRecord, DensityField) {
        let (diff, mob) = make_builtin(&BuiltinCoefficients::Boltzmann).unwrap();
        let pot = confining_potential(3, 5.0, 2.0, 1.0, 4.0).unwrap();
        let grid = Arc::new(RadialGrid::build(3, 12.0, 60).unwrap());
        let a = stationary_state(&diff, &mob, &pot, &grid, 0.0, &StationaryOptions::default())
            .unwrap();
        let traj = TrajectoryRecord {
            h: t_end,
            times: vec![0.0, t_end],
            diagnostics: vec![],
            snapshots: vec![
                Snapshot { step: 0, t: 0.0, field: a.field.clone() },
                Snapshot { step: 1, t: t_end, field: a.field.clone() },
            ],
        };
        (traj, a.field)
    }

    #[test]
    fn zero_particles_rejected() {
        let (traj, _) = frozen_equilibrium_traj(1.0);
        let (diff, mob) = make_builtin(&BuiltinCoefficients::Boltzmann).unwrap();
        let pot = confining_potential(3, 5.0, 2.0, 1.0, 4.0).unwrap();
        let params = ParticleParams { n: 0, ..Default::default() };
        assert!(simulate_particles(&traj, &diff, &mob, &pot, &params).is_err());
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let (traj, _) = frozen_equilibrium_traj(1.0);
        let (diff, mob) = make_builtin(&BuiltinCoefficients::Boltzmann).unwrap();
        let pot = confining_potential(3, 5.0, 2.0, 1.0, 4.0).unwrap();
        let params = ParticleParams { n: 10, t_end: 5.0, ..Default::default() };
        assert!(simulate_particles(&traj, &diff, &mob, &pot, &params).is_err());
    }

    #[test]
    fn histogram_mass_is_one_and_deterministic() {
        let (traj, _) = frozen_equilibrium_traj(0.5);
        let (diff, mob) = make_builtin(&BuiltinCoefficients::Boltzmann).unwrap();
        let pot = confining_potential(3, 5.0, 2.0, 1.0, 4.0).unwrap();
        let params =
            ParticleParams { n: 2000, dt: 0.01, t_end: 0.5, seed: 42, eps_sigma: 1e-8 };
        let (h1, rep) = simulate_particles(&traj, &diff, &mob, &pot, &params).unwrap();
        assert!((h1.mass() - 1.0).abs() < 1e-12);
        assert_eq!(rep.steps, 50);
        let (h2, _) = simulate_particles(&traj, &diff, &mob, &pot, &params).unwrap();
        assert_eq!(h1.values, h2.values);
    }

    #[test]
    fn partition_independence() {
        let (traj, _) = frozen_equilibrium_traj(0.2);
        let (diff, mob) = make_builtin(&BuiltinCoefficients::Boltzmann).unwrap();
        let pot = confining_potential(3, 5.0, 2.0, 1.0, 4.0).unwrap();
        let params =
            ParticleParams { n: 500, dt: 0.02, t_end: 0.2, seed: 7, eps_sigma: 1e-8 };
        std::env::set_var("NFPE_THREADS", "1");
        let (h1, _) = simulate_particles(&traj, &diff, &mob, &pot, &params).unwrap();
        std::env::set_var("NFPE_THREADS", "3");
        let (h3, _) = simulate_particles(&traj, &diff, &mob, &pot, &params).unwrap();
        std::env::remove_var("NFPE_THREADS");
        assert_eq!(h1.values, h3.values);
    }

    #[test]
    fn langevin_stays_near_equilibrium() {
        // short-horizon sanity check at small N; the tight statistical
        // tolerance lives in the acceptance suite
        let (traj, a) = frozen_equilibrium_traj(2.0);
        let (diff, mob) = make_builtin(&BuiltinCoefficients::Boltzmann).unwrap();
        let pot = confining_potential(3, 5.0, 2.0, 1.0, 4.0).unwrap();
        let params =
            ParticleParams { n: 4000, dt: 0.01, t_end: 2.0, seed: 1, eps_sigma: 1e-8 };
        let (h, _) = simulate_particles(&traj, &diff, &mob, &pot, &params).unwrap();
        let dist = h.l1_distance(&a);
        assert!(dist < 0.3, "L1 distance {dist}");
    }
}
