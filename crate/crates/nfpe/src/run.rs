//! Experiment orchestration: build the problem from a config, run the
//! requested probes in dependency order, and write a self-contained artifact
//! directory (config copy, CSVs, per-probe JSON, summary).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::coefficients::{
    make_builtin, confining_potential, verify_hypotheses, DiffusionSpec, MobilitySpec, PotentialSpec,
    SamplingPlan,
};
use crate::config::{InitialConfig, ProbeName, RunConfig};
use crate::diagnostics::{omega_probe, SigmaTable};
use crate::grid::{DensityField, RadialGrid};
use crate::particles::{simulate_particles, ParticleParams};
use crate::quad::tail_integral;
use crate::resolvent::ResolventOperator;
use crate::semigroup::{auto_step, evolve, exponential_formula_probe, TrajectoryRecord};
use crate::stationary::{
    default_eps_ladder, envelope_check, stationary_limit, stationary_state, StationaryOptions,
    StationaryState,
};
use crate::{Error, Result};

#[derive(Clone, Debug, serde::Serialize)]
pub struct CheckLine {
    pub name: String,
    /// Hard checks gate the exit status; soft ones are informational.
    pub hard: bool,
    pub passed: bool,
    pub margin: f64,
}

#[derive(Debug, serde::Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub r_max: f64,
    pub checks: Vec<CheckLine>,
    pub probes: BTreeMap<String, serde_json::Value>,
    pub all_hard_passed: bool,
}

/// Truncation radius from the equilibrium tail envelope: the exponential
/// bound on g⁻¹(μ̂ - Φ) integrated beyond R must fall below tail_tol, with μ̂
/// a crude upper estimate from vol{Φ ≤ μ̂} ≥ 1.
pub fn choose_radius(
    diff: &DiffusionSpec,
    mob: &MobilitySpec,
    pot: &PotentialSpec,
    tail_tol: f64,
) -> Result<f64> {
    let d = pot.d;
    let r_unit = (1.0 / crate::coefficients::unit_ball_volume(d)).powf(1.0 / d as f64);
    let mu_hat = pot.phi(r_unit) + 2.0;
    let shift = if diff.nu <= 1.0 { diff.beta(1.0) - diff.mu1 } else { diff.beta(1.0) };
    let surf = crate::coefficients::sphere_surface_coef(d);
    let envelope = |r: f64| {
        ((mob.b0 * (mu_hat - pot.phi(r)) + shift) / diff.mu2).exp()
            * surf
            * r.powi(d as i32 - 1)
    };
    let mut r_max = (2.0 * r_unit).max(2.0);
    for _ in 0..60 {
        let (tail, converged) = tail_integral(&envelope, r_max, 1e-3 * tail_tol)?;
        if converged && tail <= tail_tol {
            return Ok(r_max);
        }
        r_max *= 1.5;
    }
    Err(Error::RangeExhausted {
        target: tail_tol,
        context: "tail envelope never fell below tail_tol; potential may not confine".into(),
    })
}

fn initial_field(
    config: &RunConfig,
    grid: &Arc<RadialGrid>,
    stationary: Option<&StationaryState>,
) -> Result<DensityField> {
    match config.initial {
        InitialConfig::Bump { center, width } => {
            DensityField::project(&|r| (-((r - center) / width).powi(2)).exp(), grid.clone())?
                .normalize()
        }
        InitialConfig::Uniform => {
            DensityField::project(&|_| 1.0, grid.clone())?.normalize()
        }
        InitialConfig::Stationary => stationary
            .map(|s| s.field.clone())
            .ok_or_else(|| Error::Config {
                field: "initial".into(),
                message: "stationary start requested but the equilibrium is unavailable".into(),
            }),
    }
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Execute the configured probes, write artifacts into `out_dir`, and return
/// the summary (also written as summary.json).
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    // the only timestamp lives outside summary.json so reruns are
    // byte-identical
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(out_dir, "metadata.json", &serde_json::json!({ "generated_at_unix": now }))?;

    let (diff, mob) = make_builtin(&config.coefficients)?;
    let pot = confining_potential(
        config.grid.d,
        config.potential.mu,
        config.potential.eta,
        config.potential.gamma1,
        config.potential.m,
    )?;
    let r_max = match config.grid.r_max {
        Some(r) => r,
        None => choose_radius(&diff, &mob, &pot, config.grid.tail_tol)?,
    };
    let grid = Arc::new(match config.grid.grading {
        Some(ratio) => RadialGrid::build_graded(config.grid.d, r_max, config.grid.n, ratio)?,
        None => RadialGrid::build(config.grid.d, r_max, config.grid.n)?,
    });
    let stat_opts = StationaryOptions {
        quad_tol: config.tolerances.quad_tol,
        inv_tol: config.tolerances.inv_tol,
        mass_tol: config.tolerances.mass_tol,
    };

    let wants = |p: ProbeName| config.probes.contains(&p);
    let mut checks: Vec<CheckLine> = Vec::new();
    let mut probes: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    let mut check = |name: &str, hard: bool, passed: bool, margin: f64| {
        checks.push(CheckLine { name: name.into(), hard, passed, margin });
    };

    if wants(ProbeName::Hypotheses) {
        let report = verify_hypotheses(&diff, &mob, &pot, &SamplingPlan::default());
        check("hypotheses.all_passed", false, report.all_passed, 0.0);
        write_json(out_dir, "hypotheses.json", &report)?;
        probes.insert("hypotheses".into(), serde_json::to_value(&report)?);
    }

    // the equilibrium is a dependency of evolve/omega/particles as well
    let needs_stationary = wants(ProbeName::Stationary)
        || wants(ProbeName::Omega)
        || wants(ProbeName::Particles)
        || wants(ProbeName::Evolve)
        || matches!(config.initial, InitialConfig::Stationary);
    let stationary = if needs_stationary {
        Some(stationary_state(&diff, &mob, &pot, &grid, config.eps, &stat_opts)?)
    } else {
        None
    };

    if wants(ProbeName::Stationary) {
        let state = stationary.as_ref().unwrap();
        let mut csv = Vec::new();
        state.field.write_csv(&mut csv)?;
        fs::write(out_dir.join("stationary.csv"), csv)?;
        let bounds = envelope_check(&diff, &mob, &pot, &stat_opts)?;
        let ladder = default_eps_ladder(config.eps_ladder.eps0, config.eps_ladder.halvings);
        let ladder_report = match stationary_limit(&diff, &mob, &pot, &grid, &ladder, &stat_opts)
        {
            Ok((_, rep)) => Some(rep),
            // g bounded at 0⁺: the ε = 0 limit does not exist
            Err(Error::RangeExhausted { .. }) => None,
            Err(e) => return Err(e),
        };
        let sidecar = serde_json::json!({
            "mu": state.mu,
            "eps": state.eps,
            "mass_residual": state.mass_residual,
            "bound_report": bounds,
            "eps_ladder": ladder_report,
        });
        check("stationary.mass_residual", true, state.mass_residual <= stat_opts.mass_tol, state.mass_residual);
        if let Some(rep) = &ladder_report {
            check("stationary.ladder_decreasing", false, rep.strictly_decreasing, rep.final_gap);
        }
        fs::write(out_dir.join("stationary.json"), serde_json::to_string_pretty(&sidecar)?)?;
        probes.insert("stationary".into(), sidecar);
    }

    if wants(ProbeName::A2Bounds) {
        let bounds = envelope_check(&diff, &mob, &pot, &stat_opts)?;
        check("a2_bounds.passed", false, bounds.passed, 0.0);
        write_json(out_dir, "a2_bounds.json", &bounds)?;
        probes.insert("a2_bounds".into(), serde_json::to_value(&bounds)?);
    }

    let needs_evolution = wants(ProbeName::Evolve)
        || wants(ProbeName::Omega)
        || wants(ProbeName::Particles)
        || wants(ProbeName::Expformula);
    let mut op: Option<ResolventOperator> = None;
    let mut traj: Option<TrajectoryRecord> = None;
    if needs_evolution {
        let operator = ResolventOperator::new(
            &diff,
            &mob,
            &pot,
            &grid,
            config.eps,
            config.m_cap,
            config.solver.into(),
        )?;
        let sigma = SigmaTable::build(&diff, &mob, &stat_opts)?;
        let u0 = initial_field(config, &grid, stationary.as_ref())?;
        let h_used = match config.time.h {
            Some(h) => h,
            None => auto_step(&u0, &operator)?,
        };
        if wants(ProbeName::Evolve) || wants(ProbeName::Omega) || wants(ProbeName::Particles) {
            let record = evolve(
                &u0,
                config.time.t_end,
                h_used,
                &operator,
                &pot,
                &sigma,
                config.time.snapshot_stride,
                stationary.as_ref().map(|s| &s.field),
            )?;
            let mut csv = Vec::new();
            record.write_csv(&mut csv)?;
            fs::write(out_dir.join("trajectory.csv"), csv)?;
            for snap in &record.snapshots {
                let mut scsv = Vec::new();
                snap.field.write_csv(&mut scsv)?;
                fs::write(out_dir.join(format!("snapshot_{:06}.csv", snap.step)), scsv)?;
            }
            let mass_dev = record
                .diagnostics
                .iter()
                .map(|d| (d.mass - 1.0).abs())
                .fold(0.0, f64::max);
            let min_u = record
                .snapshots
                .iter()
                .map(|s| s.field.min_value())
                .fold(f64::INFINITY, f64::min);
            let weighted_ok = record
                .diagnostics
                .windows(2)
                .all(|w| w[1].weighted <= w[0].weighted + 1e-8);
            let energy_ok = record
                .diagnostics
                .windows(2)
                .all(|w| w[1].free_energy <= w[0].free_energy + 1e-8);
            check("evolve.mass_deviation", true, mass_dev <= 1e-10, mass_dev);
            check("evolve.min_density", true, min_u >= -1e-12, min_u);
            check("evolve.weighted_monotone", true, weighted_ok, 0.0);
            check("evolve.free_energy_monotone", true, energy_ok, 0.0);
            // one-pair contraction spot check at λ = h
            let shifted =
                DensityField::project(&|r| (-((r - 1.0) / 1.1f64).powi(2)).exp(), grid.clone())?
                    .normalize()?;
            let (jf, _) = operator.apply(&u0, h_used)?;
            let (jg, _) = operator.apply(&shifted, h_used)?;
            let margin = u0.l1_distance(&shifted) + 1e-8 - jf.l1_distance(&jg);
            check("evolve.resolvent_contraction", true, margin >= 0.0, margin);
            probes.insert(
                "evolve".into(),
                serde_json::json!({
                    "h": h_used,
                    "steps": record.times.len() - 1,
                    "mass_deviation": mass_dev,
                    "min_density": min_u,
                    "final_dist_to_a": record.diagnostics.last().and_then(|d| d.dist_to_a),
                }),
            );
            traj = Some(record);
        }
        op = Some(operator);
    }

    if wants(ProbeName::Omega) {
        let (record, operator) = (traj.as_ref().unwrap(), op.as_ref().unwrap());
        let a = stationary.as_ref().unwrap();
        // radii are measured against the scheme's exact fixed point so the
        // discrete contraction statement holds without an O(h²) floor
        let a_h = crate::stationary::scheme_equilibrium(
            &diff, &mob, &pot, &grid, config.eps, a.mu, &stat_opts,
        )?;
        let report = omega_probe(record, &a_h, operator, 1.0, config.tolerances.conv_tol)?;
        check("omega.radii_monotone", true, report.monotone_violations == 0, report.max_violation);
        check("omega.converged", false, report.converged, report.limit_radius);
        write_json(out_dir, "omega.json", &report)?;
        probes.insert("omega".into(), serde_json::to_value(&report)?);
    }

    if wants(ProbeName::Expformula) {
        let operator = op.as_ref().unwrap();
        let u0 = initial_field(config, &grid, stationary.as_ref())?;
        let gaps = exponential_formula_probe(&u0, 1.0, &[8, 16, 32, 64], operator)?;
        let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        check("expformula.gaps_decreasing", true, decreasing, *gaps.last().unwrap_or(&0.0));
        write_json(out_dir, "expformula.json", &serde_json::json!({ "gaps": gaps }))?;
        probes.insert("expformula".into(), serde_json::json!({ "gaps": gaps }));
    }

    if wants(ProbeName::Particles) {
        let record = traj.as_ref().unwrap();
        let pcfg = config.particles.as_ref().ok_or_else(|| Error::Config {
            field: "particles".into(),
            message: "particles probe requested but no particle parameters given".into(),
        })?;
        let params = ParticleParams {
            n: pcfg.n,
            dt: pcfg.dt,
            t_end: pcfg.t_end,
            seed: config.seed,
            eps_sigma: pcfg.eps_sigma,
        };
        let (hist, preport) = simulate_particles(record, &diff, &mob, &pot, &params)?;
        let mut csv = Vec::new();
        hist.write_csv(&mut csv)?;
        fs::write(out_dir.join("particles.csv"), csv)?;
        let dist_to_a =
            stationary.as_ref().map(|s| hist.l1_distance(&s.field));
        let dist_to_final = hist.l1_distance(&record.final_field().clone());
        let meta = serde_json::json!({
            "report": preport,
            "dist_to_stationary": dist_to_a,
            "dist_to_final_field": dist_to_final,
        });
        check(
            "particles.dist_to_final",
            false,
            dist_to_final <= 0.05,
            dist_to_final,
        );
        fs::write(out_dir.join("particles.json"), serde_json::to_string_pretty(&meta)?)?;
        probes.insert("particles".into(), meta);
    }

    let all_hard_passed = checks.iter().filter(|c| c.hard).all(|c| c.passed);
    let summary = RunSummary {
        schema_version: config.schema_version,
        seed: config.seed,
        r_max,
        checks,
        probes,
        all_hard_passed,
    };
    write_json(out_dir, "summary.json", &summary)?;
    Ok(summary)
}
