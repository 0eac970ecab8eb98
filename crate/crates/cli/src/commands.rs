//! The batch commands. Every command follows the same shape: build inputs
//! from the validated config (schema errors were already caught), run the
//! numerics, write dumps plus a JSON summary into a fresh run directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mfglab::analysis::{
    convergence_study, default_deviation_battery, nash_gap_study, spearman_rho, StudyConfig,
};
use mfglab::forward::{solve_forward, ForwardParams};
use mfglab::grid::{Field, Grid, VectorField, VectorFlow};
use mfglab::io::{write_field_dump, write_trajectories};
use mfglab::model::ModelSpec;
use mfglab::particles::{
    empirical_density, simulate, CouplingRecord, Feedback, Profile, SimConfig,
};
use mfglab::solver::{solve_hopf_cole, solve_mfg, verify_mild_residual, MfgSolution, SolverParams};

use crate::config::RunConfig;
use crate::output::write_json;

pub struct RunContext {
    pub cfg: RunConfig,
    pub dir: PathBuf,
}

fn solver_params(cfg: &RunConfig) -> SolverParams {
    SolverParams {
        steps: cfg.solver.steps,
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        damping: cfg.solver.damping,
    }
}

fn solve(cfg: &RunConfig, m: &ModelSpec, grid: Grid) -> Result<MfgSolution> {
    let sol = solve_mfg(m, grid, solver_params(cfg))?;
    if !sol.converged {
        bail!(
            "Picard iteration did not converge in {} sweeps (last residual {:.3e}); \
             shorten the horizon or increase solver.max_iter",
            sol.iterations,
            sol.residual_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(sol)
}

fn dump_flow(dir: &Path, name: &str, frames: Vec<&Field>) -> Result<()> {
    write_field_dump(&dir.join(name), &frames).context("writing field dump")?;
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    converged: bool,
    iterations: usize,
    residuals: Vec<f64>,
    k_bound: f64,
    mass_drift: f64,
    min_density_pre_clip: f64,
    clipped_mass_max: f64,
    mild_residual_u: f64,
    mild_residual_p: f64,
    hopf_cole_iterations: usize,
    hopf_cole_min_w: f64,
    hopf_cole_w_floor: f64,
    hopf_cole_u_gap: f64,
}

pub fn cmd_solve(ctx: &RunContext) -> Result<()> {
    let m = ctx.cfg.build_model()?;
    let grid = ctx.cfg.build_grid()?;
    let sol = solve(&ctx.cfg, &m, grid)?;
    let (r_u, r_p) = verify_mild_residual(&m, &sol, grid)?;
    let hc = solve_hopf_cole(&m, grid, solver_params(&ctx.cfg))?;
    let mut u_gap = 0.0f64;
    for k in 0..=sol.u.steps() {
        u_gap = u_gap.max(sol.u.frame(k).sup_distance(hc.u_from_w.frame(k))?);
    }
    dump_flow(&ctx.dir, "u.mfgf", sol.u.frames().iter().collect())?;
    dump_flow(&ctx.dir, "p.mfgf", sol.p.frames().iter().collect())?;
    let mut alpha_fields: Vec<Field> = Vec::new();
    for k in 0..=sol.alpha_star.steps() {
        for axis in 0..grid.dim() {
            alpha_fields.push(sol.alpha_star.frame(k).component_field(axis));
        }
    }
    dump_flow(&ctx.dir, "alpha_star.mfgf", alpha_fields.iter().collect())?;
    dump_flow(&ctx.dir, "w.mfgf", hc.w.frames().iter().collect())?;
    let floor = (-(m.bounds().terminal_sup + m.horizon() * m.bounds().running_sup)).exp();
    write_json(
        &ctx.dir.join("summary.json"),
        &SolveSummary {
            converged: sol.converged,
            iterations: sol.iterations,
            residuals: sol.residual_history.clone(),
            k_bound: sol.k_bound,
            mass_drift: sol.mass_drift_max,
            min_density_pre_clip: sol.min_density_pre_clip,
            clipped_mass_max: sol.clipped_mass_max,
            mild_residual_u: r_u,
            mild_residual_p: r_p,
            hopf_cole_iterations: hc.iterations,
            hopf_cole_min_w: hc.min_w,
            hopf_cole_w_floor: floor,
            hopf_cole_u_gap: u_gap,
        },
    )?;
    println!(
        "solve: {} iterations, k_bound {:.6}, mild residual ({r_u:.3e}, {r_p:.3e}), \
         cross-check gap {u_gap:.3e}",
        sol.iterations, sol.k_bound
    );
    Ok(())
}

fn forward_feedback(
    ctx: &RunContext,
    m: &ModelSpec,
    grid: Grid,
) -> Result<(VectorFlow, Option<f64>)> {
    let steps = ctx.cfg.solver.steps;
    let t = m.horizon();
    match ctx.cfg.forward.alpha.as_str() {
        "zero" => Ok((
            VectorFlow::new(grid, 0.0, t, vec![VectorField::zeros(grid); steps + 1])?,
            None,
        )),
        "constant" => {
            let c = ctx.cfg.forward.constant;
            Ok((
                VectorFlow::new(
                    grid,
                    0.0,
                    t,
                    vec![VectorField::from_fn(grid, |_| c)?; steps + 1],
                )?,
                None,
            ))
        }
        _ => {
            let sol = solve(&ctx.cfg, m, grid)?;
            Ok((sol.alpha_star.clone(), Some(sol.k_bound)))
        }
    }
}

#[derive(Serialize)]
struct ForwardSummary {
    converged: bool,
    iterations: usize,
    residual: f64,
    feedback: String,
    admissible_bound: Option<f64>,
}

pub fn cmd_forward(ctx: &RunContext) -> Result<()> {
    let m = ctx.cfg.build_model()?;
    let grid = ctx.cfg.build_grid()?;
    let (alpha, k_bound) = forward_feedback(ctx, &m, grid)?;
    let mut params = ForwardParams::new(ctx.cfg.solver.steps);
    params.tol = ctx.cfg.solver.tol;
    params.max_iter = ctx.cfg.solver.max_iter;
    params.admissible_bound = k_bound;
    let out = solve_forward(&m, &alpha, grid, params)?;
    if !out.converged {
        bail!(
            "forward Picard iteration did not converge (residual {:.3e})",
            out.residual
        );
    }
    dump_flow(&ctx.dir, "p_forward.mfgf", out.p.frames().iter().collect())?;
    write_json(
        &ctx.dir.join("summary.json"),
        &ForwardSummary {
            converged: out.converged,
            iterations: out.iterations,
            residual: out.residual,
            feedback: ctx.cfg.forward.alpha.clone(),
            admissible_bound: k_bound,
        },
    )?;
    println!(
        "forward: {} iterations, residual {:.3e}",
        out.iterations, out.residual
    );
    Ok(())
}

fn sim_feedback(ctx: &RunContext, m: &ModelSpec, grid: Grid) -> Result<Feedback> {
    match ctx.cfg.sim.feedback.as_str() {
        "zero" => Ok(Feedback::Zero),
        "constant" => Ok(Feedback::Constant(ctx.cfg.sim.feedback_constant)),
        _ => {
            let sol = solve(&ctx.cfg, m, grid)?;
            Ok(Feedback::Flow(Arc::new(sol.alpha_star.clone())))
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    runs: Vec<SimulateRun>,
}

#[derive(Serialize)]
struct SimulateRun {
    n_players: usize,
    seed: u64,
    escapes: usize,
    density_frames: usize,
    density_mass_defect: f64,
    dropped_mass_max: f64,
}

pub fn cmd_simulate(ctx: &RunContext) -> Result<()> {
    let m = ctx.cfg.build_model()?;
    let grid = ctx.cfg.build_grid()?;
    let feedback = sim_feedback(ctx, &m, grid)?;
    let mut runs = Vec::new();
    for &n in &ctx.cfg.sim.n_players {
        let mut cfg = SimConfig::new(n, ctx.cfg.sim.steps, ctx.cfg.output.seed);
        cfg.coupling = CouplingRecord::None;
        let ens = simulate(&m, &cfg, &Profile::Shared(feedback.clone()))?;
        write_trajectories(&ctx.dir.join(format!("trajectories_N{n}.mfgt")), &ens)?;
        let dens = empirical_density(&ens, &m, grid, ctx.cfg.sim.density_stride)?;
        let frames: Vec<&Field> = dens.flow.frames().iter().collect();
        write_field_dump(&ctx.dir.join(format!("density_N{n}.mfgf")), &frames)?;
        let mut mass_defect = 0.0f64;
        for f in dens.flow.frames() {
            mass_defect = mass_defect.max((f.integrate() - 1.0).abs());
        }
        runs.push(SimulateRun {
            n_players: n,
            seed: ctx.cfg.output.seed,
            escapes: ens.escape_count(grid.half_width()),
            density_frames: dens.flow.frames().len(),
            density_mass_defect: mass_defect,
            dropped_mass_max: dens.dropped_mass_max,
        });
        println!(
            "simulate: N={n} done ({} escapes)",
            runs.last().unwrap().escapes
        );
    }
    write_json(&ctx.dir.join("summary.json"), &SimulateSummary { runs })?;
    Ok(())
}

fn study_config(ctx: &RunContext) -> StudyConfig {
    let mut study = StudyConfig::new(
        ctx.cfg.sim.n_players.clone(),
        ctx.cfg.sim.seeds,
        ctx.cfg.sim.steps,
        ctx.cfg.output.seed,
    );
    study.dw_center_stride = ctx.cfg.study.dw_center_stride;
    study.holder_gamma = ctx.cfg.study.holder_gamma;
    study
}

fn require_study(ctx: &RunContext, name: &str) -> Result<()> {
    if !ctx.cfg.study.run.iter().any(|s| s == name) {
        bail!("config study.run does not include '{name}'");
    }
    Ok(())
}

pub fn cmd_converge(ctx: &RunContext) -> Result<()> {
    require_study(ctx, "converge")?;
    let m = ctx.cfg.build_model()?;
    let grid = ctx.cfg.build_grid()?;
    let sol = solve(&ctx.cfg, &m, grid)?;
    let report = convergence_study(&m, &sol, grid, &study_config(ctx))?;
    let mut rows = Vec::new();
    for p in &report.points {
        rows.push((
            p.n_players,
            p.seed.to_string(),
            "sup_density_gap".to_string(),
            p.sup_density_gap,
        ));
        rows.push((
            p.n_players,
            p.seed.to_string(),
            "dw_proxy".to_string(),
            p.dw_proxy,
        ));
        if let Some(w1) = p.w1 {
            rows.push((p.n_players, p.seed.to_string(), "w1".to_string(), w1));
        }
        rows.push((
            p.n_players,
            p.seed.to_string(),
            "holder_norm".to_string(),
            p.holder_norm,
        ));
        rows.push((
            p.n_players,
            p.seed.to_string(),
            "escapes".to_string(),
            p.escapes as f64,
        ));
    }
    for med in &report.medians {
        rows.push((
            med.n_players,
            "median".to_string(),
            "sup_density_gap".to_string(),
            med.sup_density_gap,
        ));
        rows.push((
            med.n_players,
            "median".to_string(),
            "dw_proxy".to_string(),
            med.dw_proxy,
        ));
        if let Some(w1) = med.w1 {
            rows.push((med.n_players, "median".to_string(), "w1".to_string(), w1));
        }
        rows.push((
            med.n_players,
            "median".to_string(),
            "holder_norm".to_string(),
            med.holder_norm,
        ));
    }
    crate::output::write_long_csv(&ctx.dir.join("convergence.csv"), &rows)?;
    write_json(&ctx.dir.join("convergence.json"), &report)?;
    for med in &report.medians {
        println!(
            "converge: N={:6} sup_gap={:.5} dw={:.5} holder={:.4}",
            med.n_players, med.sup_density_gap, med.dw_proxy, med.holder_norm
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct NashSummary {
    spearman_gap_vs_n: f64,
    gaps: Vec<f64>,
}

pub fn cmd_nashgap(ctx: &RunContext) -> Result<()> {
    require_study(ctx, "nashgap")?;
    let m = ctx.cfg.build_model()?;
    let grid = ctx.cfg.build_grid()?;
    let sol = solve(&ctx.cfg, &m, grid)?;
    let battery = default_deviation_battery(&sol);
    let mut study = study_config(ctx);
    study.seeds_per_n = ctx.cfg.sim.replications;
    let report = nash_gap_study(&m, &sol, &battery, &study, None)?;
    let mut rows = Vec::new();
    for p in &report.points {
        rows.push((
            p.n_players,
            "aggregate".to_string(),
            "j_equilibrium".to_string(),
            p.j_equilibrium.mean,
        ));
        rows.push((
            p.n_players,
            "aggregate".to_string(),
            "candidate_gap".to_string(),
            p.candidate_gap,
        ));
        if let Some(se) = p.combined_std_error {
            rows.push((
                p.n_players,
                "aggregate".to_string(),
                "combined_std_error".to_string(),
                se,
            ));
        }
        for c in &p.candidates {
            if let Some(cost) = &c.cost {
                rows.push((
                    p.n_players,
                    "aggregate".to_string(),
                    format!("J[{}]", c.label),
                    cost.mean,
                ));
            }
        }
    }
    crate::output::write_long_csv(&ctx.dir.join("nashgap.csv"), &rows)?;
    write_json(&ctx.dir.join("nashgap.json"), &report)?;
    let ns: Vec<f64> = report.points.iter().map(|p| p.n_players as f64).collect();
    let gaps: Vec<f64> = report.points.iter().map(|p| p.candidate_gap).collect();
    let rho = spearman_rho(&ns, &gaps);
    write_json(
        &ctx.dir.join("summary.json"),
        &NashSummary {
            spearman_gap_vs_n: rho,
            gaps: gaps.clone(),
        },
    )?;
    for p in &report.points {
        println!(
            "nashgap: N={:6} gap={:+.6} (lower-bound estimate of required epsilon) winner={}",
            p.n_players, p.candidate_gap, p.deviation_winner
        );
    }
    println!("nashgap: spearman(gap, N) = {rho:+.2}");
    Ok(())
}

pub fn cmd_selftest() -> Result<()> {
    let outcomes = mfglab::selftest::run();
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "[{}] {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} selftest check(s) failed");
    }
    println!("selftest: all {} checks passed", outcomes.len());
    Ok(())
}
