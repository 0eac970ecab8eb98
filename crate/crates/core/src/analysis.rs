//! Cost functionals, distribution distances, particle-limit convergence
//! curves and the empirical Nash-gap experiment.
//!
//! The player cost is always
//! `E[ ∫ ½|α|² + f(X, ρ) dt + g(X_T) ]`, integrated by left rectangles over
//! the simulated steps. N-player costs reuse the interaction term cached by
//! the simulation, so simulation and evaluation cannot disagree on ρ.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::{Field, FieldFlow, Grid, Point};
use crate::model::ModelSpec;
use crate::particles::{simulate, CouplingRecord, Feedback, ParticleEnsemble, Profile, SimConfig};
use crate::rng::StreamRng;
use crate::solver::MfgSolution;

/// A Monte Carlo cost estimate with its breakdown. `mean` is exactly the sum
/// of the three breakdown means.
#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    /// Standard error over replications; `None` when fewer than two.
    pub std_error: Option<f64>,
    pub n_samples: usize,
    pub energy: f64,
    pub running: f64,
    pub terminal: f64,
}

fn aggregate(samples: &[(f64, f64, f64)]) -> CostEstimate {
    let n = samples.len();
    let nf = n as f64;
    let energy = samples.iter().map(|s| s.0).sum::<f64>() / nf;
    let running = samples.iter().map(|s| s.1).sum::<f64>() / nf;
    let terminal = samples.iter().map(|s| s.2).sum::<f64>() / nf;
    let mean = energy + running + terminal;
    let std_error = if n >= 2 {
        let var = samples
            .iter()
            .map(|s| {
                let tot = s.0 + s.1 + s.2;
                (tot - mean) * (tot - mean)
            })
            .sum::<f64>()
            / (nf - 1.0);
        Some((var / nf).sqrt())
    } else {
        None
    };
    CostEstimate {
        mean,
        std_error,
        n_samples: n,
        energy,
        running,
        terminal,
    }
}

/// One realized cost `(energy, running, terminal)` of a player along an
/// already-simulated ensemble.
pub fn realized_cost(
    ens: &ParticleEnsemble,
    m: &ModelSpec,
    player: usize,
) -> Result<(f64, f64, f64)> {
    if player >= ens.n_players() {
        return Err(MfgError::InvalidParam(format!(
            "player {player} out of range"
        )));
    }
    if !ens.has_density_coupling_for(player) && m.bounds().running_sup > 0.0 {
        return Err(MfgError::InvalidParam(
            "running cost needs the interaction term; simulate with coupling recorded for this player".into(),
        ));
    }
    let dt = ens.dt();
    let dim = ens.dim();
    let fb = ens.profile().feedback_for(player);
    let mut energy = 0.0;
    let mut running = 0.0;
    for k in 0..ens.steps() {
        let t = k as f64 * dt;
        let x = ens.position(k, player);
        let a = fb.eval(t, x, dim);
        let mut a2 = 0.0;
        for c in a.iter().take(dim) {
            a2 += c * c;
        }
        energy += dt * 0.5 * a2;
        let rho = ens.density_coupling(k, player).unwrap_or(0.0);
        running += dt * m.running_cost(x, rho);
    }
    let terminal = m.terminal_cost(ens.position(ens.steps(), player));
    Ok((energy, running, terminal))
}

/// N-player cost of one player under a profile, averaged over `replications`
/// independent ensembles (seeds derived from `cfg.rng_seed`).
pub fn cost_nplayer(
    m: &ModelSpec,
    cfg: &SimConfig,
    profile: &Profile,
    player: usize,
    replications: usize,
) -> Result<CostEstimate> {
    if replications == 0 {
        return Err(MfgError::InvalidParam(
            "need at least one replication".into(),
        ));
    }
    let root = StreamRng::named(cfg.rng_seed, "nplayer-cost-replications");
    let samples: Vec<(f64, f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.rng_seed = root.substream(r as u64).key();
            c.coupling = CouplingRecord::Player(player);
            let ens = simulate(m, &c, profile)?;
            realized_cost(&ens, m, player)
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(&samples))
}

/// Cost of a single representative agent driven by `α + b(·, p(t, ·))`
/// against a given density flow, by Monte Carlo over independent paths.
pub fn cost_limit(
    m: &ModelSpec,
    alpha: &Feedback,
    density: &FieldFlow,
    mc_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<CostEstimate> {
    if mc_paths == 0 || steps == 0 {
        return Err(MfgError::InvalidParam(
            "mc_paths and steps must be positive".into(),
        ));
    }
    let dim = m.dim();
    let dt = m.horizon() / steps as f64;
    let sqrt_dt = dt.sqrt();
    let root = StreamRng::named(seed, "limit-cost-paths");
    let samples: Vec<(f64, f64, f64)> = (0..mc_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = root.substream(j as u64);
            let mut x = m.p0().sample(&mut rng, dim);
            let mut energy = 0.0;
            let mut running = 0.0;
            for k in 0..steps {
                let t = k as f64 * dt;
                let a = alpha.eval(t, x, dim);
                let rho = density.eval(t, x);
                let b = m.drift(x, rho);
                let mut a2 = 0.0;
                for c in a.iter().take(dim) {
                    a2 += c * c;
                }
                energy += dt * 0.5 * a2;
                running += dt * m.running_cost(x, rho);
                for axis in 0..dim {
                    x[axis] += dt * (a[axis] + b[axis]) + sqrt_dt * rng.standard_normal();
                }
            }
            (energy, running, m.terminal_cost(x))
        })
        .collect();
    Ok(aggregate(&samples))
}

/// A probability measure handed to the distance diagnostics: either raw
/// sample points or a density field.
pub enum MeasureRef<'a> {
    Samples(&'a [Point]),
    Density(&'a Field),
}

impl MeasureRef<'_> {
    /// `⟨μ, f⟩` for a test function given on the nodes of `grid` (density
    /// pairing by the rectangle rule, sample pairing by the mean).
    fn pair(&self, grid: Grid, f: &dyn Fn(Point) -> f64) -> f64 {
        match self {
            MeasureRef::Samples(xs) => xs.iter().map(|x| f(*x)).sum::<f64>() / xs.len() as f64,
            MeasureRef::Density(d) => {
                let mut s = 0.0;
                for idx in 0..grid.len() {
                    s += d.values()[idx] * f(grid.node(idx));
                }
                s * grid.cell_volume()
            }
        }
    }
}

/// Bounded-Lipschitz distance proxy: maximize `|⟨μ-ν, f⟩|` over a fixed
/// dictionary of 1-Lipschitz functions bounded by 1 (hat functions at grid
/// nodes plus tanh ramps at 16 offset/scale combinations). The dictionary is
/// a subset of the admissible test class, so the value is a certified lower
/// bound of the distance, exact up to the center granularity for nearby
/// point masses.
pub fn dw_proxy(mu: &MeasureRef, nu: &MeasureRef, grid: Grid, center_stride: usize) -> Result<f64> {
    if center_stride == 0 {
        return Err(MfgError::InvalidParam("center_stride must be >= 1".into()));
    }
    if let MeasureRef::Density(d) = mu {
        if d.grid() != grid {
            return Err(MfgError::GridMismatch("mu density grid differs".into()));
        }
    }
    if let MeasureRef::Density(d) = nu {
        if d.grid() != grid {
            return Err(MfgError::GridMismatch("nu density grid differs".into()));
        }
    }
    let dim = grid.dim();
    let mut best = 0.0f64;
    // hats centered at (subsampled) grid nodes, slope 1, height <= 1
    let centers: Vec<Point> = (0..grid.len())
        .step_by(center_stride)
        .map(|i| grid.node(i))
        .collect();
    for c in &centers {
        let hat = |x: Point| -> f64 {
            let mut r2 = 0.0;
            for axis in 0..dim {
                let d = x[axis] - c[axis];
                r2 += d * d;
            }
            (1.0 - r2.sqrt()).max(0.0)
        };
        let gap = mu.pair(grid, &hat) - nu.pair(grid, &hat);
        best = best.max(gap.abs());
    }
    // tanh ramps: 4 offsets x 4 scales per axis, slope and height clamped to 1
    let l = grid.half_width();
    let offsets = [-0.5 * l, -0.125 * l, 0.125 * l, 0.5 * l];
    let scales = [0.25f64, 0.5, 1.0, 2.0];
    for axis in 0..dim {
        for &c in &offsets {
            for &s in &scales {
                let amp = s.min(1.0);
                let ramp = |x: Point| -> f64 { amp * ((x[axis] - c) / s).tanh() };
                let gap = mu.pair(grid, &ramp) - nu.pair(grid, &ramp);
                best = best.max(gap.abs());
            }
        }
    }
    Ok(best)
}

/// Exact 1-D Wasserstein-1 between equally sized samples (sorted pairing).
pub fn w1_sorted_samples(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(MfgError::InvalidParam(
            "need equally sized nonempty samples".into(),
        ));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Exact 1-D Wasserstein-1 between grid densities via the CDF formula
/// `∫ |F_mu - F_nu|`.
pub fn w1_densities_1d(a: &Field, b: &Field) -> Result<f64> {
    if a.grid() != b.grid() || a.grid().dim() != 1 {
        return Err(MfgError::GridMismatch(
            "w1_densities_1d needs two 1-D fields on one grid".into(),
        ));
    }
    let h = a.grid().spacing();
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        cdf_gap += (x - y) * h;
        total += cdf_gap.abs() * h;
    }
    Ok(total)
}

/// Metrics for one `(N, seed)` convergence run.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergencePoint {
    pub n_players: usize,
    pub seed: u64,
    /// `max_k sup_x |p^N(t_k, x) - p(t_k, x)|`.
    pub sup_density_gap: f64,
    /// Frame-wise max of the bounded-Lipschitz proxy.
    pub dw_proxy: f64,
    /// Exact W1 (1-D only).
    pub w1: Option<f64>,
    /// Frame-wise max Hölder seminorm of `p^N` at γ = 0.4.
    pub holder_norm: f64,
    pub escapes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceMedians {
    pub n_players: usize,
    pub sup_density_gap: f64,
    pub dw_proxy: f64,
    pub w1: Option<f64>,
    pub holder_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub points: Vec<ConvergencePoint>,
    pub medians: Vec<ConvergenceMedians>,
    pub seeds_per_n: usize,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub n_values: Vec<usize>,
    pub seeds_per_n: usize,
    pub sim_steps: usize,
    pub base_seed: u64,
    /// Hat-center subsampling for the distance proxy.
    pub dw_center_stride: usize,
    /// Hölder exponent for the seminorm diagnostic.
    pub holder_gamma: f64,
}

impl StudyConfig {
    pub fn new(n_values: Vec<usize>, seeds_per_n: usize, sim_steps: usize, base_seed: u64) -> Self {
        StudyConfig {
            n_values,
            seeds_per_n,
            sim_steps,
            base_seed,
            dw_center_stride: 8,
            holder_gamma: 0.4,
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Spearman rank correlation; ties get average ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                out[idx[k]] = avg;
            }
            i = j + 1;
        }
        out
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Simulate the shared-feedback system across the N ladder and measure how
/// the mollified empirical density approaches the solver's limit density.
/// Jobs run in parallel; aggregation is ordered by `(N, seed)`.
pub fn convergence_study(
    m: &ModelSpec,
    sol: &MfgSolution,
    grid: Grid,
    study: &StudyConfig,
) -> Result<ConvergenceReport> {
    if !sol.converged {
        return Err(MfgError::NotConverged(
            "convergence study needs a converged solution".into(),
        ));
    }
    let solver_steps = sol.p.steps();
    if study.sim_steps % solver_steps != 0 {
        return Err(MfgError::InvalidParam(format!(
            "sim_steps {} must be a multiple of the {} solver steps so frames align",
            study.sim_steps, solver_steps
        )));
    }
    if sol.p.grid() != grid {
        return Err(MfgError::GridMismatch(
            "study grid must match the solution grid".into(),
        ));
    }
    let stride = study.sim_steps / solver_steps;
    let alpha = Feedback::Flow(std::sync::Arc::new(sol.alpha_star.clone()));

    let mut jobs: Vec<(usize, u64)> = Vec::new();
    for &n in &study.n_values {
        for s in 0..study.seeds_per_n {
            jobs.push((n, s as u64));
        }
    }
    let seed_root = StreamRng::named(study.base_seed, "convergence-study");
    let points: Vec<ConvergencePoint> = jobs
        .par_iter()
        .map(|&(n, s)| -> Result<ConvergencePoint> {
            let mut cfg = SimConfig::new(n, study.sim_steps, 0);
            cfg.rng_seed = seed_root.substream((n as u64) << 20 | s).key();
            cfg.coupling = CouplingRecord::None;
            let ens = simulate(m, &cfg, &Profile::Shared(alpha.clone()))?;
            let dens = crate::particles::empirical_density(&ens, m, grid, stride)?;
            let mut sup_gap = 0.0f64;
            let mut dw = 0.0f64;
            let mut w1: Option<f64> = if grid.dim() == 1 { Some(0.0) } else { None };
            let mut holder = 0.0f64;
            for k in 0..=solver_steps {
                let pn = dens.flow.frame(k);
                let p = sol.p.frame(k);
                sup_gap = sup_gap.max(pn.sup_distance(p)?);
                dw = dw.max(dw_proxy(
                    &MeasureRef::Density(pn),
                    &MeasureRef::Density(p),
                    grid,
                    study.dw_center_stride,
                )?);
                if let Some(w) = w1.as_mut() {
                    *w = w.max(w1_densities_1d(pn, p)?);
                }
                holder = holder.max(pn.holder_seminorm(study.holder_gamma, 4)?);
            }
            Ok(ConvergencePoint {
                n_players: n,
                seed: s,
                sup_density_gap: sup_gap,
                dw_proxy: dw,
                w1,
                holder_norm: holder,
                escapes: ens.escape_count(grid.half_width()),
            })
        })
        .collect::<Result<_>>()?;

    let mut medians = Vec::new();
    for &n in &study.n_values {
        let of = |f: &dyn Fn(&ConvergencePoint) -> f64| {
            let mut v: Vec<f64> = points.iter().filter(|p| p.n_players == n).map(f).collect();
            median(&mut v)
        };
        medians.push(ConvergenceMedians {
            n_players: n,
            sup_density_gap: of(&|p| p.sup_density_gap),
            dw_proxy: of(&|p| p.dw_proxy),
            w1: if grid.dim() == 1 {
                Some(of(&|p| p.w1.unwrap_or(f64::NAN)))
            } else {
                None
            },
            holder_norm: of(&|p| p.holder_norm),
        });
    }
    Ok(ConvergenceReport {
        points,
        medians,
        seeds_per_n: study.seeds_per_n,
    })
}

/// One candidate deviation in the Nash-gap battery.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateOutcome {
    pub label: String,
    pub admissible: bool,
    /// Cost of player 0 when only they deviate to this candidate.
    pub cost: Option<CostEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NashGapPoint {
    pub n_players: usize,
    pub j_equilibrium: CostEstimate,
    pub candidates: Vec<CandidateOutcome>,
    /// Median over seeds of `J_eq - min_candidate J_dev`. By construction a
    /// LOWER bound estimate of the required ε(N): the candidate set is a
    /// finite subset of the admissible class.
    pub candidate_gap: f64,
    /// `sqrt(SE_eq² + SE_winner²)`.
    pub combined_std_error: Option<f64>,
    pub deviation_winner: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct NashGapReport {
    pub points: Vec<NashGapPoint>,
    /// Semantics reminder carried into serialized reports.
    pub gap_meaning: String,
    pub seeds_per_n: usize,
}

/// Default battery: rescalings of `α*`, axis shifts, and constant pushes.
pub fn default_deviation_battery(sol: &MfgSolution) -> Vec<(String, Feedback)> {
    let flow = std::sync::Arc::new(sol.alpha_star.clone());
    let aff = |scale: f64, offset: Point| Feedback::Affine {
        flow: flow.clone(),
        scale,
        offset,
    };
    vec![
        ("zero".into(), Feedback::Zero),
        ("half-alpha".into(), aff(0.5, [0.0, 0.0])),
        ("three-halves-alpha".into(), aff(1.5, [0.0, 0.0])),
        ("alpha-plus-025e1".into(), aff(1.0, [0.25, 0.0])),
        ("alpha-minus-025e1".into(), aff(1.0, [-0.25, 0.0])),
        ("alpha-plus-05e1".into(), aff(1.0, [0.5, 0.0])),
        ("alpha-minus-05e1".into(), aff(1.0, [-0.5, 0.0])),
        ("const-plus-05e1".into(), Feedback::Constant([0.5, 0.0])),
        ("const-minus-05e1".into(), Feedback::Constant([-0.5, 0.0])),
    ]
}

/// For each N: cost of player 0 at the shared-`α*` profile and under every
/// single-deviator candidate, with common random numbers across profiles
/// (the same seed drives all sims of one replication).
pub fn nash_gap_study(
    m: &ModelSpec,
    sol: &MfgSolution,
    candidates: &[(String, Feedback)],
    study: &StudyConfig,
    admissible_bound: Option<f64>,
) -> Result<NashGapReport> {
    if !sol.converged {
        return Err(MfgError::NotConverged(
            "nash gap study needs a converged solution".into(),
        ));
    }
    let dim = m.dim();
    let alpha = Feedback::Flow(std::sync::Arc::new(sol.alpha_star.clone()));
    // The admissible class is any bound >= sup|α*|; default to covering the
    // supplied battery so every listed candidate is admissible.
    let bound = admissible_bound.unwrap_or_else(|| {
        candidates
            .iter()
            .map(|(_, f)| f.sup_bound(dim))
            .fold(sol.k_bound, f64::max)
    });
    let admissible: Vec<bool> = candidates
        .iter()
        .map(|(_, f)| f.sup_bound(dim) <= bound * (1.0 + 1e-12))
        .collect();

    let seed_root = StreamRng::named(study.base_seed, "nash-gap-study");
    let mut points = Vec::new();
    for &n in &study.n_values {
        // jobs: (seed index, profile index) with profile 0 = equilibrium
        let mut jobs = Vec::new();
        for s in 0..study.seeds_per_n {
            jobs.push((s, 0usize));
            for (c, _) in candidates.iter().enumerate() {
                if admissible[c] {
                    jobs.push((s, c + 1));
                }
            }
        }
        let results: Vec<((usize, usize), (f64, f64, f64))> = jobs
            .par_iter()
            .map(|&(s, prof)| -> Result<((usize, usize), (f64, f64, f64))> {
                let mut cfg = SimConfig::new(n, study.sim_steps, 0);
                // common random numbers: the seed depends on (N, replication)
                // only, so all profiles share noise and initial draws
                cfg.rng_seed = seed_root.substream((n as u64) << 20 | s as u64).key();
                cfg.coupling = CouplingRecord::Player(0);
                let profile = if prof == 0 {
                    Profile::Shared(alpha.clone())
                } else {
                    Profile::Deviator {
                        index: 0,
                        deviator: candidates[prof - 1].1.clone(),
                        others: alpha.clone(),
                    }
                };
                let ens = simulate(m, &cfg, &profile)?;
                Ok(((s, prof), realized_cost(&ens, m, 0)?))
            })
            .collect::<Result<_>>()?;

        let collect = |prof: usize| -> Vec<(f64, f64, f64)> {
            let mut v: Vec<(usize, (f64, f64, f64))> = results
                .iter()
                .filter(|((_, p), _)| *p == prof)
                .map(|((s, _), c)| (*s, *c))
                .collect();
            v.sort_by_key(|(s, _)| *s);
            v.into_iter().map(|(_, c)| c).collect()
        };
        let eq_samples = collect(0);
        let j_eq = aggregate(&eq_samples);

        let mut outcomes = Vec::new();
        let mut per_candidate_means: Vec<Option<f64>> = Vec::new();
        for (c, (label, _)) in candidates.iter().enumerate() {
            if !admissible[c] {
                outcomes.push(CandidateOutcome {
                    label: label.clone(),
                    admissible: false,
                    cost: None,
                });
                per_candidate_means.push(None);
                continue;
            }
            let samples = collect(c + 1);
            let est = aggregate(&samples);
            per_candidate_means.push(Some(est.mean));
            outcomes.push(CandidateOutcome {
                label: label.clone(),
                admissible: true,
                cost: Some(est),
            });
        }

        // winner = admissible candidate with the smallest mean cost
        let mut winner = String::from("none");
        let mut winner_mean = f64::INFINITY;
        let mut winner_se = None;
        for (c, mean) in per_candidate_means.iter().enumerate() {
            if let Some(mv) = mean {
                if *mv < winner_mean {
                    winner_mean = *mv;
                    winner = candidates[c].0.clone();
                    winner_se = outcomes[c].cost.as_ref().and_then(|e| e.std_error);
                }
            }
        }

        // per-seed gap, then the median: gap_s = J_eq(s) - min_c J_c(s)
        let mut gaps: Vec<f64> = Vec::with_capacity(study.seeds_per_n);
        for s in 0..study.seeds_per_n {
            let eq = eq_samples[s].0 + eq_samples[s].1 + eq_samples[s].2;
            let mut best = f64::INFINITY;
            for c in 0..candidates.len() {
                if admissible[c] {
                    let dev = collect(c + 1)[s];
                    best = best.min(dev.0 + dev.1 + dev.2);
                }
            }
            gaps.push(eq - best);
        }
        let candidate_gap = median(&mut gaps);
        let combined_std_error = match (j_eq.std_error, winner_se) {
            (Some(a), Some(b)) => Some((a * a + b * b).sqrt()),
            _ => None,
        };
        points.push(NashGapPoint {
            n_players: n,
            j_equilibrium: j_eq,
            candidates: outcomes,
            candidate_gap,
            combined_std_error,
            deviation_winner: winner,
        });
    }
    Ok(NashGapReport {
        points,
        gap_meaning: "lower-bound estimate of required epsilon: candidate set is a finite subset \
                      of the admissible deviation class"
            .into(),
        seeds_per_n: study.seeds_per_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, CoeffBounds, InitialDensity, ModelSpec};
    use crate::particles::simulate_with_streams;
    use crate::semigroup::HeatOperator;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn free_model() -> ModelSpec {
        builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn zero_profile_costs_nothing() {
        let m = free_model();
        let cfg = SimConfig::new(8, 20, 3);
        let est = cost_nplayer(&m, &cfg, &Profile::Shared(Feedback::Zero), 0, 4).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.energy, 0.0);
        assert_eq!(est.running, 0.0);
        assert_eq!(est.terminal, 0.0);
        assert_eq!(est.n_samples, 4);
    }

    #[test]
    fn constant_control_energy_is_exact() {
        let m = free_model();
        let cfg = SimConfig::new(4, 40, 5);
        let c = 0.7;
        let est = cost_nplayer(
            &m,
            &cfg,
            &Profile::Shared(Feedback::Constant([c, 0.0])),
            1,
            3,
        )
        .unwrap();
        let expected = 0.5 * c * c * 0.5; // half |c|^2 T
        assert!((est.energy - expected).abs() <= 1e-12);
        assert_eq!(est.mean, est.energy + est.running + est.terminal);
        assert_eq!(est.running, 0.0);
    }

    #[test]
    fn single_replication_has_no_std_error() {
        let m = free_model();
        let cfg = SimConfig::new(4, 10, 5);
        let est = cost_nplayer(&m, &cfg, &Profile::Shared(Feedback::Zero), 0, 1).unwrap();
        assert!(est.std_error.is_none());
    }

    #[test]
    fn terminal_cost_matches_quadrature_oracle() {
        // free motion, alpha = 0: X_T = X_0 + W_T has density P_T p0 exactly,
        // so E[g(X_T)] is a grid quadrature away
        let g_cap = 10.0;
        let m = ModelSpec::custom(
            "soft-quadratic-target",
            1,
            0.5,
            0.3,
            Arc::new(|_, _| [0.0, 0.0]),
            Arc::new(|_, _| 0.0),
            Arc::new(move |x: [f64; 2]| (x[0] * x[0]).min(g_cap)),
            InitialDensity::Gaussian { sigma: 1.0 },
            CoeffBounds {
                coeff_sup: 0.0,
                lipschitz: 0.0,
                running_sup: 0.0,
                terminal_sup: g_cap,
            },
            false,
        )
        .unwrap();
        let grid = Grid::new(1, 10.0, 1024).unwrap();
        let op = HeatOperator::new(grid).unwrap();
        let p0 = m.initial_density_field(grid).unwrap();
        let p_t = op.apply(0.5, &p0).unwrap();
        let g_field = m.terminal_cost_field(grid).unwrap();
        let oracle = p_t.multiply(&g_field).unwrap().integrate();

        let cfg = SimConfig::new(16, 50, 12);
        let est = cost_nplayer(&m, &cfg, &Profile::Shared(Feedback::Zero), 0, 256).unwrap();
        let se = est.std_error.unwrap();
        assert!(
            (est.mean - oracle).abs() <= 3.0 * se,
            "MC {} vs quadrature {oracle} (3SE {})",
            est.mean,
            3.0 * se
        );
    }

    #[test]
    fn cost_is_permutation_equivariant() {
        let m = builtin_model("drift-congestion", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let n = 8;
        let mut cfg = SimConfig::new(n, 30, 17);
        cfg.coupling = CouplingRecord::All;
        let init_root = StreamRng::named(cfg.rng_seed, "particles-init");
        let noise_root = StreamRng::named(cfg.rng_seed, "particles-noise");
        let initials: Vec<Point> = (0..n)
            .map(|i| {
                let mut r = init_root.substream(i as u64);
                m.p0().sample(&mut r, 1)
            })
            .collect();
        let keys: Vec<u64> = (0..n)
            .map(|i| noise_root.substream(i as u64).key())
            .collect();

        let deviator = 2usize;
        let profile = Profile::Deviator {
            index: deviator,
            deviator: Feedback::Constant([0.3, 0.0]),
            others: Feedback::Zero,
        };
        let base = simulate_with_streams(&m, &cfg, &profile, initials.clone(), &keys).unwrap();

        let pi = |i: usize| (i + 5) % n;
        let perm_init: Vec<Point> = (0..n).map(|i| initials[pi(i)]).collect();
        let perm_keys: Vec<u64> = (0..n).map(|i| keys[pi(i)]).collect();
        // the deviator moves with the permutation: player j in the permuted
        // system plays what player pi(j) played before
        let inv = |i: usize| (0..n).find(|&j| pi(j) == i).unwrap();
        let perm_profile = Profile::Deviator {
            index: inv(deviator),
            deviator: Feedback::Constant([0.3, 0.0]),
            others: Feedback::Zero,
        };
        let permuted =
            simulate_with_streams(&m, &cfg, &perm_profile, perm_init, &perm_keys).unwrap();

        for i in 0..n {
            let a = realized_cost(&permuted, &m, i).unwrap();
            let b = realized_cost(&base, &m, pi(i)).unwrap();
            let (ta, tb) = (a.0 + a.1 + a.2, b.0 + b.1 + b.2);
            assert!(
                (ta - tb).abs() <= 1e-10 * (1.0 + tb.abs()),
                "player {i}: {ta} vs {tb}"
            );
        }
    }

    #[test]
    fn dw_proxy_identity_and_symmetry() {
        let grid = Grid::new(1, 8.0, 64).unwrap();
        let a =
            Field::from_fn(grid, |x| (-(x[0] * x[0]) / 2.0).exp() / 2.5066282746310002).unwrap();
        assert_eq!(
            dw_proxy(&MeasureRef::Density(&a), &MeasureRef::Density(&a), grid, 1).unwrap(),
            0.0
        );
        let b = Field::from_fn(grid, |x| {
            (-((x[0] - 1.0) * (x[0] - 1.0)) / 2.0).exp() / 2.5066282746310002
        })
        .unwrap();
        let ab = dw_proxy(&MeasureRef::Density(&a), &MeasureRef::Density(&b), grid, 1).unwrap();
        let ba = dw_proxy(&MeasureRef::Density(&b), &MeasureRef::Density(&a), grid, 1).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.1, "visibly separated measures must register: {ab}");
    }

    #[test]
    fn dw_proxy_point_masses() {
        let grid = Grid::new(1, 8.0, 64).unwrap();
        for a in [0.3, 0.75] {
            let mu = vec![[0.0, 0.0]];
            let nu = vec![[a, 0.0]];
            let d = dw_proxy(
                &MeasureRef::Samples(&mu),
                &MeasureRef::Samples(&nu),
                grid,
                1,
            )
            .unwrap();
            // the hat centered at the origin node attains exactly a
            assert!((d - a).abs() <= 1e-12, "delta distance {d} vs {a}");
        }
    }

    #[test]
    fn dw_proxy_point_masses_2d() {
        let grid = Grid::new(2, 4.0, 32).unwrap();
        let mu = vec![[0.0, 0.0]];
        let nu = vec![[0.25, 0.25]];
        let d = dw_proxy(
            &MeasureRef::Samples(&mu),
            &MeasureRef::Samples(&nu),
            grid,
            1,
        )
        .unwrap();
        let dist = (2.0f64 * 0.25 * 0.25).sqrt();
        // the hat at the origin node gives exactly the euclidean distance
        assert!((d - dist).abs() <= 1e-12, "{d} vs {dist}");
    }

    #[test]
    fn dw_proxy_is_dominated_by_w1() {
        let mut rng = StreamRng::named(8, "dw-vs-w1");
        let grid = Grid::new(1, 8.0, 128).unwrap();
        for _ in 0..10 {
            let xs: Vec<f64> = (0..200).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let ys: Vec<f64> = (0..200).map(|_| rng.uniform_in(-2.0, 4.0)).collect();
            let mu: Vec<Point> = xs.iter().map(|&x| [x, 0.0]).collect();
            let nu: Vec<Point> = ys.iter().map(|&y| [y, 0.0]).collect();
            let dw = dw_proxy(
                &MeasureRef::Samples(&mu),
                &MeasureRef::Samples(&nu),
                grid,
                1,
            )
            .unwrap();
            let w1 = w1_sorted_samples(&xs, &ys).unwrap();
            assert!(dw <= w1 + 1e-12, "dw {dw} exceeds W1 {w1}");
        }
    }

    #[test]
    fn w1_between_grid_densities() {
        // two unit point-ish masses at distance 1 => W1 = 1
        let grid = Grid::new(1, 8.0, 1024).unwrap();
        let bump = |c: f64| {
            Field::from_fn(grid, move |x| {
                let z = (x[0] - c) / 0.05;
                (-(z * z) / 2.0).exp()
            })
            .unwrap()
        };
        let a = bump(0.0);
        let a = a.scale(1.0 / a.integrate());
        let b = bump(1.0);
        let b = b.scale(1.0 / b.integrate());
        let w1 = w1_densities_1d(&a, &b).unwrap();
        assert!((w1 - 1.0).abs() <= 1e-3, "w1 {w1}");
    }

    #[test]
    fn spearman_rank_basics() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[5.0, 3.0, 1.0]), -1.0);
        let flat = spearman_rho(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]);
        assert_eq!(flat, 0.0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn inadmissible_candidates_are_flagged_not_run() {
        let m = builtin_model("congestion", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let grid = Grid::new(1, 8.0, 256).unwrap();
        let sol = crate::solver::solve_mfg(&m, grid, crate::solver::SolverParams::new(25)).unwrap();
        let battery = vec![
            ("ok".to_string(), Feedback::Zero),
            ("too-big".to_string(), Feedback::Constant([5.0, 0.0])),
        ];
        let study = StudyConfig::new(vec![16], 2, 50, 9);
        let report = nash_gap_study(&m, &sol, &battery, &study, Some(1.0)).unwrap();
        let point = &report.points[0];
        assert!(point.candidates[0].admissible);
        assert!(point.candidates[0].cost.is_some());
        assert!(!point.candidates[1].admissible);
        assert!(point.candidates[1].cost.is_none());
        assert_eq!(point.deviation_winner, "ok");
    }

    #[test]
    fn limit_cost_of_null_model_is_zero() {
        let m = free_model();
        let grid = Grid::new(1, 8.0, 64).unwrap();
        let density = FieldFlow::new(
            grid,
            0.0,
            0.5,
            vec![Field::from_fn(grid, |_| 0.05).unwrap(); 3],
        )
        .unwrap();
        let est = cost_limit(&m, &Feedback::Zero, &density, 200, 20, 4).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn free_game_has_nonpositive_candidate_gap() {
        // with b = f = g = 0 the equilibrium feedback is zero; every
        // energetic deviation only costs, so the gap estimate is <= 0
        let m = free_model();
        let grid = Grid::new(1, 8.0, 64).unwrap();
        let sol = crate::solver::solve_mfg(&m, grid, crate::solver::SolverParams::new(10)).unwrap();
        assert!(sol.k_bound <= 1e-12);
        let battery = vec![
            ("push-right".to_string(), Feedback::Constant([0.5, 0.0])),
            ("push-left".to_string(), Feedback::Constant([-0.5, 0.0])),
        ];
        let study = StudyConfig::new(vec![16, 32], 3, 40, 11);
        let report = nash_gap_study(&m, &sol, &battery, &study, None).unwrap();
        for point in &report.points {
            assert_eq!(point.j_equilibrium.mean, 0.0);
            for c in &point.candidates {
                let cost = c.cost.as_ref().unwrap();
                assert!((cost.energy - 0.5 * 0.25 * 0.5).abs() <= 1e-12);
                assert_eq!(cost.running, 0.0);
                assert_eq!(cost.terminal, 0.0);
            }
            assert!(point.candidate_gap <= 0.0, "gap {}", point.candidate_gap);
        }
    }
}
