//! Euler-Maruyama simulation of the N-player system with moderate
//! interaction, including single-deviator profiles, plus the mollified
//! empirical density deposited on a measurement grid.
//!
//! Update rule for player i at step k:
//!
//! ```text
//! X_{k+1}^i = X_k^i + dt [ α_i(t_k, X_k^i) + b(X_k^i, ρ_k^i) ] + √dt ξ_k^i
//! ρ_k^i     = (1/N) Σ_j V^N(X_k^i - X_k^j)        (self term j=i included)
//! ```
//!
//! The interaction sum runs over a uniform-cell neighbor list keyed to the
//! mollifier support; candidates are summed in ascending particle index, so
//! the result is bit-identical to the direct O(N²) double sum (terms outside
//! the support are exactly zero). Each particle draws noise from its own
//! counter-based stream, so trajectories do not depend on the thread count.
//! No boundary condition is imposed; the grid is only a measurement device
//! and escapes are counted, never clamped.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{MfgError, Result};
use crate::grid::{Field, FieldFlow, Grid, Point, VectorFlow};
use crate::model::{ModelSpec, Mollifier};
use crate::rng::StreamRng;

/// A feedback strategy evaluated along particle trajectories: multilinear in
/// space, left-constant in time (matching the solver's quadrature).
#[derive(Clone)]
pub enum Feedback {
    Zero,
    Constant(Point),
    Flow(Arc<VectorFlow>),
    /// `scale * flow + offset`.
    Affine {
        flow: Arc<VectorFlow>,
        scale: f64,
        offset: Point,
    },
}

impl Feedback {
    pub fn eval(&self, t: f64, x: Point, dim: usize) -> Point {
        match self {
            Feedback::Zero => [0.0, 0.0],
            Feedback::Constant(c) => *c,
            Feedback::Flow(flow) => flow.eval(t, x),
            Feedback::Affine {
                flow,
                scale,
                offset,
            } => {
                let v = flow.eval(t, x);
                let mut out = [0.0; 2];
                for axis in 0..dim {
                    out[axis] = scale * v[axis] + offset[axis];
                }
                out
            }
        }
    }

    /// Upper bound on the sup norm, used for admissibility checks.
    pub fn sup_bound(&self, dim: usize) -> f64 {
        let norm = |p: &Point| {
            let mut s = 0.0;
            for c in p.iter().take(dim) {
                s += c * c;
            }
            s.sqrt()
        };
        match self {
            Feedback::Zero => 0.0,
            Feedback::Constant(c) => norm(c),
            Feedback::Flow(flow) => flow.sup_norm(),
            Feedback::Affine {
                flow,
                scale,
                offset,
            } => scale.abs() * flow.sup_norm() + norm(offset),
        }
    }
}

/// Who plays what.
#[derive(Clone)]
pub enum Profile {
    /// Every player uses the same feedback.
    Shared(Feedback),
    /// Player `index` deviates; everyone else follows `others`.
    Deviator {
        index: usize,
        deviator: Feedback,
        others: Feedback,
    },
}

impl Profile {
    pub fn feedback_for(&self, player: usize) -> &Feedback {
        match self {
            Profile::Shared(f) => f,
            Profile::Deviator {
                index,
                deviator,
                others,
            } => {
                if player == *index {
                    deviator
                } else {
                    others
                }
            }
        }
    }

    pub fn deviator_index(&self) -> Option<usize> {
        match self {
            Profile::Shared(_) => None,
            Profile::Deviator { index, .. } => Some(*index),
        }
    }
}

/// Which players' interaction terms to keep for later cost evaluation.
/// The drift always gets the terms it needs; this only controls storage
/// (and lets b-independent models skip the O(N·neighbors) sums entirely).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingRecord {
    None,
    Player(usize),
    All,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_players: usize,
    /// Euler-Maruyama steps over the model horizon.
    pub steps: usize,
    pub rng_seed: u64,
    /// Cell size of the neighbor list; defaults to the mollifier support.
    pub neighbor_cell_size: Option<f64>,
    /// Interaction terms to record for running-cost evaluation.
    pub coupling: CouplingRecord,
    /// Test hook: force ξ = 0.
    pub frozen_noise: bool,
}

impl SimConfig {
    pub fn new(n_players: usize, steps: usize, rng_seed: u64) -> Self {
        SimConfig {
            n_players,
            steps,
            rng_seed,
            neighbor_cell_size: None,
            coupling: CouplingRecord::All,
            frozen_noise: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_players < 2 {
            return Err(MfgError::InvalidParam("need at least 2 players".into()));
        }
        if self.steps < 1 {
            return Err(MfgError::InvalidParam("need at least 1 time step".into()));
        }
        Ok(())
    }
}

enum CouplingStore {
    None,
    /// Per-step value for one player.
    Single {
        player: usize,
        values: Vec<f64>,
    },
    /// `values[k][i]` for every player.
    Full(Vec<Vec<f64>>),
}

/// Simulated trajectories plus the cached interaction term.
pub struct ParticleEnsemble {
    dim: usize,
    n_players: usize,
    dt: f64,
    /// `positions[k][i]`, frame-major.
    positions: Vec<Vec<Point>>,
    rho: CouplingStore,
    profile: Profile,
    seed: u64,
}

impl ParticleEnsemble {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn profile(&self) -> &Profile {
        self.profile_ref()
    }

    fn profile_ref(&self) -> &Profile {
        &self.profile
    }

    pub fn position(&self, step: usize, player: usize) -> Point {
        self.positions[step][player]
    }

    pub fn frame_positions(&self, step: usize) -> &[Point] {
        &self.positions[step]
    }

    /// Cached interaction term, if the run recorded it for this player.
    pub fn density_coupling(&self, step: usize, player: usize) -> Option<f64> {
        match &self.rho {
            CouplingStore::None => None,
            CouplingStore::Single { player: p, values } => {
                if *p == player {
                    Some(values[step])
                } else {
                    None
                }
            }
            CouplingStore::Full(values) => Some(values[step][player]),
        }
    }

    pub fn has_density_coupling_for(&self, player: usize) -> bool {
        self.density_coupling(0, player).is_some()
    }

    /// Particle-frames outside `[-half_width, half_width]^d`; a
    /// truncation-quality diagnostic, not a constraint.
    pub fn escape_count(&self, half_width: f64) -> usize {
        let mut count = 0;
        for frame in &self.positions {
            for x in frame {
                for c in x.iter().take(self.dim) {
                    if c.abs() > half_width {
                        count += 1;
                        break;
                    }
                }
            }
        }
        count
    }
}

/// Interaction term for every particle at one frame. Sums candidate
/// contributions in ascending particle index.
pub fn interaction_all(mol: &Mollifier, positions: &[Point], cell_size: f64) -> Vec<f64> {
    let n = positions.len();
    let dim = mol.dim();
    let eps = mol.scale();

    // Degenerate cell geometry (support spanning the whole cloud) falls back
    // to the direct sum; both paths produce identical bits.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for x in positions {
        for axis in 0..dim {
            lo[axis] = lo[axis].min(x[axis]);
            hi[axis] = hi[axis].max(x[axis]);
        }
    }
    let spread = (0..dim).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    if !(cell_size > 0.0) || spread / cell_size < 3.0 {
        return (0..n)
            .into_par_iter()
            .map(|i| interaction_direct(mol, positions, i))
            .collect();
    }

    let key = |x: &Point| -> (i64, i64) {
        let kx = (x[0] / cell_size).floor() as i64;
        let ky = if dim == 2 {
            (x[1] / cell_size).floor() as i64
        } else {
            0
        };
        (kx, ky)
    };
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, x) in positions.iter().enumerate() {
        cells.entry(key(x)).or_default().push(i);
    }
    let reach = (eps / cell_size).ceil() as i64;

    (0..n)
        .into_par_iter()
        .map(|i| {
            let (cx, cy) = key(&positions[i]);
            let mut candidates: Vec<usize> = Vec::new();
            let y_range = if dim == 2 { -reach..=reach } else { 0..=0 };
            for dy in y_range {
                for dx in -reach..=reach {
                    if let Some(v) = cells.get(&(cx + dx, cy + dy)) {
                        candidates.extend_from_slice(v);
                    }
                }
            }
            candidates.sort_unstable();
            let mut sum = 0.0;
            for j in candidates {
                let d = diff(&positions[i], &positions[j]);
                sum += mol.eval_offset(d[0], d[1]);
            }
            // same division as the direct sum so the bits agree
            sum / n as f64
        })
        .collect()
}

/// Reference O(N) single-particle sum over all indices, in index order.
pub fn interaction_direct(mol: &Mollifier, positions: &[Point], i: usize) -> f64 {
    let mut sum = 0.0;
    for x in positions {
        let d = diff(&positions[i], x);
        sum += mol.eval_offset(d[0], d[1]);
    }
    sum / positions.len() as f64
}

#[inline]
fn diff(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Simulate with positions drawn from `p0` and per-particle noise streams
/// derived from the config seed.
pub fn simulate(m: &ModelSpec, cfg: &SimConfig, profile: &Profile) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let init_root = StreamRng::named(cfg.rng_seed, "particles-init");
    let noise_root = StreamRng::named(cfg.rng_seed, "particles-noise");
    let initials: Vec<Point> = (0..cfg.n_players)
        .map(|i| {
            let mut rng = init_root.substream(i as u64);
            m.p0().sample(&mut rng, m.dim())
        })
        .collect();
    let noise_keys: Vec<u64> = (0..cfg.n_players)
        .map(|i| noise_root.substream(i as u64).key())
        .collect();
    simulate_with_streams(m, cfg, profile, initials, &noise_keys)
}

/// Simulation core with explicit initial positions and noise-stream keys.
/// Exposed so exchangeability and permutation checks can rewire streams.
pub fn simulate_with_streams(
    m: &ModelSpec,
    cfg: &SimConfig,
    profile: &Profile,
    initials: Vec<Point>,
    noise_keys: &[u64],
) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let n = cfg.n_players;
    if initials.len() != n || noise_keys.len() != n {
        return Err(MfgError::InvalidParam(
            "initials/noise keys must have one entry per player".into(),
        ));
    }
    if let Profile::Deviator { index, .. } = profile {
        if *index >= n {
            return Err(MfgError::InvalidParam(format!(
                "deviator index {index} out of range"
            )));
        }
    }
    if let CouplingRecord::Player(p) = cfg.coupling {
        if p >= n {
            return Err(MfgError::InvalidParam(format!(
                "coupling player {p} out of range"
            )));
        }
    }
    let dim = m.dim();
    let dt = m.horizon() / cfg.steps as f64;
    let sqrt_dt = dt.sqrt();
    let mol = m.mollifier_for(n)?;
    let cell = cfg.neighbor_cell_size.unwrap_or_else(|| mol.scale());
    // the drift needs every player's term; otherwise compute only what the
    // recording mode asks for
    let need_full = m.drift_depends_on_density() || cfg.coupling == CouplingRecord::All;

    let mut positions: Vec<Vec<Point>> = Vec::with_capacity(cfg.steps + 1);
    positions.push(initials);
    let mut rho = match cfg.coupling {
        CouplingRecord::None => CouplingStore::None,
        CouplingRecord::Player(p) => CouplingStore::Single {
            player: p,
            values: Vec::with_capacity(cfg.steps + 1),
        },
        CouplingRecord::All => CouplingStore::Full(Vec::with_capacity(cfg.steps + 1)),
    };
    let mut noise: Vec<StreamRng> = noise_keys.iter().map(|&k| StreamRng::from_key(k)).collect();

    let recording = !matches!(rho, CouplingStore::None);
    for k in 0..=cfg.steps {
        let current = &positions[k];
        // the final frame's term is only needed for cost caches
        let rho_frame: Option<Vec<f64>> = if need_full && (k < cfg.steps || recording) {
            Some(interaction_all(&mol, current, cell))
        } else {
            None
        };
        match &mut rho {
            CouplingStore::None => {}
            CouplingStore::Single { player, values } => match &rho_frame {
                Some(frame) => values.push(frame[*player]),
                None => values.push(interaction_direct(&mol, current, *player)),
            },
            CouplingStore::Full(frames) => {
                frames.push(rho_frame.clone().expect("full mode computes every frame"));
            }
        }
        if k == cfg.steps {
            break;
        }

        let t = k as f64 * dt;
        let next: Vec<Point> = current
            .par_iter()
            .zip(noise.par_iter_mut())
            .enumerate()
            .map(|(i, (x, rng))| {
                let coupling = rho_frame.as_ref().map_or(0.0, |r| r[i]);
                let fb = profile.feedback_for(i).eval(t, *x, dim);
                let b = m.drift(*x, coupling);
                let mut y = [0.0; 2];
                for axis in 0..dim {
                    let xi = if cfg.frozen_noise {
                        0.0
                    } else {
                        rng.standard_normal()
                    };
                    y[axis] = x[axis] + dt * (fb[axis] + b[axis]) + sqrt_dt * xi;
                }
                y
            })
            .collect();

        for (i, y) in next.iter().enumerate() {
            for axis in 0..dim {
                if !y[axis].is_finite() {
                    return Err(MfgError::NonFinite {
                        what: "particle position".into(),
                        location: format!("step {} player {i}", k + 1),
                    });
                }
            }
        }
        positions.push(next);
    }

    Ok(ParticleEnsemble {
        dim,
        n_players: n,
        dt,
        positions,
        rho,
        profile: profile.clone(),
        seed: cfg.rng_seed,
    })
}

/// Mollified empirical density frames on a measurement grid.
#[derive(Debug)]
pub struct EmpiricalDensity {
    pub flow: FieldFlow,
    /// Simulation steps between consecutive stored frames.
    pub frame_stride: usize,
    /// Largest per-frame share of particle mass falling outside the grid box.
    pub dropped_mass_max: f64,
}

/// Deposit `V^N(x - X_k^i)/N` for each retained frame. Each particle's stamp
/// is renormalized to carry exactly mass 1/N on the grid, so frame masses are
/// 1 whenever no particle escapes the box.
pub fn empirical_density(
    ens: &ParticleEnsemble,
    m: &ModelSpec,
    grid: Grid,
    frame_stride: usize,
) -> Result<EmpiricalDensity> {
    if grid.dim() != ens.dim() {
        return Err(MfgError::GridMismatch(
            "grid and ensemble dimensions differ".into(),
        ));
    }
    if frame_stride == 0 || ens.steps() % frame_stride != 0 {
        return Err(MfgError::InvalidParam(format!(
            "frame_stride must divide the {} simulation steps",
            ens.steps()
        )));
    }
    let mol = m.mollifier_for(ens.n_players())?;
    let eps = mol.scale();
    let h = grid.spacing();
    if h > eps / 4.0 {
        return Err(MfgError::ResolutionTooCoarse(format!(
            "grid spacing {h:.5} does not resolve the mollifier support {eps:.5} with >= 4 nodes; \
             increase points_per_axis to at least {}",
            ((8.0 * grid.half_width() / eps).ceil() as usize).next_power_of_two()
        )));
    }

    let n = grid.points_per_axis();
    let l = grid.half_width();
    let share = 1.0 / ens.n_players() as f64;
    let mut dropped_max = 0.0f64;
    let mut frames = Vec::new();
    for k in (0..=ens.steps()).step_by(frame_stride) {
        let mut values = vec![0.0; grid.len()];
        let mut dropped = 0usize;
        for x in ens.frame_positions(k) {
            let lo0 = (((x[0] - eps + l) / h).ceil() as i64).max(0) as usize;
            let hi0 = (((x[0] + eps + l) / h).floor() as i64).min(n as i64 - 1);
            if hi0 < lo0 as i64 {
                dropped += 1;
                continue;
            }
            let hi0 = hi0 as usize;
            match grid.dim() {
                1 => {
                    let mut stamp: Vec<(usize, f64)> = Vec::with_capacity(hi0 - lo0 + 1);
                    let mut mass = 0.0;
                    for idx in lo0..=hi0 {
                        let v = mol.eval_offset(grid.axis_coord(idx) - x[0], 0.0);
                        if v > 0.0 {
                            stamp.push((idx, v));
                            mass += v;
                        }
                    }
                    mass *= grid.cell_volume();
                    if mass <= 0.0 {
                        dropped += 1;
                        continue;
                    }
                    let w = share / mass;
                    for (idx, v) in stamp {
                        values[idx] += w * v;
                    }
                }
                _ => {
                    let lo1 = (((x[1] - eps + l) / h).ceil() as i64).max(0) as usize;
                    let hi1 = (((x[1] + eps + l) / h).floor() as i64).min(n as i64 - 1);
                    if hi1 < lo1 as i64 {
                        dropped += 1;
                        continue;
                    }
                    let hi1 = hi1 as usize;
                    let mut stamp: Vec<(usize, f64)> = Vec::new();
                    let mut mass = 0.0;
                    for i0 in lo0..=hi0 {
                        for i1 in lo1..=hi1 {
                            let v = mol.eval_offset(
                                grid.axis_coord(i0) - x[0],
                                grid.axis_coord(i1) - x[1],
                            );
                            if v > 0.0 {
                                stamp.push((i0 * n + i1, v));
                                mass += v;
                            }
                        }
                    }
                    mass *= grid.cell_volume();
                    if mass <= 0.0 {
                        dropped += 1;
                        continue;
                    }
                    let w = share / mass;
                    for (idx, v) in stamp {
                        values[idx] += w * v;
                    }
                }
            }
        }
        dropped_max = dropped_max.max(dropped as f64 * share);
        frames.push(Field::from_values(grid, values)?);
    }
    let t_end = ens.dt() * ens.steps() as f64;
    Ok(EmpiricalDensity {
        flow: FieldFlow::new(grid, 0.0, t_end, frames)?,
        frame_stride,
        dropped_mass_max: dropped_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;
    use std::collections::BTreeMap;

    fn free_model() -> ModelSpec {
        builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn zero_noise_zero_drift_stays_put() {
        let m = free_model();
        let mut cfg = SimConfig::new(2, 20, 7);
        cfg.frozen_noise = true;
        let ens = simulate(&m, &cfg, &Profile::Shared(Feedback::Zero)).unwrap();
        for k in 0..=ens.steps() {
            for i in 0..2 {
                assert_eq!(ens.position(k, i), ens.position(0, i));
            }
        }
    }

    #[test]
    fn constant_drift_gives_straight_lines() {
        // custom model with b = c, zero noise: X_k = X_0 + c t_k exactly
        use crate::model::{CoeffBounds, InitialDensity, ModelSpec};
        let c = 0.3;
        let m = ModelSpec::custom(
            "ballistic",
            1,
            0.5,
            0.3,
            Arc::new(move |_x, _rho| [c, 0.0]),
            Arc::new(|_, _| 0.0),
            Arc::new(|_| 0.0),
            InitialDensity::Gaussian { sigma: 1.0 },
            CoeffBounds {
                coeff_sup: c,
                lipschitz: 0.0,
                running_sup: 0.0,
                terminal_sup: 0.0,
            },
            false,
        )
        .unwrap();
        let mut cfg = SimConfig::new(4, 25, 9);
        cfg.frozen_noise = true;
        let ens = simulate(&m, &cfg, &Profile::Shared(Feedback::Zero)).unwrap();
        let dt = ens.dt();
        for k in 0..=ens.steps() {
            for i in 0..4 {
                let expect = ens.position(0, i)[0] + c * dt * k as f64;
                let got = ens.position(k, i)[0];
                assert!(
                    (got - expect).abs() < 1e-12,
                    "k={k} i={i}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn far_particles_feel_only_self_term() {
        let m = free_model();
        let mol = m.mollifier_for(2).unwrap();
        let eps = mol.scale();
        let positions = vec![[0.0, 0.0], [3.0 * eps, 0.0]];
        let rho = interaction_all(&mol, &positions, eps);
        let expected = 2f64.powf(m.beta() - 1.0) * m.kernel().peak();
        assert_eq!(rho[0], expected);
        assert_eq!(rho[1], expected);
    }

    #[test]
    fn cell_list_matches_direct_sum_exactly() {
        let m = builtin_model("drift-congestion", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let mut rng = StreamRng::named(31, "oracle");
        for trial in 0..10 {
            let n = 32 + (rng.next_u64() % 225) as usize; // up to 256
            let mol = m.mollifier_for(n).unwrap();
            let spread = if trial % 2 == 0 { 4.0 } else { 0.5 };
            let positions: Vec<Point> = (0..n)
                .map(|_| [rng.uniform_in(-spread, spread), 0.0])
                .collect();
            let fast = interaction_all(&mol, &positions, mol.scale());
            for i in 0..n {
                let direct = interaction_direct(&mol, &positions, i);
                assert_eq!(fast[i], direct, "trial {trial}, particle {i}");
            }
        }
    }

    #[test]
    fn cell_list_matches_direct_sum_2d() {
        let m = builtin_model("drift-congestion", 2, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let mut rng = StreamRng::named(32, "oracle2d");
        for _ in 0..4 {
            let n = 64 + (rng.next_u64() % 128) as usize;
            let mol = m.mollifier_for(n).unwrap();
            let positions: Vec<Point> = (0..n)
                .map(|_| [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)])
                .collect();
            let fast = interaction_all(&mol, &positions, mol.scale());
            for i in 0..n {
                assert_eq!(fast[i], interaction_direct(&mol, &positions, i));
            }
        }
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let m = builtin_model("drift-congestion", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let cfg = SimConfig::new(64, 25, 1234);
        let profile = Profile::Shared(Feedback::Constant([0.1, 0.0]));
        let a = simulate(&m, &cfg, &profile).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| simulate(&m, &cfg, &profile).unwrap());
        for k in 0..=a.steps() {
            for i in 0..64 {
                assert_eq!(a.position(k, i), b.position(k, i));
                assert_eq!(a.density_coupling(k, i), b.density_coupling(k, i));
            }
        }
    }

    #[test]
    fn exchangeability_under_permutation() {
        let m = builtin_model("drift-congestion", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let n = 8;
        let cfg = SimConfig::new(n, 40, 99);
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

        let base = simulate_with_streams(
            &m,
            &cfg,
            &Profile::Shared(Feedback::Zero),
            initials.clone(),
            &keys,
        )
        .unwrap();

        // rotate everything by pi(i) = (i + 3) mod n
        let pi = |i: usize| (i + 3) % n;
        let perm_init: Vec<Point> = (0..n).map(|i| initials[pi(i)]).collect();
        let perm_keys: Vec<u64> = (0..n).map(|i| keys[pi(i)]).collect();
        let permuted = simulate_with_streams(
            &m,
            &cfg,
            &Profile::Shared(Feedback::Zero),
            perm_init,
            &perm_keys,
        )
        .unwrap();

        for k in 0..=base.steps() {
            for i in 0..n {
                let a = permuted.position(k, i);
                let b = base.position(k, pi(i));
                assert!(
                    (a[0] - b[0]).abs() <= 1e-12,
                    "step {k} player {i}: {} vs {}",
                    a[0],
                    b[0]
                );
            }
        }
    }

    #[test]
    fn diffusive_scaling_of_free_motion() {
        let m = free_model();
        let n = 100_000;
        let mut cfg = SimConfig::new(n, 20, 2024);
        cfg.coupling = CouplingRecord::None;
        let ens = simulate(&m, &cfg, &Profile::Shared(Feedback::Zero)).unwrap();
        let var = |frame: &[Point]| {
            let mean = frame.iter().map(|x| x[0]).sum::<f64>() / n as f64;
            frame
                .iter()
                .map(|x| (x[0] - mean) * (x[0] - mean))
                .sum::<f64>()
                / (n - 1) as f64
        };
        let v0 = var(ens.frame_positions(0));
        let vt = var(ens.frame_positions(ens.steps()));
        let t = 0.5;
        // MC standard error of a variance estimate is ~ var * sqrt(2/n)
        let se = (v0 + t) * (2.0 / n as f64).sqrt();
        assert!(
            (vt - (v0 + t)).abs() <= 3.0 * se,
            "Var grew {v0} -> {vt}, expected {}",
            v0 + t
        );
    }

    #[test]
    fn empirical_density_single_particle_matches_kernel() {
        let m = free_model();
        let grid = Grid::new(1, 8.0, 1024).unwrap();
        // two coincident particles are the same as one (sum of identical
        // stamps over N), sited exactly on a grid node
        let x0 = grid.node(512);
        let mut cfg = SimConfig::new(2, 1, 5);
        cfg.frozen_noise = true;
        let ens = simulate_with_streams(
            &m,
            &cfg,
            &Profile::Shared(Feedback::Zero),
            vec![x0, x0],
            &[1, 2],
        )
        .unwrap();
        let dens = empirical_density(&ens, &m, grid, 1).unwrap();
        let mol = m.mollifier_for(2).unwrap();
        let expected = mol.sampled(grid, x0).unwrap();
        let err = dens.flow.frame(0).sup_distance(&expected).unwrap();
        assert!(err <= 1e-12 * mol.amplitude(), "sup err {err}");
    }

    #[test]
    fn empirical_density_unit_mass_and_nonneg() {
        let m = builtin_model("congestion", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let grid = Grid::new(1, 8.0, 1024).unwrap();
        let mut cfg = SimConfig::new(400, 20, 31);
        cfg.coupling = CouplingRecord::None;
        let ens = simulate(&m, &cfg, &Profile::Shared(Feedback::Zero)).unwrap();
        let dens = empirical_density(&ens, &m, grid, 5).unwrap();
        assert_eq!(dens.flow.steps(), 4);
        for k in 0..=dens.flow.steps() {
            let f = dens.flow.frame(k);
            assert!(
                (f.integrate() - 1.0).abs() <= 1e-8,
                "frame {k} mass {}",
                f.integrate()
            );
            assert!(f.min_value() >= 0.0);
        }
        assert_eq!(dens.dropped_mass_max, 0.0);
    }

    #[test]
    fn escapes_are_counted_not_clamped() {
        use crate::model::{CoeffBounds, InitialDensity, ModelSpec};
        let m = ModelSpec::custom(
            "runaway",
            1,
            0.5,
            0.3,
            Arc::new(|_x, _rho| [30.0, 0.0]),
            Arc::new(|_, _| 0.0),
            Arc::new(|_| 0.0),
            InitialDensity::Gaussian { sigma: 0.5 },
            CoeffBounds {
                coeff_sup: 30.0,
                lipschitz: 0.0,
                running_sup: 0.0,
                terminal_sup: 0.0,
            },
            false,
        )
        .unwrap();
        let mut cfg = SimConfig::new(4, 20, 3);
        cfg.frozen_noise = true;
        let ens = simulate(&m, &cfg, &Profile::Shared(Feedback::Zero)).unwrap();
        assert!(ens.escape_count(8.0) > 0);
        // final positions really are outside the box, not clamped to it
        assert!(ens.frame_positions(20).iter().all(|x| x[0] > 8.0));
    }

    #[test]
    fn empirical_density_resolution_guard() {
        let m = free_model();
        let grid = Grid::new(1, 8.0, 64).unwrap(); // h = 0.25, far too coarse for N=10^4
        let mut cfg = SimConfig::new(10_000, 1, 3);
        cfg.coupling = CouplingRecord::None;
        cfg.frozen_noise = true;
        let ens = simulate(&m, &cfg, &Profile::Shared(Feedback::Zero)).unwrap();
        let err = empirical_density(&ens, &m, grid, 1).unwrap_err();
        assert!(
            err.to_string().contains("increase points_per_axis"),
            "{err}"
        );
    }
}
