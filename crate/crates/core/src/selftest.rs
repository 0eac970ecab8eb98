//! Fast oracle battery behind the `selftest` command: analytic identities,
//! brute-force cross-checks and determinism spot tests, each cheap enough to
//! run on every install.

use std::collections::BTreeMap;

use crate::grid::{Field, Grid};
use crate::model::builtin_model;
use crate::particles::{
    interaction_all, interaction_direct, simulate, Feedback, Profile, SimConfig,
};
use crate::rng::StreamRng;
use crate::semigroup::HeatOperator;
use crate::solver::{solve_mfg, SolverParams};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        pass,
        detail,
    }
}

/// Run the battery; failures are collected, not raised.
pub fn run() -> Vec<CheckOutcome> {
    vec![
        semigroup_gaussian(),
        semigroup_law(),
        gradient_bound(),
        mollifier_mass(),
        mollifier_identity(),
        gamma_fixed_point(),
        neighbor_oracle(),
        ballistic_particles(),
        determinism(),
    ]
}

fn semigroup_gaussian() -> CheckOutcome {
    let run = || -> crate::Result<f64> {
        let g = Grid::new(1, 8.0, 512)?;
        let op = HeatOperator::new(g)?;
        let dens = |s2: f64| {
            move |x: [f64; 2]| {
                (-(x[0] * x[0]) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
            }
        };
        let f = Field::from_fn(g, dens(0.25))?;
        let exact = Field::from_fn(g, dens(0.75))?;
        op.apply(0.5, &f)?.sup_distance(&exact)
    };
    match run() {
        Ok(err) => check(
            "semigroup gaussian oracle",
            err <= 1e-8,
            format!("sup error {err:.3e} (tol 1e-8)"),
        ),
        Err(e) => check("semigroup gaussian oracle", false, e.to_string()),
    }
}

fn semigroup_law() -> CheckOutcome {
    let run = || -> crate::Result<f64> {
        let g = Grid::new(1, 8.0, 512)?;
        let op = HeatOperator::new(g)?;
        let f = Field::from_fn(g, |x| {
            (-(x[0] * x[0]) / 0.6).exp() / (0.6 * std::f64::consts::PI).sqrt()
        })?;
        let two = op.apply(0.3, &op.apply(0.2, &f)?)?;
        let one = op.apply(0.5, &f)?;
        let mut worst = 0.0f64;
        for k in 0..g.points_per_axis() {
            if g.axis_coord(k).abs() <= g.half_width() - 5.0 * 0.5f64.sqrt() {
                worst = worst.max((two.values()[k] - one.values()[k]).abs());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(err) => check(
            "semigroup law",
            err <= 1e-9,
            format!("interior defect {err:.3e} (tol 1e-9)"),
        ),
        Err(e) => check("semigroup law", false, e.to_string()),
    }
}

fn gradient_bound() -> CheckOutcome {
    let run = || -> crate::Result<(f64, f64)> {
        let g = Grid::new(1, 8.0, 256)?;
        let op = HeatOperator::new(g)?;
        let mut rng = StreamRng::named(77, "selftest-bound");
        let mut worst_ratio = 0.0f64;
        for _ in 0..25 {
            let vals: Vec<f64> = (0..g.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let f = Field::from_values(g, vals)?;
            for t in [0.01, 0.1, 1.0] {
                let df = op.apply_gradient(t, &f)?;
                let bound = t.powf(-0.5) * f.sup_norm();
                worst_ratio = worst_ratio.max(df.sup_norm() / bound);
            }
        }
        Ok((worst_ratio, 1.0))
    };
    match run() {
        Ok((ratio, bound)) => check(
            "heat gradient sup bound",
            ratio <= bound,
            format!("worst ratio {ratio:.4} of sqrt(d)/sqrt(t) bound"),
        ),
        Err(e) => check("heat gradient sup bound", false, e.to_string()),
    }
}

fn mollifier_mass() -> CheckOutcome {
    let run = || -> crate::Result<f64> {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new())?;
        let mut worst = 0.0f64;
        for n in [1usize, 100, 10_000] {
            let v = m.mollifier_for(n)?;
            worst = worst.max((v.mass_quadrature(4096) - 1.0).abs());
        }
        Ok(worst)
    };
    match run() {
        Ok(err) => check(
            "mollifier unit mass",
            err <= 1e-8,
            format!("worst defect {err:.3e} (tol 1e-8)"),
        ),
        Err(e) => check("mollifier unit mass", false, e.to_string()),
    }
}

fn mollifier_identity() -> CheckOutcome {
    let run = || -> crate::Result<bool> {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new())?;
        let v1 = m.mollifier_for(1)?;
        let base = m.kernel();
        Ok([-0.99, -0.4, 0.0, 0.31, 0.999, 1.5]
            .iter()
            .all(|&x| v1.eval([x, 0.0]) == base.eval([x, 0.0])))
    };
    match run() {
        Ok(same) => check("V^1 == V", same, "pointwise identity at N=1".into()),
        Err(e) => check("V^1 == V", false, e.to_string()),
    }
}

fn gamma_fixed_point() -> CheckOutcome {
    let run = || -> crate::Result<f64> {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new())?;
        let grid = Grid::new(1, 8.0, 128)?;
        let sol = solve_mfg(&m, grid, SolverParams::new(20))?;
        if !sol.converged || sol.iterations > 2 {
            return Ok(f64::INFINITY);
        }
        // u must vanish identically for the free model with g = 0
        let mut worst = sol.k_bound;
        for k in 0..=20 {
            worst = worst.max(sol.u.frame(k).sup_norm());
        }
        Ok(worst)
    };
    match run() {
        Ok(defect) => check(
            "free-model fixed point",
            defect <= 1e-10,
            format!("u and k_bound defect {defect:.3e}"),
        ),
        Err(e) => check("free-model fixed point", false, e.to_string()),
    }
}

fn neighbor_oracle() -> CheckOutcome {
    let run = || -> crate::Result<bool> {
        let m = builtin_model("drift-congestion", 1, 0.5, 0.3, &BTreeMap::new())?;
        let mut rng = StreamRng::named(5150, "selftest-oracle");
        for _ in 0..3 {
            let n = 64 + (rng.next_u64() % 64) as usize;
            let mol = m.mollifier_for(n)?;
            let positions: Vec<[f64; 2]> =
                (0..n).map(|_| [rng.uniform_in(-3.0, 3.0), 0.0]).collect();
            let fast = interaction_all(&mol, &positions, mol.scale());
            for i in 0..n {
                if fast[i] != interaction_direct(&mol, &positions, i) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };
    match run() {
        Ok(same) => check("cell list vs direct sum", same, "bitwise equality".into()),
        Err(e) => check("cell list vs direct sum", false, e.to_string()),
    }
}

fn ballistic_particles() -> CheckOutcome {
    let run = || -> crate::Result<f64> {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new())?;
        let mut cfg = SimConfig::new(8, 20, 11);
        cfg.frozen_noise = true;
        let c = 0.25;
        let ens = simulate(&m, &cfg, &Profile::Shared(Feedback::Constant([c, 0.0])))?;
        let mut worst = 0.0f64;
        for k in 0..=ens.steps() {
            for i in 0..8 {
                let expect = ens.position(0, i)[0] + c * ens.dt() * k as f64;
                worst = worst.max((ens.position(k, i)[0] - expect).abs());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(err) => check(
            "ballistic particle paths",
            err <= 1e-12,
            format!("worst defect {err:.3e}"),
        ),
        Err(e) => check("ballistic particle paths", false, e.to_string()),
    }
}

fn determinism() -> CheckOutcome {
    let run = || -> crate::Result<bool> {
        let m = builtin_model("drift-congestion", 1, 0.5, 0.3, &BTreeMap::new())?;
        let cfg = SimConfig::new(32, 10, 42);
        let profile = Profile::Shared(Feedback::Zero);
        let a = simulate(&m, &cfg, &profile)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| crate::MfgError::InvalidParam(e.to_string()))?;
        let b = pool.install(|| simulate(&m, &cfg, &profile))?;
        for k in 0..=a.steps() {
            for i in 0..32 {
                if a.position(k, i) != b.position(k, i) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };
    match run() {
        Ok(same) => check(
            "trajectory determinism across thread counts",
            same,
            "bitwise".into(),
        ),
        Err(e) => check(
            "trajectory determinism across thread counts",
            false,
            e.to_string(),
        ),
    }
}
