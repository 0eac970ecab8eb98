//! The game's data: drift `b`, running cost `f`, terminal cost `g`, initial
//! density `p0`, the base interaction kernel `V` and its rescalings, plus
//! runtime-checkable validation of the standing hypotheses
//!
//!   (H1) `b`, `f` continuous with `|b| + |f| <= C` and a joint Lipschitz
//!        constant `L` in `(x, rho)`;
//!   (H2) `g` bounded with bounded first derivatives;
//!   (H3) `V` a compactly supported C^1 probability density, rescaled as
//!        `V^N(x) = N^beta * V(N^{beta/d} x)` with `beta` strictly inside
//!        `(0, 1/2)`;
//!   (H4) `p0` a bounded density with finite exponential moments.
//!
//! Coefficient closures must be pure and reentrant; they are called
//! concurrently from many particle threads.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{MfgError, Result};
use crate::grid::{Field, Grid, Point};
use crate::rng::StreamRng;

pub type DriftFn = Arc<dyn Fn(Point, f64) -> Point + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Radial C^1 bump `V(x) = c_d (1 - |x|^2)^2` on `|x| <= 1`, zero outside,
/// normalized to unit mass. The quartic profile is C^1 at the support edge
/// and cheap to evaluate.
#[derive(Debug, Clone, Copy)]
pub struct BumpKernel {
    dim: usize,
    norm: f64,
}

impl BumpKernel {
    pub fn new(dim: usize) -> Result<Self> {
        let norm = match dim {
            // 1 / int_{-1}^{1} (1-x^2)^2 dx = 15/16
            1 => 15.0 / 16.0,
            // 1 / int_{|x|<=1} (1-r^2)^2 dA = 3/pi
            2 => 3.0 / std::f64::consts::PI,
            _ => {
                return Err(MfgError::InvalidParam(format!(
                    "kernel dim must be 1 or 2, got {dim}"
                )))
            }
        };
        Ok(BumpKernel { dim, norm })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Support radius of the base kernel (fixed at 1).
    pub fn support_radius(&self) -> f64 {
        1.0
    }

    pub fn eval(&self, x: Point) -> f64 {
        let r2 = match self.dim {
            1 => x[0] * x[0],
            _ => x[0] * x[0] + x[1] * x[1],
        };
        if r2 >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - r2;
        self.norm * s * s
    }

    /// Peak value `V(0)`.
    pub fn peak(&self) -> f64 {
        self.norm
    }
}

/// The rescaled interaction kernel `V^N(x) = N^beta * V(N^{beta/d} x)`,
/// with support radius `eps_N = N^{-beta/d}`.
#[derive(Debug, Clone, Copy)]
pub struct Mollifier {
    kernel: BumpKernel,
    n_players: usize,
    beta: f64,
}

impl Mollifier {
    pub fn new(kernel: BumpKernel, n_players: usize, beta: f64) -> Result<Self> {
        if n_players < 1 {
            return Err(MfgError::InvalidParam("mollifier needs N >= 1".into()));
        }
        check_beta(beta)?;
        Ok(Mollifier {
            kernel,
            n_players,
            beta,
        })
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Support radius `eps_N = N^{-beta/d}`.
    pub fn scale(&self) -> f64 {
        (self.n_players as f64).powf(-self.beta / self.kernel.dim() as f64)
    }

    /// Amplitude factor `N^beta`.
    pub fn amplitude(&self) -> f64 {
        (self.n_players as f64).powf(self.beta)
    }

    /// Pointwise value `V^N(x)`. Exactly zero outside the support.
    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        let inv = 1.0 / self.scale();
        self.amplitude() * self.kernel.eval([x[0] * inv, x[1] * inv])
    }

    #[inline]
    pub fn eval_offset(&self, dx: f64, dy: f64) -> f64 {
        let inv = 1.0 / self.scale();
        self.amplitude() * self.kernel.eval([dx * inv, dy * inv])
    }

    /// Continuum mass by a support-adapted rectangle rule with
    /// `points_per_radius` nodes per support radius.
    pub fn mass_quadrature(&self, points_per_radius: usize) -> f64 {
        let eps = self.scale();
        let h = eps / points_per_radius as f64;
        let m = 2 * points_per_radius;
        match self.dim() {
            1 => {
                let mut sum = 0.0;
                for i in 0..=m {
                    sum += self.eval([-eps + i as f64 * h, 0.0]);
                }
                sum * h
            }
            _ => {
                let mut sum = 0.0;
                for i in 0..=m {
                    for j in 0..=m {
                        sum += self.eval([-eps + i as f64 * h, -eps + j as f64 * h]);
                    }
                }
                sum * h * h
            }
        }
    }

    /// Raw pointwise sample of `V^N(x - center)` on a grid.
    pub fn sampled_raw(&self, grid: Grid, center: Point) -> Result<Field> {
        if grid.dim() != self.dim() {
            return Err(MfgError::GridMismatch(
                "mollifier and grid dimensions differ".into(),
            ));
        }
        Field::from_fn(grid, |x| self.eval([x[0] - center[0], x[1] - center[1]]))
    }

    /// Grid sample renormalized to exactly unit discrete mass. This is the
    /// representation deposited by the empirical density, so every particle
    /// carries mass 1/N on the grid regardless of how its kernel support
    /// aligns with the nodes.
    pub fn sampled(&self, grid: Grid, center: Point) -> Result<Field> {
        let raw = self.sampled_raw(grid, center)?;
        let mass = raw.integrate();
        if mass <= 0.0 {
            return Err(MfgError::ResolutionTooCoarse(format!(
                "mollifier support (eps = {:.4}) sees no grid node; spacing is {:.4}",
                self.scale(),
                grid.spacing()
            )));
        }
        Ok(raw.scale(1.0 / mass))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(MfgError::Hypothesis(format!(
            "(H3) requires beta in (0, 1/2), got {beta}"
        )));
    }
    Ok(())
}

/// Initial distribution of players.
#[derive(Clone)]
pub enum InitialDensity {
    /// Centered isotropic Gaussian with standard deviation `sigma` per axis.
    Gaussian { sigma: f64 },
    /// Density given on a grid (used e.g. to restart a solve from a frame).
    GridField(Arc<Field>),
}

impl InitialDensity {
    pub fn eval(&self, x: Point, dim: usize) -> f64 {
        match self {
            InitialDensity::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let norm = 1.0 / (2.0 * std::f64::consts::PI * s2).sqrt();
                match dim {
                    1 => norm * (-(x[0] * x[0]) / (2.0 * s2)).exp(),
                    _ => norm * norm * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * s2)).exp(),
                }
            }
            InitialDensity::GridField(f) => f.interp(x),
        }
    }

    pub fn sample(&self, rng: &mut StreamRng, dim: usize) -> Point {
        match self {
            InitialDensity::Gaussian { sigma } => {
                let mut x = [0.0; 2];
                for c in x.iter_mut().take(dim) {
                    *c = sigma * rng.standard_normal();
                }
                x
            }
            InitialDensity::GridField(f) => {
                // rejection sampling against the max value on the grid box
                let g = f.grid();
                let bound = f.values().iter().fold(0.0f64, |m, &v| m.max(v));
                loop {
                    let mut x = [0.0; 2];
                    for c in x.iter_mut().take(dim) {
                        *c = rng.uniform_in(-g.half_width(), g.half_width());
                    }
                    if rng.uniform() * bound <= f.interp(x).max(0.0) {
                        return x;
                    }
                }
            }
        }
    }
}

/// Declared analytic bounds used by the hypothesis validator and the solvers.
#[derive(Debug, Clone, Copy)]
pub struct CoeffBounds {
    /// `sup |b| + |f|` of (H1).
    pub coeff_sup: f64,
    /// Joint Lipschitz constant of (H1).
    pub lipschitz: f64,
    /// `sup |f|`.
    pub running_sup: f64,
    /// `sup |g|`.
    pub terminal_sup: f64,
}

/// A complete game specification. Immutable once built.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    dim: usize,
    horizon: f64,
    beta: f64,
    drift: DriftFn,
    running_cost: RunningCostFn,
    terminal_cost: TerminalCostFn,
    p0: InitialDensity,
    kernel: BumpKernel,
    bounds: CoeffBounds,
    drift_depends_on_density: bool,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("beta", &self.beta)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        horizon: f64,
        beta: f64,
        drift: DriftFn,
        running_cost: RunningCostFn,
        terminal_cost: TerminalCostFn,
        p0: InitialDensity,
        bounds: CoeffBounds,
        drift_depends_on_density: bool,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(MfgError::InvalidParam(format!(
                "dim must be 1 or 2, got {dim}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(MfgError::InvalidParam(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        check_beta(beta)?;
        Ok(ModelSpec {
            name: name.into(),
            dim,
            horizon,
            beta,
            drift,
            running_cost,
            terminal_cost,
            p0,
            kernel: BumpKernel::new(dim)?,
            bounds,
            drift_depends_on_density,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bounds(&self) -> CoeffBounds {
        self.bounds
    }

    pub fn kernel(&self) -> BumpKernel {
        self.kernel
    }

    pub fn p0(&self) -> &InitialDensity {
        &self.p0
    }

    /// Whether `b` actually reads its density argument. Lets the particle
    /// simulator skip the interaction sum when the drift ignores it.
    pub fn drift_depends_on_density(&self) -> bool {
        self.drift_depends_on_density
    }

    #[inline]
    pub fn drift(&self, x: Point, rho: f64) -> Point {
        (self.drift)(x, rho)
    }

    #[inline]
    pub fn running_cost(&self, x: Point, rho: f64) -> f64 {
        (self.running_cost)(x, rho)
    }

    #[inline]
    pub fn terminal_cost(&self, x: Point) -> f64 {
        (self.terminal_cost)(x)
    }

    /// `p0` sampled on a grid and renormalized to unit discrete mass.
    pub fn initial_density_field(&self, grid: Grid) -> Result<Field> {
        let raw = Field::from_fn(grid, |x| self.p0.eval(x, self.dim))?;
        let mass = raw.integrate();
        if !(mass > 0.0) {
            return Err(MfgError::InvalidParam(
                "initial density has no mass on the grid".into(),
            ));
        }
        Ok(raw.scale(1.0 / mass))
    }

    pub fn terminal_cost_field(&self, grid: Grid) -> Result<Field> {
        Field::from_fn(grid, |x| self.terminal_cost(x))
    }

    /// A copy of this model with a new horizon and initial density
    /// (restarting the game from a later time slice).
    pub fn restarted(&self, horizon: f64, p0: InitialDensity) -> Result<ModelSpec> {
        let mut m = self.clone();
        if !(horizon > 0.0) {
            return Err(MfgError::InvalidParam(
                "restart horizon must be positive".into(),
            ));
        }
        m.horizon = horizon;
        m.p0 = p0;
        Ok(m)
    }

    /// The interaction kernel rescaled for an `N`-player game.
    pub fn mollifier_for(&self, n_players: usize) -> Result<Mollifier> {
        Mollifier::new(self.kernel, n_players, self.beta)
    }
}

/// Keys understood by [`builtin_model`], with defaults.
const CATALOG: &[&str] = &["free", "congestion", "drift-congestion"];

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Build a catalog model.
///
/// * `free`: `b = 0`, `f = 0`; motion is pure controlled diffusion.
/// * `congestion`: `b = 0`, `f(x, rho) = c * rho / (1 + rho)` penalizes
///   crowded regions (`c` defaults to 0.4).
/// * `drift-congestion`: congestion cost plus the density-dependent drift
///   `b(x, rho) = -kappa * tanh(rho) * x / (1 + |x|)` pushing crowded mass
///   toward the origin (`kappa` defaults to 0.5).
///
/// Shared parameters: `sigma0` (std of the Gaussian `p0`, default 1),
/// `g_amp` (amplitude of the terminal cost `g(x) = g_amp*|x|^2/(1+|x|^2)`,
/// default 0.4; `free` defaults to 0).
pub fn builtin_model(
    name: &str,
    dim: usize,
    horizon: f64,
    beta: f64,
    params: &BTreeMap<String, f64>,
) -> Result<ModelSpec> {
    let allowed: &[&str] = match name {
        "free" => &["sigma0", "g_amp"],
        "congestion" => &["sigma0", "g_amp", "c"],
        "drift-congestion" => &["sigma0", "g_amp", "c", "kappa"],
        _ => {
            return Err(MfgError::InvalidParam(format!(
                "unknown model '{name}'; catalog: {}",
                CATALOG.join(", ")
            )))
        }
    };
    for key in params.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(MfgError::InvalidParam(format!(
                "unknown parameter '{key}' for model '{name}'; allowed: {}",
                allowed.join(", ")
            )));
        }
    }
    let sigma0 = param(params, "sigma0", 1.0);
    if !(sigma0 > 0.0) {
        return Err(MfgError::InvalidParam("sigma0 must be positive".into()));
    }
    let default_g_amp = if name == "free" { 0.0 } else { 0.4 };
    let g_amp = param(params, "g_amp", default_g_amp);
    let terminal: TerminalCostFn = Arc::new(move |x: Point| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        g_amp * r2 / (1.0 + r2)
    });
    let p0 = InitialDensity::Gaussian { sigma: sigma0 };

    let zero_drift: DriftFn = Arc::new(|_, _| [0.0, 0.0]);
    let zero_cost: RunningCostFn = Arc::new(|_, _| 0.0);

    match name {
        "free" => ModelSpec::custom(
            "free",
            dim,
            horizon,
            beta,
            zero_drift,
            zero_cost,
            terminal,
            p0,
            CoeffBounds {
                coeff_sup: 0.0,
                lipschitz: 0.0,
                running_sup: 0.0,
                terminal_sup: g_amp.abs(),
            },
            false,
        ),
        "congestion" => {
            let c = param(params, "c", 0.4);
            if !(c >= 0.0) {
                return Err(MfgError::InvalidParam("c must be nonnegative".into()));
            }
            let f: RunningCostFn = Arc::new(move |_x, rho| c * rho / (1.0 + rho));
            ModelSpec::custom(
                "congestion",
                dim,
                horizon,
                beta,
                zero_drift,
                f,
                terminal,
                p0,
                CoeffBounds {
                    coeff_sup: c,
                    lipschitz: c,
                    running_sup: c,
                    terminal_sup: g_amp.abs(),
                },
                false,
            )
        }
        "drift-congestion" => {
            let c = param(params, "c", 0.4);
            let kappa = param(params, "kappa", 0.5);
            if !(c >= 0.0 && kappa >= 0.0) {
                return Err(MfgError::InvalidParam(
                    "c and kappa must be nonnegative".into(),
                ));
            }
            let f: RunningCostFn = Arc::new(move |_x, rho| c * rho / (1.0 + rho));
            let b: DriftFn = Arc::new(move |x: Point, rho: f64| {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let w = -kappa * rho.tanh() / (1.0 + r);
                [w * x[0], w * x[1]]
            });
            ModelSpec::custom(
                "drift-congestion",
                dim,
                horizon,
                beta,
                b,
                f,
                terminal,
                p0,
                CoeffBounds {
                    coeff_sup: kappa + c,
                    lipschitz: 2.0 * kappa + c,
                    running_sup: c,
                    terminal_sup: g_amp.abs(),
                },
                true,
            )
        }
        _ => unreachable!(),
    }
}

/// One empirical check of the validator.
#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    pub name: String,
    pub estimate: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&HypothesisCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Monte Carlo certification of (H1) bounds plus quadrature checks of the
/// initial density: mass on the grid and the exponential-moment proxies
/// `∫ e^{λ|x|} p0` for `λ ∈ {0.5, 1, 2}`. Estimates must not exceed the
/// declared bounds by more than 1%. Failures are carried in the report,
/// not raised.
pub fn validate_hypotheses(
    m: &ModelSpec,
    samples: usize,
    rng_seed: u64,
) -> Result<ValidationReport> {
    if samples < 1000 {
        return Err(MfgError::InvalidParam(
            "validator needs at least 10^3 samples".into(),
        ));
    }
    let mut rng = StreamRng::named(rng_seed, "hypothesis-validator");
    let radius = 8.0
        * match m.p0() {
            InitialDensity::Gaussian { sigma } => *sigma,
            InitialDensity::GridField(f) => f.grid().half_width() / 8.0,
        };
    let dim = m.dim();
    let mut sup_est = 0.0f64;
    let mut lip_est = 0.0f64;
    for _ in 0..samples {
        let mut x = [0.0; 2];
        for c in x.iter_mut().take(dim) {
            *c = rng.uniform_in(-radius, radius);
        }
        // density argument skewed toward small values but reaching ~50
        let u = rng.uniform();
        let rho = 50.0 * u * u;
        let b = m.drift(x, rho);
        let f = m.running_cost(x, rho);
        let babs = (b[0] * b[0] + b[1] * b[1]).sqrt();
        sup_est = sup_est.max(babs + f.abs());

        // nearby pair for the Lipschitz ratio
        let scale = 10f64.powf(rng.uniform_in(-3.0, 0.0));
        let mut y = x;
        for c in y.iter_mut().take(dim) {
            *c += scale * rng.uniform_in(-1.0, 1.0);
        }
        let drho = (rho + scale * rng.uniform_in(-1.0, 1.0)).max(0.0);
        let dxy = {
            let mut s = 0.0;
            for a in 0..dim {
                let d = x[a] - y[a];
                s += d * d;
            }
            s.sqrt() + (rho - drho).abs()
        };
        if dxy > 1e-12 {
            let b2 = m.drift(y, drho);
            let f2 = m.running_cost(y, drho);
            let db = {
                let mut s = 0.0;
                for a in 0..dim {
                    let d = b[a] - b2[a];
                    s += d * d;
                }
                s.sqrt()
            };
            lip_est = lip_est.max((db + (f - f2).abs()) / dxy);
        }
    }
    let slack = 1.01;
    let mut checks = vec![
        HypothesisCheck {
            name: "(H1) sup |b|+|f|".into(),
            estimate: sup_est,
            bound: m.bounds().coeff_sup,
            pass: sup_est <= m.bounds().coeff_sup * slack + 1e-12,
        },
        HypothesisCheck {
            name: "(H1) Lipschitz constant".into(),
            estimate: lip_est,
            bound: m.bounds().lipschitz,
            pass: lip_est <= m.bounds().lipschitz * slack + 1e-12,
        },
    ];

    // (H2): sampled sup of |g| against the declared bound.
    let mut g_sup = 0.0f64;
    for _ in 0..samples.min(10_000) {
        let mut x = [0.0; 2];
        for c in x.iter_mut().take(dim) {
            *c = rng.uniform_in(-radius, radius);
        }
        g_sup = g_sup.max(m.terminal_cost(x).abs());
    }
    checks.push(HypothesisCheck {
        name: "(H2) sup |g|".into(),
        estimate: g_sup,
        bound: m.bounds().terminal_sup,
        pass: g_sup <= m.bounds().terminal_sup * slack + 1e-12,
    });

    // (H4): unit mass of p0 on a reference grid...
    let grid = Grid::new(dim, radius, if dim == 1 { 512 } else { 128 })?;
    let raw = Field::from_fn(grid, |x| m.p0().eval(x, dim))?;
    let mass = raw.integrate();
    checks.push(HypothesisCheck {
        name: "(H4) unit mass of p0".into(),
        estimate: mass,
        bound: 1.0,
        pass: (mass - 1.0).abs() <= 1e-6,
    });
    // ...and exponential-moment proxies: the integral must be dominated by
    // the interior of the quadrature box (outer decile carrying < 1%), else
    // the tail is too heavy to trust.
    for lambda in [0.5, 1.0, 2.0] {
        let integrand = Field::from_fn(grid, |x| {
            let r = match dim {
                1 => x[0].abs(),
                _ => (x[0] * x[0] + x[1] * x[1]).sqrt(),
            };
            (lambda * r).exp() * m.p0().eval(x, dim)
        })?;
        let total = integrand.integrate();
        let mut outer = 0.0;
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            let r = match dim {
                1 => x[0].abs(),
                _ => x[0].abs().max(x[1].abs()),
            };
            if r >= 0.9 * radius {
                outer += integrand.values()[idx];
            }
        }
        outer *= grid.cell_volume();
        let share = if total > 0.0 { outer / total } else { 1.0 };
        checks.push(HypothesisCheck {
            name: format!("(H4) exp moment lambda={lambda}"),
            estimate: share,
            bound: 0.01,
            pass: total.is_finite() && share < 0.01,
        });
    }
    Ok(ValidationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn beta_domain_is_enforced() {
        let err = builtin_model("free", 1, 0.5, 0.7, &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("(H3) requires beta in (0, 1/2)"));
        assert!(builtin_model("free", 1, 0.5, 0.5, &BTreeMap::new()).is_err());
        assert!(builtin_model("free", 1, 0.5, 0.0, &BTreeMap::new()).is_err());
        assert!(builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).is_ok());
    }

    #[test]
    fn unknown_model_lists_catalog() {
        let err = builtin_model("nonsense", 1, 0.5, 0.3, &BTreeMap::new()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("free") && msg.contains("congestion"), "{msg}");
    }

    #[test]
    fn unknown_param_rejected() {
        let err = builtin_model("free", 1, 0.5, 0.3, &params(&[("tau", 1.0)])).unwrap_err();
        assert!(err.to_string().contains("tau"));
    }

    #[test]
    fn free_model_has_null_coefficients() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        assert_eq!(m.drift([1.2, 0.0], 3.0), [0.0, 0.0]);
        assert_eq!(m.running_cost([1.2, 0.0], 3.0), 0.0);
        assert_eq!(m.terminal_cost([1.2, 0.0]), 0.0);
        assert!(!m.drift_depends_on_density());
    }

    #[test]
    fn congestion_cost_shape() {
        let m = builtin_model("congestion", 1, 0.5, 0.3, &params(&[("c", 1.0)])).unwrap();
        assert_eq!(m.running_cost([0.3, 0.0], 0.0), 0.0);
        assert!((m.running_cost([0.3, 0.0], 1e9) - 1.0).abs() < 1e-8);
        // Lipschitz-in-rho constant is c = 1 (slope at rho = 0)
        let d = 1e-7;
        let slope = (m.running_cost([0.0, 0.0], d) - m.running_cost([0.0, 0.0], 0.0)) / d;
        assert!((slope - 1.0).abs() < 1e-5);
    }

    #[test]
    fn drift_congestion_is_bounded() {
        let m = builtin_model("drift-congestion", 1, 0.5, 0.3, &params(&[("kappa", 0.5)])).unwrap();
        for x in [-50.0, -1.0, 0.0, 2.0, 77.0] {
            for rho in [0.0, 0.5, 10.0, 1e6] {
                let b = m.drift([x, 0.0], rho);
                assert!(b[0].abs() <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn mollifier_identity_at_n1() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let v1 = m.mollifier_for(1).unwrap();
        let base = m.kernel();
        for x in [-1.5, -0.99, -0.3, 0.0, 0.4, 1.0, 2.0] {
            assert_eq!(v1.eval([x, 0.0]), base.eval([x, 0.0]));
        }
    }

    #[test]
    fn mollifier_scale_arithmetic() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let v = m.mollifier_for(1000).unwrap();
        assert!((v.scale() - 1000f64.powf(-0.3)).abs() < 1e-15);
        assert!((v.scale() - 0.125893).abs() < 1e-6);
        // amplitude * scale^d == 1
        assert!((v.amplitude() * v.scale() - 1.0).abs() < 1e-12);
        let m2 = builtin_model("free", 2, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let v2 = m2.mollifier_for(500).unwrap();
        assert!((v2.amplitude() * v2.scale().powi(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mollifier_unit_mass() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        for n in [1usize, 100, 10_000] {
            let v = m.mollifier_for(n).unwrap();
            let mass = v.mass_quadrature(4096);
            assert!((mass - 1.0).abs() <= 1e-8, "N={n}: {mass}");
        }
        let m2 = builtin_model("free", 2, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let v2 = m2.mollifier_for(100).unwrap();
        assert!((v2.mass_quadrature(2048) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn mollifier_grid_sample_has_unit_mass() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let grid = Grid::new(1, 8.0, 512).unwrap();
        for n in [100usize, 1000] {
            let v = m.mollifier_for(n).unwrap();
            // off-node center
            let f = v.sampled(grid, [0.31017, 0.0]).unwrap();
            assert!((f.integrate() - 1.0).abs() <= 1e-12);
            assert!(f.min_value() >= 0.0);
        }
    }

    #[test]
    fn mollifier_weak_convergence_defect_decays() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let phi = |y: f64| 1.0 / (1.0 + y * y);
        let x = 0.3;
        let defect = |n: usize| -> f64 {
            let v = m.mollifier_for(n).unwrap();
            let eps = v.scale();
            let q = 4000;
            let h = 2.0 * eps / q as f64;
            let mut conv = 0.0;
            for i in 0..=q {
                let y = x - eps + i as f64 * h;
                conv += v.eval([x - y, 0.0]) * phi(y);
            }
            (conv * h - phi(x)).abs()
        };
        let d2 = defect(100);
        let d3 = defect(1000);
        let d4 = defect(10_000);
        assert!(d3 < 0.5 * d2, "defects {d2} {d3}");
        assert!(d4 < 0.5 * d3, "defects {d3} {d4}");
    }

    #[test]
    fn validator_passes_catalog() {
        for name in ["free", "congestion", "drift-congestion"] {
            let m = builtin_model(name, 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
            let report = validate_hypotheses(&m, 20_000, 7).unwrap();
            assert!(report.pass(), "{name}: {:?}", report.failures());
        }
    }

    #[test]
    fn validator_estimates_free_as_zero() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let report = validate_hypotheses(&m, 2000, 7).unwrap();
        assert_eq!(report.checks[0].estimate, 0.0);
    }

    #[test]
    fn validator_flags_misdeclared_bound() {
        // congestion with c = 1 but a declared sup of 0.1 must FAIL
        let bad = ModelSpec::custom(
            "congestion-misdeclared",
            1,
            0.5,
            0.3,
            Arc::new(|_, _| [0.0, 0.0]),
            Arc::new(|_x, rho: f64| rho / (1.0 + rho)),
            Arc::new(|x: [f64; 2]| 0.4 * x[0] * x[0] / (1.0 + x[0] * x[0])),
            InitialDensity::Gaussian { sigma: 1.0 },
            CoeffBounds {
                coeff_sup: 0.1,
                lipschitz: 1.0,
                running_sup: 1.0,
                terminal_sup: 0.4,
            },
            false,
        )
        .unwrap();
        let report = validate_hypotheses(&bad, 20_000, 7).unwrap();
        assert!(!report.pass());
        assert!(report
            .failures()
            .iter()
            .any(|c| c.name.contains("sup |b|+|f|")));
    }

    #[test]
    fn validator_needs_enough_samples() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        assert!(validate_hypotheses(&m, 10, 7).is_err());
    }

    #[test]
    fn p0_grid_mass_is_one() {
        let m = builtin_model("free", 1, 0.5, 0.3, &BTreeMap::new()).unwrap();
        let grid = Grid::new(1, 8.0, 256).unwrap();
        let p0 = m.initial_density_field(grid).unwrap();
        assert!((p0.integrate() - 1.0).abs() < 1e-12);
    }
}
