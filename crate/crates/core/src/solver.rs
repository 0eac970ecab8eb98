//! Picard iteration on the coupled mild system for the value-gradient pair
//! `(p, θ)`, with an independent Hopf-Cole solve as a cross-check and a
//! mild-residual verifier.
//!
//! One sweep of the iteration map evaluates, on the uniform ladder
//! `t_k = k·Δt`,
//!
//! ```text
//! p'(t_k) = P_{t_k} p0  + Δt Σ_{j<k}  ∇P_{t_k-t_j}( p_j (θ_j - b(·, p_j)) )
//! θ'(t_k) = ∇P_{T-t_k}g + Δt Σ_{j>k}  ∇P_{t_j-t_k}( b(·,p_j)·θ_j
//!                                                    - ½|θ_j|² + f(·,p_j) )
//! ```
//!
//! with `(∇P_τ h)(x) = ∫ ∇_x G(τ, x-y) h(y) dy`. The signs are pinned by
//! consistency checks rather than convention: the backward one by
//! Feynman-Kac (a nonnegative running cost must raise the value, and
//! `-log P_τ e^{-g} = P_τ g - ½ Var + …`), the forward one by the
//! Fokker-Planck identity `P_τ div V = ∇P_τ · V`. The quadrature is
//! left-endpoint in the direction of integration; the
//! nearest subinterval applies the exact operator `∇P_Δt`, so the kernel
//! absorbs the `(t-s)^{-1/2}` singularity and no singular weights appear.
//! The sums are evaluated by a semigroup recursion on padded spectra
//! (`Σ_j ∇P_{(k-j)Δt} q_j = ∇P_Δt R_k`, `R_k = q_{k-1} + P_Δt R_{k-1}`),
//! which is the same formula reassociated and costs O(M) transforms per
//! sweep instead of O(M²).

use crate::error::{MfgError, Result};
use crate::grid::{Field, FieldFlow, Grid, VectorField, VectorFlow};
use crate::model::ModelSpec;
use crate::semigroup::{HeatOperator, PaddedSpectrum};

#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    /// Number of time steps M (frames are 0..=M).
    pub steps: usize,
    /// Stop when the sup-distance between successive iterates falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Picard damping in (0, 1]; halved (floor 0.25) after two consecutive
    /// residual increases.
    pub damping: f64,
}

impl SolverParams {
    pub fn new(steps: usize) -> Self {
        SolverParams {
            steps,
            tol: 1e-8,
            max_iter: 200,
            damping: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(MfgError::InvalidParam("need at least 2 time steps".into()));
        }
        if !(self.tol > 0.0) {
            return Err(MfgError::InvalidParam("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(MfgError::InvalidParam("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MfgError::InvalidParam("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Converged MFG solution data.
pub struct MfgSolution {
    /// Value function frames.
    pub u: FieldFlow,
    /// Density frames (clipped at zero, unit mass).
    pub p: FieldFlow,
    /// Optimal feedback `α* = -θ`, the negated iterated value gradient.
    pub alpha_star: VectorFlow,
    /// `max_k sup_x |∇u(t_k, x)|`, the admissibility radius of the feedback class.
    pub k_bound: f64,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest |mass - 1| of a raw sweep output before renormalization.
    pub mass_drift_max: f64,
    /// Most negative density value seen before clipping.
    pub min_density_pre_clip: f64,
    /// Largest mass removed by clipping in one frame.
    pub clipped_mass_max: f64,
}

pub struct HopfColeSolution {
    /// Transformed value frames, `w = exp(-u)`.
    pub w: FieldFlow,
    /// `-log w`, for comparison against the direct solve.
    pub u_from_w: FieldFlow,
    pub p: FieldFlow,
    pub min_w: f64,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Coefficient fields at one frame: `b(x, p(x))` and `f(x, p(x))` sampled on
/// the grid.
fn drift_field(m: &ModelSpec, grid: Grid, p: &Field) -> VectorField {
    let mut comps: Vec<Vec<f64>> = (0..grid.dim())
        .map(|_| Vec::with_capacity(grid.len()))
        .collect();
    for idx in 0..grid.len() {
        let b = m.drift(grid.node(idx), p.values()[idx]);
        for (axis, comp) in comps.iter_mut().enumerate() {
            comp.push(b[axis]);
        }
    }
    VectorField::from_components(grid, comps).expect("component sizes match")
}

fn running_cost_field(m: &ModelSpec, grid: Grid, p: &Field) -> Field {
    let values = (0..grid.len())
        .map(|idx| m.running_cost(grid.node(idx), p.values()[idx]))
        .collect();
    Field::from_values(grid, values).expect("sizes match")
}

/// `P_{kΔt} p0` for `k = 0..=steps`, composed one `P_Δt` increment at a time
/// on the padded spectrum.
pub(crate) fn heat_ladder(
    op: &HeatOperator,
    p0: &Field,
    dt: f64,
    steps: usize,
) -> Result<Vec<Field>> {
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(p0.clone());
    let mut spec = op.spectrum(p0)?;
    for _ in 1..=steps {
        op.heat_multiply(&mut spec, dt);
        frames.push(op.to_field(&spec));
    }
    Ok(frames)
}

/// Forward Duhamel sweep: given vector integrand frames `q_0..q_M`, returns
/// for every `k` the field `Σ_{j<k} ∇P_{(k-j)Δt} · q_j` (empty sum at k=0).
fn forward_duhamel(op: &HeatOperator, q: &[VectorField], dt: f64) -> Result<Vec<Field>> {
    let grid = op.grid();
    let steps = q.len() - 1;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(Field::zeros(grid));
    let mut running: Vec<PaddedSpectrum> = (0..grid.dim()).map(|_| op.zero_spectrum()).collect();
    for k in 1..=steps {
        let mut acc = Field::zeros(grid);
        for (axis, spec) in running.iter_mut().enumerate() {
            op.heat_multiply(spec, dt);
            spec.add_assign(&op.spectrum(&q[k - 1].component_field(axis))?);
            // spec now holds Σ_{j<k} P_{(k-1-j)Δt} q_j; one ∇P_Δt finishes the lag
            acc = acc.axpy(1.0, &op.gradient_to_field(spec, dt, axis)?)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Backward Duhamel sweep: given scalar integrand frames `s_0..s_M`, returns
/// for every `k` the spectrum of `Σ_{j>k} P_{(j-k-1)Δt} s_j`, from which
/// either `P_Δt` (value equation) or `∇P_Δt` (gradient equation) completes
/// the quadrature.
fn backward_duhamel_spectra(
    op: &HeatOperator,
    s: &[Field],
    dt: f64,
) -> Result<Vec<PaddedSpectrum>> {
    let steps = s.len() - 1;
    let mut rev = Vec::with_capacity(steps + 1);
    let mut running = op.zero_spectrum();
    rev.push(running.clone()); // k = M: empty sum
    for k in (0..steps).rev() {
        op.heat_multiply(&mut running, dt);
        running.add_assign(&op.spectrum(&s[k + 1])?);
        rev.push(running.clone());
    }
    rev.reverse();
    Ok(rev)
}

/// `∇P_{(M-k)Δt} g` for `k = 0..M-1`, plus the discrete gradient of `g` at
/// `k = M` where the kernel gradient would be singular.
fn terminal_gradient_heads(
    op: &HeatOperator,
    g: &Field,
    dt: f64,
    steps: usize,
) -> Result<Vec<VectorField>> {
    let grid = op.grid();
    let g_spec = op.spectrum_extended(g)?;
    let mut heads = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let lag = dt * (steps - k) as f64;
        let mut comps = Vec::with_capacity(grid.dim());
        for axis in 0..grid.dim() {
            comps.push(op.gradient_to_field(&g_spec, lag, axis)?.values().to_vec());
        }
        heads.push(VectorField::from_components(grid, comps)?);
    }
    heads.push(g.gradient());
    Ok(heads)
}

/// The integrand of the gradient equation at one frame:
/// `b(·,p)·θ - ½|θ|² + f(·,p)`.
fn hamilton_integrand(m: &ModelSpec, grid: Grid, p: &Field, theta: &VectorField) -> Field {
    let b = drift_field(m, grid, p);
    let f = running_cost_field(m, grid, p);
    let mut values = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let mut dot = 0.0;
        let mut norm2 = 0.0;
        for axis in 0..grid.dim() {
            let th = theta.component(axis)[idx];
            dot += b.component(axis)[idx] * th;
            norm2 += th * th;
        }
        values.push(dot - 0.5 * norm2 + f.values()[idx]);
    }
    Field::from_values(grid, values).expect("sizes match")
}

/// The vector integrand of the density equation at one frame:
/// `p (θ - b(·,p))`.
fn density_integrand(m: &ModelSpec, grid: Grid, p: &Field, theta: &VectorField) -> VectorField {
    let b = drift_field(m, grid, p);
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        comps.push(
            (0..grid.len())
                .map(|idx| p.values()[idx] * (theta.component(axis)[idx] - b.component(axis)[idx]))
                .collect(),
        );
    }
    VectorField::from_components(grid, comps).expect("sizes match")
}

/// One application of the iteration map on `(p, θ)` flows sharing a ladder.
/// Pure: no clipping or renormalization happens here.
pub fn gamma_step(
    m: &ModelSpec,
    op: &HeatOperator,
    p: &FieldFlow,
    theta: &VectorFlow,
) -> Result<(FieldFlow, VectorFlow)> {
    let grid = p.grid();
    if theta.grid() != grid || op.grid() != grid {
        return Err(MfgError::GridMismatch(
            "p, θ and operator must share a grid".into(),
        ));
    }
    if p.steps() != theta.steps() || p.t0() != 0.0 {
        return Err(MfgError::GridMismatch(
            "p and θ must share a ladder starting at t = 0".into(),
        ));
    }
    let steps = p.steps();
    let dt = p.dt();
    let t1 = p.t1();

    let p0 = m.initial_density_field(grid)?;
    let g = m.terminal_cost_field(grid)?;

    // Γ1: forward density equation
    let q: Vec<VectorField> = (0..=steps)
        .map(|k| density_integrand(m, grid, p.frame(k), theta.frame(k)))
        .collect();
    let base = heat_ladder(op, &p0, dt, steps)?;
    let duhamel = forward_duhamel(op, &q, dt)?;
    let mut p_frames = Vec::with_capacity(steps + 1);
    for (k, (b, d)) in base.iter().zip(&duhamel).enumerate() {
        let frame = b.axpy(dt, d)?;
        if !frame.is_finite() {
            return Err(MfgError::NonFinite {
                what: "density sweep output".into(),
                location: format!("frame {k}"),
            });
        }
        p_frames.push(frame);
    }

    // Γ2: backward gradient equation
    let s: Vec<Field> = (0..=steps)
        .map(|k| hamilton_integrand(m, grid, p.frame(k), theta.frame(k)))
        .collect();
    let heads = terminal_gradient_heads(op, &g, dt, steps)?;
    let tails = backward_duhamel_spectra(op, &s, dt)?;
    let mut theta_frames = Vec::with_capacity(steps + 1);
    for (k, head) in heads.iter().enumerate() {
        let frame = if k == steps {
            head.clone()
        } else {
            let mut comps = Vec::with_capacity(grid.dim());
            for axis in 0..grid.dim() {
                let tail = op.gradient_to_field(&tails[k], dt, axis)?;
                comps.push(
                    head.component(axis)
                        .iter()
                        .zip(tail.values())
                        .map(|(h, t)| h + dt * t)
                        .collect(),
                );
            }
            VectorField::from_components(grid, comps)?
        };
        if !frame.is_finite() {
            return Err(MfgError::NonFinite {
                what: "gradient sweep output".into(),
                location: format!("frame {k}"),
            });
        }
        theta_frames.push(frame);
    }

    Ok((
        FieldFlow::new(grid, 0.0, t1, p_frames)?,
        VectorFlow::new(grid, 0.0, t1, theta_frames)?,
    ))
}

/// Clip negative density values, renormalize each frame to unit mass, and
/// report (mass drift, most negative value, clipped mass).
fn postprocess_density(frames: &mut [Field]) -> Result<(f64, f64, f64)> {
    let mut drift = 0.0f64;
    let mut min_pre = f64::INFINITY;
    let mut clipped = 0.0f64;
    for f in frames.iter_mut() {
        let grid = f.grid();
        drift = drift.max((f.integrate() - 1.0).abs());
        let mut neg = 0.0;
        for v in f.values_mut() {
            min_pre = min_pre.min(*v);
            if *v < 0.0 {
                neg += -*v;
                *v = 0.0;
            }
        }
        clipped = clipped.max(neg * grid.cell_volume());
        let mass = f.integrate();
        if !(mass > 0.0) {
            return Err(MfgError::PositivityLost(
                "density frame lost all mass".into(),
            ));
        }
        let inv = 1.0 / mass;
        for v in f.values_mut() {
            *v *= inv;
        }
    }
    if clipped > 1e-2 {
        return Err(MfgError::PositivityLost(format!(
            "clipped density mass {clipped:.3e} exceeds 1e-2; refine the grid or shorten the horizon"
        )));
    }
    Ok((drift, min_pre, clipped))
}

fn flow_from(grid: Grid, t1: f64, frames: Vec<Field>) -> Result<FieldFlow> {
    FieldFlow::new(grid, 0.0, t1, frames)
}

/// Solve the coupled mild system by damped Picard iteration from the
/// uncoupled initial guess `(P_t p0, ∇P_{T-t} g)`.
pub fn solve_mfg(m: &ModelSpec, grid: Grid, params: SolverParams) -> Result<MfgSolution> {
    params.validate()?;
    if grid.dim() != m.dim() {
        return Err(MfgError::GridMismatch(
            "grid and model dimensions differ".into(),
        ));
    }
    let steps = params.steps;
    let t_end = m.horizon();
    let dt = t_end / steps as f64;
    let op = HeatOperator::with_ladder(grid, dt, steps)?;

    let p0 = m.initial_density_field(grid)?;
    let g = m.terminal_cost_field(grid)?;

    let mut p_frames = heat_ladder(&op, &p0, dt, steps)?;
    let (mut mass_drift, mut min_pre, mut clip_max) = postprocess_density(&mut p_frames)?;
    let mut p = flow_from(grid, t_end, p_frames)?;
    let mut theta = VectorFlow::new(
        grid,
        0.0,
        t_end,
        terminal_gradient_heads(&op, &g, dt, steps)?,
    )?;

    let mut damping = params.damping;
    let mut residual_history = Vec::new();
    let mut converged = false;
    let mut increases = 0usize;

    for iter_idx in 0..params.max_iter {
        let (p_new, theta_new) = gamma_step(m, &op, &p, &theta).map_err(|e| match e {
            MfgError::NonFinite { what, location } => MfgError::NonFinite {
                what,
                location: format!("{location}, sweep {iter_idx}"),
            },
            other => other,
        })?;

        // damped update, then the clipping/renormalization policy
        let mut frames: Vec<Field> = (0..=steps)
            .map(|k| {
                p.frame(k)
                    .scale(1.0 - damping)
                    .axpy(damping, p_new.frame(k))
            })
            .collect::<Result<_>>()?;
        let (d, mn, cl) = postprocess_density(&mut frames)?;
        mass_drift = mass_drift.max(d);
        min_pre = min_pre.min(mn);
        clip_max = clip_max.max(cl);
        let p_next = flow_from(grid, t_end, frames)?;

        let theta_frames: Vec<VectorField> = (0..=steps)
            .map(|k| {
                theta
                    .frame(k)
                    .scale(1.0 - damping)
                    .axpy(damping, theta_new.frame(k))
            })
            .collect::<Result<_>>()?;
        let theta_next = VectorFlow::new(grid, 0.0, t_end, theta_frames)?;

        let residual = p_next.sup_distance(&p)? + theta_next.sup_distance(&theta)?;
        if let Some(&prev) = residual_history.last() {
            if residual > prev {
                increases += 1;
                if increases >= 2 {
                    damping = (damping / 2.0).max(0.25);
                    increases = 0;
                }
            } else {
                increases = 0;
            }
        }
        residual_history.push(residual);
        p = p_next;
        theta = theta_next;
        if residual <= params.tol {
            converged = true;
            break;
        }
    }

    // Reconstruct u from the converged pair through the mild value equation,
    // sharing the quadrature and the backward tail spectra with the sweep.
    let s: Vec<Field> = (0..=steps)
        .map(|k| hamilton_integrand(m, grid, p.frame(k), theta.frame(k)))
        .collect();
    let tails = backward_duhamel_spectra(&op, &s, dt)?;
    let g_spec = op.spectrum_extended(&g)?;
    let mut u_frames = Vec::with_capacity(steps + 1);
    for (k, tail) in tails.iter().enumerate().take(steps + 1) {
        let frame = if k == steps {
            g.clone()
        } else {
            let mut head_spec = g_spec.clone();
            op.heat_multiply(&mut head_spec, dt * (steps - k) as f64);
            let head = op.to_field(&head_spec);
            let mut tail_spec = tail.clone();
            op.heat_multiply(&mut tail_spec, dt);
            head.axpy(dt, &op.to_field(&tail_spec))?
        };
        if !frame.is_finite() {
            return Err(MfgError::NonFinite {
                what: "value reconstruction".into(),
                location: format!("frame {k}"),
            });
        }
        u_frames.push(frame);
    }
    let u = flow_from(grid, t_end, u_frames)?;
    let alpha_star = theta.scale(-1.0);
    let k_bound = theta.sup_norm();

    // Non-convergence is reported, not raised: callers decide what to accept.
    let iterations = residual_history.len();
    Ok(MfgSolution {
        u,
        p,
        alpha_star,
        k_bound,
        residual_history,
        converged,
        iterations,
        mass_drift_max: mass_drift,
        min_density_pre_clip: min_pre,
        clipped_mass_max: clip_max,
    })
}

/// Solve the transformed system: the value equation is linear in
/// `w = exp(-u)` and the density equation carries the drift `∇w/w + b`.
/// Spatial gradients of `w` use grid stencils, so this route shares no
/// discretization with the direct gradient iteration beyond the semigroup.
pub fn solve_hopf_cole(
    m: &ModelSpec,
    grid: Grid,
    params: SolverParams,
) -> Result<HopfColeSolution> {
    params.validate()?;
    if grid.dim() != m.dim() {
        return Err(MfgError::GridMismatch(
            "grid and model dimensions differ".into(),
        ));
    }
    let steps = params.steps;
    let t_end = m.horizon();
    let dt = t_end / steps as f64;
    let op = HeatOperator::with_ladder(grid, dt, steps)?;

    let p0 = m.initial_density_field(grid)?;
    let g = m.terminal_cost_field(grid)?;
    let w_terminal = g.map(|v| (-v).exp());
    let floor = 1e-12;

    // `P_{T-t_k} exp(-g)` heads, with edge continuation of the terminal data
    let heads = {
        let wt_spec = op.spectrum_extended(&w_terminal)?;
        let mut out = Vec::with_capacity(steps + 1);
        for k in 0..steps {
            let mut spec = wt_spec.clone();
            op.heat_multiply(&mut spec, dt * (steps - k) as f64);
            out.push(op.to_field(&spec));
        }
        out.push(w_terminal.clone());
        out
    };

    // initial guess: uncoupled evolutions
    let mut w_frames = heads.clone();
    let mut p_frames = heat_ladder(&op, &p0, dt, steps)?;
    postprocess_density(&mut p_frames)?;

    let mut residual_history = Vec::new();
    let mut converged = false;
    let mut min_w_seen = f64::INFINITY;

    for _iter in 0..params.max_iter {
        let grads: Vec<VectorField> = w_frames.iter().map(|w| w.gradient()).collect();

        // value part: w'(t_k) = P_{T-t_k} e^{-g} - Δt Σ_{j>k} P_{(j-k)Δt} (b·∇w - w f)
        let s: Vec<Field> = (0..=steps)
            .map(|k| {
                let b = drift_field(m, grid, &p_frames[k]);
                let f = running_cost_field(m, grid, &p_frames[k]);
                let mut values = Vec::with_capacity(grid.len());
                for idx in 0..grid.len() {
                    let mut dot = 0.0;
                    for axis in 0..grid.dim() {
                        dot += b.component(axis)[idx] * grads[k].component(axis)[idx];
                    }
                    values.push(dot - w_frames[k].values()[idx] * f.values()[idx]);
                }
                Field::from_values(grid, values).expect("sizes match")
            })
            .collect();
        let tails = backward_duhamel_spectra(&op, &s, dt)?;
        let mut w_next = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let frame = if k == steps {
                w_terminal.clone()
            } else {
                let mut tail_spec = tails[k].clone();
                op.heat_multiply(&mut tail_spec, dt);
                heads[k].axpy(dt, &op.to_field(&tail_spec))?
            };
            if !frame.is_finite() {
                return Err(MfgError::NonFinite {
                    what: "transformed value sweep".into(),
                    location: format!("frame {k}"),
                });
            }
            let frame_min = frame.min_value();
            min_w_seen = min_w_seen.min(frame_min);
            if frame_min < floor {
                return Err(MfgError::PositivityLost(format!(
                    "w dipped to {frame_min:.3e} at frame {k}; domain or resolution too coarse"
                )));
            }
            w_next.push(frame);
        }

        // density part: p'(t_k) = P_{t_k} p0 + Δt Σ_{j<k} ∇P_{(k-j)Δt}( p (∇w/w + b) )
        // using the previous iterate's (w, p) in the integrand, like the sweep above
        let q: Vec<VectorField> = (0..=steps)
            .map(|k| {
                let b = drift_field(m, grid, &p_frames[k]);
                let mut comps: Vec<Vec<f64>> = Vec::with_capacity(grid.dim());
                for axis in 0..grid.dim() {
                    comps.push(
                        (0..grid.len())
                            .map(|idx| {
                                let ratio =
                                    grads[k].component(axis)[idx] / w_frames[k].values()[idx];
                                p_frames[k].values()[idx] * (ratio + b.component(axis)[idx])
                            })
                            .collect(),
                    );
                }
                VectorField::from_components(grid, comps).expect("sizes match")
            })
            .collect();
        let base = heat_ladder(&op, &p0, dt, steps)?;
        let duhamel = forward_duhamel(&op, &q, dt)?;
        let mut p_next: Vec<Field> = base
            .iter()
            .zip(&duhamel)
            .map(|(b, d)| b.axpy(-dt, d))
            .collect::<Result<_>>()?;
        postprocess_density(&mut p_next)?;

        let mut residual = 0.0f64;
        for k in 0..=steps {
            residual = residual.max(w_next[k].sup_distance(&w_frames[k])?);
        }
        let mut p_res = 0.0f64;
        for k in 0..=steps {
            p_res = p_res.max(p_next[k].sup_distance(&p_frames[k])?);
        }
        residual += p_res;
        residual_history.push(residual);
        w_frames = w_next;
        p_frames = p_next;
        if residual <= params.tol {
            converged = true;
            break;
        }
    }

    let u_from_w = w_frames.iter().map(|w| w.map(|v| -v.ln())).collect();
    let iterations = residual_history.len();
    Ok(HopfColeSolution {
        w: flow_from(grid, t_end, w_frames)?,
        u_from_w: flow_from(grid, t_end, u_from_w)?,
        p: flow_from(grid, t_end, p_frames)?,
        min_w: min_w_seen,
        residual_history,
        converged,
        iterations,
    })
}

/// Single-agent best response against a frozen crowd density: iterate the
/// backward gradient equation alone, with `b(·, p̃)` and `f(·, p̃)` read from
/// the given flow, and return the minimizing feedback `β = -θ`. Against the
/// solver's own density this recovers `α*`; against an empirical density it
/// produces a sharper Nash-gap deviation than any fixed battery member.
pub struct BestResponse {
    pub feedback: VectorFlow,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn best_response_against(
    m: &ModelSpec,
    crowd: &FieldFlow,
    grid: Grid,
    tol: f64,
    max_iter: usize,
) -> Result<BestResponse> {
    if crowd.grid() != grid || grid.dim() != m.dim() {
        return Err(MfgError::GridMismatch(
            "crowd flow must live on the model grid".into(),
        ));
    }
    let steps = crowd.steps();
    let dt = crowd.dt();
    let t_end = crowd.t1();
    let op = HeatOperator::with_ladder(grid, dt, steps)?;
    let g = m.terminal_cost_field(grid)?;
    let heads = terminal_gradient_heads(&op, &g, dt, steps)?;
    let mut theta = VectorFlow::new(grid, 0.0, t_end, heads.clone())?;

    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let s: Vec<Field> = (0..=steps)
            .map(|k| hamilton_integrand(m, grid, crowd.frame(k), theta.frame(k)))
            .collect();
        let tails = backward_duhamel_spectra(&op, &s, dt)?;
        let mut frames = Vec::with_capacity(steps + 1);
        for (k, head) in heads.iter().enumerate() {
            if k == steps {
                frames.push(head.clone());
                continue;
            }
            let mut comps = Vec::with_capacity(grid.dim());
            for axis in 0..grid.dim() {
                let tail = op.gradient_to_field(&tails[k], dt, axis)?;
                comps.push(
                    head.component(axis)
                        .iter()
                        .zip(tail.values())
                        .map(|(h, t)| h + dt * t)
                        .collect(),
                );
            }
            frames.push(VectorField::from_components(grid, comps)?);
        }
        let next = VectorFlow::new(grid, 0.0, t_end, frames)?;
        residual = next.sup_distance(&theta)?;
        theta = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    Ok(BestResponse {
        feedback: theta.scale(-1.0),
        residual,
        converged,
        iterations,
    })
}

/// Plug the solution into the mild system with an independent midpoint-in-
/// time quadrature: every lag sits on the half ladder `(j+1/2-k)Δt` of a
/// freshly built operator and the Duhamel sums are accumulated directly, so
/// none of the sweep's endpoint quadrature is reused. The value gradient is
/// the solution's own flow (`∇u = -α*`). Returns the sup defects `(r_u, r_p)`.
pub fn verify_mild_residual(m: &ModelSpec, sol: &MfgSolution, grid: Grid) -> Result<(f64, f64)> {
    if !sol.converged {
        return Err(MfgError::NotConverged(
            "verify_mild_residual expects a converged solution".into(),
        ));
    }
    let steps = sol.p.steps();
    let dt = sol.p.dt();
    let half = dt / 2.0;
    let op = HeatOperator::with_ladder(grid, half, 2 * steps)?;
    let p0 = m.initial_density_field(grid)?;
    let g = m.terminal_cost_field(grid)?;

    let grads: Vec<VectorField> = (0..=steps)
        .map(|k| sol.alpha_star.frame(k).scale(-1.0))
        .collect();

    let s: Vec<Field> = (0..=steps)
        .map(|k| hamilton_integrand_from(m, grid, sol.p.frame(k), &grads[k]))
        .collect();
    let s_mid: Vec<Field> = (0..steps)
        .map(|j| s[j].axpy(1.0, &s[j + 1]).map(|f| f.scale(0.5)))
        .collect::<Result<_>>()?;

    // r_u: u(t_k) vs P_{T-t_k} g - Δt Σ_j P_{(j+1/2-k)Δt} s_mid_j
    let g_spec = op.spectrum_extended(&g)?;
    let mut r_u = 0.0f64;
    {
        let mut running = op.zero_spectrum();
        // walk k from M-1 downward, extending the tail one midpoint at a time
        let mut rhs_at = vec![Field::zeros(grid); steps + 1];
        rhs_at[steps] = g.clone();
        for k in (0..steps).rev() {
            op.heat_multiply(&mut running, dt);
            running.add_assign(&op.spectrum(&s_mid[k])?);
            let mut tail = running.clone();
            op.heat_multiply(&mut tail, half);
            let mut head = g_spec.clone();
            op.heat_multiply(&mut head, dt * (steps - k) as f64);
            rhs_at[k] = op.to_field(&head).axpy(dt, &op.to_field(&tail))?;
        }
        for k in 0..=steps {
            r_u = r_u.max(sol.u.frame(k).sup_distance(&rhs_at[k])?);
        }
    }

    // r_p: p(t_k) vs P_{t_k} p0 - Δt Σ_{j<k} ∇P_{(k-j-1/2)Δt} q_mid_j
    let q: Vec<VectorField> = (0..=steps)
        .map(|k| density_integrand_from(m, grid, sol.p.frame(k), &grads[k]))
        .collect();
    let q_mid: Vec<VectorField> = (0..steps)
        .map(|j| q[j].axpy(1.0, &q[j + 1]).map(|f| f.scale(0.5)))
        .collect::<Result<_>>()?;
    let mut r_p = (sol.p.frame(0).sup_distance(&p0))?;
    {
        let mut running: Vec<PaddedSpectrum> =
            (0..grid.dim()).map(|_| op.zero_spectrum()).collect();
        let mut p0_spec = op.spectrum(&p0)?;
        for k in 1..=steps {
            op.heat_multiply(&mut p0_spec, dt);
            let mut rhs = op.to_field(&p0_spec);
            for (axis, spec) in running.iter_mut().enumerate() {
                op.heat_multiply(spec, dt);
                spec.add_assign(&op.spectrum(&q_mid[k - 1].component_field(axis))?);
                rhs = rhs.axpy(dt, &op.gradient_to_field(spec, half, axis)?)?;
            }
            r_p = r_p.max(sol.p.frame(k).sup_distance(&rhs)?);
        }
    }
    Ok((r_u, r_p))
}

fn hamilton_integrand_from(m: &ModelSpec, grid: Grid, p: &Field, grad_u: &VectorField) -> Field {
    let b = drift_field(m, grid, p);
    let f = running_cost_field(m, grid, p);
    let mut values = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let mut dot = 0.0;
        let mut norm2 = 0.0;
        for axis in 0..grid.dim() {
            let th = grad_u.component(axis)[idx];
            dot += b.component(axis)[idx] * th;
            norm2 += th * th;
        }
        values.push(dot - 0.5 * norm2 + f.values()[idx]);
    }
    Field::from_values(grid, values).expect("sizes match")
}

fn density_integrand_from(
    m: &ModelSpec,
    grid: Grid,
    p: &Field,
    grad_u: &VectorField,
) -> VectorField {
    let b = drift_field(m, grid, p);
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        comps.push(
            (0..grid.len())
                .map(|idx| p.values()[idx] * (grad_u.component(axis)[idx] - b.component(axis)[idx]))
                .collect(),
        );
    }
    VectorField::from_components(grid, comps).expect("sizes match")
}
