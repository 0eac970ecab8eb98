//! Standalone forward mild equation for the limit density under a given
//! bounded feedback `α`:
//!
//! ```text
//! p(t) = P_t p0 - ∫_0^t ∇P_{t-s}( p(s) (α(s) + b(·, p(s))) ) ds
//! ```
//!
//! with `(∇P_τ h)(x) = ∫ ∇_x G(τ, x-y) h(y) dy`, the sign fixed by the
//! Fokker-Planck identity `P_τ div V = ∇P_τ · V`. With `α = -θ` the
//! integrand is the exact negation of the coupled solver's, so this is
//! solved with the same quadrature and density post-processing policy and
//! running it with `α = α*` is a pure fixed-point identity rather than a
//! discretization comparison.

use crate::error::{MfgError, Result};
use crate::grid::{Field, FieldFlow, Grid, VectorField, VectorFlow};
use crate::model::ModelSpec;
use crate::semigroup::{HeatOperator, PaddedSpectrum};

/// Where the Picard iteration starts; two distinct choices double as a
/// uniqueness check since both must land on the same fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardInit {
    /// `p^0(t_k) = P_{t_k} p0` (the uncoupled heat flow).
    HeatFlow,
    /// `p^0(t_k) = p0` frozen in time.
    FrozenInitial,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardParams {
    pub steps: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Feedback fields whose sup norm exceeds this are rejected up front.
    pub admissible_bound: Option<f64>,
    pub init: ForwardInit,
}

impl ForwardParams {
    pub fn new(steps: usize) -> Self {
        ForwardParams {
            steps,
            tol: 1e-9,
            max_iter: 200,
            admissible_bound: None,
            init: ForwardInit::HeatFlow,
        }
    }
}

#[derive(Debug)]
pub struct LimitDensity {
    pub p: FieldFlow,
    pub alpha_used: VectorFlow,
    /// Final Picard residual.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Most negative density value seen before clipping.
    pub min_density_pre_clip: f64,
}

pub fn solve_forward(
    m: &ModelSpec,
    alpha: &VectorFlow,
    grid: Grid,
    params: ForwardParams,
) -> Result<LimitDensity> {
    if grid.dim() != m.dim() || alpha.grid() != grid {
        return Err(MfgError::GridMismatch(
            "model, grid and feedback must agree".into(),
        ));
    }
    if alpha.steps() != params.steps {
        return Err(MfgError::GridMismatch(format!(
            "feedback has {} steps, solver wants {}",
            alpha.steps(),
            params.steps
        )));
    }
    if let Some(bound) = params.admissible_bound {
        let sup = alpha.sup_norm();
        if sup > bound * (1.0 + 1e-12) {
            return Err(MfgError::Inadmissible(format!(
                "feedback sup norm {sup:.4} exceeds the admissible bound {bound:.4}"
            )));
        }
    }
    let steps = params.steps;
    let t_end = m.horizon();
    let dt = t_end / steps as f64;
    let op = HeatOperator::with_ladder(grid, dt, steps)?;
    let p0 = m.initial_density_field(grid)?;

    let base = crate::solver::heat_ladder(&op, &p0, dt, steps)?;
    let mut p_frames: Vec<Field> = match params.init {
        ForwardInit::HeatFlow => base.clone(),
        ForwardInit::FrozenInitial => vec![p0.clone(); steps + 1],
    };
    let mut min_pre = postprocess(&mut p_frames)?;

    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        iterations += 1;
        // q_j = p_j (α_j + b(·, p_j))
        let q: Vec<VectorField> = (0..=steps)
            .map(|k| {
                let mut comps: Vec<Vec<f64>> = Vec::with_capacity(grid.dim());
                for axis in 0..grid.dim() {
                    comps.push(
                        (0..grid.len())
                            .map(|idx| {
                                let x = grid.node(idx);
                                let pv = p_frames[k].values()[idx];
                                let b = m.drift(x, pv);
                                pv * (alpha.frame(k).component(axis)[idx] + b[axis])
                            })
                            .collect(),
                    );
                }
                VectorField::from_components(grid, comps).expect("sizes match")
            })
            .collect();

        let mut next = Vec::with_capacity(steps + 1);
        next.push(base[0].clone());
        let mut running: Vec<PaddedSpectrum> =
            (0..grid.dim()).map(|_| op.zero_spectrum()).collect();
        for k in 1..=steps {
            let mut frame = base[k].clone();
            for (axis, spec) in running.iter_mut().enumerate() {
                op.heat_multiply(spec, dt);
                spec.add_assign(&op.spectrum(&q[k - 1].component_field(axis))?);
                frame = frame.axpy(-dt, &op.gradient_to_field(spec, dt, axis)?)?;
            }
            if !frame.is_finite() {
                return Err(MfgError::NonFinite {
                    what: "forward sweep output".into(),
                    location: format!("frame {k}"),
                });
            }
            next.push(frame);
        }
        min_pre = min_pre.min(postprocess(&mut next)?);

        residual = 0.0;
        for k in 0..=steps {
            residual = residual.max(next[k].sup_distance(&p_frames[k])?);
        }
        p_frames = next;
        if residual <= params.tol {
            converged = true;
            break;
        }
    }

    Ok(LimitDensity {
        p: FieldFlow::new(grid, 0.0, t_end, p_frames)?,
        alpha_used: alpha.clone(),
        residual,
        converged,
        iterations,
        min_density_pre_clip: min_pre,
    })
}

/// Same clipping/renormalization policy as the coupled solver; returns the
/// most negative pre-clip value.
fn postprocess(frames: &mut [Field]) -> Result<f64> {
    let mut min_pre = f64::INFINITY;
    for f in frames.iter_mut() {
        let grid = f.grid();
        let mut neg = 0.0;
        for v in f.values_mut() {
            min_pre = min_pre.min(*v);
            if *v < 0.0 {
                neg += -*v;
                *v = 0.0;
            }
        }
        if neg * grid.cell_volume() > 1e-2 {
            return Err(MfgError::PositivityLost(format!(
                "clipped density mass {:.3e} exceeds 1e-2",
                neg * grid.cell_volume()
            )));
        }
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
    Ok(min_pre)
}
