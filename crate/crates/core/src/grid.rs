//! Truncated uniform grids in one and two dimensions and the field
//! arithmetic the solvers and diagnostics build on.
//!
//! Nodes along each axis sit at `x_k = -L + k*h`, `k = 0..n-1`, with
//! `h = 2L/n`. Values are stored row-major over axes. All types are
//! immutable values after construction and safe to share across threads;
//! reductions run in a fixed order so results are bitwise reproducible.

use crate::error::{MfgError, Result};

/// A spatial point. The second coordinate is ignored in dimension one.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(MfgError::InvalidParam(format!(
                "dim must be 1 or 2, got {dim}"
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(MfgError::InvalidParam(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        let n = points_per_axis;
        if n < 16 || !n.is_power_of_two() {
            return Err(MfgError::InvalidParam(format!(
                "points_per_axis must be a power of two >= 16, got {n}"
            )));
        }
        Ok(Grid { dim, half_width, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    /// Grid spacing `h = 2L/n`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Total number of nodes, `n^dim`.
    pub fn len(&self) -> usize {
        match self.dim {
            1 => self.n,
            _ => self.n * self.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `k` along one axis.
    pub fn axis_coord(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.spacing()
    }

    /// Spatial location of the flat node index.
    pub fn node(&self, idx: usize) -> Point {
        match self.dim {
            1 => [self.axis_coord(idx), 0.0],
            _ => [self.axis_coord(idx / self.n), self.axis_coord(idx % self.n)],
        }
    }

    /// Quadrature weight of the rectangle rule, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        match self.dim {
            1 => self.spacing(),
            _ => self.spacing() * self.spacing(),
        }
    }

    fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(MfgError::GridMismatch(format!(
                "{what}: {:?} vs {:?}",
                self, other
            )));
        }
        Ok(())
    }
}

/// A scalar function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::InvalidParam(format!(
                "value buffer has {} entries, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    /// Sample a function at every node. Non-finite outputs are an error
    /// naming the offending node.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(Point) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            let v = f(x);
            if !v.is_finite() {
                return Err(MfgError::NonFinite {
                    what: format!("sampled value {v}"),
                    location: format!("node {idx} at ({}, {})", x[0], x[1]),
                });
            }
            values.push(v);
        }
        Ok(Field { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Rectangle-rule integral `h^d * sum(values)`.
    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn sup_distance(&self, other: &Field) -> Result<f64> {
        self.grid.check_same(&other.grid, "sup_distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Field) -> Result<Field> {
        self.grid.check_same(&other.grid, "axpy")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(Field {
            grid: self.grid,
            values,
        })
    }

    pub fn scale(&self, c: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn multiply(&self, other: &Field) -> Result<Field> {
        self.grid.check_same(&other.grid, "multiply")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Field {
            grid: self.grid,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Central differences in the interior, second-order one-sided stencils
    /// in the two boundary layers of each axis.
    pub fn gradient(&self) -> VectorField {
        let n = self.grid.points_per_axis();
        let h = self.grid.spacing();
        let mut comps = Vec::with_capacity(self.grid.dim());
        match self.grid.dim() {
            1 => {
                comps.push(diff_axis(&self.values, n, 1, 0, n, h));
            }
            _ => {
                // axis 0: stride n, rows indexed by the second axis
                comps.push(diff_axis(&self.values, n, n, 1, n, h));
                // axis 1: stride 1 within each row
                comps.push(diff_axis(&self.values, n, 1, n, n, h));
            }
        }
        VectorField {
            grid: self.grid,
            comps,
        }
    }

    /// Local-window Hölder seminorm
    /// `max |f(x)-f(y)| / |x-y|^gamma` over node pairs with
    /// `0 < |x-y| <= window_radius * h`.
    pub fn holder_seminorm(&self, gamma: f64, window_radius: usize) -> Result<f64> {
        if !(gamma > 0.0 && gamma < 1.0 + 1e-12) {
            return Err(MfgError::InvalidParam(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        if window_radius < 1 {
            return Err(MfgError::InvalidParam("window_radius must be >= 1".into()));
        }
        let n = self.grid.points_per_axis();
        let h = self.grid.spacing();
        let r = window_radius as isize;
        let mut best = 0.0f64;
        match self.grid.dim() {
            1 => {
                for k in 0..n {
                    for off in 1..=window_radius.min(n - 1 - k) {
                        let d = (off as f64 * h).powf(gamma);
                        let num = (self.values[k] - self.values[k + off]).abs();
                        best = best.max(num / d);
                    }
                }
            }
            _ => {
                // Half-space of offsets so each unordered pair is visited once.
                let mut offsets = Vec::new();
                for di in 0..=r {
                    for dj in -r..=r {
                        if di == 0 && dj <= 0 {
                            continue;
                        }
                        if di * di + dj * dj <= r * r {
                            offsets.push((di as usize, dj));
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let v = self.values[i * n + j];
                        for &(di, dj) in &offsets {
                            let i2 = i + di;
                            let j2 = j as isize + dj;
                            if i2 >= n || j2 < 0 || j2 >= n as isize {
                                continue;
                            }
                            let w = self.values[i2 * n + j2 as usize];
                            let dist = h * ((di * di) as f64 + (dj * dj) as f64).sqrt();
                            best = best.max((v - w).abs() / dist.powf(gamma));
                        }
                    }
                }
            }
        }
        Ok(best)
    }

    /// Multilinear interpolation, clamped to the boundary value outside the box.
    pub fn interp(&self, x: Point) -> f64 {
        let n = self.grid.points_per_axis();
        let h = self.grid.spacing();
        let locate = |c: f64| -> (usize, f64) {
            let s = (c + self.grid.half_width()) / h;
            if s <= 0.0 {
                (0, 0.0)
            } else if s >= (n - 1) as f64 {
                (n - 2, 1.0)
            } else {
                let k = s.floor() as usize;
                (k.min(n - 2), s - s.floor())
            }
        };
        match self.grid.dim() {
            1 => {
                let (k, w) = locate(x[0]);
                (1.0 - w) * self.values[k] + w * self.values[k + 1]
            }
            _ => {
                let (i, wi) = locate(x[0]);
                let (j, wj) = locate(x[1]);
                let v00 = self.values[i * n + j];
                let v01 = self.values[i * n + j + 1];
                let v10 = self.values[(i + 1) * n + j];
                let v11 = self.values[(i + 1) * n + j + 1];
                (1.0 - wi) * ((1.0 - wj) * v00 + wj * v01) + wi * ((1.0 - wj) * v10 + wj * v11)
            }
        }
    }
}

/// One-axis differentiation: central stencils inside, one-sided
/// `(-3f0 + 4f1 - f2) / 2h` at the first and last node of the axis.
fn diff_axis(
    values: &[f64],
    n: usize,
    stride: usize,
    line_stride: usize,
    lines: usize,
    h: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for line in 0..lines {
        let base = line * line_stride;
        let at = |k: usize| values[base + k * stride];
        out[base] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
        for k in 1..n - 1 {
            out[base + k * stride] = (at(k + 1) - at(k - 1)) / (2.0 * h);
        }
        out[base + (n - 1) * stride] = (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h);
    }
    out
}

/// A vector-valued function sampled on a grid (one component per axis).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            comps: (0..grid.dim()).map(|_| vec![0.0; grid.len()]).collect(),
        }
    }

    pub fn from_components(grid: Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(MfgError::InvalidParam(
                "component buffers do not match the grid".into(),
            ));
        }
        Ok(VectorField { grid, comps })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(Point) -> Point) -> Result<Self> {
        let mut comps: Vec<Vec<f64>> = (0..grid.dim())
            .map(|_| Vec::with_capacity(grid.len()))
            .collect();
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            let v = f(x);
            for (axis, comp) in comps.iter_mut().enumerate() {
                if !v[axis].is_finite() {
                    return Err(MfgError::NonFinite {
                        what: format!("sampled component {v:?}"),
                        location: format!("node {idx} at ({}, {})", x[0], x[1]),
                    });
                }
                comp.push(v[axis]);
            }
        }
        Ok(VectorField { grid, comps })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub fn component_field(&self, axis: usize) -> Field {
        Field {
            grid: self.grid,
            values: self.comps[axis].clone(),
        }
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    /// Multilinear interpolation per component, clamped outside the box.
    pub fn interp(&self, x: Point) -> Point {
        let mut out = [0.0; 2];
        for axis in 0..self.grid.dim() {
            out[axis] = interp_values(&self.comps[axis], self.grid, x);
        }
        out
    }

    pub fn value_at_node(&self, idx: usize) -> Point {
        let mut out = [0.0; 2];
        for axis in 0..self.grid.dim() {
            out[axis] = self.comps[axis][idx];
        }
        out
    }

    /// Max over nodes of the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for idx in 0..self.grid.len() {
            let mut s = 0.0;
            for comp in &self.comps {
                s += comp[idx] * comp[idx];
            }
            best = best.max(s);
        }
        best.sqrt()
    }

    pub fn sup_distance(&self, other: &VectorField) -> Result<f64> {
        self.grid.check_same(&other.grid, "vector sup_distance")?;
        let mut best = 0.0f64;
        for idx in 0..self.grid.len() {
            let mut s = 0.0;
            for (a, b) in self.comps.iter().zip(&other.comps) {
                let d = a[idx] - b[idx];
                s += d * d;
            }
            best = best.max(s);
        }
        Ok(best.sqrt())
    }

    pub fn axpy(&self, c: f64, other: &VectorField) -> Result<VectorField> {
        self.grid.check_same(&other.grid, "vector axpy")?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + c * y).collect())
            .collect();
        Ok(VectorField {
            grid: self.grid,
            comps,
        })
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            comps: self
                .comps
                .iter()
                .map(|a| a.iter().map(|v| c * v).collect())
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

fn interp_values(values: &[f64], grid: Grid, x: Point) -> f64 {
    let n = grid.points_per_axis();
    let h = grid.spacing();
    let locate = |c: f64| -> (usize, f64) {
        let s = (c + grid.half_width()) / h;
        if s <= 0.0 {
            (0, 0.0)
        } else if s >= (n - 1) as f64 {
            (n - 2, 1.0)
        } else {
            let k = s.floor() as usize;
            (k.min(n - 2), s - s.floor())
        }
    };
    match grid.dim() {
        1 => {
            let (k, w) = locate(x[0]);
            (1.0 - w) * values[k] + w * values[k + 1]
        }
        _ => {
            let (i, wi) = locate(x[0]);
            let (j, wj) = locate(x[1]);
            let v00 = values[i * n + j];
            let v01 = values[i * n + j + 1];
            let v10 = values[(i + 1) * n + j];
            let v11 = values[(i + 1) * n + j + 1];
            (1.0 - wi) * ((1.0 - wj) * v00 + wj * v01) + wi * ((1.0 - wj) * v10 + wj * v11)
        }
    }
}

/// A time-indexed sequence of scalar fields on a uniform ladder
/// `t_k = t0 + k * (t1-t0)/steps`, `k = 0..=steps`.
#[derive(Debug, Clone)]
pub struct FieldFlow {
    grid: Grid,
    t0: f64,
    t1: f64,
    frames: Vec<Field>,
}

impl FieldFlow {
    pub fn new(grid: Grid, t0: f64, t1: f64, frames: Vec<Field>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(MfgError::InvalidParam(
                "a flow needs at least two frames".into(),
            ));
        }
        if !(t1 > t0) {
            return Err(MfgError::InvalidParam(format!(
                "need t1 > t0, got [{t0}, {t1}]"
            )));
        }
        for f in &frames {
            f.grid().check_same(&grid, "flow frame")?;
        }
        Ok(FieldFlow {
            grid,
            t0,
            t1,
            frames,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps() as f64
    }

    pub fn frame(&self, k: usize) -> &Field {
        &self.frames[k]
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    /// Frame index used for left-constant-in-time evaluation at `t`.
    pub fn left_frame_index(&self, t: f64) -> usize {
        if t <= self.t0 {
            return 0;
        }
        let k = ((t - self.t0) / self.dt()).floor() as usize;
        k.min(self.steps())
    }

    /// Left-constant in time, multilinear in space.
    pub fn eval(&self, t: f64, x: Point) -> f64 {
        self.frames[self.left_frame_index(t)].interp(x)
    }

    pub fn sup_distance(&self, other: &FieldFlow) -> Result<f64> {
        if self.frames.len() != other.frames.len() {
            return Err(MfgError::GridMismatch(
                "flows have different frame counts".into(),
            ));
        }
        let mut best = 0.0f64;
        for (a, b) in self.frames.iter().zip(&other.frames) {
            best = best.max(a.sup_distance(b)?);
        }
        Ok(best)
    }
}

/// A time-indexed sequence of vector fields.
#[derive(Debug, Clone)]
pub struct VectorFlow {
    grid: Grid,
    t0: f64,
    t1: f64,
    frames: Vec<VectorField>,
}

impl VectorFlow {
    pub fn new(grid: Grid, t0: f64, t1: f64, frames: Vec<VectorField>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(MfgError::InvalidParam(
                "a flow needs at least two frames".into(),
            ));
        }
        if !(t1 > t0) {
            return Err(MfgError::InvalidParam(format!(
                "need t1 > t0, got [{t0}, {t1}]"
            )));
        }
        for f in &frames {
            f.grid().check_same(&grid, "flow frame")?;
        }
        Ok(VectorFlow {
            grid,
            t0,
            t1,
            frames,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps() as f64
    }

    pub fn frame(&self, k: usize) -> &VectorField {
        &self.frames[k]
    }

    pub fn frames(&self) -> &[VectorField] {
        &self.frames
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    pub fn left_frame_index(&self, t: f64) -> usize {
        if t <= self.t0 {
            return 0;
        }
        let k = ((t - self.t0) / self.dt()).floor() as usize;
        k.min(self.steps())
    }

    /// Left-constant in time, multilinear in space.
    pub fn eval(&self, t: f64, x: Point) -> Point {
        self.frames[self.left_frame_index(t)].interp(x)
    }

    /// Max over frames of the pointwise Euclidean sup norm.
    pub fn sup_norm(&self) -> f64 {
        self.frames.iter().fold(0.0, |m, f| m.max(f.sup_norm()))
    }

    pub fn sup_distance(&self, other: &VectorFlow) -> Result<f64> {
        if self.frames.len() != other.frames.len() {
            return Err(MfgError::GridMismatch(
                "flows have different frame counts".into(),
            ));
        }
        let mut best = 0.0f64;
        for (a, b) in self.frames.iter().zip(&other.frames) {
            best = best.max(a.sup_distance(b)?);
        }
        Ok(best)
    }

    pub fn scale(&self, c: f64) -> VectorFlow {
        VectorFlow {
            grid: self.grid,
            t0: self.t0,
            t1: self.t1,
            frames: self.frames.iter().map(|f| f.scale(c)).collect(),
        }
    }
}
