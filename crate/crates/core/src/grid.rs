//! Uniform time grids, centred spatial grids and gridded fields.

use crate::error::{invalid, Error, Result};

/// Uniform partition of `[0, T]` into `n_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return invalid(format!("time horizon must be positive, got {horizon}"));
        }
        if n_steps == 0 {
            return invalid("time grid needs at least one step");
        }
        Ok(Self { horizon, n_steps })
    }

    /// `2^log2_steps` steps on `[0, T]`.
    pub fn dyadic(horizon: f64, log2_steps: u32) -> Result<Self> {
        Self::new(horizon, 1usize << log2_steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    pub fn is_dyadic(&self) -> bool {
        self.n_steps.is_power_of_two()
    }

    /// Index of a time that lies on the grid (up to a relative 1e-9 slack).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let u = t / self.dt();
        let k = u.round();
        if !(k >= 0.0 && k <= self.n_steps as f64) || (u - k).abs() > 1e-9 * (1.0 + k) {
            return invalid(format!("time {t} is not a point of the grid (dt = {})", self.dt()));
        }
        Ok(k as usize)
    }

    /// Refinement factor `r` such that `self` has `r` steps per step of `coarse`.
    pub fn refinement_of(&self, coarse: &TimeGrid) -> Option<usize> {
        if (self.horizon - coarse.horizon).abs() > 1e-12 * self.horizon {
            return None;
        }
        if self.n_steps % coarse.n_steps != 0 {
            return None;
        }
        Some(self.n_steps / coarse.n_steps)
    }

    pub fn coarsen(&self, factor: usize) -> Result<TimeGrid> {
        if factor == 0 || self.n_steps % factor != 0 {
            return invalid(format!("cannot coarsen {} steps by {factor}", self.n_steps));
        }
        TimeGrid::new(self.horizon, self.n_steps / factor)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    pub(crate) fn check_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: time grids differ ({} steps on [0,{}] vs {} steps on [0,{}])",
                self.n_steps, self.horizon, other.n_steps, other.horizon
            )))
        }
    }
}

/// Node grid on `[-L, L)^d` with `n_cells` nodes per axis.
///
/// Node `i` sits at `-L + i h` with `h = 2L / n_cells`, so the origin is node
/// `n_cells / 2`. Each node owns the cell `[x_i - h/2, x_i + h/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    half_width: f64,
    n_cells: usize,
    dim: usize,
}

pub const MAX_DIM: usize = 3;

impl SpatialGrid {
    pub fn new(half_width: f64, n_cells: usize, dim: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return invalid(format!("half width must be positive, got {half_width}"));
        }
        if !n_cells.is_power_of_two() || n_cells < 2 {
            return invalid(format!("cells per axis must be a power of two >= 2, got {n_cells}"));
        }
        if dim == 0 || dim > MAX_DIM {
            return invalid(format!("dimension must be in 1..={MAX_DIM}, got {dim}"));
        }
        Ok(Self {
            half_width,
            n_cells,
            dim,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n_cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells.pow(self.dim as u32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n_cells; self.dim]
    }

    pub fn origin_node(&self) -> usize {
        let c = self.n_cells / 2;
        (0..self.dim).fold(0, |acc, _| acc * self.n_cells + c)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Row-major flat index (last axis fastest).
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n_cells + i)
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = flat % self.n_cells;
            flat /= self.n_cells;
        }
    }

    pub fn node_position(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.multi_index(flat, &mut idx[..self.dim]);
        for a in 0..self.dim {
            out[a] = self.coordinate(idx[a]);
        }
    }

    /// Node whose cell contains `x`, if inside the grid.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let h = self.spacing();
        let mut flat = 0usize;
        for &xa in x.iter().take(self.dim) {
            let u = ((xa + self.half_width) / h + 0.5).floor();
            if !(u >= 0.0 && u < self.n_cells as f64) {
                return None;
            }
            flat = flat * self.n_cells + u as usize;
        }
        Some(flat)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.locate(x).is_some()
    }

    /// Multilinear interpolation of a node field with `comps` components per node.
    /// Queries outside `[x_0, x_{n-1}]` are clamped to the boundary; returns
    /// `true` when clamping happened.
    pub fn interpolate(&self, data: &[f64], comps: usize, x: &[f64], out: &mut [f64]) -> bool {
        self.interpolate_by(comps, x, out, |j| data[j])
    }

    /// Interpolates `hi − lo` without materialising the difference.
    pub fn interpolate_difference(&self, hi: &[f64], lo: &[f64], comps: usize, x: &[f64], out: &mut [f64]) -> bool {
        self.interpolate_by(comps, x, out, |j| hi[j] - lo[j])
    }

    #[inline(always)]
    fn interpolate_by(&self, comps: usize, x: &[f64], out: &mut [f64], value: impl Fn(usize) -> f64) -> bool {
        let h = self.spacing();
        let n = self.n_cells;
        let top = (n - 1) as f64;
        let mut clamped = false;
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for a in 0..self.dim {
            let mut u = (x[a] + self.half_width) / h;
            if !(u >= 0.0) {
                // also catches NaN
                u = 0.0;
                clamped = true;
            } else if u > top {
                u = top;
                clamped = true;
            }
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        if self.dim == 1 {
            let i = base[0] * comps;
            let f = frac[0];
            for c in 0..comps {
                let lo = value(i + c);
                out[c] = lo + f * (value(i + comps + c) - lo);
            }
            return clamped;
        }
        out[..comps].iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for a in 0..self.dim {
                let bit = (corner >> (self.dim - 1 - a)) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * n + base[a] + bit;
            }
            if w == 0.0 {
                continue;
            }
            for c in 0..comps {
                out[c] += w * value(flat * comps + c);
            }
        }
        clamped
    }

    pub(crate) fn check_same(&self, other: &SpatialGrid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what}: spatial grids differ ({self:?} vs {other:?})")))
        }
    }
}

/// Node values of a (possibly vector-valued) field on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    pub grid: SpatialGrid,
    pub components: usize,
    pub data: Vec<f64>,
}

impl GriddedField {
    pub fn zeros(grid: SpatialGrid, components: usize) -> Self {
        Self {
            grid,
            components,
            data: vec![0.0; grid.n_nodes() * components],
        }
    }

    pub fn new(grid: SpatialGrid, components: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n_nodes() * components {
            return Err(Error::Format(format!(
                "field has {} values, grid needs {}",
                data.len(),
                grid.n_nodes() * components
            )));
        }
        Ok(Self { grid, components, data })
    }

    pub fn from_fn(grid: SpatialGrid, components: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut field = Self::zeros(grid, components);
        let mut x = [0.0; MAX_DIM];
        for node in 0..grid.n_nodes() {
            grid.node_position(node, &mut x[..grid.dim()]);
            f(&x[..grid.dim()], &mut field.data[node * components..(node + 1) * components]);
        }
        field
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.data[node * self.components..(node + 1) * self.components]
    }

    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.grid.interpolate(&self.data, self.components, x, out)
    }

    /// Largest pointwise Euclidean magnitude.
    pub fn sup_norm(&self) -> f64 {
        self.data
            .chunks(self.components)
            .map(crate::stats::norm)
            .fold(0.0, f64::max)
    }

    /// Pointwise Euclidean magnitude at each node.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.chunks(self.components).map(crate::stats::norm).collect()
    }
}
