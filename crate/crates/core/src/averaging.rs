//! Averaged fields `Γ_{s,t}K(x) = ∫_s^t K(x + Z_r) dr`.
//!
//! The field is stored as the cumulative `Γ_{0,t_k}` on every node of the
//! spatial grid and every point of the time grid; increments are differences
//! of cumulative slices, so `Γ_{s,u} + Γ_{u,t} = Γ_{s,t}` by construction.
//! Off-grid queries use multilinear interpolation and clamp to the grid
//! boundary, counting each clamped query.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fft::NdFft;
use crate::grid::{SpatialGrid, TimeGrid, MAX_DIM};
use crate::kernels::{check_resolution, evaluate_on_grid, Kernel};
use crate::localtime::OccupationDensity;
use crate::paths::SamplePath;
use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::{distance, loglog_slope, norm, CompensatedSum};

#[derive(Debug)]
pub struct AveragedField {
    sgrid: SpatialGrid,
    tgrid: TimeGrid,
    comps: usize,
    cumulative: Vec<f64>,
    gradient: OnceLock<Vec<f64>>,
    clamps: AtomicU64,
    zero: bool,
}

impl Clone for AveragedField {
    fn clone(&self) -> Self {
        Self {
            sgrid: self.sgrid,
            tgrid: self.tgrid,
            comps: self.comps,
            cumulative: self.cumulative.clone(),
            gradient: self.gradient.clone(),
            clamps: AtomicU64::new(self.clamps.load(Ordering::Relaxed)),
            zero: self.zero,
        }
    }
}

impl AveragedField {
    /// Build from cumulative values laid out as `[time][node][component]`.
    pub fn from_cumulative(sgrid: SpatialGrid, tgrid: TimeGrid, comps: usize, cumulative: Vec<f64>) -> Result<Self> {
        let slice = sgrid.n_nodes() * comps;
        if cumulative.len() != tgrid.n_points() * slice {
            return Err(Error::Format(format!(
                "cumulative field has {} values, expected {}",
                cumulative.len(),
                tgrid.n_points() * slice
            )));
        }
        if cumulative[..slice].iter().any(|v| *v != 0.0) {
            return invalid("cumulative field must vanish at t = 0");
        }
        let zero = cumulative.iter().all(|v| *v == 0.0);
        Ok(Self {
            sgrid,
            tgrid,
            comps,
            cumulative,
            gradient: OnceLock::new(),
            clamps: AtomicU64::new(0),
            zero,
        })
    }

    pub fn zero(sgrid: SpatialGrid, tgrid: TimeGrid) -> Self {
        let comps = sgrid.dim();
        Self::from_cumulative(sgrid, tgrid, comps, vec![0.0; tgrid.n_points() * sgrid.n_nodes() * comps])
            .expect("zero field is valid")
    }

    /// Cumulative field given in closed form, `f(t, x, out) = Γ_{0,t}(x)`.
    pub fn from_fn(sgrid: SpatialGrid, tgrid: TimeGrid, mut f: impl FnMut(f64, &[f64], &mut [f64])) -> Self {
        let comps = sgrid.dim();
        let d = sgrid.dim();
        let slice = sgrid.n_nodes() * comps;
        let mut data = vec![0.0; tgrid.n_points() * slice];
        let mut x = [0.0; MAX_DIM];
        for k in 1..tgrid.n_points() {
            let t = tgrid.time(k);
            for node in 0..sgrid.n_nodes() {
                sgrid.node_position(node, &mut x[..d]);
                let base = k * slice + node * comps;
                f(t, &x[..d], &mut data[base..base + comps]);
            }
        }
        Self::from_cumulative(sgrid, tgrid, comps, data).expect("layout is consistent")
    }

    pub fn spatial_grid(&self) -> &SpatialGrid {
        &self.sgrid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.tgrid
    }

    pub fn components(&self) -> usize {
        self.comps
    }

    pub fn dim(&self) -> usize {
        self.sgrid.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    fn slice_len(&self) -> usize {
        self.sgrid.n_nodes() * self.comps
    }

    /// `Γ_{0,t_k}` on the nodes.
    pub fn cumulative_at(&self, k: usize) -> &[f64] {
        let n = self.slice_len();
        &self.cumulative[k * n..(k + 1) * n]
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `Γ_{t_s, t_t}` at every node.
    pub fn increment_nodes(&self, s: usize, t: usize) -> Vec<f64> {
        self.cumulative_at(t).iter().zip(self.cumulative_at(s)).map(|(b, a)| b - a).collect()
    }

    pub fn increment_at_node(&self, s: usize, t: usize, node: usize, out: &mut [f64]) {
        let c = self.comps;
        let a = &self.cumulative_at(s)[node * c..(node + 1) * c];
        let b = &self.cumulative_at(t)[node * c..(node + 1) * c];
        for i in 0..c {
            out[i] = b[i] - a[i];
        }
    }

    /// `Γ_{t_s, t_t}(x)` by interpolation; clamped queries are counted.
    pub fn increment(&self, s: usize, t: usize, x: &[f64], out: &mut [f64]) {
        let c = self.comps;
        if self.zero {
            out[..c].iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let clamped = self.sgrid.interpolate_difference(self.cumulative_at(t), self.cumulative_at(s), c, x, out);
        if clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Finite-difference Jacobian of the cumulative field, `[time][node][comp][axis]`.
    pub fn gradient(&self) -> &[f64] {
        self.gradient.get_or_init(|| self.compute_gradient())
    }

    fn compute_gradient(&self) -> Vec<f64> {
        let g = &self.sgrid;
        let d = g.dim();
        let c = self.comps;
        let n = g.n_cells();
        let h = g.spacing();
        let nodes = g.n_nodes();
        let per_time = nodes * c * d;
        let mut out = vec![0.0; self.tgrid.n_points() * per_time];
        out.par_chunks_mut(per_time).enumerate().for_each(|(k, dst)| {
            let src = self.cumulative_at(k);
            let mut idx = [0usize; MAX_DIM];
            for node in 0..nodes {
                g.multi_index(node, &mut idx[..d]);
                for a in 0..d {
                    let stride = n.pow((d - 1 - a) as u32);
                    let i = idx[a];
                    let (lo, hi, span) = if i == 0 {
                        (node, node + stride, h)
                    } else if i == n - 1 {
                        (node - stride, node, h)
                    } else {
                        (node - stride, node + stride, 2.0 * h)
                    };
                    for comp in 0..c {
                        dst[(node * c + comp) * d + a] = (src[hi * c + comp] - src[lo * c + comp]) / span;
                    }
                }
            }
        });
        out
    }

    /// `∇Γ_{t_s,t_t}(x)` as a row-major `comps × d` matrix.
    pub fn increment_gradient(&self, s: usize, t: usize, x: &[f64], out: &mut [f64]) {
        let m = self.comps * self.dim();
        let per_time = self.sgrid.n_nodes() * m;
        let grad = self.gradient();
        let clamped = self.sgrid.interpolate_difference(&grad[t * per_time..(t + 1) * per_time], &grad[s * per_time..(s + 1) * per_time], m, x, out);
        if clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Number of interpolation queries that were clamped to the grid boundary.
    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    pub(crate) fn record_clamps(&self, n: u64) {
        self.clamps.fetch_add(n, Ordering::Relaxed);
    }

    pub fn reset_clamp_count(&self) {
        self.clamps.store(0, Ordering::Relaxed);
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.tgrid.n_points())
            .map(|k| self.cumulative_at(k).chunks(self.comps).map(norm).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Same field seen on the coarsened time grid.
    pub fn coarsen_time(&self, factor: usize) -> Result<AveragedField> {
        let tgrid = self.tgrid.coarsen(factor)?;
        let data = (0..tgrid.n_points())
            .flat_map(|k| self.cumulative_at(k * factor).iter().copied())
            .collect();
        Self::from_cumulative(self.sgrid, tgrid, self.comps, data)
    }
}

/// Direct construction: trapezoidal quadrature of `r ↦ K(x + Z_r)` on the grid of `Z`.
///
/// `Z` may live on a refinement of `tgrid`; the cumulative field is stored at
/// the points of `tgrid`. The kernel is evaluated in closed form at shifted
/// points, not through a gridded table.
pub fn averaged_field_direct(kernel: &Kernel, z: &SamplePath, sgrid: &SpatialGrid, tgrid: &TimeGrid) -> Result<AveragedField> {
    let d = sgrid.dim();
    if kernel.dim() != d || z.dim() != d {
        return Err(Error::GridMismatch(format!(
            "kernel, path and grid dimensions differ ({}, {}, {d})",
            kernel.dim(),
            z.dim()
        )));
    }
    let factor = z.grid().refinement_of(tgrid).ok_or_else(|| {
        Error::GridMismatch(format!("path grid {:?} does not refine {:?}", z.grid(), tgrid))
    })?;
    check_resolution(kernel, sgrid)?;
    let c = kernel.components();
    let nodes = sgrid.n_nodes();
    if kernel.is_zero() {
        return Ok(AveragedField::zero(*sgrid, *tgrid));
    }
    let half = z.grid().dt() / 2.0;
    let n_fine = z.grid().n_steps();
    let n_coarse = tgrid.n_steps();
    // node-major scratch: [node][time][comp]
    let mut node_major = vec![0.0; nodes * tgrid.n_points() * c];
    node_major
        .par_chunks_mut(tgrid.n_points() * c)
        .enumerate()
        .for_each(|(node, dst)| {
            let mut x = [0.0; MAX_DIM];
            let mut y = [0.0; MAX_DIM];
            let mut prev = [0.0; MAX_DIM];
            let mut cur = [0.0; MAX_DIM];
            sgrid.node_position(node, &mut x[..d]);
            let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::default(); c];
            let eval_at = |k: usize, y: &mut [f64], out: &mut [f64]| {
                let zk = z.at(k);
                for a in 0..d {
                    y[a] = x[a] + zk[a];
                }
                kernel.eval(&y[..d], out);
            };
            eval_at(0, &mut y, &mut prev[..c]);
            for k in 0..n_fine {
                eval_at(k + 1, &mut y, &mut cur[..c]);
                for i in 0..c {
                    acc[i].add(half * prev[i]);
                    acc[i].add(half * cur[i]);
                }
                prev = cur;
                if (k + 1) % factor == 0 {
                    let j = (k + 1) / factor;
                    for i in 0..c {
                        dst[j * c + i] = acc[i].value();
                    }
                }
            }
            debug_assert_eq!(n_fine / factor, n_coarse);
        });
    let slice = nodes * c;
    let mut cumulative = vec![0.0; tgrid.n_points() * slice];
    for node in 0..nodes {
        for k in 0..tgrid.n_points() {
            for i in 0..c {
                cumulative[k * slice + node * c + i] = node_major[(node * tgrid.n_points() + k) * c + i];
            }
        }
    }
    AveragedField::from_cumulative(*sgrid, *tgrid, c, cumulative)
}

/// Convolution construction: `Γ_{0,t} = K ∗ L̄_{0,t}` with `L̄(z) = L(−z)`.
///
/// `occupation` holds the increments over consecutive windows of a uniform
/// time grid starting at 0. The kernel is tabulated on the doubled grid
/// `[−2L, 2L)^d`, and each cumulative density is convolved with it by FFT at
/// size `2n` per axis, which involves no wrap-around.
pub fn averaged_field_convolution(kernel: &Kernel, occupation: &[OccupationDensity], sgrid: &SpatialGrid) -> Result<AveragedField> {
    let first = occupation.first().ok_or(Error::Empty("occupation increments"))?;
    let n_t = occupation.len();
    let horizon = occupation[n_t - 1].window().1;
    let tgrid = TimeGrid::new(horizon, n_t)?;
    for (k, occ) in occupation.iter().enumerate() {
        occ.grid().check_same(sgrid, "occupation density")?;
        let (s, t) = occ.window();
        let tol = 1e-9 * tgrid.dt();
        if (s - tgrid.time(k)).abs() > tol || (t - tgrid.time(k + 1)).abs() > tol {
            return Err(Error::GridMismatch(format!("occupation window {k} is [{s}, {t}], not on a uniform grid from 0")));
        }
        if occ.half_step() != first.half_step() {
            return Err(Error::GridMismatch("occupation increments use different step sizes".into()));
        }
    }
    let d = sgrid.dim();
    let c = kernel.components();
    if kernel.dim() != d {
        return Err(Error::GridMismatch("kernel and grid dimensions differ".into()));
    }
    if kernel.is_zero() {
        return Ok(AveragedField::zero(*sgrid, tgrid));
    }
    let n = sgrid.n_cells();
    let big = SpatialGrid::new(2.0 * sgrid.half_width(), 2 * n, d)?;
    let table = evaluate_on_grid(kernel, &big)?;
    let fft = NdFft::new(&big.shape());
    let size = big.n_nodes();
    let kernel_hat: Vec<Vec<Complex64>> = (0..c)
        .map(|i| {
            let mut buf: Vec<Complex64> = (0..size).map(|m| Complex64::new(table.data[m * c + i], 0.0)).collect();
            fft.forward(&mut buf);
            buf
        })
        .collect();
    // cumulative half-step counts, exact
    let nodes = sgrid.n_nodes();
    let mut counts = vec![0u64; nodes];
    let mut cumulative_counts = Vec::with_capacity(n_t);
    for occ in occupation {
        for (a, b) in counts.iter_mut().zip(occ.half_step_counts()) {
            *a += b;
        }
        cumulative_counts.push(counts.clone());
    }
    let weight = first.half_step();
    let slice = nodes * c;
    let mut cumulative = vec![0.0; (n_t + 1) * slice];
    cumulative[slice..].par_chunks_mut(slice).enumerate().for_each(|(k, dst)| {
        let counts = &cumulative_counts[k];
        let mut idx = [0usize; MAX_DIM];
        let mut big_idx = [0usize; MAX_DIM];
        // reflected mass: L̄ at node n−1−c' carries the mass of node c'
        let mut rho = vec![Complex64::default(); size];
        for (node, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                continue;
            }
            sgrid.multi_index(node, &mut idx[..d]);
            for a in 0..d {
                big_idx[a] = n - 1 - idx[a];
            }
            rho[big.flat_index(&big_idx[..d])] = Complex64::new(cnt as f64 * weight, 0.0);
        }
        fft.forward(&mut rho);
        for i in 0..c {
            let mut buf: Vec<Complex64> = rho.iter().zip(&kernel_hat[i]).map(|(a, b)| a * b).collect();
            fft.inverse(&mut buf);
            for node in 0..nodes {
                sgrid.multi_index(node, &mut idx[..d]);
                for a in 0..d {
                    big_idx[a] = idx[a] + n - 1;
                }
                dst[node * c + i] = buf[big.flat_index(&big_idx[..d])].re;
            }
        }
    });
    AveragedField::from_cumulative(*sgrid, tgrid, c, cumulative)
}

/// Largest relative discrepancy `max|a − b| / max|a|` over all times and nodes.
pub fn relative_discrepancy(a: &AveragedField, b: &AveragedField) -> Result<f64> {
    a.sgrid.check_same(&b.sgrid, "field comparison")?;
    a.tgrid.check_same(&b.tgrid, "field comparison")?;
    let scale = a.cumulative.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .cumulative
        .iter()
        .zip(&b.cumulative)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaNorm {
    pub gamma: f64,
    pub alpha: u32,
    pub value: f64,
    /// sup-value, sup-gradient, Lipschitz and gradient-Lipschitz rates.
    pub components: [f64; 4],
    /// Log-log slope of the RMS over windows of `sup_x |Γ_{s,t}(x)|` against `|t − s|`.
    pub fitted_time_exponent: f64,
}

/// Dyadic windows `[k ℓ, (k+1) ℓ]` of every dyadic length, as index pairs.
pub(crate) fn dyadic_windows(n_steps: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut width = 1;
    while width <= n_steps {
        let mut s = 0;
        while s + width <= n_steps {
            out.push((s, s + width));
            s += width;
        }
        width *= 2;
    }
    out
}

/// Space pairs: every axis neighbour plus `budget` random node pairs.
fn space_pairs(grid: &SpatialGrid, budget: usize) -> Vec<(usize, usize)> {
    let d = grid.dim();
    let n = grid.n_cells();
    let mut pairs = Vec::new();
    let mut idx = [0usize; MAX_DIM];
    for node in 0..grid.n_nodes() {
        grid.multi_index(node, &mut idx[..d]);
        for a in 0..d {
            if idx[a] + 1 < n {
                pairs.push((node, node + n.pow((d - 1 - a) as u32)));
            }
        }
    }
    let mut rng = stream_rng(0x6a77_a5e5, stream_id(purpose::PAIRS, 1));
    for _ in 0..budget {
        let a = rng.random_range(0..grid.n_nodes());
        let b = rng.random_range(0..grid.n_nodes());
        if a != b {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Estimate `‖Γ‖_{γ,α}` over dyadic time windows and sampled space pairs.
///
/// With `alpha = 1` only the first three components are measured; the
/// gradient-Lipschitz component is reported as 0.
pub fn gamma_norm(field: &AveragedField, gamma: f64, alpha: u32, space_pair_budget: usize) -> Result<GammaNorm> {
    if !(gamma > 0.5 && gamma < 1.0) {
        return invalid(format!("gamma must lie in (1/2, 1), got {gamma}"));
    }
    if alpha != 1 && alpha != 2 {
        return invalid(format!("alpha must be 1 or 2, got {alpha}"));
    }
    let g = &field.sgrid;
    let d = g.dim();
    let c = field.comps;
    let m = c * d;
    let dt = field.tgrid.dt();
    let windows = dyadic_windows(field.tgrid.n_steps());
    let pairs = space_pairs(g, space_pair_budget);
    let mut positions = vec![0.0; g.n_nodes() * d];
    for node in 0..g.n_nodes() {
        g.node_position(node, &mut positions[node * d..(node + 1) * d]);
    }
    let per_time = g.n_nodes() * m;
    let grad = field.gradient();
    let rows: Vec<(usize, [f64; 4], f64)> = windows
        .par_iter()
        .map(|&(s, t)| {
            let lag = (t - s) as f64 * dt;
            let scale = lag.powf(-gamma);
            let inc = field.increment_nodes(s, t);
            let ginc: Vec<f64> = grad[t * per_time..(t + 1) * per_time]
                .iter()
                .zip(&grad[s * per_time..(s + 1) * per_time])
                .map(|(b, a)| b - a)
                .collect();
            let sup_val = inc.chunks(c).map(norm).fold(0.0, f64::max);
            let sup_grad = ginc.chunks(m).map(norm).fold(0.0, f64::max);
            let mut lip = 0.0f64;
            let mut glip = 0.0f64;
            for &(a, b) in &pairs {
                let dx = distance(&positions[a * d..(a + 1) * d], &positions[b * d..(b + 1) * d]);
                lip = lip.max(distance(&inc[a * c..(a + 1) * c], &inc[b * c..(b + 1) * c]) / dx);
                if alpha == 2 {
                    glip = glip.max(distance(&ginc[a * m..(a + 1) * m], &ginc[b * m..(b + 1) * m]) / dx);
                }
            }
            (t - s, [sup_val * scale, sup_grad * scale, lip * scale, glip * scale], sup_val)
        })
        .collect();
    let mut components = [0.0f64; 4];
    for (_, comp, _) in &rows {
        for i in 0..4 {
            components[i] = components[i].max(comp[i]);
        }
    }
    let n = field.tgrid.n_steps();
    let max_width = (n / 8).max(1);
    let mut lags = Vec::new();
    let mut rms = Vec::new();
    let mut width = 1;
    while width <= max_width {
        let vals: Vec<f64> = rows.iter().filter(|r| r.0 == width).map(|r| r.2).collect();
        lags.push(width as f64 * dt);
        rms.push((vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt());
        width *= 2;
    }
    Ok(GammaNorm {
        gamma,
        alpha,
        value: components.iter().cloned().fold(0.0, f64::max),
        components,
        fitted_time_exponent: loglog_slope(&lags, &rms),
    })
}

/// Checks `‖Γ_{s,t}‖_{C^θ} ≤ 1.1 ‖Γ_{s,t}‖_{C¹}^θ ‖Γ_{s,t}‖_{C⁰}^{1−θ}` on every dyadic window.
///
/// Grid norms: `‖f‖_{C⁰} = sup|f|`, `‖f‖_{C¹} = max(sup|f|, [f]_1)` and
/// `‖f‖_{C^θ} = max(sup|f|, [f]_θ / 2^{1−θ})`, with the seminorms taken over
/// the same space pairs (axis neighbours plus 256 random pairs).
pub fn interpolation_check(field: &AveragedField, theta: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&theta) {
        return invalid(format!("theta must lie in [0,1], got {theta}"));
    }
    let g = &field.sgrid;
    let d = g.dim();
    let c = field.comps;
    let pairs = space_pairs(g, 256);
    let mut positions = vec![0.0; g.n_nodes() * d];
    for node in 0..g.n_nodes() {
        g.node_position(node, &mut positions[node * d..(node + 1) * d]);
    }
    let windows = dyadic_windows(field.tgrid.n_steps());
    Ok(windows.par_iter().all(|&(s, t)| {
        let inc = field.increment_nodes(s, t);
        let sup = inc.chunks(c).map(norm).fold(0.0, f64::max);
        let mut lip = 0.0f64;
        let mut hol = 0.0f64;
        for &(a, b) in &pairs {
            let dx = distance(&positions[a * d..(a + 1) * d], &positions[b * d..(b + 1) * d]);
            let df = distance(&inc[a * c..(a + 1) * c], &inc[b * c..(b + 1) * c]);
            lip = lip.max(df / dx);
            hol = hol.max(df / dx.powf(theta));
        }
        let n0 = sup;
        let n1 = sup.max(lip);
        let nt = sup.max(hol / 2f64.powf(1.0 - theta));
        nt <= 1.1 * n1.powf(theta) * n0.powf(1.0 - theta) + 1e-300
    }))
}
