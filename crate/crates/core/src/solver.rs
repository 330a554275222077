//! Frozen-flow solves, growth diagnostics and the McKean–Vlasov fixed point.
//!
//! The integrator is the one-step germ scheme
//! `Y_{k+1} = Y_k + (Γ_{t_k,t_{k+1}} ∗ μ_{t_k})(Y_k) + B_{t_k,t_{k+1}}`.
//! The convolution against `μ_{t_k}` is either summed atom by atom, or
//! computed on the spatial grid: atoms are deposited with cloud-in-cell
//! weights, convolved with the increment table by FFT, and the resulting
//! drift is interpolated at the query points.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::averaging::AveragedField;
use crate::error::{invalid, Error, Result};
use crate::fft::NdFft;
use crate::grid::{SpatialGrid, TimeGrid, MAX_DIM};
use crate::metrics::{flow_holder_seminorm, marginal_w1};
use crate::nlyi::{conv_eval, EmpiricalMeasureFlow};
use crate::paths::{holder_seminorm, SamplePath};
use crate::stats::norm;

/// Atom count above which [`ConvStrategy::Auto`] switches to binning.
pub const AUTO_BINNING_THRESHOLD: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvStrategy {
    Direct,
    Binned,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    pub picard_tol: f64,
    pub max_iters: usize,
    /// Constant `C` in the step bound `h̄`.
    pub step_constant: f64,
    pub seed: u64,
    pub strategy: ConvStrategy,
    /// Abort when `|Y| > blowup_factor · L`.
    pub blowup_factor: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            gamma: 0.75,
            beta: 0.45,
            eta: 0.49,
            picard_tol: 1e-6,
            max_iters: 50,
            step_constant: 1.0,
            seed: 0,
            strategy: ConvStrategy::Auto,
            blowup_factor: 10.0,
        }
    }
}

impl SolveConfig {
    /// Checks `γ ∈ (1/2, 1)`, `β ∈ (1 − γ, η ∧ γ)` and `(η ∧ γ) + γ > 1`.
    pub fn validate(&self) -> Result<()> {
        let (g, b, e) = (self.gamma, self.beta, self.eta);
        if !(g > 0.5 && g < 1.0) {
            return invalid(format!("gamma must lie in (1/2, 1), got {g}"));
        }
        if !(e > 0.0 && e <= 1.0) {
            return invalid(format!("eta must lie in (0, 1], got {e}"));
        }
        if e.min(g) + g <= 1.0 {
            return invalid(format!("(eta ∧ gamma) + gamma must exceed 1, got {}", e.min(g) + g));
        }
        if !(b > 1.0 - g && b < e.min(g)) {
            return invalid(format!("beta must lie in ({}, {}), got {b}", 1.0 - g, e.min(g)));
        }
        if !(self.picard_tol > 0.0) || self.max_iters == 0 {
            return invalid("picard_tol must be positive and max_iters at least 1");
        }
        if !(self.step_constant > 0.0) || !(self.blowup_factor > 0.0) {
            return invalid("step_constant and blowup_factor must be positive");
        }
        Ok(())
    }

    pub(crate) fn uses_binning(&self, n_atoms: usize) -> bool {
        match self.strategy {
            ConvStrategy::Direct => false,
            ConvStrategy::Binned => true,
            ConvStrategy::Auto => n_atoms > AUTO_BINNING_THRESHOLD,
        }
    }
}

/// `h̄ = (1/(2 C ‖Γ‖))^{1/γ} ∧ 1 ∧ T`.
pub fn bar_h(gamma_norm: f64, gamma: f64, c: f64, horizon: f64) -> Result<f64> {
    if !(gamma_norm >= 0.0) || !(gamma > 0.0) || !(c > 0.0) || !(horizon > 0.0) {
        return invalid("bar_h needs a nonnegative norm and positive gamma, C and T");
    }
    let cap = horizon.min(1.0);
    if gamma_norm == 0.0 {
        return Ok(cap);
    }
    Ok((1.0 / (2.0 * c * gamma_norm)).powf(1.0 / gamma).min(cap))
}

/// Grid-binned evaluation of `x ↦ (1/N) Σ_j Γ_{s,t}(x − a_j)`.
pub(crate) struct BinnedConv {
    grid: SpatialGrid,
    fft: NdFft,
    // node of the field sampled at each padded offset, None for padding
    offset_nodes: Vec<Option<usize>>,
    size: usize,
}

impl BinnedConv {
    pub fn new(grid: SpatialGrid) -> Self {
        let n = grid.n_cells();
        let d = grid.dim();
        let shape = vec![2 * n; d];
        let size: usize = shape.iter().product();
        let mut offset_nodes = Vec::with_capacity(size);
        let mut node_idx = [0usize; MAX_DIM];
        for m in 0..size {
            let mut rem = m;
            let mut pad = false;
            for a in (0..d).rev() {
                let ma = rem % (2 * n);
                rem /= 2 * n;
                if ma == 2 * n - 1 {
                    pad = true;
                }
                // offset o = ma − (n−1); node o + n/2 clamped into the grid
                let idx = ma as i64 - (n as i64 - 1) + (n / 2) as i64;
                node_idx[a] = idx.clamp(0, n as i64 - 1) as usize;
            }
            offset_nodes.push(if pad { None } else { Some(grid.flat_index(&node_idx[..d])) });
        }
        Self {
            grid,
            fft: NdFft::new(&shape),
            offset_nodes,
            size,
        }
    }

    /// Cloud-in-cell weights of the atoms on the nodes (each atom carries `1/N`).
    fn deposit(&self, atoms: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim();
        let n = g.n_cells();
        let h = g.spacing();
        let w = 1.0 / (atoms.len() / d) as f64;
        let mut out = vec![0.0; g.n_nodes()];
        for p in atoms.chunks(d) {
            let mut base = [0usize; MAX_DIM];
            let mut frac = [0.0; MAX_DIM];
            for a in 0..d {
                let u = ((p[a] + g.half_width()) / h).clamp(0.0, (n - 1) as f64);
                let i = (u.floor() as usize).min(n - 2);
                base[a] = i;
                frac[a] = u - i as f64;
            }
            for corner in 0..(1usize << d) {
                let mut weight = w;
                let mut flat = 0usize;
                for a in 0..d {
                    let bit = (corner >> (d - 1 - a)) & 1;
                    weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                    flat = flat * n + base[a] + bit;
                }
                out[flat] += weight;
            }
        }
        out
    }

    /// Drift `Σ_c w_c Γ_{s,t}(x_i − x_c)` at every node, `[node][comp]`.
    pub fn drift_nodes(&self, field: &AveragedField, s: usize, t: usize, atoms: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim();
        let n = g.n_cells();
        let c = field.components();
        let weights = self.deposit(atoms);
        let big_flat = |idx: &[usize]| idx.iter().fold(0usize, |acc, &i| acc * 2 * n + i);
        let mut w_hat = vec![Complex64::default(); self.size];
        let mut idx = [0usize; MAX_DIM];
        for (node, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                g.multi_index(node, &mut idx[..d]);
                w_hat[big_flat(&idx[..d])] = Complex64::new(w, 0.0);
            }
        }
        self.fft.forward(&mut w_hat);
        let inc = field.increment_nodes(s, t);
        let mut out = vec![0.0; g.n_nodes() * c];
        for comp in 0..c {
            let mut buf: Vec<Complex64> = self
                .offset_nodes
                .iter()
                .map(|o| Complex64::new(o.map_or(0.0, |node| inc[node * c + comp]), 0.0))
                .collect();
            self.fft.forward(&mut buf);
            buf.iter_mut().zip(&w_hat).for_each(|(a, b)| *a *= b);
            self.fft.inverse(&mut buf);
            for node in 0..g.n_nodes() {
                g.multi_index(node, &mut idx[..d]);
                for a in 0..d {
                    idx[a] += n - 1;
                }
                out[node * c + comp] = buf[big_flat(&idx[..d])].re;
            }
        }
        out
    }
}

/// Atoms sorted lexicographically so sums do not depend on their labelling.
fn canonical_atoms(atoms: &[f64], d: usize) -> Vec<f64> {
    let mut pts: Vec<&[f64]> = atoms.chunks(d).collect();
    pts.sort_by(|p, q| p.iter().zip(q.iter()).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    pts.concat()
}

/// Drift evaluator for one time step against a fixed set of atoms.
pub(crate) enum StepDrift {
    Zero,
    Direct { atoms: Vec<f64> },
    Binned { nodes: Vec<f64> },
}

impl StepDrift {
    pub fn new(field: &AveragedField, binned: Option<&BinnedConv>, k: usize, atoms: &[f64]) -> Self {
        if field.is_zero() {
            return StepDrift::Zero;
        }
        let atoms = canonical_atoms(atoms, field.dim());
        match binned {
            Some(b) => StepDrift::Binned {
                nodes: b.drift_nodes(field, k, k + 1, &atoms),
            },
            None => StepDrift::Direct { atoms },
        }
    }

    pub fn eval(&self, field: &AveragedField, k: usize, x: &[f64], out: &mut [f64]) {
        let c = field.components();
        match self {
            StepDrift::Zero => out[..c].iter_mut().for_each(|v| *v = 0.0),
            StepDrift::Direct { atoms } => conv_eval(field, atoms, k, k + 1, x, out),
            StepDrift::Binned { nodes } => {
                field.spatial_grid().interpolate(nodes, c, x, out);
            }
        }
    }
}

/// One explicit step for every input: `next_i = state_i + drift(state_i) − self_term + ΔB_i`.
pub(crate) fn advance(
    field: &AveragedField,
    drift: &StepDrift,
    k: usize,
    state: &[f64],
    b: &[SamplePath],
    self_term: &[f64],
    next: &mut [f64],
    limit: f64,
) -> Result<()> {
    let d = field.dim();
    let c = field.components();
    next.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let y = &state[i * d..(i + 1) * d];
        let mut v = [0.0; MAX_DIM];
        drift.eval(field, k, y, &mut v[..c]);
        let (b0, b1) = (b[i].at(k), b[i].at(k + 1));
        for a in 0..d {
            out[a] = y[a] + (v[a] - self_term[a]) + (b1[a] - b0[a]);
        }
    });
    match next.chunks(d).map(norm).enumerate().find(|(_, m)| !(*m <= limit)) {
        Some((i, magnitude)) => Err(Error::BlowUp {
            step: k + 1,
            time: field.time_grid().time(k + 1),
            magnitude,
            limit,
            particle: Some(i),
        }),
        None => Ok(()),
    }
}

/// Blow-up guard over a whole time-major trajectory of `m` inputs; used where no step loop runs.
pub(crate) fn guard_trajectory(field: &AveragedField, data: &[f64], m: usize, first_step: usize, limit: f64, named: bool) -> Result<()> {
    let d = field.dim();
    for (row, marginal) in data.chunks(m * d).enumerate().skip(1) {
        if let Some((i, magnitude)) = marginal.chunks(d).map(norm).enumerate().find(|(_, v)| !(*v <= limit)) {
            let step = first_step + row;
            return Err(Error::BlowUp {
                step,
                time: field.time_grid().time(step),
                magnitude,
                limit,
                particle: named.then_some(i),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_field_grid(field: &AveragedField, grid: &TimeGrid, dim: usize, what: &str) -> Result<()> {
    field.time_grid().check_same(grid, what)?;
    if dim != field.dim() {
        return Err(Error::GridMismatch(format!("{what}: dimension {dim} differs from the field's {}", field.dim())));
    }
    Ok(())
}

pub(crate) fn blowup_limit(field: &AveragedField, cfg: &SolveConfig) -> f64 {
    cfg.blowup_factor * field.spatial_grid().half_width()
}

/// Solve `Y_t = x + ∫_0^t (Γ_{dr} ∗ μ_r)(Y_r) + B_t` with the flow `μ` frozen.
pub fn solve_frozen(field: &AveragedField, x: &[f64], b: &SamplePath, mu: &EmpiricalMeasureFlow, cfg: &SolveConfig) -> Result<SamplePath> {
    let values = solve_frozen_from(field, 0, x, b, mu, cfg)?;
    SamplePath::new(*b.grid(), b.dim(), values)
}

/// Restart at grid index `start` from `y_start`; returns the values at indices `start..=n`.
pub fn solve_frozen_from(
    field: &AveragedField,
    start: usize,
    y_start: &[f64],
    b: &SamplePath,
    mu: &EmpiricalMeasureFlow,
    cfg: &SolveConfig,
) -> Result<Vec<f64>> {
    check_field_grid(field, b.grid(), b.dim(), "driving path")?;
    check_field_grid(field, mu.grid(), mu.dim(), "measure flow")?;
    if y_start.len() != field.dim() || start > field.time_grid().n_steps() {
        return invalid("start point does not match the field dimension or grid");
    }
    let d = field.dim();
    let n = field.time_grid().n_steps();
    if field.is_zero() {
        let b0 = b.at(start);
        let out: Vec<f64> = (start..=n).flat_map(|k| (0..d).map(move |a| y_start[a] + (b.at(k)[a] - b0[a]))).collect();
        guard_trajectory(field, &out, 1, start, blowup_limit(field, cfg), false)?;
        return Ok(out);
    }
    let binned = cfg.uses_binning(mu.n_atoms()).then(|| BinnedConv::new(*field.spatial_grid()));
    let limit = blowup_limit(field, cfg);
    let b = std::slice::from_ref(b);
    let zero = [0.0; MAX_DIM];
    let mut out = vec![0.0; (n + 1 - start) * d];
    out[..d].copy_from_slice(y_start);
    for k in start..n {
        let (done, rest) = out.split_at_mut((k + 1 - start) * d);
        let drift = StepDrift::new(field, binned.as_ref(), k, mu.marginal(k));
        advance(field, &drift, k, &done[(k - start) * d..], b, &zero, &mut rest[..d], limit).map_err(|e| match e {
            Error::BlowUp {
                step,
                time,
                magnitude,
                limit,
                ..
            } => Error::BlowUp {
                step,
                time,
                magnitude,
                limit,
                particle: None,
            },
            other => other,
        })?;
    }
    Ok(out)
}

/// One Picard sweep: every input solved against the frozen flow `mu`, all marched together.
fn picard_sweep(
    field: &AveragedField,
    x: &[f64],
    b: &[SamplePath],
    mu: &EmpiricalMeasureFlow,
    cfg: &SolveConfig,
) -> Result<EmpiricalMeasureFlow> {
    if field.is_zero() {
        let flow = drift_free_flow(x, b)?;
        guard_trajectory(field, flow.data(), b.len(), 0, blowup_limit(field, cfg), true)?;
        return Ok(flow);
    }
    let d = field.dim();
    let n = field.time_grid().n_steps();
    let limit = blowup_limit(field, cfg);
    let binned = cfg.uses_binning(mu.n_atoms()).then(|| BinnedConv::new(*field.spatial_grid()));
    let stride = b.len() * d;
    let mut data = vec![0.0; (n + 1) * stride];
    data[..stride].copy_from_slice(x);
    let zero = [0.0; MAX_DIM];
    for k in 0..n {
        let (done, rest) = data.split_at_mut((k + 1) * stride);
        let drift = StepDrift::new(field, binned.as_ref(), k, mu.marginal(k));
        advance(field, &drift, k, &done[k * stride..], b, &zero, &mut rest[..stride], limit)?;
    }
    EmpiricalMeasureFlow::from_marginals(*field.time_grid(), d, b.len(), data)
}

/// `sup_k W1(μ_{t_k}, ν_{t_k})` over every grid time.
pub fn flow_gap(mu: &EmpiricalMeasureFlow, nu: &EmpiricalMeasureFlow) -> Result<f64> {
    let gaps: Vec<f64> = (0..mu.grid().n_points())
        .into_par_iter()
        .map(|k| marginal_w1(mu.marginal(k), nu.marginal(k), mu.dim()))
        .collect::<Result<_>>()?;
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct MkvSolution {
    pub flow: EmpiricalMeasureFlow,
    /// `sup_t W1(μ^{(k+1)}_t, μ^{(k)}_t)` for each sweep.
    pub gaps: Vec<f64>,
    pub converged: bool,
}

impl MkvSolution {
    pub fn iterations(&self) -> usize {
        self.gaps.len()
    }
}

fn check_inputs(field: &AveragedField, x: &[f64], b: &[SamplePath]) -> Result<()> {
    let d = field.dim();
    if b.is_empty() {
        return Err(Error::Empty("McKean-Vlasov inputs"));
    }
    if x.len() != b.len() * d {
        return invalid(format!("{} initial values for {} driving paths in d = {d}", x.len() / d, b.len()));
    }
    for p in b {
        check_field_grid(field, p.grid(), p.dim(), "driving path")?;
    }
    Ok(())
}

/// Drift-free flow `{x_i + B_i}`.
pub fn drift_free_flow(x: &[f64], b: &[SamplePath]) -> Result<EmpiricalMeasureFlow> {
    let d = b.first().ok_or(Error::Empty("driving paths"))?.dim();
    let atoms: Vec<SamplePath> = b
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let shift = &x[i * d..(i + 1) * d];
            let values = p.values().chunks(d).flat_map(|v| v.iter().zip(shift).map(|(a, s)| a + s).collect::<Vec<_>>()).collect();
            SamplePath::new(*p.grid(), d, values)
        })
        .collect::<Result<_>>()?;
    EmpiricalMeasureFlow::new(&atoms)
}

/// Picard iteration `μ^{(k+1)} = law{S^{μ^{(k)}}(x_i, B_i)}` from `μ^{(0)} = law{x_i + B_i}`.
pub fn solve_mkv(field: &AveragedField, x: &[f64], b: &[SamplePath], cfg: &SolveConfig) -> Result<MkvSolution> {
    check_inputs(field, x, b)?;
    let initial = drift_free_flow(x, b)?;
    solve_mkv_from(field, x, b, initial, cfg)
}

/// Picard iteration from a caller-supplied initial flow.
pub fn solve_mkv_from(
    field: &AveragedField,
    x: &[f64],
    b: &[SamplePath],
    initial: EmpiricalMeasureFlow,
    cfg: &SolveConfig,
) -> Result<MkvSolution> {
    cfg.validate()?;
    check_inputs(field, x, b)?;
    check_field_grid(field, initial.grid(), initial.dim(), "initial flow")?;
    let mut current = initial;
    let mut gaps = Vec::new();
    for _ in 0..cfg.max_iters {
        let next = picard_sweep(field, x, b, &current, cfg)?;
        let gap = flow_gap(&next, &current)?;
        gaps.push(gap);
        current = next;
        if gap < cfg.picard_tol {
            return Ok(MkvSolution {
                flow: current,
                gaps,
                converged: true,
            });
        }
    }
    Ok(MkvSolution {
        flow: current,
        gaps,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub y_seminorm: f64,
    pub mu_seminorm: f64,
    pub b_seminorm: f64,
    pub gamma_norm: f64,
    /// `[Y]_β / ((1 + [μ]_β + [B]_η)(1 ∨ ‖Γ‖))`.
    pub ratio: f64,
}

/// Growth diagnostic for a frozen-flow solution; `gamma_norm` is the measured `‖Γ‖_{γ,α}`.
pub fn growth_check(y: &SamplePath, mu: &EmpiricalMeasureFlow, b: &SamplePath, gamma_norm: f64, cfg: &SolveConfig) -> Result<GrowthReport> {
    let y_semi = holder_seminorm(y, cfg.beta, 4096)?.seminorm;
    let mu_semi = flow_holder_seminorm(mu, cfg.beta)?.seminorm;
    let b_semi = holder_seminorm(b, cfg.eta.min(0.999), 4096)?.seminorm;
    let ratio = y_semi / ((1.0 + mu_semi + b_semi) * gamma_norm.max(1.0));
    if !ratio.is_finite() {
        return invalid("growth ratio is not finite");
    }
    Ok(GrowthReport {
        y_seminorm: y_semi,
        mu_seminorm: mu_semi,
        b_seminorm: b_semi,
        gamma_norm,
        ratio,
    })
}
