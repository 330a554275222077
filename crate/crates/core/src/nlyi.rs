//! Measure-dependent nonlinear Young integrals
//! `∫_s^t (Γ_{dr} ∗ μ_r)(Y_r)`, built from left-point germs
//! `Ξ_{u,v} = (Γ_{u,v} ∗ μ_u)(Y_u)` on dyadic partitions.

use crate::averaging::AveragedField;
use crate::error::{invalid, Error, Result};
use crate::grid::{TimeGrid, MAX_DIM};
use crate::metrics::{discrete_holder_norm, flow_difference_seminorm, flow_holder_seminorm_on, marginal_w1};
use crate::paths::{dyadic_lag_pairs, SamplePath};
use crate::stats::{distance, loglog_slope, norm};

/// `N` paths on a common grid, each carrying weight `1/N`.
///
/// Values are stored time-major, `[time][atom][component]`, so each marginal
/// `μ_t` is a contiguous block.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasureFlow {
    grid: TimeGrid,
    dim: usize,
    n_atoms: usize,
    data: Vec<f64>,
}

impl EmpiricalMeasureFlow {
    pub fn new(atoms: &[SamplePath]) -> Result<Self> {
        let first = atoms.first().ok_or(Error::Empty("atoms"))?;
        let grid = *first.grid();
        let dim = first.dim();
        for a in atoms {
            a.grid().check_same(&grid, "flow atoms")?;
            if a.dim() != dim {
                return Err(Error::GridMismatch("flow atoms have different dimensions".into()));
            }
        }
        let n = atoms.len();
        let mut data = vec![0.0; grid.n_points() * n * dim];
        for (i, a) in atoms.iter().enumerate() {
            for k in 0..grid.n_points() {
                data[(k * n + i) * dim..(k * n + i + 1) * dim].copy_from_slice(a.at(k));
            }
        }
        Ok(Self {
            grid,
            dim,
            n_atoms: n,
            data,
        })
    }

    pub fn from_marginals(grid: TimeGrid, dim: usize, n_atoms: usize, data: Vec<f64>) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::Empty("atoms"));
        }
        if data.len() != grid.n_points() * n_atoms * dim {
            return Err(Error::Format(format!(
                "flow has {} values, expected {}",
                data.len(),
                grid.n_points() * n_atoms * dim
            )));
        }
        Ok(Self {
            grid,
            dim,
            n_atoms,
            data,
        })
    }

    /// Single atom at `path`.
    pub fn dirac(path: &SamplePath) -> Self {
        Self::new(std::slice::from_ref(path)).expect("one atom is a valid flow")
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Atoms of `μ_{t_k}`, flattened `[atom][component]`.
    pub fn marginal(&self, k: usize) -> &[f64] {
        let w = self.n_atoms * self.dim;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn point(&self, k: usize, atom: usize) -> &[f64] {
        let base = (k * self.n_atoms + atom) * self.dim;
        &self.data[base..base + self.dim]
    }

    /// Time-major values of atom `i`.
    pub fn atom_values(&self, i: usize) -> Vec<f64> {
        (0..self.grid.n_points()).flat_map(|k| self.point(k, i).iter().copied()).collect()
    }

    pub fn atom(&self, i: usize) -> SamplePath {
        SamplePath::new(self.grid, self.dim, self.atom_values(i)).expect("layout is consistent")
    }

    pub fn atoms(&self) -> Vec<SamplePath> {
        (0..self.n_atoms).map(|i| self.atom(i)).collect()
    }

    /// Flow with atoms reordered so that new atom `j` is old atom `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_atoms {
            return invalid("permutation length differs from atom count");
        }
        let d = self.dim;
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..self.grid.n_points() {
            for &p in perm {
                data.extend_from_slice(self.point(k, p));
            }
        }
        Self::from_marginals(self.grid, d, self.n_atoms, data)
    }

    /// Largest atom magnitude over all times.
    pub fn sup_norm(&self) -> f64 {
        self.data.chunks(self.dim).map(norm).fold(0.0, f64::max)
    }
}

/// `(Γ_{t_s,t_t} ∗ μ)(x) = (1/N) Σ_j Γ_{t_s,t_t}(x − a_j)` for atoms `a_j` (flat `[atom][comp]`).
pub fn conv_eval(field: &AveragedField, atoms: &[f64], s: usize, t: usize, x: &[f64], out: &mut [f64]) {
    let d = field.dim();
    let c = field.components();
    out[..c].iter_mut().for_each(|v| *v = 0.0);
    if field.is_zero() || s == t {
        return;
    }
    let n = atoms.len() / d;
    if d == 1 {
        conv_eval_1d(field, atoms, s, t, x[0], &mut out[..c]);
        let inv = 1.0 / n as f64;
        out[..c].iter_mut().for_each(|o| *o *= inv);
        return;
    }
    let mut y = [0.0; MAX_DIM];
    let mut v = [0.0; MAX_DIM];
    for a in atoms.chunks(d) {
        for i in 0..d {
            y[i] = x[i] - a[i];
        }
        field.increment(s, t, &y[..d], &mut v[..c]);
        for i in 0..c {
            out[i] += v[i];
        }
    }
    let inv = 1.0 / n as f64;
    out[..c].iter_mut().for_each(|o| *o *= inv);
}

/// Same arithmetic as `AveragedField::increment` in one dimension, without
/// the per-query overhead.
fn conv_eval_1d(field: &AveragedField, atoms: &[f64], s: usize, t: usize, x: f64, out: &mut [f64]) {
    let c = out.len();
    let g = field.spatial_grid();
    let (h, l, n) = (g.spacing(), g.half_width(), g.n_cells());
    let top = (n - 1) as f64;
    let (hi, lo) = (field.cumulative_at(t), field.cumulative_at(s));
    let mut clamps = 0u64;
    let mut v = [0.0; MAX_DIM];
    for &a in atoms {
        let mut u = (x - a + l) / h;
        if !(u >= 0.0) {
            u = 0.0;
            clamps += 1;
        } else if u > top {
            u = top;
            clamps += 1;
        }
        let i = (u.floor() as usize).min(n - 2);
        let f = u - i as f64;
        let j = i * c;
        for k in 0..c {
            let p = hi[j + k] - lo[j + k];
            v[k] = p + f * ((hi[j + c + k] - lo[j + c + k]) - p);
        }
        for k in 0..c {
            out[k] += v[k];
        }
    }
    if clamps > 0 {
        field.record_clamps(clamps);
    }
}

fn check_inputs(field: &AveragedField, y: &SamplePath, mu: &EmpiricalMeasureFlow) -> Result<()> {
    field.time_grid().check_same(y.grid(), "integrand path")?;
    field.time_grid().check_same(mu.grid(), "measure flow")?;
    if y.dim() != field.dim() || mu.dim() != field.dim() {
        return Err(Error::GridMismatch("field, path and flow dimensions differ".into()));
    }
    Ok(())
}

fn window(field: &AveragedField, s: f64, t: f64) -> Result<(usize, usize)> {
    let i = field.time_grid().index_of(s)?;
    let j = field.time_grid().index_of(t)?;
    if i > j {
        return invalid(format!("window start {s} is after its end {t}"));
    }
    Ok((i, j))
}

/// Left-point germ `Ξ_{u,v}` on grid indices.
pub fn germ(field: &AveragedField, y: &SamplePath, mu: &EmpiricalMeasureFlow, u: usize, v: usize, out: &mut [f64]) {
    conv_eval(field, mu.marginal(u), u, v, y.at(u), out);
}

/// Riemann sum over `2^level` equal blocks of `[i, j]` (grid indices).
pub fn nly_integral_by_index(
    field: &AveragedField,
    y: &SamplePath,
    mu: &EmpiricalMeasureFlow,
    i: usize,
    j: usize,
    level: u32,
) -> Result<Vec<f64>> {
    check_inputs(field, y, mu)?;
    let blocks = 1usize.checked_shl(level).unwrap_or(0);
    let span = j - i;
    if blocks == 0 || (span > 0 && (span % blocks != 0 || span < blocks)) {
        return invalid(format!("level {level} does not fit {span} grid steps"));
    }
    let c = field.components();
    let mut total = vec![0.0; c];
    if span == 0 {
        return Ok(total);
    }
    let width = span / blocks;
    let mut term = vec![0.0; c];
    for b in 0..blocks {
        let u = i + b * width;
        germ(field, y, mu, u, u + width, &mut term);
        for (acc, v) in total.iter_mut().zip(&term) {
            *acc += v;
        }
    }
    Ok(total)
}

/// `Σ_{[u,v] ∈ D} (Γ_{u,v} ∗ μ_u)(Y_u)` over the dyadic partition of `[s, t]` at `level`.
pub fn nly_integral(field: &AveragedField, y: &SamplePath, mu: &EmpiricalMeasureFlow, s: f64, t: f64, level: u32) -> Result<Vec<f64>> {
    let (i, j) = window(field, s, t)?;
    nly_integral_by_index(field, y, mu, i, j, level)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SewingReport {
    pub levels: Vec<u32>,
    /// Sub-window lengths `2^{−ℓ}(t − s)`.
    pub window_lengths: Vec<f64>,
    /// Mean over sub-windows of `|I_ref − Ξ|`.
    pub errors: Vec<f64>,
    /// Log-log slope of `errors` against `window_lengths`; NaN when exact.
    pub fitted_slope: f64,
    /// `|I_{ℓ+1} − I_ℓ|` on the whole window, for consecutive levels.
    pub refinement_gaps: Vec<f64>,
    /// Log-log slope of `refinement_gaps` against the mesh; NaN when exact.
    pub self_convergence_slope: f64,
    /// All germ errors vanish to roundoff.
    pub exact: bool,
}

/// Sewing-error rate of the one-block germ against the finest Riemann sum.
///
/// The reference on every sub-window is the left-point sum at the grid step.
pub fn sewing_rate(
    field: &AveragedField,
    y: &SamplePath,
    mu: &EmpiricalMeasureFlow,
    s: f64,
    t: f64,
    levels: &[u32],
) -> Result<SewingReport> {
    check_inputs(field, y, mu)?;
    let (i, j) = window(field, s, t)?;
    let span = j - i;
    if span == 0 || levels.is_empty() {
        return invalid("sewing study needs a nonempty window and levels");
    }
    let c = field.components();
    // prefix sums of the step germs give the reference on any sub-window
    let mut prefix = vec![0.0; (span + 1) * c];
    let mut term = vec![0.0; c];
    for k in 0..span {
        germ(field, y, mu, i + k, i + k + 1, &mut term);
        for a in 0..c {
            prefix[(k + 1) * c + a] = prefix[k * c + a] + term[a];
        }
    }
    let reference = |u: usize, v: usize| -> Vec<f64> {
        (0..c).map(|a| prefix[(v - i) * c + a] - prefix[(u - i) * c + a]).collect()
    };
    let scale = norm(&reference(i, j)).max(1e-300);
    let dt = field.time_grid().dt();
    let mut window_lengths = Vec::new();
    let mut errors = Vec::new();
    for &level in levels {
        let blocks = 1usize << level;
        if span % blocks != 0 || span < blocks {
            return invalid(format!("level {level} does not fit {span} grid steps"));
        }
        let width = span / blocks;
        let mut acc = 0.0;
        for b in 0..blocks {
            let u = i + b * width;
            germ(field, y, mu, u, u + width, &mut term);
            acc += distance(&reference(u, u + width), &term);
        }
        window_lengths.push(width as f64 * dt);
        errors.push(acc / blocks as f64);
    }
    let mut gaps = Vec::new();
    let mut meshes = Vec::new();
    for w in levels.windows(2) {
        let a = nly_integral_by_index(field, y, mu, i, j, w[0])?;
        let b = nly_integral_by_index(field, y, mu, i, j, w[1])?;
        gaps.push(distance(&a, &b));
        meshes.push((span >> w[0]) as f64 * dt);
    }
    let tiny = 1e-13 * scale.max(1.0);
    let exact = errors.iter().chain(&gaps).all(|e| *e <= tiny);
    let (fitted_slope, self_convergence_slope) = if exact {
        (f64::NAN, f64::NAN)
    } else {
        (loglog_slope(&window_lengths, &errors), loglog_slope(&meshes, &gaps))
    };
    Ok(SewingReport {
        levels: levels.to_vec(),
        window_lengths,
        errors,
        fitted_slope,
        refinement_gaps: gaps,
        self_convergence_slope,
        exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    pub gamma: f64,
    pub beta: f64,
    /// Measured `‖Γ‖_{γ,α}`.
    pub gamma_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityGap {
    pub lhs: f64,
    /// Path-difference, flow-difference and endpoint terms of the bound.
    pub rhs_terms: [f64; 3],
    /// `lhs / Σ rhs_terms` (0 when both vanish).
    pub ratio: f64,
}

/// Integral difference on `[s, t]` against the three terms of its stability bound.
///
/// With `M1 = [μ]_β ∨ [μ̃]_β` and `M2 = [Y]_β ∨ [Ỹ]_β` on `[s, t]`:
/// `|t−s|^{γ+β}‖Γ‖(1+M1+M2)‖Y−Ỹ‖_{C^β}`, `|t−s|^{γ+β}‖Γ‖(1+M2)|||μ;μ̃|||_β`
/// and `|t−s|^γ‖Γ‖(|Y_t−Ỹ_t| + W1(μ_t, μ̃_t))`. All seminorms use dyadic-lag
/// pairs inside the window; the integrals use the grid step.
pub fn stability_gap(
    field: &AveragedField,
    first: (&SamplePath, &EmpiricalMeasureFlow),
    second: (&SamplePath, &EmpiricalMeasureFlow),
    s: f64,
    t: f64,
    params: StabilityParams,
) -> Result<StabilityGap> {
    let (y, mu) = first;
    let (y2, mu2) = second;
    check_inputs(field, y, mu)?;
    check_inputs(field, y2, mu2)?;
    let (i, j) = window(field, s, t)?;
    if i == j {
        return invalid("stability gap needs a nonempty window");
    }
    let a = step_sum(field, y, mu, i, j);
    let b = step_sum(field, y2, mu2, i, j);
    let lhs = distance(&a, &b);
    let d = field.dim();
    let dt = field.time_grid().dt();
    let len = (j - i) as f64 * dt;
    let (gm, gamma, beta) = (params.gamma_norm, params.gamma, params.beta);
    let window_values = |p: &SamplePath| p.values()[i * d..(j + 1) * d].to_vec();
    let seminorm = |v: &[f64]| {
        let mut best = 0.0f64;
        for (u, w) in dyadic_lag_pairs(0, j - i) {
            best = best.max(distance(&v[u * d..(u + 1) * d], &v[w * d..(w + 1) * d]) / ((w - u) as f64 * dt).powf(beta));
        }
        best
    };
    let m2 = seminorm(&window_values(y)).max(seminorm(&window_values(y2)));
    let m1 = flow_holder_seminorm_on(mu, beta, i, j)?
        .seminorm
        .max(flow_holder_seminorm_on(mu2, beta, i, j)?.seminorm);
    let diff: Vec<f64> = window_values(y).iter().zip(window_values(y2)).map(|(p, q)| p - q).collect();
    let path_norm = discrete_holder_norm(&diff, d, dt, beta);
    let flow_norm = marginal_w1(mu.marginal(i), mu2.marginal(i), d)? + flow_difference_seminorm(mu, mu2, beta, i, j)?;
    let end_gap = distance(y.at(j), y2.at(j)) + marginal_w1(mu.marginal(j), mu2.marginal(j), d)?;
    let rhs_terms = [
        len.powf(gamma + beta) * gm * (1.0 + m1 + m2) * path_norm,
        len.powf(gamma + beta) * gm * (1.0 + m2) * flow_norm,
        len.powf(gamma) * gm * end_gap,
    ];
    let total: f64 = rhs_terms.iter().sum();
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / total };
    Ok(StabilityGap { lhs, rhs_terms, ratio })
}

fn step_sum(field: &AveragedField, y: &SamplePath, mu: &EmpiricalMeasureFlow, i: usize, j: usize) -> Vec<f64> {
    let c = field.components();
    let mut total = vec![0.0; c];
    let mut term = vec![0.0; c];
    for k in i..j {
        germ(field, y, mu, k, k + 1, &mut term);
        for (acc, v) in total.iter_mut().zip(&term) {
            *acc += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;

    fn setup() -> (SpatialGrid, TimeGrid) {
        (SpatialGrid::new(4.0, 128, 1).unwrap(), TimeGrid::new(1.0, 64).unwrap())
    }

    #[test]
    fn dirac_at_origin_returns_field() {
        let (sg, tg) = setup();
        let f = AveragedField::from_fn(sg, tg, |t, x, o| o[0] = t * (x[0] * 0.5).sin());
        let mut a = [0.0];
        let mut b = [0.0];
        conv_eval(&f, &[0.0], 3, 40, &[0.7], &mut a);
        f.increment(3, 40, &[0.7], &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn three_atom_average() {
        let (sg, tg) = setup();
        let f = AveragedField::from_fn(sg, tg, |t, x, o| o[0] = t * x[0] * x[0]);
        let atoms = [0.25, -0.5, 1.0];
        let mut got = [0.0];
        conv_eval(&f, &atoms, 0, 64, &[0.5], &mut got);
        let mut expect = 0.0;
        for a in atoms {
            let mut v = [0.0];
            f.increment(0, 64, &[0.5 - a], &mut v);
            expect += v[0];
        }
        assert!((got[0] - expect / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_drift_telescopes() {
        let (sg, tg) = setup();
        let f = AveragedField::from_fn(sg, tg, |t, _, o| o[0] = 1.5 * t);
        let y = SamplePath::from_fn(tg, 1, |t, x| x[0] = t.sin());
        let mu = EmpiricalMeasureFlow::dirac(&SamplePath::zeros(tg, 1));
        for level in 0..=5 {
            let v = nly_integral(&f, &y, &mu, 0.25, 0.75, level).unwrap();
            assert!((v[0] - 0.75).abs() < 1e-12);
        }
        assert!(nly_integral(&f, &y, &mu, 0.0, 1.0, 7).is_err());
        let rep = sewing_rate(&f, &y, &mu, 0.0, 1.0, &[1, 2, 3]).unwrap();
        assert!(rep.exact && rep.fitted_slope.is_nan());
    }

    #[test]
    fn identical_inputs_have_no_gap() {
        let (sg, tg) = setup();
        let f = AveragedField::from_fn(sg, tg, |t, x, o| o[0] = t * x[0].cos());
        let y = SamplePath::from_fn(tg, 1, |t, x| x[0] = 0.3 * t);
        let mu = EmpiricalMeasureFlow::new(&[y.clone(), SamplePath::zeros(tg, 1)]).unwrap();
        let p = StabilityParams {
            gamma: 0.75,
            beta: 0.45,
            gamma_norm: 1.0,
        };
        let gap = stability_gap(&f, (&y, &mu), (&y, &mu), 0.0, 1.0, p).unwrap();
        assert_eq!(gap.lhs, 0.0);
        assert_eq!(gap.ratio, 0.0);
    }

    #[test]
    fn flow_layout_round_trips() {
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let a = SamplePath::from_fn(tg, 2, |t, x| {
            x[0] = t;
            x[1] = -t
        });
        let b = SamplePath::constant(tg, &[1.0, 2.0]);
        let flow = EmpiricalMeasureFlow::new(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(flow.atom(0), a);
        assert_eq!(flow.atom(1), b);
        assert_eq!(flow.marginal(4), &[1.0, -1.0, 1.0, 2.0]);
        let swapped = flow.permuted(&[1, 0]).unwrap();
        assert_eq!(swapped.atom(0), b);
    }
}
