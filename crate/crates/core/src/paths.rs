//! Sample paths, noise generators and Hölder diagnostics.
//!
//! Fractional Brownian motion is generated exactly on the grid by circulant
//! embedding of the fractional Gaussian noise covariance (Davies–Harte, in the
//! Wood–Chan form). Grids whose step count is not a power of two fall back to
//! a Cholesky factorisation of the fBm covariance for up to 2^12 steps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::{distance, loglog_slope};

/// Largest grid for the Cholesky fallback.
pub const CHOLESKY_MAX_STEPS: usize = 1 << 12;

/// Above this many points the Hölder sup is taken over a sampled pair set.
pub const EXACT_PAIRS_MAX_STEPS: usize = 1 << 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Fbm { hurst: f64 },
    Brownian,
    Zero,
}

impl NoiseKind {
    pub fn fbm(hurst: f64) -> Self {
        NoiseKind::Fbm { hurst }
    }
}

/// A path on a uniform time grid with values in R^d, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("path dimension must be positive");
        }
        if values.len() != grid.n_points() * dim {
            return Err(Error::Format(format!(
                "path has {} values, expected {} x {}",
                values.len(),
                grid.n_points(),
                dim
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.n_points() * dim],
        }
    }

    pub fn constant(grid: TimeGrid, point: &[f64]) -> Self {
        let dim = point.len();
        let values = (0..grid.n_points()).flat_map(|_| point.iter().copied()).collect();
        Self { grid, dim, values }
    }

    /// User-supplied path sampled from `f(t, out)`.
    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut path = Self::zeros(grid, dim);
        for k in 0..grid.n_points() {
            let t = grid.time(k);
            f(t, &mut path.values[k * dim..(k + 1) * dim]);
        }
        path
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.grid.n_points()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn zip_with(&self, other: &SamplePath, f: impl Fn(f64, f64) -> f64) -> Result<SamplePath> {
        self.grid.check_same(&other.grid, "path arithmetic")?;
        if self.dim != other.dim {
            return Err(Error::GridMismatch(format!("path dimensions {} vs {}", self.dim, other.dim)));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect();
        Ok(SamplePath {
            grid: self.grid,
            dim: self.dim,
            values,
        })
    }

    pub fn add(&self, other: &SamplePath) -> Result<SamplePath> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SamplePath) -> Result<SamplePath> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, factor: f64) -> SamplePath {
        SamplePath {
            grid: self.grid,
            dim: self.dim,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Every `factor`-th point, on the coarsened grid.
    pub fn coarsen(&self, factor: usize) -> Result<SamplePath> {
        let grid = self.grid.coarsen(factor)?;
        let values = (0..grid.n_points())
            .flat_map(|k| self.at(k * factor).iter().copied())
            .collect();
        Ok(SamplePath {
            grid,
            dim: self.dim,
            values,
        })
    }

    /// Largest Euclidean magnitude over the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.dim)
            .map(crate::stats::norm)
            .fold(0.0, f64::max)
    }
}

/// Circulant-embedding sampler for fractional Gaussian noise on `n` steps.
pub struct FbmGenerator {
    hurst: f64,
    n: usize,
    step_scale: f64,
    sqrt_eigen: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FbmGenerator {
    pub fn new(hurst: f64, grid: &TimeGrid) -> Result<Self> {
        check_hurst(hurst)?;
        let n = grid.n_steps();
        let m = 2 * n;
        let autocov = |k: usize| {
            let k = k as f64;
            let h2 = 2.0 * hurst;
            0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
        };
        let mut row = vec![Complex64::default(); m];
        for k in 0..=n {
            row[k] = Complex64::new(autocov(k), 0.0);
        }
        for k in 1..n {
            row[m - k] = row[k];
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        fft.process(&mut row);
        let max = row.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let mut sqrt_eigen = Vec::with_capacity(m);
        for (index, z) in row.iter().enumerate() {
            // roundoff-level negatives are zero eigenvalues
            if z.re < -1e-10 * max {
                return Err(Error::NegativeEigenvalue { index, value: z.re });
            }
            sqrt_eigen.push((z.re.max(0.0) / m as f64).sqrt());
        }
        Ok(Self {
            hurst,
            n,
            step_scale: grid.dt().powf(hurst),
            sqrt_eigen,
            fft,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// One fGn sample of length `n`, scaled to the grid step.
    pub fn sample_increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w: Vec<Complex64> = self
            .sqrt_eigen
            .iter()
            .map(|s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex64::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut w);
        w[..self.n].iter().map(|z| z.re * self.step_scale).collect()
    }
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return invalid(format!("Hurst parameter must lie in (0,1), got {hurst}"));
    }
    Ok(())
}

enum Method {
    CirculantFbm(FbmGenerator),
    CholeskyFbm(DMatrix<f64>),
    Brownian,
    Zero,
}

/// Reusable sampler for one noise kind on one grid; draws are addressed by `(seed, stream)`.
pub struct NoiseSampler {
    grid: TimeGrid,
    dim: usize,
    method: Method,
}

impl NoiseSampler {
    pub fn new(kind: NoiseKind, dim: usize, grid: TimeGrid) -> Result<Self> {
        if dim == 0 {
            return invalid("noise dimension must be positive");
        }
        let method = match kind {
            NoiseKind::Zero => Method::Zero,
            NoiseKind::Brownian => Method::Brownian,
            NoiseKind::Fbm { hurst } => {
                check_hurst(hurst)?;
                if grid.is_dyadic() {
                    Method::CirculantFbm(FbmGenerator::new(hurst, &grid)?)
                } else if grid.n_steps() <= CHOLESKY_MAX_STEPS {
                    Method::CholeskyFbm(fbm_cholesky_factor(hurst, &grid)?)
                } else {
                    return invalid(format!(
                        "fBm needs a power-of-two step count above {CHOLESKY_MAX_STEPS}, got {}",
                        grid.n_steps()
                    ));
                }
            }
        };
        Ok(Self { grid, dim, method })
    }

    pub fn sample(&self, seed: u64, stream: u64) -> SamplePath {
        let mut path = SamplePath::zeros(self.grid, self.dim);
        let n = self.grid.n_steps();
        let d = self.dim;
        let mut rng = stream_rng(seed, stream);
        match &self.method {
            Method::Zero => {}
            Method::Brownian => {
                let sd = self.grid.dt().sqrt();
                for c in 0..d {
                    let mut acc = 0.0;
                    for k in 1..=n {
                        let z: f64 = rng.sample(StandardNormal);
                        acc += sd * z;
                        path.values[k * d + c] = acc;
                    }
                }
            }
            Method::CirculantFbm(generator) => {
                for c in 0..d {
                    let incs = generator.sample_increments(&mut rng);
                    let mut acc = 0.0;
                    for (k, inc) in incs.iter().enumerate() {
                        acc += inc;
                        path.values[(k + 1) * d + c] = acc;
                    }
                }
            }
            Method::CholeskyFbm(factor) => {
                for c in 0..d {
                    let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let v = factor * xi;
                    for k in 0..n {
                        path.values[(k + 1) * d + c] = v[k];
                    }
                }
            }
        }
        path
    }
}

fn fbm_cholesky_factor(hurst: f64, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    let n = grid.n_steps();
    let h2 = 2.0 * hurst;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let s = grid.time(i + 1);
        let t = grid.time(j + 1);
        0.5 * (s.powf(h2) + t.powf(h2) - (t - s).abs().powf(h2))
    });
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidParameter("fBm covariance is not positive definite".into()))
}

/// Covariance of fBm: `½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.abs().powf(h2) + t.abs().powf(h2) - (t - s).abs().powf(h2))
}

/// Generate a noise path deterministically from `(kind, d, grid, seed)`.
pub fn gen_noise(kind: NoiseKind, dim: usize, grid: TimeGrid, seed: u64) -> Result<SamplePath> {
    Ok(NoiseSampler::new(kind, dim, grid)?.sample(seed, stream_id(purpose::NOISE, 0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderEstimate {
    pub seminorm: f64,
    pub fitted_exponent: f64,
    pub lags_used: Vec<f64>,
}

/// Every pair `(a, a + 2^j)` inside `[from, to]`, for all `j` with `2^j ≤ to − from`.
pub fn dyadic_lag_pairs(from: usize, to: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut lag = 1;
    while from + lag <= to {
        pairs.extend((from..=to - lag).map(|a| (a, a + lag)));
        lag *= 2;
    }
    pairs
}

/// Index pairs over which the discrete Hölder sup is evaluated.
#[derive(Debug, Clone)]
pub(crate) enum PairSet {
    All,
    Sampled(Vec<(usize, usize)>),
}

impl PairSet {
    /// All pairs for small grids; otherwise every dyadic-lag pair plus `budget` random pairs.
    pub fn for_steps(n_steps: usize, budget: usize) -> Self {
        if n_steps <= EXACT_PAIRS_MAX_STEPS {
            return PairSet::All;
        }
        let mut pairs = dyadic_lag_pairs(0, n_steps);
        let mut rng = stream_rng(0x5eed_0f_9a17 ^ n_steps as u64, stream_id(purpose::PAIRS, 0));
        for _ in 0..budget {
            let a = rng.random_range(0..=n_steps);
            let b = rng.random_range(0..=n_steps);
            if a != b {
                pairs.push((a.min(b), a.max(b)));
            }
        }
        PairSet::Sampled(pairs)
    }

    pub fn for_each(&self, n_steps: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            PairSet::All => {
                for i in 0..n_steps {
                    for j in i + 1..=n_steps {
                        f(i, j);
                    }
                }
            }
            PairSet::Sampled(pairs) => pairs.iter().for_each(|&(i, j)| f(i, j)),
        }
    }
}

/// `sup |X_t − X_s| / |t − s|^β` over the pair set, with `values` time-major.
pub(crate) fn seminorm_over_pairs(values: &[f64], dim: usize, grid: &TimeGrid, beta: f64, pairs: &PairSet) -> f64 {
    let n = grid.n_steps();
    let dt = grid.dt();
    let inv_pow: Vec<f64> = (0..=n).map(|l| if l == 0 { 0.0 } else { (l as f64 * dt).powf(-beta) }).collect();
    let mut best = 0.0f64;
    pairs.for_each(n, |i, j| {
        let d = distance(&values[i * dim..(i + 1) * dim], &values[j * dim..(j + 1) * dim]);
        let r = d * inv_pow[j - i];
        if r > best {
            best = r;
        }
    });
    best
}

/// Root-mean-square increment at each dyadic lag in `[min_lag, max_lag]`.
pub(crate) fn rms_increments(path: &SamplePath, min_lag: f64, max_lag: f64) -> (Vec<f64>, Vec<f64>) {
    let grid = path.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut lags = Vec::new();
    let mut rms = Vec::new();
    let mut lag = 1usize;
    while lag <= n {
        let l = lag as f64 * dt;
        if l >= min_lag * (1.0 - 1e-9) && l <= max_lag * (1.0 + 1e-9) {
            let mut acc = 0.0;
            let count = n + 1 - lag;
            for k in 0..count {
                let dist = distance(path.at(k), path.at(k + lag));
                acc += dist * dist;
            }
            lags.push(l);
            rms.push((acc / count as f64).sqrt());
        }
        lag *= 2;
    }
    (lags, rms)
}

/// Discrete β-Hölder seminorm plus a fitted regularity exponent.
///
/// The exponent is the log-log slope of the root-mean-square increment
/// against the lag, over dyadic lags from one step up to `T/8`.
pub fn holder_seminorm(path: &SamplePath, beta: f64, pair_budget: usize) -> Result<HolderEstimate> {
    let grid = path.grid();
    let max_lag = (grid.horizon() / 8.0).max(grid.dt());
    holder_seminorm_with_lags(path, beta, pair_budget, grid.dt(), max_lag)
}

pub fn holder_seminorm_with_lags(
    path: &SamplePath,
    beta: f64,
    pair_budget: usize,
    min_lag: f64,
    max_lag: f64,
) -> Result<HolderEstimate> {
    if path.is_empty() {
        return Err(Error::Empty("path"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return invalid(format!("Hölder exponent must lie in (0,1), got {beta}"));
    }
    let grid = path.grid();
    let pairs = PairSet::for_steps(grid.n_steps(), pair_budget);
    let seminorm = seminorm_over_pairs(path.values(), path.dim(), grid, beta, &pairs);
    let (lags, rms) = rms_increments(path, min_lag, max_lag);
    Ok(HolderEstimate {
        seminorm,
        fitted_exponent: loglog_slope(&lags, &rms),
        lags_used: lags,
    })
}

/// Largest β-seminorm over the windows `[t, t+h]`, `t` on the grid.
pub fn max_window_seminorm(path: &SamplePath, alpha: f64, h: f64) -> Result<f64> {
    let width = window_steps(path.grid(), h)?;
    let mut worst = 0.0f64;
    for_each_window(path, alpha, width, |_, s| worst = worst.max(s));
    Ok(worst)
}

fn window_steps(grid: &TimeGrid, h: f64) -> Result<usize> {
    let u = h / grid.dt();
    let w = u.round();
    if !(w >= 1.0) || (u - w).abs() > 1e-9 * w || h > grid.horizon() * (1.0 + 1e-12) {
        return invalid(format!("window {h} must be a positive multiple of dt = {} not exceeding T", grid.dt()));
    }
    Ok(w as usize)
}

fn for_each_window(path: &SamplePath, alpha: f64, width: usize, mut f: impl FnMut(usize, f64)) {
    let grid = path.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let d = path.dim();
    let inv_pow: Vec<f64> = (0..=width).map(|l| if l == 0 { 0.0 } else { (l as f64 * dt).powf(-alpha) }).collect();
    for start in 0..=(n - width) {
        let mut best = 0.0f64;
        for i in start..start + width {
            let xi = &path.values()[i * d..(i + 1) * d];
            for j in i + 1..=start + width {
                let r = distance(xi, path.at(j)) * inv_pow[j - i];
                if r > best {
                    best = r;
                }
            }
        }
        f(start, best);
    }
}

/// Checks the local-to-global Hölder bound `[X]_α ≤ M (1 ∨ 2h^{α−1}) T^{1−α}`.
///
/// The local hypothesis `[X]_{α;[t,t+h]} ≤ M` is re-verified on every grid
/// window first; a violating window is reported as an error.
pub fn local_to_global_check(path: &SamplePath, alpha: f64, h: f64, m: f64) -> Result<bool> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("α must lie in (0,1), got {alpha}"));
    }
    let grid = *path.grid();
    let width = window_steps(&grid, h)?;
    let mut violation = None;
    for_each_window(path, alpha, width, |start, s| {
        if violation.is_none() && s > m * (1.0 + 1e-12) {
            violation = Some((start, s));
        }
    });
    if let Some((start, seminorm)) = violation {
        return Err(Error::LocalBoundViolated {
            start: grid.time(start),
            end: grid.time(start + width),
            seminorm,
            bound: m,
        });
    }
    let bound = local_to_global_bound(m, alpha, h, grid.horizon());
    let pairs = PairSet::for_steps(grid.n_steps(), 4096);
    let global = seminorm_over_pairs(path.values(), path.dim(), &grid, alpha, &pairs);
    Ok(global <= bound * (1.0 + 1e-12))
}

pub fn local_to_global_bound(m: f64, alpha: f64, h: f64, horizon: f64) -> f64 {
    m * f64::max(1.0, 2.0 * h.powf(alpha - 1.0)) * horizon.powf(1.0 - alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn zero_noise_is_zero() {
        let p = gen_noise(NoiseKind::Zero, 2, unit_grid(64), 7).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fbm_starts_at_zero_and_is_deterministic() {
        let g = unit_grid(256);
        let a = gen_noise(NoiseKind::fbm(0.3), 2, g, 11).unwrap();
        let b = gen_noise(NoiseKind::fbm(0.3), 2, g, 11).unwrap();
        let c = gen_noise(NoiseKind::fbm(0.3), 2, g, 12).unwrap();
        assert_eq!(a.at(0), &[0.0, 0.0]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_hurst_and_large_non_dyadic_grids() {
        assert!(gen_noise(NoiseKind::fbm(0.0), 1, unit_grid(64), 0).is_err());
        assert!(gen_noise(NoiseKind::fbm(1.0), 1, unit_grid(64), 0).is_err());
        assert!(gen_noise(NoiseKind::fbm(0.4), 1, unit_grid(5000), 0).is_err());
        // Cholesky fallback for small non-dyadic grids
        let p = gen_noise(NoiseKind::fbm(0.4), 1, unit_grid(100), 0).unwrap();
        assert_eq!(p.at(0), &[0.0]);
    }

    #[test]
    fn holder_of_linear_path() {
        let p = SamplePath::from_fn(unit_grid(256), 1, |t, x| x[0] = t);
        let est = holder_seminorm(&p, 0.5, 0).unwrap();
        assert!((est.seminorm - 1.0).abs() < 1e-12);
        assert!((est.fitted_exponent - 1.0).abs() < 1e-9);
    }

    #[test]
    fn holder_of_constant_path() {
        let p = SamplePath::constant(unit_grid(64), &[3.0]);
        let est = holder_seminorm(&p, 0.3, 0).unwrap();
        assert_eq!(est.seminorm, 0.0);
        assert!(est.fitted_exponent.is_nan());
    }

    #[test]
    fn holder_rejects_bad_beta() {
        let p = SamplePath::zeros(unit_grid(8), 1);
        assert!(holder_seminorm(&p, 1.0, 0).is_err());
    }

    #[test]
    fn local_to_global_linear_and_zero() {
        let p = SamplePath::from_fn(unit_grid(256), 1, |t, x| x[0] = t);
        let m = max_window_seminorm(&p, 0.5, 0.25).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
        assert!(local_to_global_check(&p, 0.5, 0.25, m).unwrap());
        let z = SamplePath::zeros(unit_grid(64), 1);
        assert!(local_to_global_check(&z, 0.5, 0.25, 0.0).unwrap());
    }

    #[test]
    fn local_to_global_reports_violating_window() {
        let p = SamplePath::from_fn(unit_grid(64), 1, |t, x| x[0] = if t > 0.5 { 1.0 } else { 0.0 });
        match local_to_global_check(&p, 0.5, 0.25, 0.1) {
            Err(Error::LocalBoundViolated { start, end, .. }) => {
                assert!(start <= 0.5 && end > 0.5);
            }
            other => panic!("expected violation, got {other:?}"),
        }
        assert!(local_to_global_check(&p, 0.5, 0.3, 1.0).is_err());
    }
}
