//! Wasserstein distances between empirical measures and measure flows.
//!
//! In one dimension W1 is computed from sorted samples (or the quantile
//! functions for unequal sizes). Exact transport in higher dimensions and on
//! path space uses the Hungarian algorithm and is capped at 512 atoms.
//!
//! The Lipschitz-dual norm of a zero-mass signed measure `ρ = ρ⁺ − ρ⁻` equals
//! the W1 cost between `ρ⁺` and `ρ⁻`; in d = 1 this is `∫|F_ρ(x)| dx`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::nlyi::EmpiricalMeasureFlow;
use crate::paths::{dyadic_lag_pairs, HolderEstimate};
use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::{distance, loglog_slope};

/// Largest atom count accepted by exact assignment.
pub const EXACT_CAP: usize = 512;

/// Projections used when a sliced surrogate replaces exact transport.
pub const DEFAULT_PROJECTIONS: usize = 256;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `∫_0^1 c(F⁻¹(u), G⁻¹(u)) du` for sorted samples of any sizes.
fn quantile_cost(a: &[f64], b: &[f64], cost: impl Fn(f64) -> f64) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| cost(x - y)).sum::<f64>() / n as f64;
    }
    // merge breakpoints i/n and j/m, working in units of 1/(n m)
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ua, mut ub) = (m, n);
    let mut total = 0.0;
    while i < n && j < m {
        let step = ua.min(ub);
        total += step as f64 * cost(a[i] - b[j]);
        ua -= step;
        ub -= step;
        if ua == 0 {
            i += 1;
            ua = m;
        }
        if ub == 0 {
            j += 1;
            ub = n;
        }
    }
    total / (n * m) as f64
}

/// W1 between two empirical measures on the line.
///
/// Unequal sizes use the quantile coupling, which equals replicating each
/// sample set to the least common multiple of the sizes.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    Ok(quantile_cost(&sorted(a), &sorted(b), f64::abs))
}

/// W2 between two empirical measures on the line.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    Ok(quantile_cost(&sorted(a), &sorted(b), |d| d * d).sqrt())
}

/// Minimum-cost perfect assignment of an `n × n` row-major cost matrix.
///
/// Returns the total cost and `assignment[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> (f64, Vec<usize>) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (0.0, Vec::new());
    }
    // potentials formulation with 1-based sentinels
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    (total, assignment)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact W1 between uniform empirical measures under an arbitrary metric.
///
/// Unequal sizes are replicated to their least common multiple; the
/// replicated size may not exceed [`EXACT_CAP`].
pub fn w1_exact_small<T: Sync>(a: &[T], b: &[T], metric: impl Fn(&T, &T) -> f64 + Sync) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let size = a.len() / gcd(a.len(), b.len()) * b.len();
    if size > EXACT_CAP {
        return Err(Error::SizeCap { size, cap: EXACT_CAP });
    }
    let (ra, rb) = (size / a.len(), size / b.len());
    let mut cost = vec![0.0; size * size];
    cost.par_chunks_mut(size).enumerate().for_each(|(i, row)| {
        let x = &a[i / ra];
        for (j, c) in row.iter_mut().enumerate() {
            *c = metric(x, &b[j / rb]);
        }
    });
    Ok(hungarian(&cost, size).0 / size as f64)
}

/// Exact Euclidean W1 between two flat point clouds in `R^dim`.
pub fn w1_points_exact(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    let pa: Vec<&[f64]> = a.chunks(dim).collect();
    let pb: Vec<&[f64]> = b.chunks(dim).collect();
    w1_exact_small(&pa, &pb, |x, y| distance(x, y))
}

/// `E|⟨θ, x⟩|` for `θ` uniform on the sphere equals `|x| / slice_factor(d)`.
fn slice_factor(dim: usize) -> f64 {
    match dim {
        1 => 1.0,
        2 => PI / 2.0,
        _ => 2.0,
    }
}

/// Directions used by [`sliced_w1`]: stratified angles in d = 2, Gaussian draws otherwise.
pub fn projection_directions(dim: usize, n_proj: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream_id(purpose::PROJECTIONS, 0));
    if dim == 2 {
        let offset: f64 = rng.random();
        return (0..n_proj)
            .flat_map(|k| {
                let th = (k as f64 + offset) * PI / n_proj as f64;
                [th.cos(), th.sin()]
            })
            .collect();
    }
    (0..n_proj)
        .flat_map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = crate::stats::norm(&v);
            v.into_iter().map(move |x| x / n)
        })
        .collect()
}

/// Sliced W1 with explicit unit directions, normalised so a translation by `c` scores `|c|`.
pub fn sliced_w1_with_directions(a: &[f64], b: &[f64], dim: usize, directions: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let n_proj = directions.len() / dim;
    if n_proj == 0 {
        return invalid("at least one projection is needed");
    }
    let project = |pts: &[f64], th: &[f64]| -> Vec<f64> {
        pts.chunks(dim).map(|p| p.iter().zip(th).map(|(x, y)| x * y).sum()).collect()
    };
    let total: f64 = directions
        .chunks(dim)
        .map(|th| quantile_cost(&sorted(&project(a, th)), &sorted(&project(b, th)), f64::abs))
        .sum();
    Ok(slice_factor(dim) * total / n_proj as f64)
}

/// Sliced W1 over `n_proj` directions drawn from `seed`.
pub fn sliced_w1(a: &[f64], b: &[f64], dim: usize, n_proj: usize, seed: u64) -> Result<f64> {
    if dim < 2 {
        return invalid("sliced W1 needs d >= 2");
    }
    sliced_w1_with_directions(a, b, dim, &projection_directions(dim, n_proj, seed))
}

/// W1 between two marginals: sorted in d = 1, exact assignment up to
/// [`EXACT_CAP`] atoms, sliced with a fixed seed beyond.
pub fn marginal_w1(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    if dim == 1 {
        return w1_1d(a, b);
    }
    match w1_points_exact(a, b, dim) {
        Err(Error::SizeCap { .. }) => sliced_w1(a, b, dim, DEFAULT_PROJECTIONS, 0),
        other => other,
    }
}

/// `‖(μ_t − ν_t) − (μ_s − ν_s)‖_{lip*}` for four uniform empirical measures.
pub fn lip_star_difference(mu_t: &[f64], nu_t: &[f64], mu_s: &[f64], nu_s: &[f64], dim: usize) -> Result<f64> {
    if dim == 1 {
        let (n, m) = (mu_t.len() as f64, nu_t.len() as f64);
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(2 * (mu_t.len() + nu_t.len()));
        pts.extend(mu_t.iter().map(|&x| (x, 1.0 / n)));
        pts.extend(nu_s.iter().map(|&x| (x, 1.0 / m)));
        pts.extend(nu_t.iter().map(|&x| (x, -1.0 / m)));
        pts.extend(mu_s.iter().map(|&x| (x, -1.0 / n)));
        return Ok(signed_cdf_l1(pts));
    }
    if mu_t.len() != nu_t.len() {
        return invalid("signed-measure norm in d >= 2 needs equal atom counts");
    }
    // ρ⁺ = μ_t + ν_s, ρ⁻ = ν_t + μ_s, each of mass 2
    let plus: Vec<f64> = mu_t.iter().chain(nu_s).copied().collect();
    let minus: Vec<f64> = nu_t.iter().chain(mu_s).copied().collect();
    Ok(2.0 * marginal_w1(&plus, &minus, dim)?)
}

/// `∫ |F(x)| dx` for a zero-mass weighted point measure on the line.
fn signed_cdf_l1(mut pts: Vec<(f64, f64)>) -> f64 {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf = 0.0;
    let mut total = 0.0;
    for w in pts.windows(2) {
        cdf += w[0].1;
        total += cdf.abs() * (w[1].0 - w[0].0);
    }
    total
}

/// `‖f‖ = |f_0| + sup |f_b − f_a| / |t_b − t_a|^β` over dyadic-lag pairs, for a time-major path.
pub fn discrete_holder_norm(values: &[f64], dim: usize, dt: f64, beta: f64) -> f64 {
    let n = values.len() / dim - 1;
    let at = |k: usize| &values[k * dim..(k + 1) * dim];
    let mut semi = 0.0f64;
    let mut lag = 1;
    while lag <= n {
        let w = (lag as f64 * dt).powf(-beta);
        for a in 0..=n - lag {
            semi = semi.max(distance(at(a), at(a + lag)) * w);
        }
        lag *= 2;
    }
    crate::stats::norm(at(0)) + semi
}

/// Path-space W1 under the discrete `C^β` norm of [`discrete_holder_norm`].
pub fn path_w1(a: &EmpiricalMeasureFlow, b: &EmpiricalMeasureFlow, beta: f64) -> Result<f64> {
    a.grid().check_same(b.grid(), "path_w1")?;
    if a.dim() != b.dim() {
        return Err(Error::GridMismatch("flows have different dimensions".into()));
    }
    let pa: Vec<Vec<f64>> = (0..a.n_atoms()).map(|i| a.atom_values(i)).collect();
    let pb: Vec<Vec<f64>> = (0..b.n_atoms()).map(|i| b.atom_values(i)).collect();
    let dim = a.dim();
    let dt = a.grid().dt();
    w1_exact_small(&pa, &pb, |f, g| {
        let diff: Vec<f64> = f.iter().zip(g).map(|(x, y)| x - y).collect();
        discrete_holder_norm(&diff, dim, dt, beta)
    })
}

/// `[μ]_β` over dyadic-lag time pairs, with `‖μ_t − μ_s‖_{lip*} = W1(μ_t, μ_s)`.
pub fn flow_holder_seminorm(mu: &EmpiricalMeasureFlow, beta: f64) -> Result<HolderEstimate> {
    flow_holder_seminorm_on(mu, beta, 0, mu.grid().n_steps())
}

/// [`flow_holder_seminorm`] restricted to grid indices `[from, to]`.
pub fn flow_holder_seminorm_on(mu: &EmpiricalMeasureFlow, beta: f64, from: usize, to: usize) -> Result<HolderEstimate> {
    if !(beta > 0.0 && beta < 1.0) {
        return invalid(format!("beta must lie in (0,1), got {beta}"));
    }
    let dt = mu.grid().dt();
    let pairs = dyadic_lag_pairs(from, to);
    let dists: Vec<(usize, f64)> = pairs
        .par_iter()
        .map(|&(s, t)| Ok((t - s, marginal_w1(mu.marginal(t), mu.marginal(s), mu.dim())?)))
        .collect::<Result<_>>()?;
    let seminorm = dists
        .iter()
        .map(|(lag, w)| w / (*lag as f64 * dt).powf(beta))
        .fold(0.0, f64::max);
    let max_lag = ((to - from) / 8).max(1);
    let mut lags = Vec::new();
    let mut rms = Vec::new();
    let mut lag = 1;
    while lag <= max_lag {
        let vals: Vec<f64> = dists.iter().filter(|(l, _)| *l == lag).map(|(_, w)| *w).collect();
        if !vals.is_empty() {
            lags.push(lag as f64 * dt);
            rms.push((vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt());
        }
        lag *= 2;
    }
    Ok(HolderEstimate {
        seminorm,
        fitted_exponent: loglog_slope(&lags, &rms),
        lags_used: lags,
    })
}

/// `[μ − ν]_β` on grid indices `[from, to]` over dyadic-lag pairs.
pub fn flow_difference_seminorm(mu: &EmpiricalMeasureFlow, nu: &EmpiricalMeasureFlow, beta: f64, from: usize, to: usize) -> Result<f64> {
    mu.grid().check_same(nu.grid(), "flow difference")?;
    let dt = mu.grid().dt();
    let d = mu.dim();
    let vals: Vec<f64> = dyadic_lag_pairs(from, to)
        .par_iter()
        .map(|&(s, t)| {
            let v = lip_star_difference(mu.marginal(t), nu.marginal(t), mu.marginal(s), nu.marginal(s), d)?;
            Ok(v / ((t - s) as f64 * dt).powf(beta))
        })
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// `|||μ; ν|||_{β;[s,t]} = ‖μ_s − ν_s‖_{lip*} + [μ − ν]_{β;[s,t]}` on grid indices.
pub fn flow_distance(mu: &EmpiricalMeasureFlow, nu: &EmpiricalMeasureFlow, beta: f64, from: usize, to: usize) -> Result<f64> {
    let start = marginal_w1(mu.marginal(from), nu.marginal(from), mu.dim())?;
    Ok(start + flow_difference_seminorm(mu, nu, beta, from, to)?)
}

/// `sup_k W1(μ_{t_k}, ν_{t_k})` over the given grid indices.
pub fn sup_marginal_w1(mu: &EmpiricalMeasureFlow, nu: &EmpiricalMeasureFlow, indices: &[usize]) -> Result<f64> {
    mu.grid().check_same(nu.grid(), "marginal comparison")?;
    let vals: Vec<f64> = indices
        .par_iter()
        .map(|&k| marginal_w1(mu.marginal(k), nu.marginal(k), mu.dim()))
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}
