//! The regularised `N`-particle system
//! `Y^i_{k+1} = Y^i_k + (1/N) Σ_j Γ_{t_k,t_{k+1}}(Y^i_k − Y^j_k) + ΔB^i_k`
//! and the shift back to physical coordinates `X^i = Y^i + Z`.

use crate::averaging::AveragedField;
use crate::error::{invalid, Error, Result};
use crate::grid::MAX_DIM;
use crate::nlyi::EmpiricalMeasureFlow;
use crate::paths::SamplePath;
use crate::solver::{advance, blowup_limit, check_field_grid, drift_free_flow, guard_trajectory, BinnedConv, SolveConfig, StepDrift};
use crate::stats::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParticleOptions {
    /// Keep the `j = i` term `Γ_{t_k,t_{k+1}}(0)/N` in the sum.
    pub include_self: bool,
}

impl Default for ParticleOptions {
    fn default() -> Self {
        Self { include_self: true }
    }
}

/// Simulate the coupled system with the self-interaction term included.
pub fn simulate_particles(field: &AveragedField, x: &[f64], b: &[SamplePath], cfg: &SolveConfig) -> Result<EmpiricalMeasureFlow> {
    simulate_particles_with(field, x, b, cfg, ParticleOptions::default())
}

pub fn simulate_particles_with(
    field: &AveragedField,
    x: &[f64],
    b: &[SamplePath],
    cfg: &SolveConfig,
    opts: ParticleOptions,
) -> Result<EmpiricalMeasureFlow> {
    let d = field.dim();
    let n_particles = b.len();
    if n_particles == 0 {
        return Err(Error::Empty("particles"));
    }
    if x.len() != n_particles * d {
        return invalid(format!("{} initial values for {n_particles} driving paths", x.len() / d));
    }
    for p in b {
        check_field_grid(field, p.grid(), p.dim(), "driving path")?;
    }
    if field.is_zero() {
        let flow = drift_free_flow(x, b)?;
        guard_trajectory(field, flow.data(), n_particles, 0, blowup_limit(field, cfg), true)?;
        return Ok(flow);
    }
    let tgrid = *field.time_grid();
    let n = tgrid.n_steps();
    let c = field.components();
    let limit = blowup_limit(field, cfg);
    let binned = cfg.uses_binning(n_particles).then(|| BinnedConv::new(*field.spatial_grid()));
    let stride = n_particles * d;
    let mut data = vec![0.0; (n + 1) * stride];
    data[..stride].copy_from_slice(x);
    let inv_n = 1.0 / n_particles as f64;
    let origin = [0.0; MAX_DIM];
    for k in 0..n {
        let (done, rest) = data.split_at_mut((k + 1) * stride);
        let state = &done[k * stride..];
        let drift = StepDrift::new(field, binned.as_ref(), k, state);
        let mut self_term = [0.0; MAX_DIM];
        if !opts.include_self {
            field.increment(k, k + 1, &origin[..d], &mut self_term[..c]);
            self_term[..c].iter_mut().for_each(|v| *v *= inv_n);
        }
        advance(field, &drift, k, state, b, &self_term, &mut rest[..stride], limit)?;
    }
    EmpiricalMeasureFlow::from_marginals(tgrid, d, n_particles, data)
}

/// Atoms `X^i = Y^i + Z`.
pub fn shifted_system(flow: &EmpiricalMeasureFlow, z: &SamplePath) -> Result<EmpiricalMeasureFlow> {
    flow.grid().check_same(z.grid(), "shifted system")?;
    if flow.dim() != z.dim() {
        return Err(Error::GridMismatch("flow and shift have different dimensions".into()));
    }
    let d = flow.dim();
    let m = flow.n_atoms();
    let mut data = flow.data().to_vec();
    for k in 0..flow.grid().n_points() {
        let zk = z.at(k);
        for v in data[k * m * d..(k + 1) * m * d].chunks_mut(d) {
            for a in 0..d {
                v[a] += zk[a];
            }
        }
    }
    EmpiricalMeasureFlow::from_marginals(*flow.grid(), d, m, data)
}

/// `min_{i≠j,k} |Y^i_k − Y^j_k + Z_k|` together with `min_{i≠j,k} |Y^i_k − Y^j_k|`.
///
/// The second value measures the raw separation in the regularised frame.
pub fn min_pairwise_distances(flow: &EmpiricalMeasureFlow, z: &SamplePath) -> Result<(f64, f64)> {
    flow.grid().check_same(z.grid(), "pairwise distances")?;
    let d = flow.dim();
    let m = flow.n_atoms();
    if m < 2 {
        return invalid("pairwise distances need at least two atoms");
    }
    let mut shifted = f64::INFINITY;
    let mut raw = f64::INFINITY;
    let mut diff = [0.0; MAX_DIM];
    for k in 0..flow.grid().n_points() {
        let zk = z.at(k);
        for i in 0..m {
            for j in i + 1..m {
                let (p, q) = (flow.point(k, i), flow.point(k, j));
                for a in 0..d {
                    diff[a] = p[a] - q[a];
                }
                raw = raw.min(norm(&diff[..d]));
                for a in 0..d {
                    diff[a] += zk[a];
                }
                shifted = shifted.min(norm(&diff[..d]));
            }
        }
    }
    Ok((shifted, raw))
}
