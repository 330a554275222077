//! Occupation measures of a path on a spatial grid.
//!
//! Each time step `[t_k, t_{k+1}]` puts `Δ/2` into the cell of `Z_{t_k}` and
//! `Δ/2` into the cell of `Z_{t_{k+1}}`. Masses are stored as integer counts
//! of half steps, so window additivity holds exactly.

use crate::error::{invalid, Error, Result};
use crate::grid::{GriddedField, SpatialGrid, TimeGrid};
use crate::paths::{HolderEstimate, SamplePath};
use crate::stats::loglog_slope;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupationDensity {
    grid: SpatialGrid,
    start: f64,
    end: f64,
    half_step: f64,
    counts: Vec<u64>,
}

impl OccupationDensity {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn window(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Number of half steps spent in each cell.
    pub fn half_step_counts(&self) -> &[u64] {
        &self.counts
    }

    /// Time carried by one half step, `Δ/2`.
    pub fn half_step(&self) -> f64 {
        self.half_step
    }

    /// Occupation time of each cell.
    pub fn cell_mass(&self, node: usize) -> f64 {
        self.counts[node] as f64 * self.half_step
    }

    pub fn density_at(&self, node: usize) -> f64 {
        self.cell_mass(node) / self.grid.cell_volume()
    }

    pub fn density(&self) -> GriddedField {
        let vol = self.grid.cell_volume();
        let data = self.counts.iter().map(|&c| c as f64 * self.half_step / vol).collect();
        GriddedField {
            grid: self.grid,
            components: 1,
            data,
        }
    }

    /// `Σ density × cell volume`, equal to `t − s`.
    pub fn total_mass(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 * self.half_step
    }

    /// `‖L_{s,t}‖_{L²(grid)}`.
    pub fn l2_norm(&self) -> f64 {
        l2_from_counts(&self.counts, self.half_step, self.grid.cell_volume())
    }

    /// Occupation of the concatenated window `[s, u] ∪ [u, t]`.
    pub fn concat(&self, next: &OccupationDensity) -> Result<OccupationDensity> {
        self.grid.check_same(&next.grid, "occupation concat")?;
        if self.half_step != next.half_step || (self.end - next.start).abs() > 1e-12 * self.end.max(1.0) {
            return invalid("occupation windows are not adjacent on a common time grid");
        }
        Ok(OccupationDensity {
            grid: self.grid,
            start: self.start,
            end: next.end,
            half_step: self.half_step,
            counts: self.counts.iter().zip(&next.counts).map(|(a, b)| a + b).collect(),
        })
    }
}

fn l2_from_counts(counts: &[u64], half_step: f64, vol: f64) -> f64 {
    // ∫ L² = Σ (c w / vol)² vol
    let s: f64 = counts.iter().map(|&c| (c as f64).powi(2)).sum();
    half_step * (s / vol).sqrt()
}

/// Grid cell of every path point, or the first exit.
pub(crate) fn path_cells(z: &SamplePath, grid: &SpatialGrid, from: usize, to: usize) -> Result<Vec<usize>> {
    if z.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!("path is {}-dimensional, grid is {}-dimensional", z.dim(), grid.dim())));
    }
    (from..=to)
        .map(|k| {
            grid.locate(z.at(k)).ok_or(Error::PathExitsGrid {
                step: k,
                time: z.grid().time(k),
            })
        })
        .collect()
}

fn window_indices(grid: &TimeGrid, s: f64, t: f64) -> Result<(usize, usize)> {
    let i = grid.index_of(s)?;
    let j = grid.index_of(t)?;
    if i > j {
        return invalid(format!("window start {s} is after its end {t}"));
    }
    Ok((i, j))
}

/// Occupation density of `Z` over `[s, t]` (both on the time grid).
pub fn occupation_measure(z: &SamplePath, grid: &SpatialGrid, s: f64, t: f64) -> Result<OccupationDensity> {
    let (i, j) = window_indices(z.grid(), s, t)?;
    occupation_by_index(z, grid, i, j)
}

pub fn occupation_by_index(z: &SamplePath, grid: &SpatialGrid, i: usize, j: usize) -> Result<OccupationDensity> {
    let cells = path_cells(z, grid, i, j)?;
    let mut counts = vec![0u64; grid.n_nodes()];
    for w in cells.windows(2) {
        counts[w[0]] += 1;
        counts[w[1]] += 1;
    }
    Ok(OccupationDensity {
        grid: *grid,
        start: z.grid().time(i),
        end: z.grid().time(j),
        half_step: z.grid().dt() / 2.0,
        counts,
    })
}

/// Occupation increments over consecutive windows of the coarse grid `tgrid`.
///
/// `Z` must live on a refinement of `tgrid`.
pub fn occupation_increments(z: &SamplePath, grid: &SpatialGrid, tgrid: &TimeGrid) -> Result<Vec<OccupationDensity>> {
    let factor = z.grid().refinement_of(tgrid).ok_or_else(|| {
        Error::GridMismatch(format!("path grid {:?} does not refine {:?}", z.grid(), tgrid))
    })?;
    let cells = path_cells(z, grid, 0, z.grid().n_steps())?;
    let half_step = z.grid().dt() / 2.0;
    Ok((0..tgrid.n_steps())
        .map(|k| {
            let mut counts = vec![0u64; grid.n_nodes()];
            for w in cells[k * factor..=(k + 1) * factor].windows(2) {
                counts[w[0]] += 1;
                counts[w[1]] += 1;
            }
            OccupationDensity {
                grid: *grid,
                start: tgrid.time(k),
                end: tgrid.time(k + 1),
                half_step,
                counts,
            }
        })
        .collect())
}

/// Time regularity of `t ↦ L_t` in `L²(grid)` over dyadic windows.
///
/// `seminorm` is `sup ‖L_{s,t}‖_{L²} / |t−s|^γ` over dyadic windows
/// `[k ℓ, (k+1) ℓ]`; `fitted_exponent` is the log-log slope of the
/// root-mean-square window norm against `ℓ` for lags from `T/2^10`
/// (at least one step) up to `T/16`.
pub fn local_time_time_regularity(z: &SamplePath, grid: &SpatialGrid, gamma: f64) -> Result<HolderEstimate> {
    let tg = z.grid();
    let min_lag = (tg.horizon() / 1024.0).max(tg.dt());
    let max_lag = (tg.horizon() / 16.0).max(tg.dt());
    local_time_time_regularity_with_lags(z, grid, gamma, min_lag, max_lag)
}

pub fn local_time_time_regularity_with_lags(
    z: &SamplePath,
    grid: &SpatialGrid,
    gamma: f64,
    min_lag: f64,
    max_lag: f64,
) -> Result<HolderEstimate> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid(format!("gamma must lie in (0,1), got {gamma}"));
    }
    let tg = *z.grid();
    let n = tg.n_steps();
    let dt = tg.dt();
    let cells = path_cells(z, grid, 0, n)?;
    let vol = grid.cell_volume();
    let mut scratch = vec![0u64; grid.n_nodes()];
    let mut touched = Vec::new();
    let mut seminorm = 0.0f64;
    let mut lags = Vec::new();
    let mut rms = Vec::new();
    let mut width = 1usize;
    while width <= n {
        let lag = width as f64 * dt;
        let mut acc = 0.0;
        let mut count = 0usize;
        for start in (0..n).step_by(width) {
            if start + width > n {
                break;
            }
            for w in cells[start..=start + width].windows(2) {
                for &c in w {
                    if scratch[c] == 0 {
                        touched.push(c);
                    }
                    scratch[c] += 1;
                }
            }
            let sq: f64 = touched.iter().map(|&c| (scratch[c] as f64).powi(2)).sum();
            let norm = dt / 2.0 * (sq / vol).sqrt();
            for &c in &touched {
                scratch[c] = 0;
            }
            touched.clear();
            seminorm = seminorm.max(norm / lag.powf(gamma));
            acc += norm * norm;
            count += 1;
        }
        if lag >= min_lag * (1.0 - 1e-9) && lag <= max_lag * (1.0 + 1e-9) && count > 0 {
            lags.push(lag);
            rms.push((acc / count as f64).sqrt());
        }
        width *= 2;
    }
    Ok(HolderEstimate {
        seminorm,
        fitted_exponent: loglog_slope(&lags, &rms),
        lags_used: lags,
    })
}
