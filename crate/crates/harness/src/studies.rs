//! Convergence, regularisation and stability studies.

use mfy_core::averaging::{averaged_field_direct, AveragedField};
use mfy_core::metrics::{marginal_w1, path_w1, sup_marginal_w1, w2_1d, EXACT_CAP};
use mfy_core::nlyi::EmpiricalMeasureFlow;
use mfy_core::particles::{min_pairwise_distances, simulate_particles};
use mfy_core::paths::{gen_noise, NoiseKind, NoiseSampler};
use mfy_core::rng::{purpose, stream_id, stream_rng};
use mfy_core::solver::{solve_mkv, SolveConfig};
use mfy_core::stats::{median, norm, slope_through_origin};
use mfy_core::{Error, SamplePath, SpatialGrid, TimeGrid};
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::config::{parse_strategy, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{fmt_f64, svg_plot, Csv, Series};

/// Stream index of the initial values inside a purpose.
const INITIAL_STREAM: u64 = 1 << 39;

/// `Z` on the noise grid, shared by every run of the experiment.
pub fn shared_noise(cfg: &ExperimentConfig) -> Result<SamplePath> {
    Ok(gen_noise(cfg.noise_kind(), cfg.dim, cfg.noise_grid()?, cfg.noise_seed)?)
}

/// Averaged field of the configured kernel along `z`, which may live on a finer grid than `tg`.
pub fn build_field(cfg: &ExperimentConfig, z: &SamplePath, sg: &SpatialGrid, tg: &TimeGrid) -> Result<AveragedField> {
    let k = cfg.kernel_on(sg)?;
    Ok(averaged_field_direct(&k, z, sg, tg)?)
}

/// `n` i.i.d. inputs: `x` uniform on `[−s, s]^d`, `B` scaled Brownian motions.
pub fn iid_inputs(cfg: &ExperimentConfig, seed: u64, purpose: u64, n: usize, tg: TimeGrid) -> Result<(Vec<f64>, Vec<SamplePath>)> {
    let s = cfg.initial_spread;
    let mut rng = stream_rng(seed, stream_id(purpose, INITIAL_STREAM));
    let x: Vec<f64> = if s > 0.0 {
        let u = Uniform::new(-s, s).map_err(|e| HarnessError::Config(e.to_string()))?;
        (0..n * cfg.dim).map(|_| u.sample(&mut rng)).collect()
    } else {
        vec![0.0; n * cfg.dim]
    };
    let sampler = NoiseSampler::new(NoiseKind::Brownian, cfg.dim, tg)?;
    let b = (0..n)
        .map(|i| sampler.sample(seed, stream_id(purpose, i as u64)).scaled(cfg.noise_scale))
        .collect();
    Ok((x, b))
}

fn checkpoints(n_steps: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, n_steps);
    (1..=count).map(|i| i * n_steps / count).collect()
}

fn first_atoms(flow: &EmpiricalMeasureFlow, n: usize) -> Result<EmpiricalMeasureFlow> {
    let d = flow.dim();
    let data = (0..flow.grid().n_points())
        .flat_map(|k| flow.marginal(k)[..n * d].to_vec())
        .collect();
    Ok(EmpiricalMeasureFlow::from_marginals(*flow.grid(), d, n, data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub seed: u64,
    /// `sup` over the checkpoints of `W1(μ^N_t, μ^ref_t)`.
    pub sup_marginal_w1: f64,
    /// Path-space W1 against the first `N` reference atoms; NaN above the assignment cap.
    pub path_w1: f64,
    /// W1 between the initial values of the system and of the reference.
    pub input_w1: f64,
    /// `sup` over the checkpoints of W2 between the driving-noise marginals (d = 1).
    pub input_w2: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub reference_size: usize,
    pub reference_iterations: usize,
    pub reference_converged: bool,
}

impl ConvergenceReport {
    /// `(N, median sup-marginal W1)` for each particle count, in config order.
    pub fn medians(&self) -> Vec<(usize, f64)> {
        let mut counts: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !counts.contains(&r.n) {
                counts.push(r.n);
            }
        }
        counts
            .into_iter()
            .map(|n| {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.n == n).map(|r| r.sup_marginal_w1).collect();
                (n, median(&v))
            })
            .collect()
    }

    pub fn csv(&self) -> Csv {
        let mut c = Csv::new(&["n", "seed", "sup_marginal_w1", "path_w1", "input_w1", "input_w2", "reference_converged"]);
        for r in &self.rows {
            c.row(vec![
                r.n.to_string(),
                r.seed.to_string(),
                fmt_f64(r.sup_marginal_w1),
                fmt_f64(r.path_w1),
                fmt_f64(r.input_w1),
                fmt_f64(r.input_w2),
                self.reference_converged.to_string(),
            ]);
        }
        c
    }

    pub fn svg(&self) -> String {
        let med = self.medians();
        let series = vec![Series {
            label: "median sup-marginal W1".into(),
            points: med.iter().map(|&(n, v)| (n as f64, v)).collect(),
        }];
        svg_plot("Mean-field convergence", "N", "W1", &series, true)
    }
}

pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    if cfg.particle_counts.is_empty() || cfg.seeds.is_empty() {
        return Err(HarnessError::Config("convergence study needs particle_counts and seeds".into()));
    }
    let tg = cfg.time_grid()?;
    let sg = cfg.spatial_grid()?;
    let z = shared_noise(cfg)?;
    let field = build_field(cfg, &z, &sg, &tg)?;
    let solve = cfg.solver.solve_config()?;
    let ref_cfg = SolveConfig {
        picard_tol: cfg.reference.picard_tol,
        strategy: parse_strategy(&cfg.reference.strategy)?,
        ..solve
    };
    let m = cfg.reference.size;
    let (xr, br) = iid_inputs(cfg, cfg.reference.seed, purpose::REFERENCE, m, tg)?;
    let reference = solve_mkv(&field, &xr, &br, &ref_cfg)?;
    let marks = checkpoints(tg.n_steps(), cfg.convergence.checkpoints);
    let d = cfg.dim;
    let jobs: Vec<(usize, u64)> = cfg
        .particle_counts
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, seed)| -> Result<ConvergenceRow> {
            let (x, b) = iid_inputs(cfg, seed, purpose::IDIOSYNCRATIC, n, tg)?;
            let flow = simulate_particles(&field, &x, &b, &solve)?;
            let sup = sup_marginal_w1(&flow, &reference.flow, &marks)?;
            let pw = if n <= EXACT_CAP && n <= m {
                path_w1(&flow, &first_atoms(&reference.flow, n)?, cfg.convergence.path_beta)?
            } else {
                f64::NAN
            };
            let input_w1 = marginal_w1(&x, &xr, d)?;
            let input_w2 = if d == 1 {
                let mut worst = 0.0f64;
                for &k in &marks {
                    let a: Vec<f64> = b.iter().map(|p| p.at(k)[0]).collect();
                    let c: Vec<f64> = br.iter().map(|p| p.at(k)[0]).collect();
                    worst = worst.max(w2_1d(&a, &c)?);
                }
                worst
            } else {
                f64::NAN
            };
            Ok(ConvergenceRow {
                n,
                seed,
                sup_marginal_w1: sup,
                path_w1: pw,
                input_w1,
                input_w2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        rows,
        reference_size: m,
        reference_iterations: reference.iterations(),
        reference_converged: reference.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularisationRun {
    pub seed: u64,
    /// Whether `Z` was the configured fBm (`true`) or zero.
    pub noisy: bool,
    pub completed: bool,
    pub blowup_step: Option<usize>,
    pub blowup_magnitude: f64,
    /// Largest per-step drift increment `|ΔY − ΔB|` over the run.
    pub max_drift: f64,
    /// `min_{i≠j,t} |Y^i_t − Y^j_t + Z_t|`.
    pub min_shifted_distance: f64,
    pub min_raw_distance: f64,
}

#[derive(Debug, Clone)]
pub struct RegularisationReport {
    pub runs: Vec<RegularisationRun>,
    pub epsilon: f64,
}

impl RegularisationReport {
    pub fn guard_trips(&self, noisy: bool) -> usize {
        self.runs.iter().filter(|r| r.noisy == noisy && !r.completed).count()
    }

    pub fn csv(&self) -> Csv {
        let mut c = Csv::new(&[
            "seed",
            "noise",
            "completed",
            "blowup_step",
            "blowup_magnitude",
            "max_drift",
            "min_shifted_distance",
            "min_raw_distance",
        ]);
        for r in &self.runs {
            c.row(vec![
                r.seed.to_string(),
                if r.noisy { "fbm" } else { "zero" }.into(),
                r.completed.to_string(),
                r.blowup_step.map(|s| s.to_string()).unwrap_or_default(),
                fmt_f64(r.blowup_magnitude),
                fmt_f64(r.max_drift),
                fmt_f64(r.min_shifted_distance),
                fmt_f64(r.min_raw_distance),
            ]);
        }
        c
    }
}

fn regularisation_run(
    field: &AveragedField,
    x: &[f64],
    b: &[SamplePath],
    z: &SamplePath,
    cfg: &SolveConfig,
    seed: u64,
    noisy: bool,
) -> Result<RegularisationRun> {
    match simulate_particles(field, x, b, cfg) {
        Ok(flow) => {
            let d = flow.dim();
            let mut max_drift = 0.0f64;
            let mut inc = vec![0.0; d];
            for k in 0..flow.grid().n_steps() {
                for (i, bi) in b.iter().enumerate() {
                    for a in 0..d {
                        inc[a] = (flow.point(k + 1, i)[a] - flow.point(k, i)[a]) - (bi.at(k + 1)[a] - bi.at(k)[a]);
                    }
                    max_drift = max_drift.max(norm(&inc));
                }
            }
            let (shifted, raw) = if flow.n_atoms() > 1 {
                min_pairwise_distances(&flow, z)?
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(RegularisationRun {
                seed,
                noisy,
                completed: true,
                blowup_step: None,
                blowup_magnitude: f64::NAN,
                max_drift,
                min_shifted_distance: shifted,
                min_raw_distance: raw,
            })
        }
        Err(Error::BlowUp { step, magnitude, .. }) => Ok(RegularisationRun {
            seed,
            noisy,
            completed: false,
            blowup_step: Some(step),
            blowup_magnitude: magnitude,
            max_drift: f64::NAN,
            min_shifted_distance: f64::NAN,
            min_raw_distance: f64::NAN,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Two particles started `gap·ε` apart, once with `Z = 0` and once with `Z` an fBm per seed.
pub fn run_regularisation_demo(cfg: &ExperimentConfig) -> Result<RegularisationReport> {
    if cfg.seeds.is_empty() {
        return Err(HarnessError::Config("regularisation demo needs seeds".into()));
    }
    let tg = cfg.time_grid()?;
    let fine = cfg.noise_grid()?;
    let sg = cfg.spatial_grid()?;
    let kernel = cfg.kernel_on(&sg)?;
    let eps = kernel.epsilon();
    let solve = cfg.solver.solve_config()?;
    let d = cfg.dim;
    let unit = if eps > 0.0 { eps } else { sg.spacing() };
    let half = 0.5 * cfg.regularisation.gap * unit;
    let mut x = vec![0.0; 2 * d];
    x[0] = -half;
    x[d] = half;
    let factor = fine.n_steps() / tg.n_steps();
    let inputs = |seed: u64| -> Result<Vec<SamplePath>> {
        let sampler = NoiseSampler::new(NoiseKind::Brownian, d, tg)?;
        Ok((0..2).map(|i| sampler.sample(seed, stream_id(purpose::IDIOSYNCRATIC, i)).scaled(cfg.noise_scale)).collect())
    };
    let still = SamplePath::zeros(fine, d);
    let still_field = averaged_field_direct(&kernel, &still, &sg, &tg)?;
    let still_coarse = SamplePath::zeros(tg, d);
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<[RegularisationRun; 2]> {
            let b = inputs(seed)?;
            let still_run = regularisation_run(&still_field, &x, &b, &still_coarse, &solve, seed, false)?;
            let z = gen_noise(cfg.noise_kind(), d, fine, seed)?;
            let field = averaged_field_direct(&kernel, &z, &sg, &tg)?;
            let noisy_run = regularisation_run(&field, &x, &b, &z.coarsen(factor)?, &solve, seed, true)?;
            Ok([still_run, noisy_run])
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = per_seed.into_iter().flatten().collect();
    Ok(RegularisationReport { runs, epsilon: eps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub n_steps: usize,
    pub n_cells: usize,
    pub delta: f64,
    /// W1 between the unperturbed and perturbed initial laws.
    pub input_w1: f64,
    /// Path-space W1 between the two fixed points.
    pub output_w1: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// `(n_steps, n_cells, fitted slope)` per resolution.
    pub slopes: Vec<(usize, usize, f64)>,
}

impl StabilityReport {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    /// Largest over smallest fitted slope across resolutions.
    pub fn slope_spread(&self) -> f64 {
        let v: Vec<f64> = self.slopes.iter().map(|s| s.2).collect();
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    }

    pub fn csv(&self) -> Csv {
        let mut c = Csv::new(&["n_steps", "n_cells", "delta", "input_w1", "output_path_w1", "converged"]);
        for r in &self.rows {
            c.row(vec![
                r.n_steps.to_string(),
                r.n_cells.to_string(),
                fmt_f64(r.delta),
                fmt_f64(r.input_w1),
                fmt_f64(r.output_w1),
                r.converged.to_string(),
            ]);
        }
        c
    }

    pub fn slopes_csv(&self) -> Csv {
        let mut c = Csv::new(&["n_steps", "n_cells", "slope"]);
        for &(n, m, s) in &self.slopes {
            c.row(vec![n.to_string(), m.to_string(), fmt_f64(s)]);
        }
        c
    }

    pub fn svg(&self) -> String {
        let series: Vec<Series> = self
            .slopes
            .iter()
            .map(|&(n, m, _)| Series {
                label: format!("n_t = {n}, n_x = {m}"),
                points: self
                    .rows
                    .iter()
                    .filter(|r| r.n_steps == n && r.n_cells == m)
                    .map(|r| (r.delta, r.output_w1))
                    .collect(),
            })
            .collect();
        svg_plot("Stability in law", "delta", "path W1", &series, true)
    }
}

/// Fixed points for initial values `x` and `x + δ sign(x)` at each configured resolution.
pub fn run_stability_study(cfg: &ExperimentConfig) -> Result<StabilityReport> {
    let st = &cfg.stability;
    if st.resolutions.is_empty() || st.deltas.is_empty() || st.atoms == 0 {
        return Err(HarnessError::Config("stability study needs resolutions, deltas and atoms".into()));
    }
    let finest = st.resolutions.iter().map(|r| 1usize << r[0]).max().unwrap_or(1);
    let fine = TimeGrid::new(cfg.horizon, finest.max(cfg.noise_steps.unwrap_or(0)))?;
    let z = gen_noise(cfg.noise_kind(), cfg.dim, fine, cfg.noise_seed)?;
    let d = cfg.dim;
    let m = st.atoms;
    let mut rng = stream_rng(st.initial_seed, stream_id(purpose::INITIAL, 0));
    let u = Uniform::new(-cfg.initial_spread, cfg.initial_spread).map_err(|e| HarnessError::Config(e.to_string()))?;
    let x: Vec<f64> = (0..m * d).map(|_| u.sample(&mut rng)).collect();
    let sampler = NoiseSampler::new(NoiseKind::Brownian, d, fine)?;
    let b_fine: Vec<SamplePath> = (0..m)
        .map(|i| sampler.sample(st.path_seed, stream_id(purpose::IDIOSYNCRATIC, i as u64)).scaled(cfg.noise_scale))
        .collect();
    let solve = SolveConfig {
        picard_tol: st.picard_tol,
        ..cfg.solver.solve_config()?
    };
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &[lt, lx] in &st.resolutions {
        let tg = TimeGrid::new(cfg.horizon, 1 << lt)?;
        if fine.n_steps() % tg.n_steps() != 0 {
            return Err(HarnessError::Config(format!("noise grid does not refine 2^{lt} steps")));
        }
        let factor = fine.n_steps() / tg.n_steps();
        let sg = cfg.spatial_grid_with(1 << lx)?;
        let field = build_field(cfg, &z, &sg, &tg)?;
        let b: Vec<SamplePath> = b_fine.iter().map(|p| p.coarsen(factor)).collect::<std::result::Result<_, _>>()?;
        let base = solve_mkv(&field, &x, &b, &solve)?;
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for &delta in &st.deltas {
            let xs: Vec<f64> = x.iter().map(|v| v + delta * v.signum()).collect();
            let sol = solve_mkv(&field, &xs, &b, &solve)?;
            let out = path_w1(&base.flow, &sol.flow, st.path_beta)?;
            rows.push(StabilityRow {
                n_steps: tg.n_steps(),
                n_cells: sg.n_cells(),
                delta,
                input_w1: marginal_w1(&x, &xs, d)?,
                output_w1: out,
                converged: base.converged && sol.converged,
            });
            ins.push(delta);
            outs.push(out);
        }
        slopes.push((tg.n_steps(), sg.n_cells(), slope_through_origin(&ins, &outs)));
    }
    Ok(StabilityReport { rows, slopes })
}
