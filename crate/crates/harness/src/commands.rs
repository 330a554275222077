//! One function per CLI subcommand. Each writes its files under `out` and
//! returns the paths it wrote.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mfy_core::averaging::{averaged_field_convolution, averaged_field_direct, gamma_norm, AveragedField};
use mfy_core::io::{read_path_binary, read_path_csv, write_averaged_binary, write_flow_binary, write_path_binary, write_path_csv};
use mfy_core::kernels::{besov_block_norms, hurst_threshold, Kernel, LpNorm};
use mfy_core::localtime::occupation_increments;
use mfy_core::nlyi::{sewing_rate, EmpiricalMeasureFlow};
use mfy_core::particles::simulate_particles;
use mfy_core::paths::gen_noise;
use mfy_core::rng::purpose;
use mfy_core::solver::{growth_check, solve_mkv};
use mfy_core::stats::loglog_slope;
use mfy_core::{NoiseKind, SamplePath, SpatialGrid, TimeGrid};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{fmt_f64, write_text, Csv};
use crate::studies::{build_field, iid_inputs, run_convergence_study, run_regularisation_demo, run_stability_study, shared_noise};

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Option<ExperimentConfig>,
    /// Overrides the noise and solver seeds, and picks the inputs of single runs.
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    /// Resolve the output directory (flag, then config, then `out`) and apply the seed override.
    pub fn new(config: Option<ExperimentConfig>, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let out = out
            .or_else(|| config.as_ref().map(|c| c.output_dir()))
            .unwrap_or_else(|| PathBuf::from("out"));
        let config = config.map(|mut c| {
            if let Some(s) = seed {
                c.noise_seed = s;
                c.solver.seed = s;
            }
            c
        });
        Self { config, seed, out }
    }

    pub fn config(&self) -> Result<&ExperimentConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| HarnessError::Config("this subcommand needs --config".into()))
    }

    /// Seed of the inputs of a single run.
    pub fn run_seed(&self) -> u64 {
        self.seed
            .or_else(|| self.config.as_ref().and_then(|c| c.seeds.first().copied()))
            .unwrap_or(0)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn field_for(cfg: &ExperimentConfig) -> Result<(AveragedField, SamplePath)> {
    let z = shared_noise(cfg)?;
    let field = build_field(cfg, &z, &cfg.spatial_grid()?, &cfg.time_grid()?)?;
    Ok((field, z))
}

pub struct GenFbm {
    pub hurst: f64,
    pub dim: usize,
    pub steps: usize,
    pub horizon: f64,
}

pub fn gen_fbm(ctx: &Context, args: &GenFbm) -> Result<Vec<PathBuf>> {
    let kind = if args.hurst == 0.5 {
        NoiseKind::Brownian
    } else {
        NoiseKind::fbm(args.hurst)
    };
    let grid = TimeGrid::new(args.horizon, args.steps)?;
    let path = gen_noise(kind, args.dim, grid, ctx.seed.unwrap_or(0))?;
    let (csv, bin) = (ctx.file("fbm.csv"), ctx.file("fbm.bin"));
    let mut w = create(&csv)?;
    write_path_csv(&path, &mut w)?;
    w.flush()?;
    let mut w = create(&bin)?;
    write_path_binary(&path, kind, &mut w)?;
    w.flush()?;
    Ok(vec![csv, bin])
}

pub struct AveragedFieldArgs {
    pub convolution: bool,
    pub gamma: f64,
    pub alpha: u32,
    pub pair_budget: usize,
}

pub fn averaged_field(ctx: &Context, args: &AveragedFieldArgs) -> Result<Vec<PathBuf>> {
    let cfg = ctx.config()?;
    let tg = cfg.time_grid()?;
    let sg = cfg.spatial_grid()?;
    let z = shared_noise(cfg)?;
    let kernel = cfg.kernel_on(&sg)?;
    let field = if args.convolution {
        let occ = occupation_increments(&z, &sg, &tg)?;
        averaged_field_convolution(&kernel, &occ, &sg)?
    } else {
        averaged_field_direct(&kernel, &z, &sg, &tg)?
    };
    let g = gamma_norm(&field, args.gamma, args.alpha, args.pair_budget)?;
    let bin = ctx.file("averaged_field.bin");
    let mut w = create(&bin)?;
    write_averaged_binary(&field, &mut w)?;
    w.flush()?;
    let mut c = Csv::new(&[
        "gamma",
        "alpha",
        "value",
        "sup_value",
        "sup_gradient",
        "lipschitz",
        "gradient_lipschitz",
        "fitted_time_exponent",
    ]);
    let mut row = vec![fmt_f64(g.gamma), g.alpha.to_string(), fmt_f64(g.value)];
    row.extend(g.components.iter().map(|v| fmt_f64(*v)));
    row.push(fmt_f64(g.fitted_time_exponent));
    c.row(row);
    let csv = ctx.file("gamma_norm.csv");
    c.write(&csv)?;
    Ok(vec![bin, csv])
}

pub struct SewingArgs {
    pub atoms: usize,
    pub min_level: u32,
    pub max_level: u32,
}

/// Sewing errors of the one-block germ, averaged over the atoms of the fixed point.
pub fn sewing_study(ctx: &Context, args: &SewingArgs) -> Result<Vec<PathBuf>> {
    let cfg = ctx.config()?;
    if args.min_level > args.max_level || args.atoms == 0 {
        return Err(HarnessError::Config("sewing study needs atoms >= 1 and min_level <= max_level".into()));
    }
    let (field, _) = field_for(cfg)?;
    let tg = cfg.time_grid()?;
    let (x, b) = iid_inputs(cfg, ctx.run_seed(), purpose::IDIOSYNCRATIC, args.atoms, tg)?;
    let sol = solve_mkv(&field, &x, &b, &cfg.solver.solve_config()?)?;
    let levels: Vec<u32> = (args.min_level..=args.max_level).collect();
    let mut mean = vec![0.0; levels.len()];
    let mut lengths = Vec::new();
    for i in 0..args.atoms {
        let rep = sewing_rate(&field, &sol.flow.atom(i), &sol.flow, 0.0, cfg.horizon, &levels)?;
        for (m, e) in mean.iter_mut().zip(&rep.errors) {
            *m += e / args.atoms as f64;
        }
        lengths = rep.window_lengths;
    }
    let slope = loglog_slope(&lengths, &mean);
    let g = gamma_norm(&field, cfg.solver.gamma, 2, 256)?;
    let mut c = Csv::new(&["level", "window_length", "mean_error"]);
    for ((l, w), e) in levels.iter().zip(&lengths).zip(&mean) {
        c.row(vec![l.to_string(), fmt_f64(*w), fmt_f64(*e)]);
    }
    let csv = ctx.file("sewing.csv");
    c.write(&csv)?;
    let mut s = Csv::new(&["fitted_slope", "gamma_time_exponent", "beta", "picard_converged"]);
    s.row(vec![
        fmt_f64(slope),
        fmt_f64(g.fitted_time_exponent),
        fmt_f64(cfg.solver.beta),
        sol.converged.to_string(),
    ]);
    let summary = ctx.file("sewing_summary.csv");
    s.write(&summary)?;
    Ok(vec![csv, summary])
}

/// Fixed point of the mean-field map over `atoms` i.i.d. samples.
///
/// Outputs are written before a non-convergence error is returned.
pub fn solve_mkv_cmd(ctx: &Context, atoms: usize) -> Result<Vec<PathBuf>> {
    let cfg = ctx.config()?;
    let (field, _) = field_for(cfg)?;
    let tg = cfg.time_grid()?;
    let (x, b) = iid_inputs(cfg, ctx.run_seed(), purpose::IDIOSYNCRATIC, atoms, tg)?;
    let solve = cfg.solver.solve_config()?;
    let sol = solve_mkv(&field, &x, &b, &solve)?;
    let bin = ctx.file("mkv_flow.bin");
    let mut w = create(&bin)?;
    write_flow_binary(&sol.flow, &mut w)?;
    w.flush()?;
    let mut gaps = Csv::new(&["iteration", "gap"]);
    for (i, g) in sol.gaps.iter().enumerate() {
        gaps.row(vec![(i + 1).to_string(), fmt_f64(*g)]);
    }
    let gaps_path = ctx.file("picard_gaps.csv");
    gaps.write(&gaps_path)?;
    let gn = gamma_norm(&field, solve.gamma, 2, 256)?.value;
    let mut growth = Csv::new(&["atom", "y_seminorm", "mu_seminorm", "b_seminorm", "gamma_norm", "ratio"]);
    for i in 0..atoms.min(8) {
        let r = growth_check(&sol.flow.atom(i), &sol.flow, &b[i], gn, &solve)?;
        growth.row(vec![
            i.to_string(),
            fmt_f64(r.y_seminorm),
            fmt_f64(r.mu_seminorm),
            fmt_f64(r.b_seminorm),
            fmt_f64(r.gamma_norm),
            fmt_f64(r.ratio),
        ]);
    }
    let growth_path = ctx.file("growth.csv");
    growth.write(&growth_path)?;
    if !sol.converged {
        let last = sol.gaps.last().copied().unwrap_or(f64::NAN);
        return Err(HarnessError::NotConverged(format!(
            "{} sweeps, last gap {last:e} above {:e}",
            sol.iterations(),
            solve.picard_tol
        )));
    }
    Ok(vec![bin, gaps_path, growth_path])
}

pub struct ParticlesArgs {
    pub n: Option<usize>,
    /// Saved paths; each gives `x^i` (its value at 0) and `B^i` (the rest).
    pub paths: Vec<PathBuf>,
    /// Saved `Z`, replacing the generated one.
    pub z: Option<PathBuf>,
}

pub fn read_path_file(path: &Path) -> Result<SamplePath> {
    let f = File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(f);
    if path.extension().is_some_and(|e| e == "csv") {
        Ok(read_path_csv(r)?)
    } else {
        Ok(read_path_binary(&mut r)?.0)
    }
}

fn marginal_summary(flow: &EmpiricalMeasureFlow) -> Csv {
    let d = flow.dim();
    let mut header = vec!["t".to_string()];
    for a in 1..=d {
        header.extend([format!("mean_{a}"), format!("std_{a}"), format!("min_{a}"), format!("max_{a}")]);
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut c = Csv::new(&refs);
    let n = flow.n_atoms() as f64;
    for k in 0..flow.grid().n_points() {
        let m = flow.marginal(k);
        let mut row = vec![fmt_f64(flow.grid().time(k))];
        for a in 0..d {
            let vals = m.iter().skip(a).step_by(d);
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.clone().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let lo = vals.clone().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.cloned().fold(f64::NEG_INFINITY, f64::max);
            row.extend([fmt_f64(mean), fmt_f64(var.sqrt()), fmt_f64(lo), fmt_f64(hi)]);
        }
        c.row(row);
    }
    c
}

pub fn particles(ctx: &Context, args: &ParticlesArgs) -> Result<Vec<PathBuf>> {
    let cfg = ctx.config()?;
    let tg = cfg.time_grid()?;
    let sg = cfg.spatial_grid()?;
    let z = match &args.z {
        Some(p) => read_path_file(p)?,
        None => shared_noise(cfg)?,
    };
    let field = build_field(cfg, &z, &sg, &tg)?;
    let (x, b) = if args.paths.is_empty() {
        let n = args.n.or_else(|| cfg.particle_counts.first().copied()).unwrap_or(64);
        iid_inputs(cfg, ctx.run_seed(), purpose::IDIOSYNCRATIC, n, tg)?
    } else {
        let mut x = Vec::new();
        let mut b = Vec::new();
        for p in &args.paths {
            let path = read_path_file(p)?;
            let start = SamplePath::constant(*path.grid(), path.at(0));
            x.extend_from_slice(path.at(0));
            b.push(path.sub(&start)?);
        }
        (x, b)
    };
    let flow = simulate_particles(&field, &x, &b, &cfg.solver.solve_config()?)?;
    let bin = ctx.file("particles.bin");
    let mut w = create(&bin)?;
    write_flow_binary(&flow, &mut w)?;
    w.flush()?;
    let csv = ctx.file("marginals.csv");
    marginal_summary(&flow).write(&csv)?;
    Ok(vec![bin, csv])
}

pub fn convergence_study(ctx: &Context) -> Result<Vec<PathBuf>> {
    let report = run_convergence_study(ctx.config()?)?;
    let csv = ctx.file("convergence.csv");
    report.csv().write(&csv)?;
    let svg = ctx.file("convergence.svg");
    write_text(&svg, &report.svg())?;
    Ok(vec![csv, svg])
}

pub fn regularisation_demo(ctx: &Context) -> Result<Vec<PathBuf>> {
    let report = run_regularisation_demo(ctx.config()?)?;
    let csv = ctx.file("regularisation.csv");
    report.csv().write(&csv)?;
    Ok(vec![csv])
}

pub fn stability_study(ctx: &Context) -> Result<Vec<PathBuf>> {
    let report = run_stability_study(ctx.config()?)?;
    let csv = ctx.file("stability.csv");
    report.csv().write(&csv)?;
    let slopes = ctx.file("stability_slopes.csv");
    report.slopes_csv().write(&slopes)?;
    let svg = ctx.file("stability.svg");
    write_text(&svg, &report.svg())?;
    Ok(vec![csv, slopes, svg])
}

pub struct BesovArgs {
    pub sigma: f64,
    pub dim: usize,
    pub half_width: f64,
    pub n_cells: usize,
    pub epsilon: f64,
    pub p: LpNorm,
    pub k_max: i64,
}

/// Littlewood-Paley block norms of the mollified power law and their scaled values `2^{(σ+d)k}‖Δ_k K‖`.
pub fn besov_check(ctx: &Context, args: &BesovArgs) -> Result<Vec<PathBuf>> {
    let kernel = Kernel::power_law(args.sigma, args.epsilon, args.dim)?;
    let grid = SpatialGrid::new(args.half_width, args.n_cells, args.dim)?;
    let blocks = besov_block_norms(&kernel.evaluate_on_grid(&grid)?, args.p, args.k_max)?;
    let order = args.sigma + args.dim as f64;
    let mut c = Csv::new(&["k", "block_norm", "scaled"]);
    for (i, v) in blocks.iter().enumerate() {
        let k = i as i64 - 1;
        c.row(vec![k.to_string(), fmt_f64(*v), fmt_f64(2f64.powf(order * k as f64) * v)]);
    }
    let csv = ctx.file("besov.csv");
    c.write(&csv)?;
    let mut t = Csv::new(&["sigma", "hurst_threshold"]);
    if args.sigma <= 0.0 {
        t.row(vec![fmt_f64(args.sigma), fmt_f64(hurst_threshold(args.sigma)?)]);
    }
    let thr = ctx.file("hurst_threshold.csv");
    t.write(&thr)?;
    Ok(vec![csv, thr])
}

