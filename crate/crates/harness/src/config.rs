//! Experiment configuration, read from TOML.
//!
//! Lengths are in spatial units of the kernel, times in units of the
//! horizon `T`, grid sizes are counts of steps or cells.

use std::path::{Path, PathBuf};

use mfy_core::kernels::{hurst_threshold, Kernel, KernelSpec};
use mfy_core::solver::{ConvStrategy, SolveConfig};
use mfy_core::{NoiseKind, SpatialGrid, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Kernel string, e.g. `power_law:-1,eps=0.0625`.
    pub kernel: String,
    /// Mollification radius in grid cells, used when the kernel string has no `eps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_cells: Option<f64>,
    /// Hurst index of the regularising path `Z`; 0.5 is Brownian motion.
    pub hurst: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Time horizon `T`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub n_steps: usize,
    /// Steps of the grid `Z` is sampled on; a multiple of `n_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_steps: Option<usize>,
    /// Spatial box `[−L, L]^d`.
    pub half_width: f64,
    /// Cells per axis, a power of two.
    pub n_cells: usize,
    /// Particle counts `N` of a convergence study.
    #[serde(default)]
    pub particle_counts: Vec<usize>,
    /// Seeds of the particle inputs (and of `Z` in the regularisation demo).
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Seed of `Z`, shared by every run of an experiment.
    #[serde(default)]
    pub noise_seed: u64,
    /// Scale of the idiosyncratic Brownian motions `B^i`.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Initial values are uniform on `[−s, s]^d`.
    #[serde(default = "default_spread")]
    pub initial_spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub convergence: ConvergenceSection,
    #[serde(default)]
    pub regularisation: RegularisationSection,
    #[serde(default)]
    pub stability: StabilitySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    pub picard_tol: f64,
    pub max_iters: usize,
    pub step_constant: f64,
    pub seed: u64,
    /// `auto`, `direct` or `binned`.
    pub strategy: String,
    pub blowup_factor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = SolveConfig::default();
        Self {
            gamma: c.gamma,
            beta: c.beta,
            eta: c.eta,
            picard_tol: c.picard_tol,
            max_iters: c.max_iters,
            step_constant: c.step_constant,
            seed: c.seed,
            strategy: "auto".into(),
            blowup_factor: c.blowup_factor,
        }
    }
}

/// Reference system of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSection {
    pub size: usize,
    pub seed: u64,
    pub picard_tol: f64,
    pub strategy: String,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            size: 4096,
            seed: 1000,
            picard_tol: 1e-4,
            strategy: "binned".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    /// Marginals compared at `i n_steps / checkpoints`, `i = 1..=checkpoints`.
    pub checkpoints: usize,
    /// Hölder exponent of the path-space distance.
    pub path_beta: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            checkpoints: 8,
            path_beta: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularisationSection {
    /// Initial gap of the colliding pair, in mollification radii (grid cells for smooth kernels).
    pub gap: f64,
}

impl Default for RegularisationSection {
    fn default() -> Self {
        Self { gap: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub atoms: usize,
    /// Seed of the initial values.
    pub initial_seed: u64,
    /// Seed of the driving Brownian motions.
    pub path_seed: u64,
    /// Perturbation sizes `δ`; initial values move to `x + δ sign(x)`.
    pub deltas: Vec<f64>,
    /// `(log2 n_steps, log2 n_cells)` per resolution.
    pub resolutions: Vec<[u32; 2]>,
    pub picard_tol: f64,
    pub path_beta: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            atoms: 256,
            initial_seed: 5,
            path_seed: 9,
            deltas: (0..5).map(|j| 0.2 / f64::from(1u32 << j)).collect(),
            resolutions: vec![[7, 9], [8, 10]],
            picard_tol: 1e-8,
            path_beta: 0.45,
        }
    }
}

fn default_dim() -> usize {
    1
}

fn default_horizon() -> f64 {
    1.0
}

fn default_noise_scale() -> f64 {
    0.5
}

fn default_spread() -> f64 {
    1.0
}

pub fn parse_strategy(s: &str) -> Result<ConvStrategy> {
    match s {
        "auto" => Ok(ConvStrategy::Auto),
        "direct" => Ok(ConvStrategy::Direct),
        "binned" => Ok(ConvStrategy::Binned),
        other => Err(HarnessError::Config(format!("unknown strategy {other:?}"))),
    }
}

impl SolverSection {
    pub fn solve_config(&self) -> Result<SolveConfig> {
        let cfg = SolveConfig {
            gamma: self.gamma,
            beta: self.beta,
            eta: self.eta,
            picard_tol: self.picard_tol,
            max_iters: self.max_iters,
            step_constant: self.step_constant,
            seed: self.seed,
            strategy: parse_strategy(&self.strategy)?,
            blowup_factor: self.blowup_factor,
        };
        cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return bad(format!("hurst must lie in (0, 1), got {}", self.hurst));
        }
        if self.n_steps == 0 || !(self.horizon > 0.0) {
            return bad("time grid needs n_steps >= 1 and a positive horizon".into());
        }
        if let Some(fine) = self.noise_steps {
            if fine == 0 || fine % self.n_steps != 0 {
                return bad(format!("noise_steps {fine} is not a multiple of n_steps {}", self.n_steps));
            }
        }
        if self.particle_counts.contains(&0) {
            return bad("particle counts must be positive".into());
        }
        self.kernel()?;
        self.solver.solve_config()?;
        parse_strategy(&self.reference.strategy)?;
        if let Some(dir) = &self.output_dir {
            if dir.exists() && !dir.is_dir() {
                return bad(format!("output_dir {} is not a directory", dir.display()));
            }
        }
        Ok(())
    }

    /// Non-fatal remarks, such as a Hurst index above the kernel's threshold.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(spec) = self.kernel.parse::<KernelSpec>() {
            if let Some(sigma) = spec.sigma().filter(|s| *s <= 0.0) {
                if let Ok(h) = hurst_threshold(sigma) {
                    if self.hurst >= h {
                        out.push(format!("hurst {} is not below the threshold {h} for sigma = {sigma}", self.hurst));
                    }
                }
            }
        }
        out
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.n_steps).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn noise_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.noise_steps.unwrap_or(self.n_steps)).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn spatial_grid(&self) -> Result<SpatialGrid> {
        self.spatial_grid_with(self.n_cells)
    }

    pub fn spatial_grid_with(&self, n_cells: usize) -> Result<SpatialGrid> {
        SpatialGrid::new(self.half_width, n_cells, self.dim).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn noise_kind(&self) -> NoiseKind {
        if self.hurst == 0.5 {
            NoiseKind::Brownian
        } else {
            NoiseKind::fbm(self.hurst)
        }
    }

    /// The kernel with its radius resolved against the configured grid.
    pub fn kernel(&self) -> Result<Kernel> {
        self.kernel_on(&self.spatial_grid()?)
    }

    pub fn kernel_on(&self, grid: &SpatialGrid) -> Result<Kernel> {
        let mut spec: KernelSpec = self.kernel.parse().map_err(|e: mfy_core::Error| HarnessError::Config(e.to_string()))?;
        if spec.epsilon.is_none() {
            if let Some(c) = self.eps_cells {
                spec.epsilon = Some(c * grid.spacing());
            }
        }
        spec.build(self.dim).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
