use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfy::commands::{self, AveragedFieldArgs, BesovArgs, Context, GenFbm, ParticlesArgs, SewingArgs};
use mfy::config::ExperimentConfig;
use mfy::error::{HarnessError, Result};
use mfy_core::kernels::LpNorm;

#[derive(Parser)]
#[command(name = "mfy", version, about = "Mean-field systems regularised by a rough path")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of the noise, the solver and single-run inputs.
    #[arg(long, global = true, env = "MFY_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a fractional Brownian path to CSV and binary.
    GenFbm {
        #[arg(long, default_value_t = 0.1)]
        hurst: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 1024)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
    /// Build the averaged field of the configured kernel and estimate its norm.
    AveragedField {
        /// Convolve with occupation densities instead of direct quadrature.
        #[arg(long)]
        convolution: bool,
        #[arg(long, default_value_t = 0.75)]
        gamma: f64,
        #[arg(long, default_value_t = 2)]
        alpha: u32,
        #[arg(long, default_value_t = 256)]
        pair_budget: usize,
    },
    /// Sewing-error rates of the nonlinear Young integral along a fixed point.
    SewingStudy {
        #[arg(long, default_value_t = 32)]
        atoms: usize,
        #[arg(long, default_value_t = 3)]
        min_level: u32,
        #[arg(long, default_value_t = 9)]
        max_level: u32,
    },
    /// Solve the McKean-Vlasov fixed point over i.i.d. samples.
    SolveMkv {
        #[arg(long, default_value_t = 256)]
        atoms: usize,
    },
    /// Simulate the interacting particle system.
    Particles {
        /// Particle count; defaults to the first configured count.
        #[arg(long)]
        n: Option<usize>,
        /// Saved driving paths (binary or .csv), one per particle, starting at its initial value.
        #[arg(long, num_args = 1..)]
        paths: Vec<PathBuf>,
        /// Saved regularising path.
        #[arg(long)]
        z: Option<PathBuf>,
    },
    /// Mean-field convergence against a large reference system.
    ConvergenceStudy,
    /// Colliding pair with and without the regularising path.
    RegularisationDemo,
    /// Output distance against input perturbation size.
    StabilityStudy,
    /// Littlewood-Paley block norms of a mollified power law.
    BesovCheck {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 16.0)]
        half_width: f64,
        #[arg(long, default_value_t = 16384)]
        cells: usize,
        #[arg(long, default_value_t = 1.0 / 256.0)]
        eps: f64,
        /// 1, 2 or inf.
        #[arg(long, default_value = "1")]
        p: String,
        #[arg(long, default_value_t = 7)]
        k_max: i64,
    },
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    let config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    if let Some(c) = &config {
        for w in c.warnings() {
            eprintln!("warning: {w}");
        }
    }
    let ctx = Context::new(config, cli.seed, cli.out);
    match cli.command {
        Command::GenFbm { hurst, dim, steps, horizon } => commands::gen_fbm(&ctx, &GenFbm { hurst, dim, steps, horizon }),
        Command::AveragedField {
            convolution,
            gamma,
            alpha,
            pair_budget,
        } => commands::averaged_field(
            &ctx,
            &AveragedFieldArgs {
                convolution,
                gamma,
                alpha,
                pair_budget,
            },
        ),
        Command::SewingStudy { atoms, min_level, max_level } => commands::sewing_study(&ctx, &SewingArgs { atoms, min_level, max_level }),
        Command::SolveMkv { atoms } => commands::solve_mkv_cmd(&ctx, atoms),
        Command::Particles { n, paths, z } => commands::particles(&ctx, &ParticlesArgs { n, paths, z }),
        Command::ConvergenceStudy => commands::convergence_study(&ctx),
        Command::RegularisationDemo => commands::regularisation_demo(&ctx),
        Command::StabilityStudy => commands::stability_study(&ctx),
        Command::BesovCheck {
            sigma,
            dim,
            half_width,
            cells,
            eps,
            p,
            k_max,
        } => {
            let p: LpNorm = p.parse().map_err(|e: mfy_core::Error| HarnessError::Config(e.to_string()))?;
            commands::besov_check(
                &ctx,
                &BesovArgs {
                    sigma,
                    dim,
                    half_width,
                    n_cells: cells,
                    epsilon: eps,
                    p,
                    k_max,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
