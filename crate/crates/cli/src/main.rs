use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bgwqsd_cli::config::{Anchors, KernelMode, LambdaGrid, SmallSet};
use bgwqsd_cli::{run_pipeline, run_stage, ExperimentConfig, Stage};

/// Quasi-stationary analysis of bisexual Galton-Watson processes.
#[derive(Parser)]
#[command(name = "bgwqsd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Check the mating function and offspring law.
    Validate(ConfigArg),
    /// Eigen-data of the growth operator.
    Spectral {
        #[command(flatten)]
        c: ConfigArg,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Build the truncated kernel.
    Kernel {
        #[command(flatten)]
        c: ConfigArg,
        #[arg(long)]
        radius: Option<u64>,
        #[arg(long)]
        mode: Option<KernelMode>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Quasi-stationary distribution of the kernel.
    Qsd {
        #[command(flatten)]
        c: ConfigArg,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Resolvent family of quasi-stationary distributions.
    QsdFamily {
        #[command(flatten)]
        c: ConfigArg,
        /// `default` or comma-separated values.
        #[arg(long)]
        lambda_grid: Option<LambdaGrid>,
        /// `auto` or states such as `1,0;2,0`.
        #[arg(long)]
        anchors: Option<Anchors>,
        #[arg(long)]
        tail_tol: Option<f64>,
    },
    /// Drift inequality for the Lyapunov function.
    Lyapunov {
        #[command(flatten)]
        c: ConfigArg,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        radius: Option<u64>,
        #[arg(long)]
        mode: Option<KernelMode>,
    },
    /// Diagnostics E1 to E4 on the kernel.
    VerifyE {
        #[command(flatten)]
        c: ConfigArg,
        /// `auto` or `radius=r`.
        #[arg(long)]
        small_set: Option<SmallSet>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Simulate paths and estimate the survival rate.
    Simulate {
        #[command(flatten)]
        c: ConfigArg,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Distance of the conditioned law to the QSD over time.
    Yaglom {
        #[command(flatten)]
        c: ConfigArg,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the stage list from the config.
    Pipeline(ConfigArg),
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let load = |c: &ConfigArg| ExperimentConfig::load(&c.config);
    let result = (|| {
        let (mut cfg, stage) = match cli.command {
            Command::Pipeline(c) => return run_pipeline(&load(&c)?),
            Command::Validate(c) => (load(&c)?, Stage::Validate),
            Command::Spectral { c, tol } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.spectral.tol, tol);
                (cfg, Stage::Spectral)
            }
            Command::Kernel {
                c,
                radius,
                mode,
                samples,
                seed,
            } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.kernel.radius, radius);
                set(&mut cfg.kernel.mode, mode);
                set(&mut cfg.kernel.samples, samples);
                cfg.kernel.seed = seed.or(cfg.kernel.seed);
                (cfg, Stage::Kernel)
            }
            Command::Qsd { c, tol } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.qsd.tol, tol);
                (cfg, Stage::Qsd)
            }
            Command::QsdFamily {
                c,
                lambda_grid,
                anchors,
                tail_tol,
            } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.qsd_family.lambda_grid, lambda_grid);
                set(&mut cfg.qsd_family.anchors, anchors);
                set(&mut cfg.qsd_family.tail_tol, tail_tol);
                (cfg, Stage::QsdFamily)
            }
            Command::Lyapunov { c, a, radius, mode } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.lyapunov.a, a);
                set(&mut cfg.lyapunov.radius, radius);
                set(&mut cfg.lyapunov.mode, mode);
                (cfg, Stage::Lyapunov)
            }
            Command::VerifyE { c, small_set, window } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.verify_e.small_set, small_set);
                set(&mut cfg.verify_e.window, window);
                (cfg, Stage::VerifyE)
            }
            Command::Simulate {
                c,
                paths,
                horizon,
                seed,
            } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.simulate.paths, paths);
                set(&mut cfg.simulate.horizon, horizon);
                cfg.simulate.seed = seed.or(cfg.simulate.seed);
                (cfg, Stage::Simulate)
            }
            Command::Yaglom { c, paths, seed } => {
                let mut cfg = load(&c)?;
                set(&mut cfg.yaglom.paths, paths);
                cfg.yaglom.seed = seed.or(cfg.yaglom.seed);
                (cfg, Stage::Yaglom)
            }
        };
        cfg.stages = vec![stage];
        run_stage(&cfg, stage)
    })();
    match result {
        Ok(summary) => {
            print!("{}", summary.render());
            if summary.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
