//! Experiment runner: reads a config, runs stages, writes artifacts and a
//! summary of the headline checks.

pub mod artifact;
pub mod config;
pub mod stages;
pub mod summary;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub use config::{ExperimentConfig, Stage};
pub use summary::Summary;

use artifact::RunLog;
use stages::Context;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("dependency error: stage `{stage}` needs `{missing}`: {detail}")]
    Dependency {
        stage: Stage,
        missing: Stage,
        detail: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: bgwqsd_core::Error,
    },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn stage(stage: Stage, source: bgwqsd_core::Error) -> Self {
        CliError::Stage { stage, source }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn execute(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<Summary, CliError> {
    let spec = cfg.model_spec()?;
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let log = RunLog::open(&dir);
    log.line(&format!(
        "run of {} stage(s) on {} {} with {} threads available",
        stages.len(),
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism().map_or(1, |n| n.get())
    ));
    let ctx = Context {
        cfg,
        spec: &spec,
        dir: &dir,
    };
    for &stage in stages {
        let start = Instant::now();
        log.line(&format!("{stage} started"));
        if let Err(e) = stages::run(stage, &ctx) {
            log.line(&format!("{stage} failed: {e}"));
            return Err(e);
        }
        log.line(&format!("{stage} finished in {:.3} s", start.elapsed().as_secs_f64()));
    }
    let summary = summary::write_summary(&dir, &spec.digest())?;
    log.line(&format!("summary {}", if summary.passed() { "PASS" } else { "FAIL" }));
    Ok(summary)
}

/// Runs one stage against the artifacts already in the output directory.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<Summary, CliError> {
    execute(cfg, &[stage])
}

/// Runs the configured stage list in order.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    cfg.check_stage_order()?;
    execute(cfg, &cfg.stages)
}
