//! Experiment configuration, catalog and persistence.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, Tolerances};
pub use experiments::Runner;
pub use output::{ResultRow, Verdict};

use crate::error::Result;
use output::RunMeta;
use std::path::Path;
use std::time::Instant;

/// Runs the configured experiments, writes `results.csv` and `summary.json`
/// under `cfg.out`, and reports whether every non-diagnostic row passed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<ResultRow>, bool)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut runner = Runner::new(cfg.clone());
    let rows = runner.run_configured()?;
    let all_pass = rows.iter().all(|r| r.pass != Verdict::Fail);
    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_seconds: start.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
        seed: cfg.seed,
        experiments: rows.iter().map(|r| r.experiment.clone()).fold(Vec::new(), |mut v, e| {
            if !v.contains(&e) {
                v.push(e);
            }
            v
        }),
        all_pass,
        tolerances: cfg.tol.clone(),
    };
    output::write_outputs(Path::new(&cfg.out), &rows, &meta)?;
    Ok((rows, all_pass))
}
