//! Experiment configs, the runner and its outputs.
//!
//! A config is a line-oriented `[section]` / `key = value` text file. Each
//! run writes `<name>.csv`, SVG charts and `<name>_report.json` into the
//! output directory.

pub mod config;
pub mod output;
pub mod runner;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
pub use config::{parse_config, parse_config_for, ExperimentConfig, Kind};
pub use output::{emit_csv, emit_svg, read_trace_csv, TRACE_HEADER};
pub use runner::{run_experiment, Report, Verdict};

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "MONOLAB_OUT";
pub const DEFAULT_OUT: &str = "monolab-out";

/// Exit code for a run that finished with at least one failing verdict.
pub const EXIT_VERDICT_FAIL: i32 = 1;

/// Load one config file for `kind`, applying a resolution scale.
pub fn load_config(path: &Path, kind: Kind, resolution_scale: usize) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = parse_config_for(&text, Some(kind))?;
    if resolution_scale == 0 {
        return Err(Error::Config("resolution scale must be >= 1".into()));
    }
    Ok(cfg.with_resolution_scale(resolution_scale))
}

/// Config files addressed by `path`: the file itself, or every `*.toml`
/// and `*.cfg` file of a directory in name order.
pub fn config_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|s| s.to_str()), Some("toml" | "cfg")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!("{}: no config files", path.display())));
    }
    Ok(out)
}

/// Outcome of one config in a batch.
pub struct BatchItem {
    pub path: PathBuf,
    pub result: Result<Report>,
}

/// Run every config under `path`. A directory of configs writes each run to
/// `out/<file stem>` and runs them on `jobs` threads.
pub fn run_batch(path: &Path, kind: Kind, out: &Path, jobs: usize, resolution_scale: usize) -> Result<Vec<BatchItem>> {
    let paths = config_paths(path)?;
    let multi = path.is_dir();
    let run = |p: &PathBuf| -> BatchItem {
        let result = load_config(p, kind, resolution_scale).and_then(|cfg| {
            let dir = if multi {
                out.join(p.file_stem().map(|s| s.to_os_string()).unwrap_or_default())
            } else {
                out.to_path_buf()
            };
            run_experiment(&cfg, &dir)
        });
        BatchItem { path: p.clone(), result }
    };
    if jobs <= 1 || paths.len() == 1 {
        return Ok(paths.iter().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| paths.par_iter().map(run).collect()))
}

/// Process exit code of a batch: the largest error code, else 1 if any
/// verdict failed, else 0.
pub fn batch_exit_code(items: &[BatchItem]) -> i32 {
    items
        .iter()
        .map(|it| match &it.result {
            Ok(r) => r.exit_code(),
            Err(e) => e.exit_code(),
        })
        .max()
        .unwrap_or(0)
}
