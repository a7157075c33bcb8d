//! Experiment harness around `cats-core`: scenario loading, CSV artifacts,
//! the closed-form curves, the multi-seed comparison and the scaling bench.

pub mod bench;
pub mod config;
pub mod csvio;
pub mod curves;
pub mod experiments;
pub mod gnuplot;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use cats_core::engine::{run_with, EngineError, RunOptions, RunOutput};
use cats_core::ScenarioConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::ConfigError;

/// Caps the worker count of [`pool`].
pub const THREADS_VAR: &str = "CATS_SIM_THREADS";

/// The shared worker pool, sized by `CATS_SIM_THREADS` when set to a
/// positive integer and by rayon's default otherwise.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|s| s.trim().parse::<usize>().ok()).filter(|&n| n > 0) {
            b = b.num_threads(n);
        }
        b.build().expect("thread pool")
    })
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for anything wrong with the scenario, 3 for failures while running
    /// or writing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Engine(EngineError::Config(_)) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv { path: path.to_path_buf(), source }
}

/// Renders into memory with `render`, then writes `dir/name`, creating `dir`.
pub fn write_file(dir: &Path, name: &str, render: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut buf = Vec::new();
    render(&mut buf).map_err(csv_err(&path))?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    fs::write(&path, &buf).map_err(io_err(&path))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalCounts {
    pub conservative: u32,
    pub normal: u32,
    pub aggressive: u32,
    pub banned: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub days: u32,
    pub vehicles: u32,
    pub final_counts: FinalCounts,
    pub total_accidents: u64,
    pub total_violations: u64,
    pub total_collisions: u64,
    pub wall_clock_s: f64,
    pub metrics_sha256: String,
    pub events_sha256: String,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub metrics: PathBuf,
    pub events: PathBuf,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

/// Runs a validated scenario, holding the pool when `parallel` is set.
pub fn simulate(config: &ScenarioConfig, parallel: bool) -> Result<RunOutput, EngineError> {
    let options = RunOptions { parallel, ..RunOptions::default() };
    if parallel {
        pool().install(|| run_with(config, options))
    } else {
        run_with(config, options)
    }
}

/// Runs the scenario and writes `metrics.csv`, `events.csv` and
/// `summary.json` under `out`. Nothing is written if the run fails.
pub fn run_to_dir(config: &ScenarioConfig, out: &Path, parallel: bool) -> Result<RunArtifacts, CliError> {
    let start = Instant::now();
    let output = simulate(config, parallel)?;
    let wall_clock_s = start.elapsed().as_secs_f64();

    let mut metrics_buf = Vec::new();
    csvio::write_metrics(&mut metrics_buf, &output.metrics).map_err(csv_err(&out.join("metrics.csv")))?;
    let mut events_buf = Vec::new();
    csvio::write_events(&mut events_buf, output.log.iter()).map_err(csv_err(&out.join("events.csv")))?;

    let last = output.metrics.last();
    let sum = |f: fn(&cats_core::MetricsSnapshot) -> u32| output.metrics.iter().map(|m| f(m) as u64).sum::<u64>();
    let summary = Summary {
        seed: config.seed,
        days: output.metrics.len() as u32,
        vehicles: config.population.total,
        final_counts: FinalCounts {
            conservative: last.map_or(0, |m| m.n_conservative),
            normal: last.map_or(0, |m| m.n_normal),
            aggressive: last.map_or(0, |m| m.n_aggressive),
            banned: last.map_or(0, |m| m.n_banned),
        },
        total_accidents: sum(|m| m.accidents),
        total_violations: sum(|m| m.violations),
        total_collisions: sum(|m| m.collisions),
        wall_clock_s,
        metrics_sha256: hex::encode(Sha256::digest(&metrics_buf)),
        events_sha256: hex::encode(Sha256::digest(&events_buf)),
    };

    fs::create_dir_all(out).map_err(io_err(out))?;
    let metrics = out.join("metrics.csv");
    fs::write(&metrics, &metrics_buf).map_err(io_err(&metrics))?;
    let events = out.join("events.csv");
    fs::write(&events, &events_buf).map_err(io_err(&events))?;
    let summary_path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json + "\n").map_err(io_err(&summary_path))?;
    Ok(RunArtifacts { metrics, events, summary_path, summary })
}

/// Writes the seed-averaged daily table (`compare_daily.csv`) and the trend
/// fits (`compare_trends.csv`).
pub fn compare_to_dir(
    base: &ScenarioConfig,
    seeds: &[u64],
    parallel: bool,
    out: &Path,
) -> Result<(PathBuf, PathBuf), CliError> {
    if seeds.len() < 3 {
        return Err(CliError::Usage(format!("compare needs at least 3 seeds for trend statistics, got {}", seeds.len())));
    }
    let cells = experiments::run_cells(base, &experiments::standard_cells(), seeds, parallel)?;
    let daily = write_file(out, "compare_daily.csv", |b| experiments::write_daily(b, &cells))?;
    let trends = write_file(out, "compare_trends.csv", |b| experiments::write_trends(b, &cells))?;
    Ok((daily, trends))
}

/// Converts `csv` into `<stem>.dat` and `<stem>.gp` under `out`.
pub fn gnuplot_to_dir(csv_path: &Path, out: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let input = fs::File::open(csv_path).map_err(io_err(csv_path))?;
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string();
    let dat_name = format!("{stem}.dat");
    let mut buf = Vec::new();
    let cols = gnuplot::csv_to_dat(input, &mut buf).map_err(csv_err(csv_path))?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let dat = out.join(&dat_name);
    fs::write(&dat, &buf).map_err(io_err(&dat))?;
    let gp = out.join(format!("{stem}.gp"));
    fs::write(&gp, gnuplot::script(&dat_name, &cols)).map_err(io_err(&gp))?;
    Ok((dat, gp))
}
