//! Multi-seed comparison of CATS and camera-only enforcement across camera
//! coverages, and the trend statistics used to read it.

use std::io::Write;

use cats_core::engine::{run_with, EngineError, MetricsSnapshot, RunOptions};
use cats_core::{Mode, ScenarioConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::pool;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub mode: Mode,
    pub coverage: f64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}/{}%", self.mode_name(), (self.coverage * 100.0).round())
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Cats => "cats",
            Mode::Baseline => "baseline",
        }
    }
}

/// `{cats, baseline} × {0%, 30%, 100%}`.
pub fn standard_cells() -> Vec<Cell> {
    let mut out = Vec::new();
    for mode in [Mode::Cats, Mode::Baseline] {
        for coverage in [0.0, 0.3, 1.0] {
            out.push(Cell { mode, coverage });
        }
    }
    out
}

/// Daily metrics of one cell, one series per seed.
#[derive(Clone, Debug)]
pub struct CellRuns {
    pub cell: Cell,
    pub seeds: Vec<u64>,
    pub runs: Vec<Vec<MetricsSnapshot>>,
}

pub fn cell_config(base: &ScenarioConfig, cell: Cell, seed: u64) -> ScenarioConfig {
    let mut c = base.clone();
    c.mode = cell.mode;
    c.network.camera_coverage = cell.coverage;
    c.seed = seed;
    c
}

/// Runs every (cell, seed) pair. With `parallel` the runs are spread over
/// the thread pool; each run is itself serial, so the output is the same.
pub fn run_cells(base: &ScenarioConfig, cells: &[Cell], seeds: &[u64], parallel: bool) -> Result<Vec<CellRuns>, EngineError> {
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let one = |&(c, s): &(usize, u64)| run_with(&cell_config(base, cells[c], s), RunOptions::default()).map(|o| o.metrics);
    let results: Vec<Result<Vec<MetricsSnapshot>, EngineError>> =
        if parallel { pool().install(|| jobs.par_iter().map(one).collect()) } else { jobs.iter().map(one).collect() };
    let mut results = results.into_iter();
    let mut out = Vec::with_capacity(cells.len());
    for &cell in cells {
        let mut runs = Vec::with_capacity(seeds.len());
        for _ in seeds {
            runs.push(results.next().expect("one result per job")?);
        }
        out.push(CellRuns { cell, seeds: seeds.to_vec(), runs });
    }
    Ok(out)
}

impl CellRuns {
    /// Seed average of `f` for each day.
    pub fn daily_mean(&self, f: impl Fn(&MetricsSnapshot) -> f64) -> Vec<f64> {
        let days = self.runs.iter().map(|r| r.len()).min().unwrap_or(0);
        (0..days).map(|d| self.runs.iter().map(|r| f(&r[d])).sum::<f64>() / self.runs.len() as f64).collect()
    }

    pub fn daily_sd(&self, f: impl Fn(&MetricsSnapshot) -> f64) -> Vec<f64> {
        let mean = self.daily_mean(&f);
        let n = self.runs.len() as f64;
        mean.iter()
            .enumerate()
            .map(|(d, m)| if n < 2.0 { 0.0 } else { (self.runs.iter().map(|r| (f(&r[d]) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() })
            .collect()
    }
}

/// Ordinary least squares of `y` against its index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub slope_se: f64,
}

impl Fit {
    pub fn t(&self) -> f64 {
        if self.slope_se == 0.0 {
            if self.slope == 0.0 {
                0.0
            } else {
                self.slope.signum() * f64::INFINITY
            }
        } else {
            self.slope / self.slope_se
        }
    }

    /// Fitted change from the first to the last of `n` points.
    pub fn change(&self, n: usize) -> f64 {
        self.slope * n.saturating_sub(1) as f64
    }
}

pub fn ols(y: &[f64]) -> Fit {
    let n = y.len() as f64;
    if y.len() < 3 {
        return Fit { slope: 0.0, intercept: y.first().copied().unwrap_or(0.0), slope_se: f64::INFINITY };
    }
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = (0..y.len()).map(|i| (i as f64 - xm).powi(2)).sum();
    let sxy: f64 = y.iter().enumerate().map(|(i, v)| (i as f64 - xm) * (v - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = y.iter().enumerate().map(|(i, v)| (v - intercept - slope * i as f64).powi(2)).sum();
    Fit { slope, intercept, slope_se: (rss / (n - 2.0) / sxx).sqrt() }
}

#[derive(Debug, Serialize)]
struct DailyRow {
    cell: String,
    day: u32,
    seeds: usize,
    mean_accident_rate: f64,
    sd_accident_rate: f64,
    mean_violations: f64,
    mean_conservative: f64,
    mean_normal: f64,
    mean_aggressive: f64,
}

#[derive(Debug, Serialize)]
struct TrendRow {
    cell: String,
    day0_accident_rate: f64,
    slope: f64,
    slope_se: f64,
    t: f64,
    fitted_change: f64,
}

pub fn write_daily<W: Write>(out: W, cells: &[CellRuns]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        let rate = c.daily_mean(|m| m.accident_rate);
        let sd = c.daily_sd(|m| m.accident_rate);
        let viol = c.daily_mean(|m| m.violations as f64);
        let cons = c.daily_mean(|m| m.n_conservative as f64);
        let norm = c.daily_mean(|m| m.n_normal as f64);
        let aggr = c.daily_mean(|m| m.n_aggressive as f64);
        for d in 0..rate.len() {
            w.serialize(DailyRow {
                cell: c.cell.label(),
                day: d as u32,
                seeds: c.runs.len(),
                mean_accident_rate: rate[d],
                sd_accident_rate: sd[d],
                mean_violations: viol[d],
                mean_conservative: cons[d],
                mean_normal: norm[d],
                mean_aggressive: aggr[d],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trends<W: Write>(out: W, cells: &[CellRuns]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        let rate = c.daily_mean(|m| m.accident_rate);
        let fit = ols(&rate);
        w.serialize(TrendRow {
            cell: c.cell.label(),
            day0_accident_rate: rate.first().copied().unwrap_or(0.0),
            slope: fit.slope,
            slope_se: fit.slope_se,
            t: fit.t(),
            fitted_change: fit.change(rate.len()),
        })?;
    }
    w.flush()?;
    Ok(())
}
