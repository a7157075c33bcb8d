//! Wall-clock scaling of the tick loop with population size.

use std::io::Write;
use std::time::Instant;

use cats_core::engine::{EngineError, RunOptions, World};
use cats_core::ScenarioConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::pool;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_vehicles: u32,
    pub parallel: bool,
    pub ticks: u64,
    pub seconds: f64,
    /// Vehicle-ticks per second.
    pub ticks_per_sec_per_vehicle: f64,
    /// Hash of the final kinematic state; equal across serial and parallel.
    pub state_hash: String,
}

/// The replication scenario with `n` vehicles on a ring scaled to keep the
/// density of the 2000-vehicle preset.
pub fn bench_config(n: u32) -> ScenarioConfig {
    let mut c = ScenarioConfig::replication(0.3);
    c.population.total = n;
    if let cats_core::network::Layout::Ring { length_km, .. } = &mut c.network.layout {
        *length_km = 20.0 * n as f64 / 2000.0;
    }
    c
}

pub fn state_hash(world: &World) -> String {
    let mut h = Sha256::new();
    for x in world.state_digest() {
        h.update(x.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Times `ticks` dynamics ticks. Setup is not timed.
pub fn bench_one(n: u32, ticks: u64, parallel: bool) -> Result<BenchRow, EngineError> {
    let mut world = World::with_options(bench_config(n), RunOptions { parallel, ..RunOptions::default() })?;
    let start = Instant::now();
    for _ in 0..ticks {
        world.step_tick()?;
    }
    let seconds = start.elapsed().as_secs_f64();
    let work = n as f64 * ticks as f64;
    Ok(BenchRow {
        n_vehicles: n,
        parallel,
        ticks,
        seconds,
        ticks_per_sec_per_vehicle: if seconds > 0.0 { work / seconds } else { 0.0 },
        state_hash: state_hash(&world),
    })
}

pub fn bench(counts: &[u32], ticks: u64, with_parallel: bool) -> Result<Vec<BenchRow>, EngineError> {
    let mut rows = Vec::new();
    for &n in counts {
        rows.push(bench_one(n, ticks, false)?);
        if with_parallel {
            rows.push(pool().install(|| bench_one(n, ticks, true))?);
        }
    }
    Ok(rows)
}

pub fn write<W: Write>(out: W, rows: &[BenchRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
