//! Per-day summary statistics.

use serde::{Deserialize, Serialize};

use crate::economy::Units;

/// One row per simulated day, taken after the daily economic pass.
///
/// Type counts cover vehicles that are not banned at snapshot time and sum to
/// `active`. The accident rate is normalized by `exposed`, the number of
/// vehicles allowed to drive when the day started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub day: u32,
    /// Accidents per 1000 exposed vehicles.
    pub accident_rate: f64,
    pub violations: u32,
    pub n_conservative: u32,
    pub n_normal: u32,
    pub n_aggressive: u32,
    pub n_banned: u32,
    pub mean_lambda: f64,
    pub total_resources: Units,
    pub exposed: u32,
    pub active: u32,
    pub accidents: u32,
    /// Violations that resulted in a fine.
    pub enforced: u32,
    pub undetected: u32,
    pub collisions: u32,
    pub lane_changes: u32,
    pub congestion_fees: u32,
    pub lambda_p10: f64,
    pub lambda_p50: f64,
    pub lambda_p90: f64,
    /// Share of today's violations committed by vehicles with an earlier one.
    pub repeat_fraction: f64,
    /// All resources ever granted.
    pub granted: Units,
    /// All resources that left the system (fees and sunk fines).
    pub sunk: Units,
}

impl MetricsSnapshot {
    /// Σ resources equals grants minus everything sunk.
    pub fn is_balanced(&self) -> bool {
        self.total_resources == self.granted - self.sunk
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
