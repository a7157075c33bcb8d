//! Closed-form behavior curves against the number of violations. No
//! simulation: each row applies `n` fines to a fresh ledger and reads off σ,
//! λ and the interpolated parameters.

use std::io::Write;

use cats_core::behavior::{effective_params, lambda, sigma, BehaviorAnchors, DriverType};
use cats_core::economy::{apply_sunk_fine, EconomyConstants, Ledger, Units, ViolationTariff, ViolationType};
use cats_core::scenario::AnchorConfig;
use cats_core::VehicleId;
use clap::ValueEnum;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Intensity λ.
    Fig4,
    /// Desired velocity per type, km/h.
    Fig5,
    /// Lane-changing duration per type, s.
    Fig6,
}

/// Ledger constants of the violation-count curves: ℘0 = 10, ℘min = 2,
/// ℓ0 = 10 and every fine 2 resources and 2 credit.
pub fn curve_economy() -> (EconomyConstants, ViolationTariff) {
    let c = EconomyConstants {
        p0: Units::from_int(10),
        p_min: Units::from_int(2),
        p_floor_norm: Units::from_int(2),
        l0: Units::from_int(10),
        period_days: 30,
        congestion_fee: Units::from_int(2),
    };
    (c, ViolationTariff::uniform(1, Units::from_int(2), Units::from_int(2)))
}

/// Anchors of the curves: 50/40/30 km/h and 3/5/6 s. The simulation presets
/// use the midpoint rule for the normal type instead, which gives 4.5 s.
pub fn curve_anchors() -> BehaviorAnchors {
    let mut a = AnchorConfig::default_anchors().build();
    a.normal.lane_change_duration = 5.0;
    a
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerPoint {
    pub n_violations: u32,
    pub resources: Units,
    pub credit: Units,
    pub sigma: f64,
    pub lambda: f64,
    pub banned: bool,
}

/// One point per violation count, from 0 up to and including the fine that
/// bans.
pub fn ledger_points() -> Vec<LedgerPoint> {
    let (c, tariff) = curve_economy();
    let mut ledger = Ledger::new(&c);
    let mut out = Vec::new();
    for n in 0.. {
        let s = sigma(&ledger, &c);
        out.push(LedgerPoint { n_violations: n, resources: ledger.resources, credit: ledger.credit, sigma: s, lambda: lambda(s), banned: ledger.is_banned() });
        if ledger.is_banned() {
            break;
        }
        apply_sunk_fine(&mut ledger, VehicleId(0), ViolationType(0), &tariff, &c).expect("type 0 is in the tariff");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypePoint {
    pub n_violations: u32,
    pub lambda: f64,
    pub conservative: f64,
    pub normal: f64,
    pub aggressive: f64,
}

fn type_points(read: impl Fn(&cats_core::dynamics::DrivingParams) -> f64) -> Vec<TypePoint> {
    let anchors = curve_anchors();
    ledger_points()
        .into_iter()
        .map(|p| {
            let at = |t| read(&effective_params(&anchors, t, p.lambda));
            TypePoint {
                n_violations: p.n_violations,
                lambda: p.lambda,
                conservative: at(DriverType::Conservative),
                normal: at(DriverType::Normal),
                aggressive: at(DriverType::Aggressive),
            }
        })
        .collect()
}

/// Desired velocity in km/h.
pub fn velocity_points() -> Vec<TypePoint> {
    type_points(|p| p.v0 * 3.6)
}

/// Lane-changing duration in seconds.
pub fn duration_points() -> Vec<TypePoint> {
    type_points(|p| p.lane_change_duration)
}

pub fn write<W: Write>(fig: Figure, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match fig {
        Figure::Fig4 => ledger_points().iter().try_for_each(|r| w.serialize(r))?,
        Figure::Fig5 => {
            w.write_record(["n_violations", "lambda", "conservative_kmh", "normal_kmh", "aggressive_kmh"])?;
            velocity_points().iter().try_for_each(|r| write_type_row(&mut w, r))?
        }
        Figure::Fig6 => {
            w.write_record(["n_violations", "lambda", "conservative_s", "normal_s", "aggressive_s"])?;
            duration_points().iter().try_for_each(|r| write_type_row(&mut w, r))?
        }
    }
    w.flush()?;
    Ok(())
}

fn write_type_row<W: Write>(w: &mut csv::Writer<W>, r: &TypePoint) -> csv::Result<()> {
    w.write_record([
        r.n_violations.to_string(),
        r.lambda.to_string(),
        r.conservative.to_string(),
        r.normal.to_string(),
        r.aggressive.to_string(),
    ])
}
