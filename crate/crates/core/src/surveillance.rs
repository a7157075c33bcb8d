//! Violation sampling, reporter detection and accident escalation.
//!
//! Violations are drawn once per vehicle and simulated day, at a tick drawn
//! uniformly within the day. Detection picks the reporters among the other
//! vehicles on the road; in baseline mode only cameras enforce.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::DriverType;
use crate::economy::ViolationType;
use crate::network::{LaneId, RoadNetwork};
use crate::rng::{bernoulli, Purpose, StreamId};
use crate::scenario::Mode;
use crate::VehicleId;

#[derive(Debug, Error, PartialEq)]
pub enum SurveillanceError {
    #[error("violation rate {0} is outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("accident probability {0} is outside [0, 1]")]
    AccidentProbabilityOutOfRange(f64),
    #[error("accident probabilities must not decrease from conservative to aggressive")]
    AccidentProbabilityNotMonotone,
    #[error("fixed-count detection needs at least one reporter")]
    ZeroReporters,
    #[error("detection radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("baseline enforcement called in CATS mode")]
    NotBaselineMode,
}

/// Daily violation probability per effective type, indexed
/// conservative, normal, aggressive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationRates {
    /// Inside camera-covered segments.
    pub covered: [f64; 3],
    /// Everywhere else.
    pub uncovered: [f64; 3],
}

impl ViolationRates {
    pub fn zero() -> Self {
        ViolationRates { covered: [0.0; 3], uncovered: [0.0; 3] }
    }

    pub fn rate(&self, class: DriverType, covered: bool) -> f64 {
        if covered {
            self.covered[class.index()]
        } else {
            self.uncovered[class.index()]
        }
    }

    pub fn validate(&self) -> Result<(), SurveillanceError> {
        for &r in self.covered.iter().chain(&self.uncovered) {
            if !(0.0..=1.0).contains(&r) {
                return Err(SurveillanceError::RateOutOfRange(r));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DetectionMode {
    /// The `m` nearest vehicles.
    FixedCount { m: u32 },
    /// Every vehicle within `meters`.
    Radius { meters: f64 },
}

fn default_accident_probability() -> [f64; 3] {
    [0.0, 0.1, 0.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionPolicy {
    pub mode: DetectionMode,
    /// Probability that an accepted violation becomes an accident, by the
    /// offender's effective type.
    #[serde(default = "default_accident_probability")]
    pub accident_probability: [f64; 3],
}

impl Default for DetectionPolicy {
    fn default() -> Self {
        DetectionPolicy { mode: DetectionMode::FixedCount { m: 2 }, accident_probability: default_accident_probability() }
    }
}

impl DetectionPolicy {
    pub fn validate(&self) -> Result<(), SurveillanceError> {
        match self.mode {
            DetectionMode::FixedCount { m } if m == 0 => return Err(SurveillanceError::ZeroReporters),
            DetectionMode::Radius { meters } if !(meters > 0.0 && meters.is_finite()) => {
                return Err(SurveillanceError::NonPositiveRadius(meters))
            }
            _ => {}
        }
        for &p in &self.accident_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(SurveillanceError::AccidentProbabilityOutOfRange(p));
            }
        }
        let p = self.accident_probability;
        if p[0] > p[1] || p[1] > p[2] {
            return Err(SurveillanceError::AccidentProbabilityNotMonotone);
        }
        Ok(())
    }
}

/// The tick within the day at which `vehicle` is inspected.
pub fn sample_tick(seed: u64, day: u32, vehicle: VehicleId, ticks_per_day: u64) -> u64 {
    if ticks_per_day == 0 {
        return 0;
    }
    StreamId::new(Purpose::SampleTick, day, vehicle).open(seed).random_range(0..ticks_per_day)
}

/// What the sampler needs to know about a vehicle at its inspection tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inspection {
    pub vehicle: VehicleId,
    pub class: DriverType,
    pub covered: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Offense {
    pub offender: VehicleId,
    pub kind: ViolationType,
    pub stream: StreamId,
}

/// One vehicle's daily draw. The uniform and the type are always drawn, so
/// the stream position does not depend on the rate.
pub fn sample_violation(
    seed: u64,
    day: u32,
    inspection: &Inspection,
    rates: &ViolationRates,
    catalog_size: usize,
) -> Option<Offense> {
    let stream = StreamId::new(Purpose::Violation, day, inspection.vehicle);
    let mut rng = stream.open(seed);
    let fires = bernoulli(&mut rng, rates.rate(inspection.class, inspection.covered));
    let kind = ViolationType(rng.random_range(0..catalog_size.max(1)) as u16);
    fires.then_some(Offense { offender: inspection.vehicle, kind, stream })
}

/// Offenses among `inspections`, returned in ascending offender id.
pub fn sample_violations(
    seed: u64,
    day: u32,
    inspections: &[Inspection],
    rates: &ViolationRates,
    catalog_size: usize,
) -> Vec<Offense> {
    let mut out: Vec<Offense> =
        inspections.iter().filter_map(|i| sample_violation(seed, day, i, rates, catalog_size)).collect();
    out.sort_by_key(|o| o.offender);
    out
}

/// A vehicle on the road at a point in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Located {
    pub vehicle: VehicleId,
    pub lane: LaneId,
    pub position: f64,
}

/// On-road distance along the corridor loop; `None` across corridors.
pub fn road_distance(network: &RoadNetwork, a: &Located, b: &Located) -> Option<f64> {
    let lanes = network.lanes();
    let ca = lanes[a.lane.index()].corridor;
    if ca != lanes[b.lane.index()].corridor {
        return None;
    }
    let len = network.corridors()[ca.0 as usize].length;
    let d = (a.position - b.position).abs().rem_euclid(len);
    Some(d.min(len - d))
}

/// Reporters for a violation by `offender`, nearest first (ties by lower id).
/// Empty only when nobody else shares the offender's corridor.
pub fn detect_reporters(
    network: &RoadNetwork,
    offender: &Located,
    others: &[Located],
    policy: &DetectionPolicy,
) -> Vec<VehicleId> {
    let mut near: Vec<(f64, VehicleId)> = others
        .iter()
        .filter(|o| o.vehicle != offender.vehicle)
        .filter_map(|o| road_distance(network, offender, o).map(|d| (d, o.vehicle)))
        .collect();
    let order = |a: &(f64, VehicleId), b: &(f64, VehicleId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    match policy.mode {
        DetectionMode::FixedCount { m } => {
            let m = m as usize;
            if m > 0 && m < near.len() {
                near.select_nth_unstable_by(m - 1, order);
                near.truncate(m);
            }
            near.sort_by(order);
            near.iter().take(m).map(|x| x.1).collect()
        }
        DetectionMode::Radius { meters } => {
            near.sort_by(order);
            let within: Vec<VehicleId> = near.iter().take_while(|x| x.0 <= meters).map(|x| x.1).collect();
            if within.is_empty() {
                near.first().map(|x| x.1).into_iter().collect()
            } else {
                within
            }
        }
    }
}

/// Whether an accepted violation escalates into an accident.
pub fn escalate_accident(seed: u64, day: u32, offender: VehicleId, class: DriverType, policy: &DetectionPolicy) -> bool {
    let mut rng = StreamId::new(Purpose::Accident, day, offender).open(seed);
    bernoulli(&mut rng, policy.accident_probability[class.index()])
}

/// Camera-only enforcement: a violation is fined iff it happened under a
/// camera.
pub fn baseline_enforcement(mode: Mode, covered: bool) -> Result<bool, SurveillanceError> {
    match mode {
        Mode::Cats => Err(SurveillanceError::NotBaselineMode),
        Mode::Baseline => Ok(covered),
    }
}
