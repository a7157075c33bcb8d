//! Deterministic agent-based traffic microsimulation in which every driver is
//! also a law enforcer.
//!
//! Each simulated dri-vehicle (driver + vehicle) follows the intelligent driver
//! model and a gap-acceptance lane-change rule. Its driving parameters are
//! interpolated between a conservative and its native anchor by a
//! Weber–Fechner intensity computed from two ledgers: spendable transportation
//! resources and a per-period driving credit. Violations are detected by
//! nearby vehicles, fined, and the fine is split among the reporters.
//!
//! Module map:
//!
//! * [`network`]: road topology, camera coverage and congestion tracking.
//! * [`dynamics`]: car following, lane-change necessity/feasibility, integration.
//! * [`economy`]: exact-arithmetic ledgers, grants, fines, fees and bans.
//! * [`behavior`]: scarcity signal, intensity and parameter interpolation.
//! * [`surveillance`]: daily violation sampling, reporter detection, accidents.
//! * [`engine`]: the two-timescale deterministic simulation loop.
//! * [`scenario`]: the complete experiment description and its validation.

pub mod behavior;
pub mod dynamics;
pub mod economy;
pub mod engine;
pub mod network;
pub mod rng;
pub mod scenario;
pub mod surveillance;

/// Index of a dri-vehicle in the population. Ids are dense, starting at 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl VehicleId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub use behavior::{BehaviorAnchors, BehaviorState, DriverType};
pub use dynamics::{DrivingParams, KinematicState};
pub use economy::{EconomyConstants, Ledger, Units, ViolationTariff};
pub use engine::{run, EventLog, MetricsSnapshot, RunOutput, World};
pub use network::{LaneId, RoadNetwork, SegmentId};
pub use scenario::{Mode, ScenarioConfig};
