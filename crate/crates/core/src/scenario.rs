//! The complete, serializable description of an experiment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{AnchorError, BehaviorAnchors, DriverType};
use crate::dynamics::DrivingParams;
use crate::economy::{EconomyConstants, EconomyError, Units, ViolationTariff};
use crate::network::{build_network, NetworkConfig, NetworkError, RoadNetwork};
use crate::surveillance::{DetectionMode, DetectionPolicy, SurveillanceError, ViolationRates};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Mutual supervision: nearby vehicles report, fines feed the reporters and
    /// the ledgers modulate behavior.
    Cats,
    /// Cameras only: covered violations are fined into a sink and behavior is
    /// never modulated.
    Baseline,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Cats => "cats",
            Mode::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeFractions {
    pub conservative: f64,
    pub normal: f64,
    pub aggressive: f64,
}

impl TypeFractions {
    pub fn as_array(&self) -> [f64; 3] {
        [self.conservative, self.normal, self.aggressive]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub total: u32,
    pub fractions: TypeFractions,
}

impl PopulationConfig {
    /// Vehicles per native type, rounded by largest remainder so the counts
    /// sum to `total`. Remainder ties go to the earlier type.
    pub fn counts(&self) -> [u32; 3] {
        let f = self.fractions.as_array();
        let sum: f64 = f.iter().sum();
        let exact: Vec<f64> = f.iter().map(|x| x / sum * self.total as f64).collect();
        let mut counts: [u32; 3] = [0; 3];
        for i in 0..3 {
            counts[i] = exact[i].floor() as u32;
        }
        let mut left = self.total - counts.iter().sum::<u32>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

/// A driving-parameter tuple as written in scenario files, with the desired
/// velocity in km/h.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub v0_kmh: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub accel_exponent: f64,
    pub jam_distance: f64,
    pub speed_ratio_threshold: f64,
    pub mu_tl: f64,
    pub mu_tf: f64,
    pub mu_cl: f64,
    pub lane_change_duration: f64,
}

impl ParamsSpec {
    pub fn to_params(&self) -> DrivingParams {
        DrivingParams {
            v0: self.v0_kmh / 3.6,
            time_headway: self.time_headway,
            max_accel: self.max_accel,
            comfort_decel: self.comfort_decel,
            accel_exponent: self.accel_exponent,
            jam_distance: self.jam_distance,
            speed_ratio_threshold: self.speed_ratio_threshold,
            mu_tl: self.mu_tl,
            mu_tf: self.mu_tf,
            mu_cl: self.mu_cl,
            lane_change_duration: self.lane_change_duration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub conservative: ParamsSpec,
    /// Omitted means the componentwise midpoint of the other two.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<ParamsSpec>,
    pub aggressive: ParamsSpec,
}

impl AnchorConfig {
    pub fn build(&self) -> BehaviorAnchors {
        let a = self.conservative.to_params();
        let c = self.aggressive.to_params();
        match &self.normal {
            Some(b) => BehaviorAnchors { conservative: a, normal: b.to_params(), aggressive: c },
            None => BehaviorAnchors::with_midpoint(a, c),
        }
    }

    /// Conservative and aggressive anchors used by the shipped presets.
    pub fn default_anchors() -> Self {
        AnchorConfig {
            conservative: ParamsSpec {
                v0_kmh: 50.0,
                time_headway: 1.8,
                max_accel: 1.0,
                comfort_decel: 1.5,
                accel_exponent: 4.0,
                jam_distance: 3.0,
                speed_ratio_threshold: 0.6,
                mu_tl: 1.5,
                mu_tf: 1.5,
                mu_cl: 1.05,
                lane_change_duration: 3.0,
            },
            normal: None,
            aggressive: ParamsSpec {
                v0_kmh: 30.0,
                time_headway: 1.0,
                max_accel: 2.0,
                comfort_decel: 3.0,
                accel_exponent: 4.0,
                jam_distance: 1.5,
                speed_ratio_threshold: 0.9,
                mu_tl: 0.6,
                mu_tf: 0.5,
                mu_cl: 0.42,
                lane_change_duration: 6.0,
            },
        }
    }
}

fn default_dt() -> f64 {
    0.1
}
fn default_window() -> f64 {
    600.0
}
fn default_b_emergency() -> f64 {
    8.0
}
fn default_closure_horizon() -> f64 {
    200.0
}
fn default_vehicle_length() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Tick length, s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Simulated driving per day, s.
    #[serde(default = "default_window")]
    pub window_s: f64,
    /// Hard floor on the car-following deceleration, m/s².
    #[serde(default = "default_b_emergency")]
    pub b_emergency: f64,
    /// Closures nearer than this force a lane-change attempt, m.
    #[serde(default = "default_closure_horizon")]
    pub closure_horizon_m: f64,
    #[serde(default = "default_vehicle_length")]
    pub vehicle_length_m: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            dt: default_dt(),
            window_s: default_window(),
            b_emergency: default_b_emergency(),
            closure_horizon_m: default_closure_horizon(),
            vehicle_length_m: default_vehicle_length(),
        }
    }
}

impl DynamicsConfig {
    pub fn ticks_per_day(&self) -> u64 {
        (self.window_s / self.dt).round() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub seed: u64,
    pub horizon_days: u32,
    pub network: NetworkConfig,
    pub population: PopulationConfig,
    pub anchors: AnchorConfig,
    pub economy: EconomyConstants,
    pub tariff: ViolationTariff,
    pub rates: ViolationRates,
    #[serde(default)]
    pub detection: DetectionPolicy,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("economy: {0}")]
    Economy(#[from] EconomyError),
    #[error("anchors: {0}")]
    Anchors(#[from] AnchorError),
    #[error("surveillance: {0}")]
    Surveillance(#[from] SurveillanceError),
    #[error("population: {0}")]
    Population(String),
    #[error("dynamics: {0}")]
    Dynamics(String),
    #[error("horizon_days must be at least 1")]
    EmptyHorizon,
}

impl ScenarioConfig {
    /// Full validation. Returns the built network so callers do not build it
    /// twice.
    pub fn validate(&self) -> Result<RoadNetwork, ScenarioError> {
        if self.horizon_days == 0 {
            return Err(ScenarioError::EmptyHorizon);
        }
        let network = build_network(&self.network)?;
        self.economy.validate()?;
        self.tariff.validate()?;
        self.rates.validate()?;
        self.detection.validate()?;
        self.anchors.build().validate()?;

        let f = self.population.fractions.as_array();
        if f.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(ScenarioError::Population("fractions must be non-negative".into()));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::Population(format!("fractions sum to {}, expected 1", f.iter().sum::<f64>())));
        }
        if self.population.total == 0 {
            return Err(ScenarioError::Population("total must be at least 1".into()));
        }

        let d = &self.dynamics;
        let positive = [("dt", d.dt), ("window_s", d.window_s), ("b_emergency", d.b_emergency), ("vehicle_length_m", d.vehicle_length_m)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ScenarioError::Dynamics(format!("{name} must be positive, got {v}")));
            }
        }
        if !(d.closure_horizon_m >= 0.0) {
            return Err(ScenarioError::Dynamics("closure_horizon_m must be non-negative".into()));
        }
        for t in DriverType::ALL {
            if d.b_emergency < self.anchors.build().get(t).comfort_decel {
                return Err(ScenarioError::Dynamics(format!("b_emergency must be at least the {t} comfortable deceleration")));
            }
        }
        let ticks = d.window_s / d.dt;
        if (ticks - ticks.round()).abs() > 1e-6 {
            return Err(ScenarioError::Dynamics(format!("window_s / dt = {ticks} is not a whole number of ticks")));
        }

        let capacity: f64 = network
            .lanes()
            .iter()
            .map(|l| (network.lane_length(l.id) / (d.vehicle_length_m + self.anchors.conservative.jam_distance)).floor())
            .sum();
        if self.population.total as f64 > capacity {
            return Err(ScenarioError::Population(format!(
                "{} vehicles do not fit on the network (capacity {capacity})",
                self.population.total
            )));
        }
        Ok(network)
    }

    /// The mutual-supervision replication scenario: 2000 vehicles split
    /// 25/50/25, tariffs of 2 resource and 2 credit, two reporters per
    /// violation, normal anchor at the midpoint, 30 days in a single
    /// allocation period.
    pub fn replication(camera_coverage: f64) -> Self {
        ScenarioConfig {
            mode: Mode::Cats,
            seed: 1,
            horizon_days: 30,
            network: NetworkConfig::ring(20.0, 4, camera_coverage),
            population: PopulationConfig {
                total: 2000,
                fractions: TypeFractions { conservative: 0.25, normal: 0.5, aggressive: 0.25 },
            },
            anchors: AnchorConfig::default_anchors(),
            economy: EconomyConstants {
                p0: Units::from_int(10),
                p_min: Units::from_int(2),
                p_floor_norm: Units::from_int(2),
                l0: Units::from_int(10),
                period_days: 30,
                congestion_fee: Units::from_int(2),
            },
            tariff: ViolationTariff::uniform(1, Units::from_int(2), Units::from_int(2)),
            rates: ViolationRates { covered: [0.0, 0.01, 0.02], uncovered: [0.0, 0.05, 0.10] },
            detection: DetectionPolicy { mode: DetectionMode::FixedCount { m: 2 }, accident_probability: [0.0, 0.1, 0.2] },
            dynamics: DynamicsConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replication_is_valid() {
        let c = ScenarioConfig::replication(0.3);
        let net = c.validate().unwrap();
        assert_eq!(c.population.counts(), [500, 1000, 500]);
        assert!((net.covered_length_m() - 6000.0).abs() < 1e-6);
        assert_eq!(c.dynamics.ticks_per_day(), 6000);
        let a = c.anchors.build();
        assert!((a.normal.v0 * 3.6 - 40.0).abs() < 1e-12);
    }

    #[test]
    fn counts_largest_remainder() {
        let p = PopulationConfig { total: 10, fractions: TypeFractions { conservative: 0.25, normal: 0.5, aggressive: 0.25 } };
        assert_eq!(p.counts(), [3, 5, 2]);
        let p = PopulationConfig { total: 1, fractions: TypeFractions { conservative: 0.0, normal: 0.0, aggressive: 1.0 } };
        assert_eq!(p.counts(), [0, 0, 1]);
    }

    #[test]
    fn rejects_bad_fractions() {
        let mut c = ScenarioConfig::replication(0.3);
        c.population.fractions.normal = 0.6;
        assert!(matches!(c.validate(), Err(ScenarioError::Population(_))));
    }

    #[test]
    fn rejects_overfull_network() {
        let mut c = ScenarioConfig::replication(0.3);
        c.population.total = 100_000;
        assert!(matches!(c.validate(), Err(ScenarioError::Population(_))));
    }

    #[test]
    fn json_round_trip() {
        let c = ScenarioConfig::replication(1.0);
        let s = serde_json::to_string_pretty(&c).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(ScenarioConfig::replication(0.0)).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ScenarioConfig>(v).is_err());
    }
}
