//! The deterministic two-timescale simulation loop.
//!
//! A day is a fixed number of dynamics ticks followed by a serialized
//! economic pass. Within a tick the phases are: freeze the per-lane ordering,
//! compute every acceleration from the frozen state, decide and commit lane
//! changes in ascending id, integrate, update congestion, charge
//! edge-triggered congestion fees, and run the inspections due at this tick.
//!
//! Accelerations and integration are pure per-vehicle functions of the frozen
//! state and may run on the rayon pool; all ledger mutation is serial.

mod log;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::behavior::{BehaviorAnchors, BehaviorState, DriverType};
use crate::dynamics::{
    execute_lane_change, idm_acceleration, integrate, lane_change_feasibility, lane_change_necessity, Direction,
    DrivingParams, KinematicState, LaneChange, Neighbor, NeighborView, SideView,
};
use crate::economy::{
    apply_fine, apply_sunk_fine, charge_congestion, init_ledgers, periodic_grant, Account, BanReason, EconomyError,
    Ledger, Units, ViolationType,
};
use crate::network::{CongestionState, LaneId, NetworkError, RoadNetwork};
use crate::rng::{stream, Purpose, StreamId};
use crate::scenario::{Mode, ScenarioConfig, ScenarioError};
use crate::surveillance::{
    baseline_enforcement, detect_reporters, escalate_accident, sample_tick, sample_violation, Inspection, Located,
    SurveillanceError,
};
use crate::VehicleId;

pub use log::{replay, Event, EventKind, EventLog};
pub use metrics::{percentile, MetricsSnapshot};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ScenarioError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Economy(#[from] EconomyError),
    #[error(transparent)]
    Surveillance(#[from] SurveillanceError),
    #[error("placement: {0}")]
    Placement(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    OnRoad,
    /// Removed after a collision until the next day starts.
    Parked,
    /// Removed until a grant lifts the ban.
    Banned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub native: DriverType,
    pub kin: KinematicState,
    pub behavior: BehaviorState,
    pub status: Status,
    pub lane_change: Option<LaneChange>,
    /// Dense index of the segment the vehicle was last seen in.
    pub segment: usize,
    /// Violations committed so far.
    pub violations: u32,
}

impl Vehicle {
    #[inline]
    pub fn on_road(&self) -> bool {
        self.status == Status::OnRoad
    }

    #[inline]
    fn occupies(&self, lane: LaneId) -> bool {
        self.on_road() && (self.kin.lane == lane || self.lane_change.is_some_and(|c| c.to == lane))
    }
}

/// Order in which vehicles are visited where the visiting order must not
/// matter. Used to check that it does not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IterationOrder {
    #[default]
    Ascending,
    Shuffled(u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Evaluate accelerations and integration on the rayon pool.
    pub parallel: bool,
    pub iteration: IterationOrder,
}

/// Explicit initial state of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub native: DriverType,
    pub lane: LaneId,
    pub position: f64,
    pub velocity: f64,
}

#[derive(Clone, Copy, Debug)]
struct Occ {
    idx: u32,
    pos: f64,
    vel: f64,
}

#[derive(Clone, Debug)]
struct PendingOffense {
    at_tick: u64,
    offender: VehicleId,
    kind: ViolationType,
    stream: StreamId,
    lane: LaneId,
    position: f64,
    covered: bool,
    reporters: Vec<VehicleId>,
}

#[derive(Clone, Copy, Debug, Default)]
struct DayCounters {
    collisions: u32,
    lane_changes: u32,
    congestion_fees: u32,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: EventLog,
    pub metrics: Vec<MetricsSnapshot>,
    pub initial_ledgers: Vec<Ledger>,
    pub final_ledgers: Vec<Ledger>,
}

#[derive(Clone, Debug)]
pub struct World {
    config: ScenarioConfig,
    network: RoadNetwork,
    anchors: BehaviorAnchors,
    options: RunOptions,
    ticks_per_day: u64,
    lane_len: Vec<f64>,
    lane_has_closures: Vec<bool>,
    sort_keys: Vec<(f64, u32)>,
    tick: u64,
    day: u32,
    vehicles: Vec<Vehicle>,
    ledgers: Vec<Ledger>,
    initial_ledgers: Vec<Ledger>,
    /// Per lane, vehicle indices sorted by (position, index).
    members: Vec<Vec<u32>>,
    frozen: Vec<Vec<Occ>>,
    lane_accel: Vec<Vec<f64>>,
    lane_collisions: Vec<Vec<(u32, u32, f64)>>,
    accel: Vec<f64>,
    pending_adds: Vec<(LaneId, u32)>,
    congestion: CongestionState,
    segment_counts: Vec<u32>,
    /// Segment of each on-road vehicle after this tick's integration.
    current_segment: Vec<usize>,
    log: EventLog,
    metrics: Vec<MetricsSnapshot>,
    granted: Units,
    sunk: Units,
    samples: Vec<(u64, u32)>,
    sample_cursor: usize,
    offenses: Vec<PendingOffense>,
    counters: DayCounters,
    exposed: u32,
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<World, EngineError> {
        Self::with_options(config, RunOptions::default())
    }

    /// Population drawn from the configured type fractions, spread evenly over
    /// all lanes and starting at rest.
    pub fn with_options(config: ScenarioConfig, options: RunOptions) -> Result<World, EngineError> {
        let network = config.validate()?;
        let counts = config.population.counts();
        let mut natives: Vec<DriverType> = DriverType::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&t, n)| std::iter::repeat_n(t, n as usize))
            .collect();
        natives.shuffle(&mut stream(config.seed, Purpose::Population, 0, VehicleId(0)));

        let n = natives.len();
        let total: f64 = network.lanes().iter().map(|l| network.lane_length(l.id)).sum();
        let spacing = total / n as f64;
        let mut placements = Vec::with_capacity(n);
        let mut lane_iter = network.lanes().iter().peekable();
        let mut lane_start = 0.0;
        for (k, native) in natives.into_iter().enumerate() {
            let offset = (k as f64 + 0.5) * spacing;
            while let Some(l) = lane_iter.peek() {
                let len = network.lane_length(l.id);
                if offset < lane_start + len || lane_iter.len() == 1 {
                    break;
                }
                lane_start += len;
                lane_iter.next();
            }
            let lane = lane_iter.peek().expect("network has lanes").id;
            let len = network.lane_length(lane);
            let mut position = (offset - lane_start).clamp(0.0, len.next_down());
            if let Some(c) = network.closures(lane).iter().find(|c| position >= c.start && position < c.end) {
                position = c.end.rem_euclid(len);
            }
            placements.push(Placement { native, lane, position, velocity: 0.0 });
        }
        Self::build(config, network, options, &placements)
    }

    /// A world with explicitly placed vehicles. The population section of the
    /// config is ignored except for validation.
    pub fn with_placements(
        config: ScenarioConfig,
        options: RunOptions,
        placements: &[Placement],
    ) -> Result<World, EngineError> {
        let network = config.validate()?;
        Self::build(config, network, options, placements)
    }

    fn build(
        config: ScenarioConfig,
        network: RoadNetwork,
        options: RunOptions,
        placements: &[Placement],
    ) -> Result<World, EngineError> {
        let anchors = config.anchors.build();
        let ledgers = init_ledgers(placements.len().max(1), &config.economy)?;
        let ledgers = ledgers[..placements.len()].to_vec();
        let mut vehicles = Vec::with_capacity(placements.len());
        for (i, p) in placements.iter().enumerate() {
            network.lane(p.lane)?;
            let segment = network.segment_index_at(p.lane, p.position)?;
            if !(p.velocity >= 0.0 && p.velocity.is_finite()) {
                return Err(EngineError::Placement(format!("vehicle {i} has velocity {}", p.velocity)));
            }
            let behavior = initial_behavior(&config, &anchors, p.native, &ledgers[i]);
            vehicles.push(Vehicle {
                id: VehicleId(i as u32),
                native: p.native,
                kin: KinematicState { lane: p.lane, position: p.position, velocity: p.velocity, acceleration: 0.0 },
                behavior,
                status: Status::OnRoad,
                lane_change: None,
                segment,
                violations: 0,
            });
        }
        let lanes = network.lanes().len();
        let lane_len = network.lanes().iter().map(|l| network.lane_length(l.id)).collect();
        let granted: Units = placements.iter().map(|_| config.economy.p0).sum();
        let congestion = CongestionState::empty(&network);
        let segment_counts = vec![0; network.segments().len()];
        let mut world = World {
            ticks_per_day: config.dynamics.ticks_per_day(),
            config,
            anchors,
            options,
            sort_keys: Vec::new(),
            lane_has_closures: network.lanes().iter().map(|l| !network.closures(l.id).is_empty()).collect(),
            lane_len,
            tick: 0,
            day: 0,
            accel: vec![0.0; vehicles.len()],
            vehicles,
            initial_ledgers: ledgers.clone(),
            ledgers,
            members: vec![Vec::new(); lanes],
            frozen: vec![Vec::new(); lanes],
            lane_accel: vec![Vec::new(); lanes],
            lane_collisions: vec![Vec::new(); lanes],
            pending_adds: Vec::new(),
            congestion,
            segment_counts,
            current_segment: Vec::new(),
            log: EventLog::new(),
            metrics: Vec::new(),
            granted,
            sunk: Units::ZERO,
            samples: Vec::new(),
            sample_cursor: 0,
            offenses: Vec::new(),
            counters: DayCounters::default(),
            exposed: 0,
            network,
        };
        world.rebuild_members();
        world.update_congestion_state()?;
        Ok(world)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn anchors(&self) -> &BehaviorAnchors {
        &self.anchors
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn ledgers(&self) -> &[Ledger] {
        &self.ledgers
    }

    pub fn initial_ledgers(&self) -> &[Ledger] {
        &self.initial_ledgers
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn metrics(&self) -> &[MetricsSnapshot] {
        &self.metrics
    }

    pub fn congestion(&self) -> &CongestionState {
        &self.congestion
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// The next day to be simulated.
    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn ticks_per_day(&self) -> u64 {
        self.ticks_per_day
    }

    pub fn total_resources(&self) -> Units {
        self.ledgers.iter().map(|l| l.resources).sum()
    }

    pub fn granted(&self) -> Units {
        self.granted
    }

    pub fn sunk(&self) -> Units {
        self.sunk
    }

    /// Vehicle ids currently occupying `lane`, ordered by position.
    pub fn lane_occupants(&self, lane: LaneId) -> Vec<VehicleId> {
        self.members[lane.index()].iter().map(|&i| VehicleId(i)).collect()
    }

    /// Hash-friendly digest of the kinematic state, bit-exact.
    pub fn state_digest(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.vehicles.len() * 3);
        for v in &self.vehicles {
            out.push(v.kin.lane.0 as u64 | ((v.status as u64) << 32));
            out.push(v.kin.position.to_bits());
            out.push(v.kin.velocity.to_bits());
        }
        out
    }

    fn visit_order(&self, n: usize, salt: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if let IterationOrder::Shuffled(s) = self.options.iteration {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(s ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        }
        order
    }

    // -----------------------------------------------------------------
    // Lane membership
    // -----------------------------------------------------------------

    fn sort_lane(list: &mut [u32], vehicles: &[Vehicle]) {
        list.sort_by(|&a, &b| {
            let (pa, pb) = (vehicles[a as usize].kin.position, vehicles[b as usize].kin.position);
            pa.total_cmp(&pb).then(a.cmp(&b))
        });
    }

    fn rebuild_members(&mut self) {
        for m in &mut self.members {
            m.clear();
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.on_road() {
                self.members[v.kin.lane.index()].push(i as u32);
                if let Some(c) = v.lane_change {
                    self.members[c.to.index()].push(i as u32);
                }
            }
        }
        for m in &mut self.members {
            Self::sort_lane(m, &self.vehicles);
        }
        self.pending_adds.clear();
    }

    /// Incremental version of [`Self::rebuild_members`]: drops vehicles that
    /// left a lane, appends the ones that entered, and re-sorts the nearly
    /// sorted lists.
    fn refresh_members(&mut self) {
        let vehicles = &self.vehicles;
        let mut adds = std::mem::take(&mut self.pending_adds);
        adds.sort_unstable();
        let keys = &mut self.sort_keys;
        for (l, m) in self.members.iter_mut().enumerate() {
            let lane = LaneId(l as u32);
            keys.clear();
            let entering = &adds[adds.partition_point(|a| a.0 < lane)..adds.partition_point(|a| a.0 <= lane)];
            for &i in m.iter().chain(entering.iter().map(|a| &a.1)) {
                let v = &vehicles[i as usize];
                if v.occupies(lane) {
                    keys.push((v.kin.position, i));
                }
            }
            // Lists are nearly sorted from the previous tick, so insertion
            // sort is linear apart from the vehicles that wrapped.
            for k in 1..keys.len() {
                let x = keys[k];
                let mut j = k;
                while j > 0 && (keys[j - 1].0 > x.0 || (keys[j - 1].0 == x.0 && keys[j - 1].1 > x.1)) {
                    keys[j] = keys[j - 1];
                    j -= 1;
                }
                keys[j] = x;
            }
            m.clear();
            m.extend(keys.iter().map(|k| k.1));
        }
        adds.clear();
        self.pending_adds = adds;
    }

    // -----------------------------------------------------------------
    // Tick
    // -----------------------------------------------------------------

    /// Advances the dynamics by one tick.
    pub fn step_tick(&mut self) -> Result<(), EngineError> {
        let now = self.tick;
        self.freeze();
        self.compute_accelerations();
        self.handle_collisions(now);
        self.lane_changes(now);
        self.integrate_all(now);
        self.update_congestion_state()?;
        self.charge_fees(now);
        self.inspect(now)?;
        self.refresh_members();
        self.tick += 1;
        Ok(())
    }

    fn freeze(&mut self) {
        for (l, m) in self.members.iter().enumerate() {
            let f = &mut self.frozen[l];
            f.clear();
            f.extend(m.iter().map(|&i| {
                let k = &self.vehicles[i as usize].kin;
                Occ { idx: i, pos: k.position, vel: k.velocity }
            }));
        }
    }

    fn compute_accelerations(&mut self) {
        let ctx = AccelCtx {
            vehicles: &self.vehicles,
            network: &self.network,
            lane_len: &self.lane_len,
            length: self.config.dynamics.vehicle_length_m,
            b_emergency: self.config.dynamics.b_emergency,
        };
        if self.options.parallel {
            self.lane_accel
                .par_iter_mut()
                .zip(self.lane_collisions.par_iter_mut())
                .zip(self.frozen.par_iter())
                .enumerate()
                .for_each(|(l, ((acc, col), occ))| ctx.lane(l, occ, acc, col));
        } else {
            self.lane_accel
                .iter_mut()
                .zip(self.lane_collisions.iter_mut())
                .zip(self.frozen.iter())
                .enumerate()
                .for_each(|(l, ((acc, col), occ))| ctx.lane(l, occ, acc, col));
        }
        for a in &mut self.accel {
            *a = f64::INFINITY;
        }
        for (occ, acc) in self.frozen.iter().zip(&self.lane_accel) {
            for (o, &a) in occ.iter().zip(acc) {
                let slot = &mut self.accel[o.idx as usize];
                if a < *slot {
                    *slot = a;
                }
            }
        }
    }

    fn handle_collisions(&mut self, now: u64) {
        let mut pairs: Vec<(u32, u32, f64)> = self.lane_collisions.iter().flatten().copied().collect();
        if pairs.is_empty() {
            return;
        }
        pairs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        pairs.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        for (f, l, gap) in pairs {
            self.log.push(now, self.day, EventKind::Collision { follower: VehicleId(f), leader: VehicleId(l), gap });
            self.counters.collisions += 1;
            for i in [f, l] {
                let v = &mut self.vehicles[i as usize];
                if v.status == Status::OnRoad {
                    v.status = Status::Parked;
                    v.lane_change = None;
                    v.kin.velocity = 0.0;
                }
            }
        }
    }

    fn lane_changes(&mut self, now: u64) {
        let length = self.config.dynamics.vehicle_length_m;
        let horizon = self.config.dynamics.closure_horizon_m;
        let mut decisions: Vec<(u32, Direction, LaneId)> = Vec::new();
        let key = |o: &Occ| (o.pos, o.idx);
        for l in self.visit_order(self.frozen.len(), now) {
            let lane = LaneId(l as u32);
            let arr = &self.frozen[l];
            let info = &self.network.lanes()[l];
            let sides = [info.left, info.right];
            let mut ptr = [0usize; 2];
            let len = self.lane_len[l];
            for (k, o) in arr.iter().enumerate() {
                // Insertion points of `o` in the neighbor lanes, advanced as
                // `o` sweeps forward.
                for s in 0..2 {
                    if let Some(t) = sides[s] {
                        let ta = &self.frozen[t.index()];
                        while ptr[s] < ta.len() && key(&ta[ptr[s]]) < key(o) {
                            ptr[s] += 1;
                        }
                    }
                }
                let v = &self.vehicles[o.idx as usize];
                if !v.on_road() || v.lane_change.is_some() || v.kin.lane != lane {
                    continue;
                }
                let p = &v.behavior.effective;
                if !self.lane_has_closures[l] && !self.side_wants(arr, k, p, sides, ptr) {
                    continue;
                }
                let (leader, _) = around(arr, o, k, true, len, p.v0, length);
                let side = |s: usize| {
                    sides[s].map(|t| {
                        let (leader, follower) = around(&self.frozen[t.index()], o, ptr[s], false, len, p.v0, length);
                        SideView { lane: t, leader, follower, closure_ahead: self.closure_ahead(t, o.pos) }
                    })
                };
                let view = NeighborView {
                    velocity: o.vel,
                    leader,
                    left: side(0),
                    right: side(1),
                    closure_ahead: self.closure_ahead(lane, o.pos),
                };
                let cands = lane_change_necessity(&view, p, horizon);
                if cands.is_empty() {
                    continue;
                }
                if let Some(d) = cands.ordered(&view).find(|&d| lane_change_feasibility(&view, p, d)) {
                    decisions.push((o.idx, d, view.side(d).expect("candidate side exists").lane));
                }
            }
        }
        if decisions.is_empty() {
            return;
        }
        decisions.sort_by_key(|d| d.0);
        let mut entrants: Vec<Vec<Occ>> = vec![Vec::new(); self.frozen.len()];
        let dt = self.config.dynamics.dt;
        for (i, d, target) in decisions {
            let v = &self.vehicles[i as usize];
            let o = Occ { idx: i, pos: v.kin.position, vel: v.kin.velocity };
            let p = v.behavior.effective;
            let view = self.view_with_entrants(&o, v.kin.lane, &p, &entrants, length);
            if !lane_change_feasibility(&view, &p, d) {
                continue;
            }
            let Ok(change) = execute_lane_change(&v.kin, v.lane_change.as_ref(), target, now, p.lane_change_duration, dt)
            else {
                continue;
            };
            self.log.push(
                now,
                self.day,
                EventKind::LaneChange { vehicle: VehicleId(i), from: change.from, to: change.to, complete_tick: change.complete_tick },
            );
            self.counters.lane_changes += 1;
            self.vehicles[i as usize].lane_change = Some(change);
            entrants[target.index()].push(o);
            self.pending_adds.push((target, i));
        }
    }

    /// Speed-ratio test on leader velocities alone. Equivalent to the full
    /// necessity check when neither lane involved has closures, and avoids
    /// building the neighbor view for most vehicles.
    #[inline]
    fn side_wants(&self, arr: &[Occ], k: usize, p: &DrivingParams, sides: [Option<LaneId>; 2], ptr: [usize; 2]) -> bool {
        let lead_vel = |a: &[Occ], next: usize| -> Option<f64> {
            match a.len() {
                0 => None,
                n => Some(a[if next >= n { next - n } else { next }].vel),
            }
        };
        let own = if arr.len() > 1 { lead_vel(arr, k + 1).unwrap_or(p.v0) } else { p.v0 };
        (0..2).any(|s| {
            sides[s].is_some_and(|t| {
                if self.lane_has_closures[t.index()] {
                    return true;
                }
                let ta = &self.frozen[t.index()];
                let side = lead_vel(ta, ptr[s]).unwrap_or(p.v0);
                own < p.speed_ratio_threshold * side
            })
        })
    }

    #[inline]
    fn closure_ahead(&self, lane: LaneId, position: f64) -> Option<f64> {
        if self.lane_has_closures[lane.index()] {
            self.network.closure_ahead(lane, position)
        } else {
            None
        }
    }

    /// The neighbor view of `o` from the frozen state plus the vehicles that
    /// committed a lane change into some lane earlier in this tick.
    fn view_with_entrants(&self, o: &Occ, lane: LaneId, p: &DrivingParams, entrants: &[Vec<Occ>], length: f64) -> NeighborView {
        let info = &self.network.lanes()[lane.index()];
        let find = |id: LaneId| {
            let arr = &self.frozen[id.index()];
            let len = self.lane_len[id.index()];
            let ins = arr.partition_point(|c| (c.pos, c.idx) < (o.pos, o.idx));
            let own = arr.get(ins).is_some_and(|c| c.idx == o.idx);
            let (mut leader, mut follower) = around(arr, o, ins, own, len, p.v0, length);
            for e in &entrants[id.index()] {
                merge_entrant(e, o, len, length, &mut leader, &mut follower);
            }
            (leader, follower)
        };
        let side = |id: Option<LaneId>| {
            id.map(|t| {
                let (leader, follower) = find(t);
                SideView { lane: t, leader, follower, closure_ahead: self.closure_ahead(t, o.pos) }
            })
        };
        NeighborView {
            velocity: o.vel,
            leader: find(lane).0,
            left: side(info.left),
            right: side(info.right),
            closure_ahead: self.closure_ahead(lane, o.pos),
        }
    }

    fn integrate_all(&mut self, now: u64) {
        let dt = self.config.dynamics.dt;
        let lane_len = &self.lane_len;
        let step = |(v, &a): (&mut Vehicle, &f64)| {
            if !v.on_road() {
                return;
            }
            let a = if a.is_finite() { a } else { 0.0 };
            let mut k = integrate(v.kin, a, dt);
            let len = lane_len[k.lane.index()];
            while k.position >= len {
                k.position -= len;
            }
            if let Some(c) = v.lane_change {
                if c.is_done_after(now) {
                    k.lane = c.to;
                    v.lane_change = None;
                }
            }
            v.kin = k;
        };
        if self.options.parallel {
            self.vehicles.par_iter_mut().zip(self.accel.par_iter()).for_each(step);
        } else {
            self.vehicles.iter_mut().zip(self.accel.iter()).for_each(step);
        }
    }

    fn update_congestion_state(&mut self) -> Result<(), EngineError> {
        for c in &mut self.segment_counts {
            *c = 0;
        }
        self.current_segment.resize(self.vehicles.len(), 0);
        let segments = self.network.segments();
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.on_road() {
                let cached = &segments[v.segment];
                let seg = if v.kin.position >= cached.start && v.kin.position < cached.end() {
                    v.segment
                } else {
                    self.network.segment_index_at(v.kin.lane, v.kin.position)?
                };
                self.current_segment[i] = seg;
                self.segment_counts[seg] += 1;
            }
        }
        self.congestion = CongestionState::from_counts(&self.network, self.segment_counts.clone());
        Ok(())
    }

    fn charge_fees(&mut self, now: u64) {
        let fee = self.config.economy.congestion_fee;
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if !v.on_road() {
                continue;
            }
            let seg = self.current_segment[i];
            if seg == v.segment {
                continue;
            }
            self.vehicles[i].segment = seg;
            if !self.congestion.is_congested_index(seg) || fee.is_zero() {
                continue;
            }
            let id = VehicleId(i as u32);
            let (t, banned) = charge_congestion(&mut self.ledgers[i], id, &self.config.economy);
            self.sunk += t.amount;
            self.counters.congestion_fees += 1;
            self.log.push(now, self.day, EventKind::Transfer(t));
            if let Some(reason) = banned {
                self.ban(i, reason, now);
            }
            self.refresh_behavior(i);
        }
    }

    fn ban(&mut self, i: usize, reason: BanReason, now: u64) {
        self.log.push(now, self.day, EventKind::Ban { vehicle: VehicleId(i as u32), reason });
        let v = &mut self.vehicles[i];
        v.status = Status::Banned;
        v.lane_change = None;
    }

    fn refresh_behavior(&mut self, i: usize) {
        self.vehicles[i].behavior =
            initial_behavior(&self.config, &self.anchors, self.vehicles[i].native, &self.ledgers[i]);
    }

    fn located(&self) -> Vec<Located> {
        self.vehicles
            .iter()
            .filter(|v| v.on_road())
            .map(|v| Located { vehicle: v.id, lane: v.kin.lane, position: v.kin.position })
            .collect()
    }

    fn inspect(&mut self, now: u64) -> Result<(), EngineError> {
        let start = self.sample_cursor;
        while self.sample_cursor < self.samples.len() && self.samples[self.sample_cursor].0 == now {
            self.sample_cursor += 1;
        }
        if start == self.sample_cursor {
            return Ok(());
        }
        let due: Vec<u32> = self.samples[start..self.sample_cursor].iter().map(|s| s.1).collect();
        let mut located: Option<Vec<Located>> = None;
        let catalog = self.config.tariff.catalog_size();
        for k in self.visit_order(due.len(), now) {
            let i = due[k] as usize;
            let v = &self.vehicles[i];
            if !v.on_road() {
                continue;
            }
            let covered = self.network.is_camera_covered(v.kin.lane, v.kin.position)?;
            let ins = Inspection { vehicle: v.id, class: v.behavior.class, covered };
            let Some(off) = sample_violation(self.config.seed, self.day, &ins, &self.config.rates, catalog) else {
                continue;
            };
            let here = Located { vehicle: v.id, lane: v.kin.lane, position: v.kin.position };
            let reporters = match self.config.mode {
                Mode::Cats => {
                    let all = located.get_or_insert_with(|| self.located());
                    detect_reporters(&self.network, &here, all, &self.config.detection)
                }
                Mode::Baseline => Vec::new(),
            };
            self.offenses.push(PendingOffense {
                at_tick: now,
                offender: off.offender,
                kind: off.kind,
                stream: off.stream,
                lane: here.lane,
                position: here.position,
                covered,
                reporters,
            });
        }
        Ok(())
    }

    // -----------------------------------------------------------------
    // Day
    // -----------------------------------------------------------------

    /// Runs one simulated day and returns its snapshot.
    pub fn step_day(&mut self) -> Result<&MetricsSnapshot, EngineError> {
        let day = self.day;
        let t0 = day as u64 * self.ticks_per_day;
        self.tick = t0;
        self.counters = DayCounters::default();

        if day > 0 && day % self.config.economy.period_days == 0 {
            for i in 0..self.vehicles.len() {
                let id = VehicleId(i as u32);
                let was_banned = self.ledgers[i].is_banned();
                let t = periodic_grant(&mut self.ledgers[i], id, &self.config.economy);
                self.granted += t.amount;
                self.log.push(t0, day, EventKind::Grant { vehicle: id, resources: t.amount, credit: self.ledgers[i].credit });
                if was_banned {
                    self.log.push(t0, day, EventKind::Unban { vehicle: id });
                }
                self.refresh_behavior(i);
            }
        }
        self.reinstate(t0);
        self.update_congestion_state()?;

        self.exposed = self.vehicles.iter().filter(|v| v.on_road()).count() as u32;
        let mut samples: Vec<(u64, u32)> = Vec::with_capacity(self.vehicles.len());
        for k in self.visit_order(self.vehicles.len(), u64::from(day) << 20) {
            if self.vehicles[k].on_road() {
                let local = sample_tick(self.config.seed, day, VehicleId(k as u32), self.ticks_per_day);
                samples.push((t0 + local, k as u32));
            }
        }
        samples.sort_unstable();
        self.samples = samples;
        self.sample_cursor = 0;
        self.offenses.clear();

        for _ in 0..self.ticks_per_day {
            self.step_tick()?;
        }
        let t_end = (t0 + self.ticks_per_day).saturating_sub(1).max(t0);
        self.daily_pass(t_end)?;
        self.day += 1;
        self.tick = t0 + self.ticks_per_day;
        Ok(self.metrics.last().expect("snapshot just pushed"))
    }

    /// Puts parked and newly unbanned vehicles back on the road.
    fn reinstate(&mut self, t0: u64) {
        let back: Vec<usize> = (0..self.vehicles.len())
            .filter(|&i| match self.vehicles[i].status {
                Status::Parked => true,
                Status::Banned => !self.ledgers[i].is_banned(),
                Status::OnRoad => false,
            })
            .collect();
        if back.is_empty() {
            return;
        }
        self.rebuild_members();
        let length = self.config.dynamics.vehicle_length_m;
        for i in back {
            let lane = self.vehicles[i].kin.lane;
            let len = self.lane_len[lane.index()];
            let p = self.vehicles[i].behavior.effective;
            let clear = length + p.jam_distance;
            let m = &self.members[lane.index()];
            let at = |k: usize| &self.vehicles[m[k] as usize].kin;
            let x = self.vehicles[i].kin.position;
            let (position, velocity) = if m.is_empty() {
                (x, 0.0)
            } else {
                let k = m.partition_point(|&j| self.vehicles[j as usize].kin.position < x);
                let lead = at(k % m.len());
                let follow = at((k + m.len() - 1) % m.len());
                let ahead = (lead.position - x).rem_euclid(len);
                let behind = (x - follow.position).rem_euclid(len);
                if ahead >= clear && behind >= clear + follow.velocity * p.time_headway {
                    (x, lead.velocity.min(p.v0))
                } else {
                    // Midpoint of the widest gap.
                    let mut best = (f64::NEG_INFINITY, 0usize);
                    for k in 0..m.len() {
                        let g = if m.len() == 1 {
                            len
                        } else {
                            (at((k + 1) % m.len()).position - at(k).position).rem_euclid(len)
                        };
                        if g > best.0 {
                            best = (g, k);
                        }
                    }
                    let back_k = best.1;
                    let lead = at((back_k + 1) % m.len());
                    ((at(back_k).position + 0.5 * best.0).rem_euclid(len), if m.len() == 1 { 0.0 } else { lead.velocity.min(p.v0) })
                }
            };
            let position = if position >= len { 0.0 } else { position };
            let v = &mut self.vehicles[i];
            v.status = Status::OnRoad;
            v.lane_change = None;
            v.kin = KinematicState { lane, position, velocity, acceleration: 0.0 };
            v.segment = self.network.segment_index_at(lane, position).expect("position is on the lane");
            self.log.push(t0, self.day, EventKind::Reinsert { vehicle: v.id, lane, position });
            let m = &mut self.members[lane.index()];
            let k = m.partition_point(|&j| {
                let pj = self.vehicles[j as usize].kin.position;
                (pj, j) < (position, i as u32)
            });
            m.insert(k, i as u32);
        }
        self.rebuild_members();
    }

    fn daily_pass(&mut self, t_end: u64) -> Result<(), EngineError> {
        let day = self.day;
        let mut offenses = std::mem::take(&mut self.offenses);
        offenses.sort_by_key(|o| (o.at_tick, o.offender));
        let (mut violations, mut repeats, mut undetected, mut enforced_n, mut accidents) = (0u32, 0u32, 0u32, 0u32, 0u32);
        let seed = self.config.seed;
        for o in &offenses {
            let i = o.offender.index();
            violations += 1;
            if self.vehicles[i].violations > 0 {
                repeats += 1;
            }
            self.vehicles[i].violations += 1;
            let class = self.vehicles[i].behavior.class;

            let (enforced, accepted) = match self.config.mode {
                Mode::Cats => (!o.reporters.is_empty(), !o.reporters.is_empty()),
                Mode::Baseline => (baseline_enforcement(Mode::Baseline, o.covered)?, true),
            };
            self.log.push(
                t_end,
                day,
                EventKind::Violation {
                    offender: o.offender,
                    violation_type: o.kind,
                    at_tick: o.at_tick,
                    lane: o.lane,
                    position: o.position,
                    covered: o.covered,
                    reporters: o.reporters.clone(),
                    enforced,
                    stream: o.stream,
                },
            );
            if !accepted {
                undetected += 1;
                self.log.push(t_end, day, EventKind::Undetected { offender: o.offender, at_tick: o.at_tick });
                continue;
            }
            if enforced {
                enforced_n += 1;
                let outcome = match self.config.mode {
                    Mode::Cats => {
                        apply_fine(&mut self.ledgers, o.offender, &o.reporters, o.kind, &self.config.tariff, &self.config.economy)?
                    }
                    Mode::Baseline => {
                        apply_sunk_fine(&mut self.ledgers[i], o.offender, o.kind, &self.config.tariff, &self.config.economy)?
                    }
                };
                for t in outcome.transfers {
                    if t.payee == Account::System {
                        self.sunk += t.amount;
                    }
                    self.log.push(t_end, day, EventKind::Transfer(t));
                }
                self.log.push(t_end, day, EventKind::CreditDeduction { vehicle: o.offender, amount: outcome.credit_deducted });
                if let Some(reason) = outcome.banned {
                    self.ban(i, reason, t_end);
                }
            }
            if escalate_accident(seed, day, o.offender, class, &self.config.detection) {
                accidents += 1;
                self.log.push(t_end, day, EventKind::Accident { offender: o.offender, class, at_tick: o.at_tick });
            }
        }
        for i in 0..self.vehicles.len() {
            self.refresh_behavior(i);
        }

        let mut counts = [0u32; 3];
        let mut banned = 0u32;
        for (v, l) in self.vehicles.iter().zip(&self.ledgers) {
            if l.is_banned() {
                banned += 1;
            } else {
                counts[v.behavior.class.index()] += 1;
            }
        }
        let mut lambdas: Vec<f64> = self.vehicles.iter().map(|v| v.behavior.lambda).collect();
        lambdas.sort_by(f64::total_cmp);
        let n = lambdas.len().max(1) as f64;
        let exposed = self.exposed;
        self.metrics.push(MetricsSnapshot {
            day,
            accident_rate: if exposed == 0 { 0.0 } else { accidents as f64 * 1000.0 / exposed as f64 },
            violations,
            n_conservative: counts[0],
            n_normal: counts[1],
            n_aggressive: counts[2],
            n_banned: banned,
            mean_lambda: lambdas.iter().sum::<f64>() / n,
            total_resources: self.total_resources(),
            exposed,
            active: counts.iter().sum(),
            accidents,
            enforced: enforced_n,
            undetected,
            collisions: self.counters.collisions,
            lane_changes: self.counters.lane_changes,
            congestion_fees: self.counters.congestion_fees,
            lambda_p10: percentile(&lambdas, 0.1),
            lambda_p50: percentile(&lambdas, 0.5),
            lambda_p90: percentile(&lambdas, 0.9),
            repeat_fraction: if violations == 0 { 0.0 } else { repeats as f64 / violations as f64 },
            granted: self.granted,
            sunk: self.sunk,
        });
        Ok(())
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput { log: self.log, metrics: self.metrics, initial_ledgers: self.initial_ledgers, final_ledgers: self.ledgers }
    }
}

/// Leader and follower of `o` in the sorted lane `arr`. `ins` is the number of
/// entries ordered before `o`; `own` says whether `o` itself sits at `ins`.
#[inline]
fn around(arr: &[Occ], o: &Occ, ins: usize, own: bool, len: f64, v0: f64, length: f64) -> (Neighbor, Neighbor) {
    let n = arr.len();
    let others = if own { n - 1 } else { n };
    if others == 0 {
        return (Neighbor::absent(v0), Neighbor::absent(v0));
    }
    let next = if own { ins + 1 } else { ins };
    let (lead, lead_wrap) = if next >= n { (&arr[next - n], len) } else { (&arr[next], 0.0) };
    let (follow, follow_wrap) = if ins == 0 { (&arr[n - 1], len) } else { (&arr[ins - 1], 0.0) };
    let leader = Neighbor { gap: lead.pos + lead_wrap - o.pos - length, velocity: lead.vel };
    let follower = Neighbor { gap: o.pos + follow_wrap - follow.pos - length, velocity: follow.vel };
    (leader, follower)
}

/// Replaces `leader` or `follower` with `e` when it is nearer.
fn merge_entrant(e: &Occ, o: &Occ, len: f64, length: f64, leader: &mut Neighbor, follower: &mut Neighbor) {
    if e.idx == o.idx {
        return;
    }
    let mut fwd = e.pos - o.pos;
    if fwd < 0.0 || (fwd == 0.0 && e.idx < o.idx) {
        fwd += len;
    }
    let mut back = o.pos - e.pos;
    if back < 0.0 || (back == 0.0 && e.idx > o.idx) {
        back += len;
    }
    if !leader.is_present() || fwd - length < leader.gap {
        *leader = Neighbor { gap: fwd - length, velocity: e.vel };
    }
    if !follower.is_present() || back - length < follower.gap {
        *follower = Neighbor { gap: back - length, velocity: e.vel };
    }
}

fn initial_behavior(config: &ScenarioConfig, anchors: &BehaviorAnchors, native: DriverType, ledger: &Ledger) -> BehaviorState {
    match config.mode {
        Mode::Cats => BehaviorState::from_ledger(anchors, native, ledger, &config.economy),
        Mode::Baseline => BehaviorState::new(anchors, native, 1.0),
    }
}

struct AccelCtx<'a> {
    vehicles: &'a [Vehicle],
    network: &'a RoadNetwork,
    lane_len: &'a [f64],
    length: f64,
    b_emergency: f64,
}

impl AccelCtx<'_> {
    /// Car-following acceleration of every occupant of lane `l`, plus the
    /// (follower, leader, gap) triples that are in contact.
    fn lane(&self, l: usize, occ: &[Occ], acc: &mut Vec<f64>, collisions: &mut Vec<(u32, u32, f64)>) {
        acc.clear();
        collisions.clear();
        let n = occ.len();
        let len = self.lane_len[l];
        let lane = LaneId(l as u32);
        let has_closures = !self.network.closures(lane).is_empty();
        for k in 0..n {
            let o = &occ[k];
            let p = &self.vehicles[o.idx as usize].behavior.effective;
            let mut a = if n > 1 {
                let lead = &occ[(k + 1) % n];
                let mut gap = lead.pos - o.pos - self.length;
                if k + 1 == n {
                    gap += len;
                }
                match idm_acceleration(o.vel, o.vel - lead.vel, gap, p, self.b_emergency) {
                    Ok(a) => a,
                    Err(c) => {
                        collisions.push((o.idx, lead.idx, c.gap));
                        -self.b_emergency
                    }
                }
            } else {
                idm_acceleration(o.vel, 0.0, f64::INFINITY, p, self.b_emergency).unwrap_or(0.0)
            };
            if has_closures {
                if let Some(d) = self.network.closure_ahead(lane, o.pos) {
                    let c = if d > 0.0 {
                        idm_acceleration(o.vel, o.vel, d, p, self.b_emergency).unwrap_or(-self.b_emergency)
                    } else {
                        -self.b_emergency
                    };
                    a = a.min(c);
                }
            }
            acc.push(a);
        }
    }
}

/// Runs `config` to its horizon.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    run_with(config, RunOptions::default())
}

pub fn run_with(config: &ScenarioConfig, options: RunOptions) -> Result<RunOutput, EngineError> {
    let mut world = World::with_options(config.clone(), options)?;
    for _ in 0..config.horizon_days {
        world.step_day()?;
    }
    Ok(world.into_output())
}
