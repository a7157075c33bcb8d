//! Road topology, camera coverage and congestion tracking.
//!
//! A network is a set of closed corridors (loops). Every corridor carries
//! `lane_count` parallel lanes running its full length and is partitioned
//! into consecutive segments covering half-open intervals `[start, end)`.
//! Camera coverage and jam thresholds are per segment.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

/// Dense lane index over the whole network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

impl LaneId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorridorId(pub u32);

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("network has no segments")]
    EmptySpec,
    #[error("segment {0} has non-positive length")]
    NonPositiveLength(u32),
    #[error("camera coverage {0} is outside [0, 1]")]
    CoverageOutOfRange(f64),
    #[error("corridor {0} needs at least one lane")]
    NoLanes(u32),
    #[error("segment {0} has a non-positive jam density threshold")]
    InvalidJamThreshold(u32),
    #[error("duplicate segment id {0}")]
    DuplicateSegment(u32),
    #[error("grid needs at least one row and one column")]
    EmptyGrid,
    #[error("unknown lane {0}")]
    UnknownLane(u32),
    #[error("closure on lane {lane} [{start}, {end}) is not a non-empty interval inside the lane")]
    InvalidClosure { lane: u32, start: f64, end: f64 },
    #[error("position {position} m is off lane {lane}")]
    PositionOffNetwork { lane: u32, position: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub corridor: CorridorId,
    /// Offset of the segment start along its corridor, in meters.
    pub start: f64,
    pub length: f64,
    pub lane_count: u32,
    pub camera_covered: bool,
    /// Vehicles per km per lane at which the segment counts as congested.
    pub jam_density_threshold: f64,
}

impl RoadSegment {
    pub fn end(&self) -> f64 {
        self.start + self.length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub corridor: CorridorId,
    /// 0 is the rightmost lane.
    pub index: u32,
    pub left: Option<LaneId>,
    pub right: Option<LaneId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corridor {
    pub id: CorridorId,
    pub length: f64,
    pub lanes: Vec<LaneId>,
    /// Dense segment indices ordered by start offset.
    segments: Vec<usize>,
    starts: Vec<f64>,
}

impl Corridor {
    /// Dense indices of this corridor's segments in road order.
    pub fn segments(&self) -> &[usize] {
        &self.segments
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Closure {
    pub lane: LaneId,
    pub start: f64,
    pub end: f64,
}

// ---------------------------------------------------------------------------
// Description (part of the scenario file)
// ---------------------------------------------------------------------------

fn default_segment_km() -> f64 {
    1.0
}

fn default_jam_density() -> f64 {
    60.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub id: u32,
    pub length_m: f64,
    #[serde(default = "default_jam_density")]
    pub jam_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    pub lanes: u32,
    pub segments: Vec<SegmentSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// One closed loop cut into equal segments (the last one takes the remainder).
    Ring {
        length_km: f64,
        lanes: u32,
        #[serde(default = "default_segment_km")]
        segment_length_km: f64,
        #[serde(default = "default_jam_density")]
        jam_density: f64,
    },
    /// Manhattan torus: `rows` east-west loops of `cols` segments each and
    /// `cols` north-south loops of `rows` segments each. Crossings carry no
    /// conflict logic.
    Grid {
        rows: u32,
        cols: u32,
        lanes: u32,
        #[serde(default = "default_segment_km")]
        segment_length_km: f64,
        #[serde(default = "default_jam_density")]
        jam_density: f64,
    },
    Corridors { corridors: Vec<CorridorSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureSpec {
    pub lane: u32,
    pub start_m: f64,
    pub end_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(flatten)]
    pub layout: Layout,
    /// Fraction of total segment length under camera coverage.
    #[serde(default)]
    pub camera_coverage: f64,
    #[serde(default)]
    pub closures: Vec<ClosureSpec>,
}

impl NetworkConfig {
    pub fn ring(length_km: f64, lanes: u32, camera_coverage: f64) -> Self {
        NetworkConfig {
            layout: Layout::Ring {
                length_km,
                lanes,
                segment_length_km: default_segment_km(),
                jam_density: default_jam_density(),
            },
            camera_coverage,
            closures: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    lanes: Vec<Lane>,
    corridors: Vec<Corridor>,
    /// Per lane, sorted by start.
    closures: Vec<Vec<Closure>>,
}

pub fn build_network(spec: &NetworkConfig) -> Result<RoadNetwork, NetworkError> {
    if !(0.0..=1.0).contains(&spec.camera_coverage) {
        return Err(NetworkError::CoverageOutOfRange(spec.camera_coverage));
    }
    let corridors: Vec<CorridorSpec> = match &spec.layout {
        Layout::Ring { length_km, lanes, segment_length_km, jam_density } => {
            vec![ring_corridor(0, *length_km, *lanes, *segment_length_km, *jam_density)?]
        }
        Layout::Grid { rows, cols, lanes, segment_length_km, jam_density } => {
            if *rows == 0 || *cols == 0 {
                return Err(NetworkError::EmptyGrid);
            }
            let seg = segment_length_km * 1000.0;
            let mut out = Vec::new();
            for r in 0..*rows {
                out.push(CorridorSpec {
                    lanes: *lanes,
                    segments: (0..*cols)
                        .map(|c| SegmentSpec { id: r * cols + c, length_m: seg, jam_density: *jam_density })
                        .collect(),
                });
            }
            for c in 0..*cols {
                out.push(CorridorSpec {
                    lanes: *lanes,
                    segments: (0..*rows)
                        .map(|r| SegmentSpec { id: rows * cols + c * rows + r, length_m: seg, jam_density: *jam_density })
                        .collect(),
                });
            }
            out
        }
        Layout::Corridors { corridors } => corridors.clone(),
    };
    let mut net = RoadNetwork::from_corridors(&corridors)?;
    net.assign_coverage(spec.camera_coverage);
    for c in &spec.closures {
        net.add_closure(Closure { lane: LaneId(c.lane), start: c.start_m, end: c.end_m })?;
    }
    Ok(net)
}

fn ring_corridor(first_id: u32, length_km: f64, lanes: u32, segment_km: f64, jam: f64) -> Result<CorridorSpec, NetworkError> {
    if !(length_km > 0.0) || !(segment_km > 0.0) {
        return Err(NetworkError::NonPositiveLength(first_id));
    }
    let total = length_km * 1000.0;
    let seg = segment_km * 1000.0;
    let n = ((total / seg) - 1e-9).ceil().max(1.0) as u32;
    let segments = (0..n)
        .map(|i| {
            let start = i as f64 * seg;
            let length_m = if i + 1 == n { total - start } else { seg };
            SegmentSpec { id: first_id + i, length_m, jam_density: jam }
        })
        .collect();
    Ok(CorridorSpec { lanes, segments })
}

impl RoadNetwork {
    fn from_corridors(specs: &[CorridorSpec]) -> Result<Self, NetworkError> {
        if specs.iter().all(|c| c.segments.is_empty()) {
            return Err(NetworkError::EmptySpec);
        }
        let mut segments = Vec::new();
        let mut lanes = Vec::new();
        let mut corridors = Vec::new();
        let mut seen = BTreeSet::new();
        for (ci, cs) in specs.iter().enumerate() {
            if cs.segments.is_empty() {
                continue;
            }
            let cid = CorridorId(ci as u32);
            if cs.lanes == 0 {
                return Err(NetworkError::NoLanes(ci as u32));
            }
            let mut start = 0.0;
            let mut seg_ix = Vec::new();
            let mut starts = Vec::new();
            for s in &cs.segments {
                if !(s.length_m > 0.0) || !s.length_m.is_finite() {
                    return Err(NetworkError::NonPositiveLength(s.id));
                }
                if !(s.jam_density > 0.0) {
                    return Err(NetworkError::InvalidJamThreshold(s.id));
                }
                if !seen.insert(s.id) {
                    return Err(NetworkError::DuplicateSegment(s.id));
                }
                seg_ix.push(segments.len());
                starts.push(start);
                segments.push(RoadSegment {
                    id: SegmentId(s.id),
                    corridor: cid,
                    start,
                    length: s.length_m,
                    lane_count: cs.lanes,
                    camera_covered: false,
                    jam_density_threshold: s.jam_density,
                });
                start += s.length_m;
            }
            let base = lanes.len() as u32;
            let lane_ids: Vec<LaneId> = (0..cs.lanes).map(|i| LaneId(base + i)).collect();
            for i in 0..cs.lanes {
                lanes.push(Lane {
                    id: LaneId(base + i),
                    corridor: cid,
                    index: i,
                    left: (i + 1 < cs.lanes).then(|| LaneId(base + i + 1)),
                    right: (i > 0).then(|| LaneId(base + i - 1)),
                });
            }
            corridors.push(Corridor { id: cid, length: start, lanes: lane_ids, segments: seg_ix, starts });
        }
        // Corridor ids are positional in the corridor list; empty entries were skipped.
        for (i, c) in corridors.iter_mut().enumerate() {
            let new = CorridorId(i as u32);
            for &s in &c.segments {
                segments[s].corridor = new;
            }
            for l in &c.lanes {
                lanes[l.index()].corridor = new;
            }
            c.id = new;
        }
        let n_lanes = lanes.len();
        Ok(RoadNetwork { segments, lanes, corridors, closures: vec![Vec::new(); n_lanes] })
    }

    /// Covers segments in ascending id order until the covered length reaches
    /// `fraction` of the total.
    fn assign_coverage(&mut self, fraction: f64) {
        let total: f64 = self.segments.iter().map(|s| s.length).sum();
        let target = fraction * total;
        let mut order: Vec<usize> = (0..self.segments.len()).collect();
        order.sort_by_key(|&i| self.segments[i].id);
        let mut covered = 0.0;
        for i in order {
            if covered + 1e-9 * total >= target {
                break;
            }
            self.segments[i].camera_covered = true;
            covered += self.segments[i].length;
        }
    }

    pub fn add_closure(&mut self, c: Closure) -> Result<(), NetworkError> {
        let lane = self.lane(c.lane)?;
        let len = self.corridors[lane.corridor.0 as usize].length;
        if !(c.start >= 0.0 && c.end > c.start && c.end <= len) {
            return Err(NetworkError::InvalidClosure { lane: c.lane.0, start: c.start, end: c.end });
        }
        let list = &mut self.closures[c.lane.index()];
        list.push(c);
        list.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(())
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn corridors(&self) -> &[Corridor] {
        &self.corridors
    }

    pub fn lane(&self, id: LaneId) -> Result<&Lane, NetworkError> {
        self.lanes.get(id.index()).ok_or(NetworkError::UnknownLane(id.0))
    }

    pub fn lane_length(&self, id: LaneId) -> f64 {
        self.corridors[self.lanes[id.index()].corridor.0 as usize].length
    }

    pub fn total_length_m(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    pub fn total_lane_length_m(&self) -> f64 {
        self.segments.iter().map(|s| s.length * s.lane_count as f64).sum()
    }

    pub fn covered_length_m(&self) -> f64 {
        self.segments.iter().filter(|s| s.camera_covered).map(|s| s.length).sum()
    }

    /// Dense index of the segment whose `[start, end)` contains `position`.
    pub fn segment_index_at(&self, lane: LaneId, position: f64) -> Result<usize, NetworkError> {
        let l = self.lane(lane)?;
        let c = &self.corridors[l.corridor.0 as usize];
        if !(position >= 0.0 && position < c.length) {
            return Err(NetworkError::PositionOffNetwork { lane: lane.0, position });
        }
        let k = c.starts.partition_point(|&s| s <= position);
        Ok(c.segments[k - 1])
    }

    pub fn segment_at(&self, lane: LaneId, position: f64) -> Result<&RoadSegment, NetworkError> {
        self.segment_index_at(lane, position).map(|i| &self.segments[i])
    }

    pub fn is_camera_covered(&self, lane: LaneId, position: f64) -> Result<bool, NetworkError> {
        self.segment_at(lane, position).map(|s| s.camera_covered)
    }

    pub fn closures(&self, lane: LaneId) -> &[Closure] {
        &self.closures[lane.index()]
    }

    pub fn is_closed(&self, lane: LaneId, position: f64) -> bool {
        self.closures[lane.index()].iter().any(|c| position >= c.start && position < c.end)
    }

    /// Distance along the loop from `position` to the start of the next
    /// closure on `lane`, or 0 when `position` is inside one.
    pub fn closure_ahead(&self, lane: LaneId, position: f64) -> Option<f64> {
        let list = &self.closures[lane.index()];
        if list.is_empty() {
            return None;
        }
        let len = self.lane_length(lane);
        list.iter()
            .map(|c| {
                if position >= c.start && position < c.end {
                    0.0
                } else {
                    (c.start - position).rem_euclid(len)
                }
            })
            .min_by(f64::total_cmp)
    }
}

// ---------------------------------------------------------------------------
// Congestion
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct CongestionState {
    /// The set of currently congested areas.
    pub congested: BTreeSet<SegmentId>,
    /// Vehicles per km per lane, by dense segment index.
    pub density: Vec<f64>,
    pub counts: Vec<u32>,
    mask: Vec<bool>,
}

impl CongestionState {
    pub fn empty(network: &RoadNetwork) -> Self {
        Self::from_counts(network, vec![0; network.segments.len()])
    }

    pub fn from_counts(network: &RoadNetwork, counts: Vec<u32>) -> Self {
        let mut congested = BTreeSet::new();
        let mut mask = vec![false; counts.len()];
        let density: Vec<f64> = network
            .segments
            .iter()
            .zip(&counts)
            .map(|(s, &n)| n as f64 / (s.length / 1000.0 * s.lane_count as f64))
            .collect();
        for (i, s) in network.segments.iter().enumerate() {
            if density[i] >= s.jam_density_threshold {
                congested.insert(s.id);
                mask[i] = true;
            }
        }
        CongestionState { congested, density, counts, mask }
    }

    #[inline]
    pub fn is_congested_index(&self, segment_index: usize) -> bool {
        self.mask[segment_index]
    }
}

pub fn update_congestion<I>(network: &RoadNetwork, positions: I) -> Result<CongestionState, NetworkError>
where
    I: IntoIterator<Item = (LaneId, f64)>,
{
    let mut counts = vec![0u32; network.segments.len()];
    for (lane, pos) in positions {
        counts[network.segment_index_at(lane, pos)?] += 1;
    }
    Ok(CongestionState::from_counts(network, counts))
}
