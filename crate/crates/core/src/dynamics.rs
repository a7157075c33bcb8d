//! Car following (intelligent driver model), lane-change necessity and
//! gap-acceptance feasibility, and the time integrator.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::LaneId;

/// The eleven per-driver parameters modulated by the behavior model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingParams {
    /// Desired velocity, m/s.
    pub v0: f64,
    /// Safe time headway, s.
    pub time_headway: f64,
    /// Maximum acceleration, m/s².
    pub max_accel: f64,
    /// Comfortable deceleration, m/s².
    pub comfort_decel: f64,
    /// Acceleration exponent.
    pub accel_exponent: f64,
    /// Jam distance, m.
    pub jam_distance: f64,
    /// Leader-speed ratio below which a faster neighbor lane is attractive.
    pub speed_ratio_threshold: f64,
    /// Gap-per-velocity coefficient toward the target-lane leader, s.
    pub mu_tl: f64,
    /// Gap-per-velocity coefficient toward the target-lane follower, s.
    pub mu_tf: f64,
    /// Gap-per-velocity coefficient toward the current-lane leader, s.
    pub mu_cl: f64,
    /// Lane-changing duration, s.
    pub lane_change_duration: f64,
}

pub const PARAM_COUNT: usize = 11;

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "v0",
    "time_headway",
    "max_accel",
    "comfort_decel",
    "accel_exponent",
    "jam_distance",
    "speed_ratio_threshold",
    "mu_tl",
    "mu_tf",
    "mu_cl",
    "lane_change_duration",
];

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("parameter {0} must be finite and strictly positive, got {1}")]
    NotPositive(&'static str, f64),
    #[error("speed_ratio_threshold must be < 1, got {0}")]
    RatioNotBelowOne(f64),
    #[error("mu_cl ({mu_cl}) must be smaller than mu_tl ({mu_tl})")]
    CurrentLeaderGap { mu_cl: f64, mu_tl: f64 },
}

impl DrivingParams {
    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.v0,
            self.time_headway,
            self.max_accel,
            self.comfort_decel,
            self.accel_exponent,
            self.jam_distance,
            self.speed_ratio_threshold,
            self.mu_tl,
            self.mu_tf,
            self.mu_cl,
            self.lane_change_duration,
        ]
    }

    pub fn from_array(a: [f64; PARAM_COUNT]) -> Self {
        DrivingParams {
            v0: a[0],
            time_headway: a[1],
            max_accel: a[2],
            comfort_decel: a[3],
            accel_exponent: a[4],
            jam_distance: a[5],
            speed_ratio_threshold: a[6],
            mu_tl: a[7],
            mu_tf: a[8],
            mu_cl: a[9],
            lane_change_duration: a[10],
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(ParamsError::NotPositive(name, v));
            }
        }
        if self.speed_ratio_threshold >= 1.0 {
            return Err(ParamsError::RatioNotBelowOne(self.speed_ratio_threshold));
        }
        if self.mu_cl >= self.mu_tl {
            return Err(ParamsError::CurrentLeaderGap { mu_cl: self.mu_cl, mu_tl: self.mu_tl });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub lane: LaneId,
    /// Meters along the lane.
    pub position: f64,
    /// m/s, never negative.
    pub velocity: f64,
    /// Last applied acceleration, m/s².
    pub acceleration: f64,
}

/// A neighbor as seen from the subject vehicle. Missing neighbors have an
/// infinite gap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Net gap in meters (bumper to bumper).
    pub gap: f64,
    pub velocity: f64,
}

impl Neighbor {
    /// Free road: infinite gap, moving at `v0`.
    pub fn absent(v0: f64) -> Self {
        Neighbor { gap: f64::INFINITY, velocity: v0 }
    }

    pub fn is_present(&self) -> bool {
        self.gap.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideView {
    pub lane: LaneId,
    pub leader: Neighbor,
    pub follower: Neighbor,
    /// Distance to the next closure on the target lane, if any.
    pub closure_ahead: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborView {
    pub velocity: f64,
    pub leader: Neighbor,
    pub left: Option<SideView>,
    pub right: Option<SideView>,
    pub closure_ahead: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

impl NeighborView {
    pub fn side(&self, d: Direction) -> Option<&SideView> {
        match d {
            Direction::Left => self.left.as_ref(),
            Direction::Right => self.right.as_ref(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Candidates {
    pub left: bool,
    pub right: bool,
}

impl Candidates {
    pub fn is_empty(&self) -> bool {
        !self.left && !self.right
    }

    pub fn contains(&self, d: Direction) -> bool {
        match d {
            Direction::Left => self.left,
            Direction::Right => self.right,
        }
    }

    /// Candidates ordered by target-leader speed, fastest first, left on ties.
    pub fn ordered(&self, view: &NeighborView) -> impl Iterator<Item = Direction> {
        let speed = |d| view.side(d).map_or(f64::NEG_INFINITY, |s| s.leader.velocity);
        let mut ds = [None, None];
        match (self.left, self.right) {
            (true, true) => {
                if speed(Direction::Right) > speed(Direction::Left) {
                    ds = [Some(Direction::Right), Some(Direction::Left)];
                } else {
                    ds = [Some(Direction::Left), Some(Direction::Right)];
                }
            }
            (true, false) => ds[0] = Some(Direction::Left),
            (false, true) => ds[0] = Some(Direction::Right),
            (false, false) => {}
        }
        ds.into_iter().flatten()
    }
}

/// Dynamic desired gap `s0 + T·v + v·Δv / (2√(a·b))`, never below `s0`.
#[inline]
pub fn desired_min_gap(v: f64, dv: f64, p: &DrivingParams) -> f64 {
    let raw = p.jam_distance + p.time_headway * v + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    raw.max(p.jam_distance)
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("non-positive gap {gap} m")]
pub struct Collision {
    pub gap: f64,
}

/// IDM acceleration for speed `v`, approach rate `dv = v − v_leader` and net
/// gap `s`, bounded below by `-b_emergency`.
#[inline]
pub fn idm_acceleration(v: f64, dv: f64, s: f64, p: &DrivingParams, b_emergency: f64) -> Result<f64, Collision> {
    if !(s > 0.0) {
        return Err(Collision { gap: s });
    }
    let ratio = v / p.v0;
    // The common exponent 4 avoids a powf call per vehicle and tick.
    let free = if p.accel_exponent == 4.0 {
        let r2 = ratio * ratio;
        r2 * r2
    } else {
        ratio.powf(p.accel_exponent)
    };
    let interaction = if s.is_finite() {
        let q = desired_min_gap(v, dv, p) / s;
        q * q
    } else {
        0.0
    };
    Ok((p.max_accel * (1.0 - free - interaction)).max(-b_emergency))
}

/// Steady-state platoon gap at speed `v` (`dv = 0`, zero acceleration):
/// `s*(v, 0) / √(1 − (v/v0)^δ)`. Infinite at or above `v0`.
pub fn equilibrium_gap(v: f64, p: &DrivingParams) -> f64 {
    let free = (v / p.v0).powf(p.accel_exponent);
    if free >= 1.0 {
        return f64::INFINITY;
    }
    desired_min_gap(v, 0.0, p) / (1.0 - free).sqrt()
}

/// Directions the driver would like to move to: a neighbor whose leader is
/// sufficiently faster than ours, or any open neighbor when our lane closes
/// within `closure_horizon` meters.
pub fn lane_change_necessity(view: &NeighborView, p: &DrivingParams, closure_horizon: f64) -> Candidates {
    let own_closing = view.closure_ahead.is_some_and(|d| d <= closure_horizon);
    let wants = |side: Option<&SideView>| -> bool {
        let Some(s) = side else { return false };
        let target_open = s.closure_ahead.is_none_or(|d| d > closure_horizon);
        if !target_open {
            return false;
        }
        own_closing || view.leader.velocity < p.speed_ratio_threshold * s.leader.velocity
    };
    Candidates { left: wants(view.left.as_ref()), right: wants(view.right.as_ref()) }
}

/// Gap acceptance over the lane-change duration toward the current leader
/// (CL), the target leader (TL) and the target follower (TF). All gaps must
/// also be strictly positive.
pub fn lane_change_feasibility(view: &NeighborView, p: &DrivingParams, direction: Direction) -> bool {
    let Some(side) = view.side(direction) else { return false };
    let dtau = p.lane_change_duration;
    let vs = view.velocity;
    let cl = view.leader;
    let tl = side.leader;
    let tf = side.follower;
    if !(cl.gap > 0.0 && tl.gap > 0.0 && tf.gap > 0.0) {
        return false;
    }
    let ahead_ok = |n: Neighbor, mu: f64| !n.is_present() || vs * dtau <= n.velocity * dtau + n.gap - mu * vs;
    let behind_ok = !tf.is_present() || tf.velocity * dtau <= vs * dtau + tf.gap - p.mu_tf * tf.velocity;
    ahead_ok(cl, p.mu_cl) && ahead_ok(tl, p.mu_tl) && behind_ok
}

/// Semi-implicit Euler with a no-reversing clamp. Wrapping onto a loop is the
/// caller's business.
#[inline]
pub fn integrate(state: KinematicState, accel: f64, dt: f64) -> KinematicState {
    let velocity = (state.velocity + accel * dt).max(0.0);
    KinematicState { lane: state.lane, position: state.position + velocity * dt, velocity, acceleration: accel }
}

/// A lane change in progress. While it lasts, the vehicle is a neighbor in
/// both `from` and `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneChange {
    pub from: LaneId,
    pub to: LaneId,
    pub started_tick: u64,
    /// Tick at whose end the lane id switches.
    pub complete_tick: u64,
}

impl LaneChange {
    pub fn duration_ticks(delta_tau: f64, dt: f64) -> u64 {
        ((delta_tau / dt).round() as u64).max(1)
    }

    pub fn is_done_after(&self, tick: u64) -> bool {
        tick + 1 >= self.complete_tick
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("a lane change started at tick {started_tick} is still in progress")]
pub struct MidChange {
    pub started_tick: u64,
}

pub fn execute_lane_change(
    state: &KinematicState,
    pending: Option<&LaneChange>,
    target: LaneId,
    now_tick: u64,
    delta_tau: f64,
    dt: f64,
) -> Result<LaneChange, MidChange> {
    if let Some(p) = pending {
        return Err(MidChange { started_tick: p.started_tick });
    }
    Ok(LaneChange {
        from: state.lane,
        to: target,
        started_tick: now_tick,
        complete_tick: now_tick + LaneChange::duration_ticks(delta_tau, dt),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn example_params() -> DrivingParams {
        DrivingParams {
            v0: 15.0,
            time_headway: 1.5,
            max_accel: 1.0,
            comfort_decel: 2.0,
            accel_exponent: 4.0,
            jam_distance: 2.0,
            speed_ratio_threshold: 0.75,
            mu_tl: 1.5,
            mu_tf: 1.5,
            mu_cl: 1.05,
            lane_change_duration: 5.0,
        }
    }

    #[test]
    fn desired_gap_examples() {
        let p = example_params();
        assert_eq!(desired_min_gap(0.0, 0.0, &p), 2.0);
        assert_abs_diff_eq!(desired_min_gap(10.0, 0.0, &p), 17.0, epsilon = 1e-12);
        // 17 + 20 / (2√2)
        assert_abs_diff_eq!(desired_min_gap(10.0, 2.0, &p), 24.071067811865476, epsilon = 1e-9);
        // Strong negative approach rate is clamped to the jam distance.
        assert_eq!(desired_min_gap(10.0, -20.0, &p), 2.0);
    }

    #[test]
    fn idm_examples() {
        let p = example_params();
        assert_abs_diff_eq!(idm_acceleration(15.0, 0.0, f64::INFINITY, &p, 8.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(idm_acceleration(0.0, 0.0, f64::INFINITY, &p, 8.0).unwrap(), 1.0, epsilon = 1e-15);
        // 1 − (10/15)^4 − (17/30)^2, evaluated independently.
        let expected = 1.0 - (2.0f64 / 3.0).powi(4) - (17.0f64 / 30.0).powi(2);
        assert_abs_diff_eq!(idm_acceleration(10.0, 0.0, 30.0, &p, 8.0).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.4814, epsilon = 1e-4);
        assert_eq!(idm_acceleration(10.0, 0.0, 0.0, &p, 8.0), Err(Collision { gap: 0.0 }));
        assert_eq!(idm_acceleration(10.0, 5.0, 0.1, &p, 8.0).unwrap(), -8.0);
    }

    #[test]
    fn non_integer_exponent_uses_powf() {
        let mut p = example_params();
        p.accel_exponent = 2.5;
        let a = idm_acceleration(10.0, 0.0, f64::INFINITY, &p, 8.0).unwrap();
        assert_abs_diff_eq!(a, 1.0 - (2.0f64 / 3.0).powf(2.5), epsilon = 1e-12);
    }

    fn side(leader_gap: f64, leader_v: f64, follower_gap: f64, follower_v: f64) -> SideView {
        SideView {
            lane: LaneId(1),
            leader: Neighbor { gap: leader_gap, velocity: leader_v },
            follower: Neighbor { gap: follower_gap, velocity: follower_v },
            closure_ahead: None,
        }
    }

    fn view(leader_v: f64, left: Option<SideView>, right: Option<SideView>) -> NeighborView {
        NeighborView { velocity: 10.0, leader: Neighbor { gap: 50.0, velocity: leader_v }, left, right, closure_ahead: None }
    }

    #[test]
    fn necessity_from_faster_neighbor() {
        let p = example_params();
        let v = view(8.0, Some(side(40.0, 12.0, 40.0, 10.0)), None);
        assert_eq!(lane_change_necessity(&v, &p, 200.0), Candidates { left: true, right: false });
        let v = view(8.0, Some(side(40.0, 8.0, 40.0, 8.0)), Some(side(40.0, 8.0, 40.0, 8.0)));
        assert!(lane_change_necessity(&v, &p, 200.0).is_empty());
    }

    #[test]
    fn necessity_from_closure() {
        let p = example_params();
        let mut v = view(8.0, None, Some(side(40.0, 8.0, 40.0, 8.0)));
        v.closure_ahead = Some(150.0);
        assert_eq!(lane_change_necessity(&v, &p, 200.0), Candidates { left: false, right: true });
        v.closure_ahead = Some(250.0);
        assert!(lane_change_necessity(&v, &p, 200.0).is_empty());
        // A neighbor that closes too is not an escape route.
        v.closure_ahead = Some(150.0);
        v.right.as_mut().unwrap().closure_ahead = Some(180.0);
        assert!(lane_change_necessity(&v, &p, 200.0).is_empty());
    }

    #[test]
    fn candidate_order() {
        let v = view(5.0, Some(side(40.0, 9.0, 40.0, 9.0)), Some(side(40.0, 12.0, 40.0, 9.0)));
        let c = Candidates { left: true, right: true };
        assert_eq!(c.ordered(&v).collect::<Vec<_>>(), vec![Direction::Right, Direction::Left]);
        let v = view(5.0, Some(side(40.0, 9.0, 40.0, 9.0)), Some(side(40.0, 9.0, 40.0, 9.0)));
        assert_eq!(c.ordered(&v).collect::<Vec<_>>(), vec![Direction::Left, Direction::Right]);
    }

    #[test]
    fn feasibility_examples() {
        let p = example_params();
        // TL: 10·5 ≤ 10·5 + 30 − 1.5·10.
        let mut v = view(10.0, Some(side(30.0, 10.0, f64::INFINITY, 0.0)), None);
        v.leader = Neighbor::absent(p.v0);
        assert!(lane_change_feasibility(&v, &p, Direction::Left));
        v.left.as_mut().unwrap().leader.gap = 14.0;
        assert!(!lane_change_feasibility(&v, &p, Direction::Left));

        let mut v = view(10.0, Some(side(0.0, 20.0, f64::INFINITY, 0.0)), None);
        v.leader = Neighbor::absent(p.v0);
        assert!(!lane_change_feasibility(&v, &p, Direction::Left));

        let mut free = view(10.0, Some(SideView { lane: LaneId(1), leader: Neighbor::absent(15.0), follower: Neighbor::absent(0.0), closure_ahead: None }), None);
        free.leader = Neighbor::absent(p.v0);
        assert!(lane_change_feasibility(&free, &p, Direction::Left));
        assert!(!lane_change_feasibility(&free, &p, Direction::Right));
    }

    #[test]
    fn feasibility_follower_uses_its_own_speed() {
        let p = example_params();
        // Follower at 14 m/s, 20 m back: 70 ≤ 50 + 20 − 21 is false.
        let mut v = view(10.0, Some(side(f64::INFINITY, 15.0, 20.0, 14.0)), None);
        v.leader = Neighbor::absent(p.v0);
        assert!(!lane_change_feasibility(&v, &p, Direction::Left));
        v.left.as_mut().unwrap().follower.gap = 60.0;
        assert!(lane_change_feasibility(&v, &p, Direction::Left));
    }

    #[test]
    fn integrate_examples() {
        let s = KinematicState { lane: LaneId(0), position: 0.0, velocity: 10.0, acceleration: 0.0 };
        let n = integrate(s, 0.0, 0.1);
        assert_eq!(n.velocity, 10.0);
        assert_abs_diff_eq!(n.position, 1.0, epsilon = 1e-12);
        let n = integrate(KinematicState { velocity: 0.05, ..s }, -1.0, 0.1);
        assert_eq!(n.velocity, 0.0);
        assert_eq!(n.position, 0.0);
        let n = integrate(s, 0.4814, 0.1);
        assert_abs_diff_eq!(n.velocity, 10.04814, epsilon = 1e-12);
        assert_abs_diff_eq!(n.position, 1.004814, epsilon = 1e-12);
    }

    #[test]
    fn lane_change_timing() {
        assert_eq!(LaneChange::duration_ticks(3.0, 0.1), 30);
        let s = KinematicState { lane: LaneId(0), position: 0.0, velocity: 10.0, acceleration: 0.0 };
        // Started at t = 10 s with Δτ = 5 s: switches at t = 15 s.
        let lc = execute_lane_change(&s, None, LaneId(1), 100, 5.0, 0.1).unwrap();
        assert_eq!(lc.complete_tick, 150);
        assert!(!lc.is_done_after(148));
        assert!(lc.is_done_after(149));
        assert_eq!(execute_lane_change(&s, Some(&lc), LaneId(1), 120, 5.0, 0.1), Err(MidChange { started_tick: 100 }));
    }

    #[test]
    fn validation() {
        let p = example_params();
        assert!(p.validate().is_ok());
        assert!(matches!(DrivingParams { speed_ratio_threshold: 1.0, ..p }.validate(), Err(ParamsError::RatioNotBelowOne(_))));
        assert!(matches!(DrivingParams { v0: 0.0, ..p }.validate(), Err(ParamsError::NotPositive("v0", _))));
        assert!(matches!(DrivingParams { mu_cl: 2.0, ..p }.validate(), Err(ParamsError::CurrentLeaderGap { .. })));
        assert_eq!(DrivingParams::from_array(p.to_array()), p);
    }

    fn params_strategy() -> impl Strategy<Value = DrivingParams> {
        (5.0..40.0f64, 0.5..2.5f64, 0.3..3.0f64, 0.5..4.0f64, prop_oneof![Just(4.0), 1.0..6.0f64], 0.5..5.0f64).prop_map(
            |(v0, t, a, b, d, s0)| DrivingParams {
                v0,
                time_headway: t,
                max_accel: a,
                comfort_decel: b,
                accel_exponent: d,
                jam_distance: s0,
                ..example_params()
            },
        )
    }

    proptest! {
        #[test]
        fn integrate_never_reverses(v in 0.0..50.0f64, a in -20.0..5.0f64, dt in 0.001..1.0f64) {
            let s = KinematicState { lane: LaneId(0), position: 3.0, velocity: v, acceleration: 0.0 };
            let n = integrate(s, a, dt);
            prop_assert!(n.velocity >= 0.0);
            prop_assert!(n.position >= s.position);
        }

        #[test]
        fn idm_decreasing_in_speed(p in params_strategy(), v in 0.0..30.0f64, dv_up in 0.01..5.0f64, vl in 0.0..30.0f64, s in 1.0..200.0f64) {
            let a1 = idm_acceleration(v, v - vl, s, &p, f64::INFINITY).unwrap();
            let a2 = idm_acceleration(v + dv_up, v + dv_up - vl, s, &p, f64::INFINITY).unwrap();
            prop_assert!(a2 < a1, "a({})={} a({})={}", v, a1, v + dv_up, a2);
        }

        #[test]
        fn idm_increasing_in_gap(p in params_strategy(), v in 0.0..30.0f64, dv in -5.0..5.0f64, s in 0.5..200.0f64, ds in 0.01..50.0f64) {
            let a1 = idm_acceleration(v, dv, s, &p, f64::INFINITY).unwrap();
            let a2 = idm_acceleration(v, dv, s + ds, &p, f64::INFINITY).unwrap();
            prop_assert!(a2 > a1);
        }

        #[test]
        fn feasibility_monotone_in_gaps(
            vs in 0.0..20.0f64, vcl in 0.0..20.0f64, vtl in 0.0..20.0f64, vtf in 0.0..20.0f64,
            gcl in 0.1..80.0f64, gtl in 0.1..80.0f64, gtf in 0.1..80.0f64,
            e in 0.0..30.0f64, which in 0usize..3,
        ) {
            let p = example_params();
            let mk = |gcl, gtl, gtf| NeighborView {
                velocity: vs,
                leader: Neighbor { gap: gcl, velocity: vcl },
                left: Some(side(gtl, vtl, gtf, vtf)),
                right: None,
                closure_ahead: None,
            };
            let before = lane_change_feasibility(&mk(gcl, gtl, gtf), &p, Direction::Left);
            let after = match which {
                0 => lane_change_feasibility(&mk(gcl + e, gtl, gtf), &p, Direction::Left),
                1 => lane_change_feasibility(&mk(gcl, gtl + e, gtf), &p, Direction::Left),
                _ => lane_change_feasibility(&mk(gcl, gtl, gtf + e), &p, Direction::Left),
            };
            prop_assert!(!before || after);
        }
    }
}
