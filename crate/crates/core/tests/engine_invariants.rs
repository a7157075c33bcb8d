use std::collections::HashSet;

use cats_core::behavior::DriverType;
use cats_core::economy::{Units, ViolationTariff};
use cats_core::engine::{replay, run, run_with, EventKind, IterationOrder, Placement, RunOptions, Status, World};
use cats_core::network::{LaneId, NetworkConfig};
use cats_core::surveillance::ViolationRates;
use cats_core::{Mode, ScenarioConfig, VehicleId};

fn small(seed: u64, days: u32) -> ScenarioConfig {
    let mut c = ScenarioConfig::replication(0.3);
    c.seed = seed;
    c.horizon_days = days;
    c.network = NetworkConfig::ring(4.0, 2, 0.3);
    c.population.total = 200;
    c.dynamics.window_s = 120.0;
    // Higher rates so that a short run has something to enforce.
    c.rates = ViolationRates { covered: [0.0, 0.1, 0.2], uncovered: [0.0, 0.3, 0.5] };
    c
}

fn log_json(c: &ScenarioConfig, options: RunOptions) -> (String, String) {
    let out = run_with(c, options).unwrap();
    (serde_json::to_string(&out.metrics).unwrap(), serde_json::to_string(out.log.events()).unwrap())
}

#[test]
fn same_seed_gives_identical_output() {
    let c = small(3, 4);
    assert_eq!(log_json(&c, RunOptions::default()), log_json(&c, RunOptions::default()));
}

#[test]
fn different_seeds_give_different_logs() {
    let a = log_json(&small(3, 2), RunOptions::default());
    let b = log_json(&small(4, 2), RunOptions::default());
    assert_ne!(a.1, b.1);
}

#[test]
fn parallel_matches_serial() {
    let c = small(5, 3);
    let serial = log_json(&c, RunOptions::default());
    let parallel = log_json(&c, RunOptions { parallel: true, ..RunOptions::default() });
    assert_eq!(serial, parallel);
}

#[test]
fn iteration_order_does_not_change_violations() {
    let c = small(6, 4);
    let violations = |options| {
        let out = run_with(&c, options).unwrap();
        out.log
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Violation { offender, violation_type, at_tick, .. } => Some((e.day, *offender, *violation_type, *at_tick)),
                _ => None,
            })
            .collect::<Vec<_>>()
    };
    let base = violations(RunOptions::default());
    assert!(!base.is_empty());
    for s in [1, 99] {
        assert_eq!(base, violations(RunOptions { iteration: IterationOrder::Shuffled(s), ..RunOptions::default() }));
    }
}

#[test]
fn replay_reproduces_final_ledgers() {
    for mode in [Mode::Cats, Mode::Baseline] {
        let mut c = small(7, 5);
        c.mode = mode;
        let out = run(&c).unwrap();
        assert_eq!(replay(&out.initial_ledgers, &out.log), out.final_ledgers);
        assert!(out.log.is_ordered());
    }
}

#[test]
fn resources_balance_at_every_snapshot() {
    for mode in [Mode::Cats, Mode::Baseline] {
        let mut c = small(8, 5);
        c.mode = mode;
        c.economy.period_days = 2;
        let mut w = World::new(c).unwrap();
        for _ in 0..5 {
            let m = w.step_day().unwrap().clone();
            assert!(m.is_balanced());
            let total: Units = w.ledgers().iter().map(|l| l.resources).sum();
            assert_eq!(total, m.total_resources);
            assert_eq!(total, w.granted() - w.sunk());
        }
    }
}

#[test]
fn zero_rates_leave_everyone_untouched() {
    let mut c = small(9, 6);
    c.rates = ViolationRates::zero();
    c.economy.period_days = 4;
    let out = run(&c).unwrap();
    for e in out.log.iter() {
        assert!(
            !matches!(e.kind, EventKind::Ban { .. } | EventKind::Violation { .. } | EventKind::Transfer(_)),
            "unexpected {:?}",
            e
        );
    }
    for m in &out.metrics {
        assert_eq!(m.mean_lambda, 1.0);
        assert_eq!(m.n_banned, 0);
    }
    let l0 = c.economy.l0;
    assert!(out.final_ledgers.iter().all(|l| l.credit == l0 && l.resources == out.final_ledgers[0].resources));
}

#[test]
fn thirty_snapshots_for_thirty_days() {
    let mut c = small(10, 30);
    c.population.total = 20;
    c.dynamics.window_s = 10.0;
    assert_eq!(run(&c).unwrap().metrics.len(), 30);
}

/// Fines large enough that two violations ban, and a grant every two days.
fn banning(seed: u64) -> ScenarioConfig {
    let mut c = small(seed, 6);
    c.rates = ViolationRates { covered: [0.0, 1.0, 1.0], uncovered: [0.0, 1.0, 1.0] };
    c.tariff = ViolationTariff::uniform(1, Units::from_int(1), Units::from_int(6));
    c.economy.period_days = 2;
    c
}

#[test]
fn banned_vehicles_are_never_sampled() {
    let out = run(&banning(11)).unwrap();
    let mut banned: HashSet<VehicleId> = HashSet::new();
    let mut bans = 0;
    for e in out.log.iter() {
        match &e.kind {
            EventKind::Ban { vehicle, .. } => {
                banned.insert(*vehicle);
                bans += 1;
            }
            EventKind::Unban { vehicle } => {
                banned.remove(vehicle);
            }
            EventKind::Violation { offender, .. } => assert!(!banned.contains(offender), "banned {offender} sampled"),
            _ => {}
        }
    }
    assert!(bans > 0);
}

#[test]
fn grant_day_lifts_bans_before_sampling() {
    let c = banning(12);
    let period = c.economy.period_days;
    let mut w = World::new(c).unwrap();
    for _ in 0..6 {
        let day = w.day();
        let start = w.log().len();
        let banned_before: Vec<bool> = w.ledgers().iter().map(|l| l.is_banned()).collect();
        w.step_day().unwrap();
        if day > 0 && day % period == 0 {
            let events = &w.log().events()[start..];
            let first_violation = events.iter().position(|e| matches!(e.kind, EventKind::Violation { .. }));
            for (i, was) in banned_before.iter().enumerate() {
                if *was {
                    let unban = events
                        .iter()
                        .position(|e| matches!(e.kind, EventKind::Unban { vehicle } if vehicle.index() == i))
                        .expect("banned vehicle is unbanned on a grant day");
                    assert!(first_violation.is_none_or(|v| unban < v));
                }
            }
        }
    }
}

#[test]
fn credit_never_rises_within_a_period() {
    let c = banning(13);
    let period = c.economy.period_days;
    let mut w = World::new(c).unwrap();
    let mut prev: Vec<Units> = w.ledgers().iter().map(|l| l.credit).collect();
    for _ in 0..6 {
        let day = w.day();
        w.step_day().unwrap();
        let now: Vec<Units> = w.ledgers().iter().map(|l| l.credit).collect();
        if !(day > 0 && day % period == 0) {
            for (a, b) in prev.iter().zip(&now) {
                assert!(b <= a);
            }
        }
        prev = now;
    }
}

#[test]
fn banned_vehicles_leave_and_return() {
    let c = banning(14);
    let mut w = World::new(c).unwrap();
    w.step_day().unwrap();
    w.step_day().unwrap();
    let banned: Vec<usize> = (0..w.vehicles().len()).filter(|&i| w.ledgers()[i].is_banned()).collect();
    assert!(!banned.is_empty());
    for &i in &banned {
        assert_eq!(w.vehicles()[i].status, Status::Banned);
    }
    // Day 2 is a grant day.
    let start = w.log().len();
    w.step_day().unwrap();
    let reinserted: HashSet<usize> = w.log().events()[start..]
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Reinsert { vehicle, .. } => Some(vehicle.index()),
            _ => None,
        })
        .collect();
    for i in banned {
        assert!(reinserted.contains(&i), "vehicle {i} not reinserted");
    }
}

#[test]
fn left_lane_twice_as_fast_triggers_a_lane_change() {
    let mut c = ScenarioConfig::replication(0.0);
    c.network = NetworkConfig::ring(2.0, 2, 0.0);
    c.population.total = 3;
    c.rates = ViolationRates::zero();
    c.dynamics.window_s = 60.0;
    let w0 = World::with_placements(c.clone(), RunOptions::default(), &[]).unwrap();
    let home = LaneId(0);
    let target = w0.network().lanes()[0].left.expect("lane 0 has a left neighbor");
    let placements = [
        Placement { native: DriverType::Normal, lane: home, position: 0.0, velocity: 5.0 },
        Placement { native: DriverType::Normal, lane: home, position: 30.0, velocity: 4.0 },
        Placement { native: DriverType::Normal, lane: target, position: 60.0, velocity: 8.0 },
    ];
    let mut w = World::with_placements(c, RunOptions::default(), &placements).unwrap();
    let mut change = None;
    for _ in 0..20 {
        w.step_tick().unwrap();
        if let Some(e) = w.log().iter().find(|e| matches!(e.kind, EventKind::LaneChange { vehicle: VehicleId(0), .. })) {
            change = Some(e.clone());
            break;
        }
    }
    let e = change.expect("vehicle 0 changes lane within 20 ticks");
    let EventKind::LaneChange { from, to, complete_tick, .. } = e.kind else { unreachable!() };
    assert_eq!((from, to), (home, target));
    let dtau = w.vehicles()[0].behavior.effective.lane_change_duration;
    assert_eq!(complete_tick - e.tick, (dtau / 0.1).round() as u64);
    // Occupies both lanes until the transfer, then only the target.
    while w.tick() < complete_tick - 1 {
        assert_eq!(w.vehicles()[0].kin.lane, home);
        assert!(w.lane_occupants(target).contains(&VehicleId(0)));
        assert!(w.lane_occupants(home).contains(&VehicleId(0)));
        w.step_tick().unwrap();
    }
    w.step_tick().unwrap();
    assert_eq!(w.vehicles()[0].kin.lane, target);
    assert!(!w.lane_occupants(home).contains(&VehicleId(0)));
}

#[test]
fn single_lane_ring_stays_collision_free() {
    let mut c = ScenarioConfig::replication(0.0);
    c.network = NetworkConfig::ring(2.0, 1, 0.0);
    c.rates = ViolationRates::zero();
    c.population.total = 50;
    c.dynamics.window_s = 1000.0;
    c.horizon_days = 1;
    let out = run(&c).unwrap();
    assert_eq!(out.metrics[0].collisions, 0);
}
