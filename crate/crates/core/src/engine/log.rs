//! The ordered event log and ledger replay.

use serde::{Deserialize, Serialize};

use crate::behavior::DriverType;
use crate::economy::{Account, BanReason, Ledger, Transfer, Units, ViolationType};
use crate::network::LaneId;
use crate::rng::StreamId;
use crate::VehicleId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    /// Periodic allocation. Credit is reset to `credit`.
    Grant { vehicle: VehicleId, resources: Units, credit: Units },
    /// Resource movement: fines, congestion fees. Grants have their own kind.
    Transfer(Transfer),
    CreditDeduction { vehicle: VehicleId, amount: Units },
    Ban { vehicle: VehicleId, reason: BanReason },
    Unban { vehicle: VehicleId },
    /// A sampled violation. `reporters` is empty in baseline mode.
    Violation {
        offender: VehicleId,
        violation_type: ViolationType,
        at_tick: u64,
        lane: LaneId,
        position: f64,
        covered: bool,
        reporters: Vec<VehicleId>,
        enforced: bool,
        stream: StreamId,
    },
    /// A violation nobody was around to see.
    Undetected { offender: VehicleId, at_tick: u64 },
    Accident { offender: VehicleId, class: DriverType, at_tick: u64 },
    LaneChange { vehicle: VehicleId, from: LaneId, to: LaneId, complete_tick: u64 },
    Collision { follower: VehicleId, leader: VehicleId, gap: f64 },
    /// A parked vehicle put back on the road.
    Reinsert { vehicle: VehicleId, lane: LaneId, position: f64 },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Grant { .. } => "grant",
            EventKind::Transfer(t) => match t.cause {
                crate::economy::TransferCause::Fine => "fine",
                crate::economy::TransferCause::CongestionFee => "congestion-fee",
                crate::economy::TransferCause::Grant => "transfer",
            },
            EventKind::CreditDeduction { .. } => "credit-deduction",
            EventKind::Ban { .. } => "ban",
            EventKind::Unban { .. } => "unban",
            EventKind::Violation { .. } => "violation",
            EventKind::Undetected { .. } => "undetected",
            EventKind::Accident { .. } => "accident",
            EventKind::LaneChange { .. } => "lane-change",
            EventKind::Collision { .. } => "collision",
            EventKind::Reinsert { .. } => "reinsert",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub day: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Events in non-decreasing tick order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event. Ticks must not go backwards.
    pub fn push(&mut self, tick: u64, day: u32, kind: EventKind) {
        debug_assert!(self.events.last().is_none_or(|e| e.tick <= tick), "event log tick went backwards");
        self.events.push(Event { tick, day, kind });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_ordered(&self) -> bool {
        self.events.windows(2).all(|w| w[0].tick <= w[1].tick)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }
}

fn account_mut(ledgers: &mut [Ledger], a: Account) -> Option<&mut Ledger> {
    match a {
        Account::System => None,
        Account::Vehicle(v) => ledgers.get_mut(v.index()),
    }
}

/// Folds the ledger-relevant events of `log` over `initial`.
///
/// Transfers, credit deductions, grants, bans and unbans are enough to
/// reconstruct every ledger exactly.
pub fn replay(initial: &[Ledger], log: &EventLog) -> Vec<Ledger> {
    let mut ledgers = initial.to_vec();
    for e in log.iter() {
        match &e.kind {
            EventKind::Grant { vehicle, resources, credit } => {
                let l = &mut ledgers[vehicle.index()];
                l.resources += *resources;
                l.credit = *credit;
            }
            EventKind::Transfer(t) => {
                if let Some(l) = account_mut(&mut ledgers, t.payer) {
                    l.resources -= t.amount;
                }
                if let Some(l) = account_mut(&mut ledgers, t.payee) {
                    l.resources += t.amount;
                }
            }
            EventKind::CreditDeduction { vehicle, amount } => ledgers[vehicle.index()].credit -= *amount,
            EventKind::Ban { vehicle, reason } => ledgers[vehicle.index()].ban = Some(*reason),
            EventKind::Unban { vehicle } => ledgers[vehicle.index()].ban = None,
            _ => {}
        }
    }
    ledgers
}
