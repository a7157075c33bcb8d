//! CSV encodings of the metrics and the event log. Both parse back into the
//! same rows and re-emit byte-identically.

use std::io::{Read, Write};

use cats_core::economy::{Account, Transfer};
use cats_core::engine::{Event, EventKind, MetricsSnapshot};
use serde::{Deserialize, Serialize};

/// The metrics table. The first nine columns are the ones every tool should
/// expect; the rest are diagnostics.
pub fn write_metrics<W: Write>(out: W, rows: &[MetricsSnapshot]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> csv::Result<Vec<MetricsSnapshot>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub const METRICS_HEADER: [&str; 23] = [
    "day",
    "accident_rate",
    "violations",
    "n_conservative",
    "n_normal",
    "n_aggressive",
    "n_banned",
    "mean_lambda",
    "total_resources",
    "exposed",
    "active",
    "accidents",
    "enforced",
    "undetected",
    "collisions",
    "lane_changes",
    "congestion_fees",
    "lambda_p10",
    "lambda_p50",
    "lambda_p90",
    "repeat_fraction",
    "granted",
    "sunk",
];

/// One flattened event. `vehicle` is the subject (offender, payer, the
/// vehicle changing lane); `counterparty` is the other side, if any, and may
/// list several space-separated reporter ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub tick: u64,
    pub day: u32,
    pub kind: String,
    pub vehicle: Option<u32>,
    pub counterparty: Option<String>,
    pub amount: Option<String>,
    pub detail: String,
}

fn account(a: &Account) -> (Option<u32>, String) {
    match a {
        Account::System => (None, "system".into()),
        Account::Vehicle(v) => (Some(v.0), v.to_string()),
    }
}

impl EventRow {
    pub fn from_event(e: &Event) -> EventRow {
        let mut row =
            EventRow { tick: e.tick, day: e.day, kind: e.kind.name().to_string(), vehicle: None, counterparty: None, amount: None, detail: String::new() };
        match &e.kind {
            EventKind::Grant { vehicle, resources, credit } => {
                row.vehicle = Some(vehicle.0);
                row.counterparty = Some("system".into());
                row.amount = Some(resources.to_string());
                row.detail = format!("credit={credit}");
            }
            EventKind::Transfer(Transfer { payer, payee, amount, .. }) => {
                row.vehicle = account(payer).0;
                row.counterparty = Some(account(payee).1);
                row.amount = Some(amount.to_string());
            }
            EventKind::CreditDeduction { vehicle, amount } => {
                row.vehicle = Some(vehicle.0);
                row.amount = Some(amount.to_string());
            }
            EventKind::Ban { vehicle, reason } => {
                row.vehicle = Some(vehicle.0);
                row.detail = format!("reason={reason}");
            }
            EventKind::Unban { vehicle } => row.vehicle = Some(vehicle.0),
            EventKind::Violation { offender, violation_type, at_tick, lane, position, covered, reporters, enforced, stream } => {
                row.vehicle = Some(offender.0);
                if !reporters.is_empty() {
                    row.counterparty = Some(reporters.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" "));
                }
                row.detail = format!(
                    "type={};at_tick={at_tick};lane={};position={position};covered={covered};enforced={enforced};stream={stream}",
                    violation_type.0, lane.0
                );
            }
            EventKind::Undetected { offender, at_tick } => {
                row.vehicle = Some(offender.0);
                row.detail = format!("at_tick={at_tick}");
            }
            EventKind::Accident { offender, class, at_tick } => {
                row.vehicle = Some(offender.0);
                row.detail = format!("class={class};at_tick={at_tick}");
            }
            EventKind::LaneChange { vehicle, from, to, complete_tick } => {
                row.vehicle = Some(vehicle.0);
                row.detail = format!("from={};to={};complete_tick={complete_tick}", from.0, to.0);
            }
            EventKind::Collision { follower, leader, gap } => {
                row.vehicle = Some(follower.0);
                row.counterparty = Some(leader.to_string());
                row.detail = format!("gap={gap}");
            }
            EventKind::Reinsert { vehicle, lane, position } => {
                row.vehicle = Some(vehicle.0);
                row.detail = format!("lane={};position={position}", lane.0);
            }
        }
        row
    }
}

pub fn write_events<'a, W: Write, I: IntoIterator<Item = &'a Event>>(out: W, events: I) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut any = false;
    for e in events {
        w.serialize(EventRow::from_event(e))?;
        any = true;
    }
    if !any {
        w.write_record(["tick", "day", "kind", "vehicle", "counterparty", "amount", "detail"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_event_rows<W: Write>(out: W, rows: &[EventRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["tick", "day", "kind", "vehicle", "counterparty", "amount", "detail"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(input: R) -> csv::Result<Vec<EventRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
