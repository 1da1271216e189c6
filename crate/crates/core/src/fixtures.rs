//! Built-in machine definitions for the shipped example protocols.
//!
//! * `transport/robot`, `transport/machine`: the transport-order auction. A
//!   machine requests a pickup, robots bid, the machine selects a winner.
//! * `order/customer`, `order/shop`: an order that the shop accepts (emitting
//!   two events) or the customer cancels, decided concurrently.

use serde_json::{json, Map, Value};

use crate::eventlog::EventRecord;
use crate::runner::{MachineBuilder, MachineDefinition};

fn merge(base: &Value, extra: &Value) -> Map<String, Value> {
    let mut out = base.as_object().cloned().unwrap_or_default();
    if let Some(extra) = extra.as_object() {
        out.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    out
}

fn push_score(state: &Value, bid: &[EventRecord]) -> Result<Value, String> {
    let mut next = state.clone();
    let scores = next
        .get_mut("scores")
        .and_then(Value::as_array_mut)
        .ok_or("auction state has no scores")?;
    scores.push(bid[0].payload.clone());
    Ok(next)
}

fn open_auction(state: &Value, requested: &[EventRecord]) -> Result<Value, String> {
    let mut next = merge(state, &requested[0].payload);
    next.insert("scores".into(), json!([]));
    Ok(Value::Object(next))
}

pub fn transport_robot() -> MachineDefinition {
    MachineBuilder::new("robot", "Initial")
        .command("Auction", "bid", &["bid"], |state, delay| {
            Ok(vec![json!({ "robot": state["robot"], "delay": delay })])
        })
        .react("Initial", &["requested"], "Auction", open_auction)
        .react("Auction", &["bid"], "Auction", push_score)
        .react("Auction", &["selected"], "DoIt", |state, selected| {
            Ok(json!({ "robot": state["robot"], "winner": selected[0].payload["winner"] }))
        })
        .build()
        .expect("robot definition is valid")
}

pub fn transport_machine() -> MachineDefinition {
    MachineBuilder::new("machine", "Initial")
        .command("Initial", "request", &["requested"], |_, order| {
            Ok(vec![order.clone()])
        })
        .command("Auction", "select", &["selected"], |_, choice| {
            Ok(vec![json!({ "winner": choice["winner"] })])
        })
        .react("Initial", &["requested"], "Auction", open_auction)
        .react("Auction", &["bid"], "Auction", push_score)
        .react("Auction", &["selected"], "Done", |_, selected| {
            Ok(json!({ "winner": selected[0].payload["winner"] }))
        })
        .build()
        .expect("machine definition is valid")
}

pub fn order_customer() -> MachineDefinition {
    MachineBuilder::new("customer", "Start")
        .command("Start", "order", &["ordered"], |_, item| {
            Ok(vec![item.clone()])
        })
        .command("Ordered", "cancel", &["cancelled"], |_, reason| {
            Ok(vec![json!({ "reason": reason })])
        })
        .react("Start", &["ordered"], "Ordered", |_, ordered| {
            Ok(json!({ "order": ordered[0].payload }))
        })
        .react(
            "Ordered",
            &["accepted", "invoiced"],
            "Accepted",
            |state, events| {
                let mut next = state.as_object().cloned().unwrap_or_default();
                next.insert("invoice".into(), events[1].payload.clone());
                Ok(Value::Object(next))
            },
        )
        .react("Ordered", &["cancelled"], "Cancelled", |state, _| {
            Ok(state.clone())
        })
        .build()
        .expect("customer definition is valid")
}

pub fn order_shop() -> MachineDefinition {
    MachineBuilder::new("shop", "Idle")
        .command(
            "Pending",
            "accept",
            &["accepted", "invoiced"],
            |state, args| {
                let amount = args.get("amount").cloned().unwrap_or(json!(10));
                Ok(vec![
                    json!({ "order": state["order"] }),
                    json!({ "amount": amount }),
                ])
            },
        )
        .react("Idle", &["ordered"], "Pending", |_, ordered| {
            Ok(json!({ "order": ordered[0].payload }))
        })
        .react(
            "Pending",
            &["accepted", "invoiced"],
            "Accepted",
            |state, _| Ok(state.clone()),
        )
        .react("Pending", &["cancelled"], "Cancelled", |state, _| {
            Ok(state.clone())
        })
        .build()
        .expect("shop definition is valid")
}

/// Protocol, subscription and machine-shape documents shipped with the crate.
pub mod documents {
    pub const TRANSPORT_PROTOCOL: &str = include_str!("../fixtures/transport/protocol.json");
    pub const TRANSPORT_SUBS: &str = include_str!("../fixtures/transport/subs.json");
    pub const TRANSPORT_ROBOT_SHAPE: &str = include_str!("../fixtures/transport/robot.json");
    pub const TRANSPORT_MACHINE_SHAPE: &str = include_str!("../fixtures/transport/machine.json");
    pub const TRANSPORT_SCENARIO: &str = include_str!("../fixtures/transport/scenario.json");
    pub const TRANSPORT_LATE_BID_SCENARIO: &str =
        include_str!("../fixtures/transport/scenario-late-bid.json");
    pub const TRANSPORT_ROBOT_MISSING_SELECTED_SUBS: &str =
        include_str!("../fixtures/transport/subs-robot-missing-selected.json");
    pub const TRANSPORT_MACHINE_MISSING_REQUESTED_SUBS: &str =
        include_str!("../fixtures/transport/subs-machine-missing-requested.json");
    pub const TRANSPORT_DUPLICATE_GUARD_PROTOCOL: &str =
        include_str!("../fixtures/transport/protocol-duplicate-guard.json");
    pub const TRANSPORT_ROBOT_MISSING_SELECTED_SCENARIO: &str =
        include_str!("../fixtures/transport/scenario-robot-missing-selected.json");
    pub const TRANSPORT_MACHINE_MISSING_REQUESTED_SCENARIO: &str =
        include_str!("../fixtures/transport/scenario-machine-missing-requested.json");
    pub const ORDER_PROTOCOL: &str = include_str!("../fixtures/order/protocol.json");
    pub const ORDER_SUBS: &str = include_str!("../fixtures/order/subs.json");
    pub const ORDER_SCENARIO: &str = include_str!("../fixtures/order/scenario.json");
}
