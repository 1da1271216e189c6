#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use swarm_core::eventlog::{compare, EventRecord, NodeLog, RecordKey};
use swarm_core::fixtures;
use swarm_core::model::{EventType, Role, Subscriptions, SwarmProtocol};
use swarm_core::runner::{evaluate_filtered, DiscardReason, MachineDefinition, Runner};
use swarm_core::{
    check_projection, check_swarm_protocol, parse_protocol, parse_subscriptions, project,
};

// ---- random protocols ----

/// A random protocol with at most `max_states` states, `max_roles` roles and
/// `max_transitions` transitions, plus a subscription for every role.
pub fn random_protocol(
    rng: &mut ChaCha8Rng,
    max_states: usize,
    max_roles: usize,
    max_transitions: usize,
) -> (SwarmProtocol, Subscriptions) {
    let states = rng.gen_range(1..=max_states);
    let roles = rng.gen_range(1..=max_roles);
    let count = rng.gen_range(0..=max_transitions);
    let mut reached = vec![0usize];
    let mut transitions = Vec::new();
    let mut events = Vec::new();
    for i in 0..count {
        let source = *reached.choose(rng).unwrap();
        let target = rng.gen_range(0..states);
        if !reached.contains(&target) {
            reached.push(target);
        }
        let len = rng.gen_range(1..=2);
        let log: Vec<String> = (0..len)
            .map(|k| {
                // occasionally reuse an existing event type
                if !events.is_empty() && rng.gen_ratio(1, 12) {
                    events.choose(rng).cloned().unwrap()
                } else {
                    format!("e{i}{}", ["a", "b"][k])
                }
            })
            .collect();
        events.extend(log.iter().cloned());
        transitions.push(json!({
            "source": format!("s{source}"),
            "target": format!("s{target}"),
            "label": {
                "cmd": format!("c{i}"),
                "role": format!("r{}", rng.gen_range(0..roles)),
                "logType": log,
            }
        }));
    }
    let protocol = json!({ "initial": "s0", "transitions": transitions });
    let protocol = parse_protocol(&protocol.to_string()).unwrap();

    let all: BTreeSet<String> = events.iter().cloned().collect();
    let full = rng.gen_bool(0.5);
    let mut subs = BTreeMap::new();
    for r in 0..roles {
        let chosen: Vec<&String> = if full {
            all.iter().collect()
        } else {
            all.iter().filter(|_| rng.gen_ratio(3, 4)).collect()
        };
        subs.insert(format!("r{r}"), chosen);
    }
    let subs = parse_subscriptions(&json!(subs).to_string()).unwrap();
    (protocol, subs)
}

/// Generates random protocols until `wanted` pass the well-formedness check
/// and returns whether every role's projection checks against itself.
pub fn projection_round_trip(seed: u64, wanted: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < wanted {
        attempts += 1;
        if attempts > wanted * 1000 {
            return Err(format!(
                "only {accepted} well-formed protocols in {attempts} attempts"
            ));
        }
        let (protocol, subs) = random_protocol(&mut rng, 8, 4, 12);
        if !check_swarm_protocol(&protocol, &subs).unwrap().is_ok() {
            continue;
        }
        accepted += 1;
        for role in subs.roles() {
            let projected = project(&protocol, &subs, role)
                .map_err(|e| format!("{role}: {e}\n{}", protocol.to_json()))?;
            let verdict = check_projection(&protocol, &subs, role, &projected.shape).unwrap();
            if !verdict.is_ok() {
                return Err(format!(
                    "{role}: {}\n{}",
                    verdict.to_json(),
                    protocol.to_json()
                ));
            }
        }
    }
    Ok(attempts)
}

// ---- log merge ----

/// Operations on a small swarm of node logs.
#[derive(Clone, Debug)]
pub enum LogOp {
    Append { node: usize, event: u8 },
    Sync { from: usize, to: usize, mask: u32 },
}

pub fn log_ops(nodes: usize, max_len: usize) -> impl Strategy<Value = Vec<LogOp>> {
    let op = prop_oneof![
        (0..nodes, 0u8..4).prop_map(|(node, event)| LogOp::Append { node, event }),
        (0..nodes, 0..nodes, any::<u32>()).prop_map(|(from, to, mask)| LogOp::Sync {
            from,
            to,
            mask
        }),
    ];
    prop::collection::vec(op, 0..max_len)
}

/// Runs `ops`, returning the logs and, for each record, the keys its node
/// knew when emitting it.
pub fn run_log_ops(
    nodes: usize,
    ops: &[LogOp],
) -> (Vec<NodeLog>, BTreeMap<RecordKey, Vec<RecordKey>>) {
    let mut logs: Vec<NodeLog> = (0..nodes)
        .map(|i| NodeLog::new(format!("n{i}").parse().unwrap()))
        .collect();
    let mut before = BTreeMap::new();
    for op in ops {
        match *op {
            LogOp::Append { node, event } => {
                let known: Vec<RecordKey> =
                    logs[node].known().iter().map(EventRecord::key).collect();
                let event: EventType = format!("t{event}").parse().unwrap();
                let record = logs[node].append(event, json!(null), "s");
                before.insert(record.key(), known);
            }
            LogOp::Sync { from, to, mask } => {
                if from == to {
                    continue;
                }
                let subset: Vec<EventRecord> = logs[from]
                    .missing_at(&logs[to])
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> (i % 32) & 1 == 1)
                    .map(|(_, r)| r)
                    .collect();
                logs[to].receive(subset).unwrap();
            }
        }
    }
    (logs, before)
}

fn keyset(log: &NodeLog) -> Vec<RecordKey> {
    log.known().iter().map(EventRecord::key).collect()
}

/// Idempotence, commutativity and associativity of `receive` on the known
/// sets of a fresh node.
pub fn merge_laws(ops: &[LogOp]) -> Result<(), TestCaseError> {
    let (logs, _) = run_log_ops(3, ops);
    let [a, b, c] = [0, 1, 2].map(|i| logs[i].known().to_vec());
    let fresh = || NodeLog::new("observer".parse().unwrap());

    let mut once = fresh();
    once.receive(a.clone()).unwrap();
    let mut twice = once.clone();
    twice.receive(a.clone()).unwrap();
    prop_assert_eq!(once.known(), twice.known());
    prop_assert_eq!(once.clock(), twice.clock());

    let mut ab = fresh();
    ab.receive(a.clone()).unwrap();
    ab.receive(b.clone()).unwrap();
    let mut ba = fresh();
    ba.receive(b.clone()).unwrap();
    ba.receive(a.clone()).unwrap();
    prop_assert_eq!(ab.known(), ba.known());
    prop_assert_eq!(ab.clock(), ba.clock());

    let mut left = ab.clone();
    left.receive(c.clone()).unwrap();
    let mut bc = fresh();
    bc.receive(b.clone()).unwrap();
    bc.receive(c.clone()).unwrap();
    let mut right = fresh();
    right.receive(a.clone()).unwrap();
    right.receive(bc.known().to_vec()).unwrap();
    prop_assert_eq!(left.known(), right.known());

    // merging into a participating node gives the same set as the observer
    let mut into_c = logs[2].clone();
    into_c.receive(a).unwrap();
    into_c.receive(b).unwrap();
    prop_assert_eq!(keyset(&into_c), keyset(&left));
    for log in [&left, &into_c] {
        prop_assert!(log
            .known()
            .windows(2)
            .all(|w| compare(&w[0], &w[1]).is_lt()));
    }
    Ok(())
}

/// Every record sorts after everything its node knew when emitting it.
pub fn causality(ops: &[LogOp]) -> Result<(), TestCaseError> {
    let (logs, before) = run_log_ops(3, ops);
    let mut all: BTreeMap<RecordKey, EventRecord> = BTreeMap::new();
    for log in &logs {
        all.extend(log.known().iter().map(|r| (r.key(), r.clone())));
    }
    for (key, known) in &before {
        let record = &all[key];
        for k in known {
            prop_assert!(
                compare(&all[k], record).is_lt(),
                "{:?} not before {:?}",
                k,
                key
            );
        }
    }
    Ok(())
}

// ---- replay determinism ----

#[derive(Clone, Debug)]
pub struct ReplayCase {
    pub machine: usize,
    pub records: Vec<(u8, u8, u8, bool)>,
    pub chunks: Vec<usize>,
    pub shuffle: u64,
}

pub fn replay_cases() -> impl Strategy<Value = ReplayCase> {
    (
        0usize..2,
        prop::collection::vec((0u8..5, 1u8..12, 0u8..3, prop::bool::weighted(0.9)), 0..=20),
        prop::collection::vec(1usize..5, 0..20),
        any::<u64>(),
    )
        .prop_map(|(machine, records, chunks, shuffle)| ReplayCase {
            machine,
            records,
            chunks,
            shuffle,
        })
}

fn replay_machine(which: usize) -> (Arc<MachineDefinition>, Value, [&'static str; 5]) {
    match which {
        0 => (
            Arc::new(fixtures::transport_robot()),
            json!({"robot": "agv1"}),
            ["requested", "bid", "selected", "bid", "noise"],
        ),
        _ => (
            Arc::new(fixtures::order_shop()),
            Value::Null,
            ["ordered", "accepted", "invoiced", "cancelled", "noise"],
        ),
    }
}

/// Feeds a random log in random batches and compares against one batch
/// evaluation; checks the replay flag and the Invalidated reports of every
/// batch along the way.
pub fn replay_determinism(case: &ReplayCase) -> Result<(), TestCaseError> {
    let (def, payload, events) = replay_machine(case.machine);
    let mut seen = BTreeSet::new();
    let mut log = Vec::new();
    for (n, &(event, lamport, node, in_session)) in case.records.iter().enumerate() {
        if !seen.insert((lamport, node)) {
            continue;
        }
        let event_type = events[event as usize];
        let payload = match event_type {
            "bid" => json!({"robot": format!("r{node}"), "delay": lamport}),
            "selected" => json!({"winner": "r0"}),
            _ => json!({ "n": n }),
        };
        log.push(EventRecord {
            event_type: event_type.parse().unwrap(),
            payload,
            lamport: lamport as u64,
            node_id: format!("n{node}").parse().unwrap(),
            seq: n as u64,
            session_id: if in_session { "s" } else { "other" }.into(),
        });
    }
    let subs: BTreeSet<EventType> = def.subscriptions().clone();
    let mut sorted = log.clone();
    sorted.sort_by(compare);
    let (batch_state, batch_discards) =
        evaluate_filtered(&def, &subs, payload.clone(), &sorted, "s").unwrap();

    let mut arrival = log.clone();
    arrival.shuffle(&mut ChaCha8Rng::seed_from_u64(case.shuffle));
    let mut runner = Runner::new(Arc::clone(&def), payload, "s");
    let mut chunks = case.chunks.iter().copied().cycle();
    let mut rest = &arrival[..];
    while !rest.is_empty() {
        let take = chunks.next().unwrap_or(rest.len()).min(rest.len());
        let (batch, tail) = rest.split_at(take);
        rest = tail;

        let prior_last = runner.log().last().cloned();
        let prior_applied: BTreeSet<RecordKey> = runner.applied().into_iter().collect();
        let relevant: Vec<&EventRecord> = batch
            .iter()
            .filter(|r| r.session_id == "s" && subs.contains(&r.event_type))
            .collect();
        let retroactive = match &prior_last {
            Some(last) => relevant.iter().any(|r| compare(r, last).is_lt()),
            None => false,
        };

        let advance = runner.advance(batch.to_vec()).unwrap();
        prop_assert_eq!(advance.replayed, retroactive);
        let now_applied: BTreeSet<RecordKey> = runner.applied().into_iter().collect();
        let invalidated: BTreeSet<RecordKey> = advance
            .reports
            .iter()
            .filter(|r| r.reason == DiscardReason::Invalidated)
            .map(|r| r.record.key())
            .collect();
        let lost: BTreeSet<RecordKey> = prior_applied.difference(&now_applied).cloned().collect();
        if advance.replayed {
            prop_assert_eq!(&invalidated, &lost);
        } else {
            prop_assert!(invalidated.is_empty());
            prop_assert!(lost.is_empty());
        }
    }

    let state = runner.state();
    prop_assert_eq!(&state.state_name, &batch_state.state_name);
    prop_assert_eq!(&state.payload, &batch_state.payload);
    prop_assert_eq!(&state.in_flight, &batch_state.in_flight);
    let multiset = |keys: Vec<RecordKey>| {
        let mut keys = keys;
        keys.sort();
        keys
    };
    prop_assert_eq!(
        multiset(runner.discards().iter().map(|d| d.record.key()).collect()),
        multiset(batch_discards.iter().map(|d| d.record.key()).collect())
    );
    Ok(())
}

pub fn role(name: &str) -> Role {
    name.parse().unwrap()
}
