use serde::Serialize;

use crate::eventlog::EventRecord;
use crate::model::SwarmProtocol;

/// The protocol-level reference run over a merged log.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CanonicalRun {
    /// Completed protocol transitions, by index.
    pub path: Vec<usize>,
    /// The records that completed each transition of `path`.
    pub steps: Vec<Vec<EventRecord>>,
    pub discarded: Vec<EventRecord>,
    /// A transition whose log has only partially appeared.
    pub open: Option<(usize, Vec<EventRecord>)>,
}

impl CanonicalRun {
    /// Records applied along the path, in order.
    pub fn consumed(&self) -> impl Iterator<Item = &EventRecord> {
        self.steps.iter().flatten()
    }
}

/// Folds `merged_log` through the protocol graph itself: a record matching the
/// guard of a transition leaving the current state opens it, the rest of its
/// log must follow in order (other records in between are discarded), and
/// records that fit nowhere are discarded.
pub fn canonical_run(protocol: &SwarmProtocol, merged_log: &[EventRecord]) -> CanonicalRun {
    let mut run = CanonicalRun::default();
    let mut state = &protocol.initial;
    for record in merged_log {
        if let Some((index, mut matched)) = run.open.take() {
            let log = &protocol.transitions[index].label.log_type;
            if log[matched.len()] != record.event_type {
                run.discarded.push(record.clone());
                run.open = Some((index, matched));
                continue;
            }
            matched.push(record.clone());
            if matched.len() == log.len() {
                state = &protocol.transitions[index].target;
                run.path.push(index);
                run.steps.push(matched);
            } else {
                run.open = Some((index, matched));
            }
            continue;
        }
        let opened = protocol
            .outgoing(state)
            .find(|&i| protocol.transitions[i].guard() == Some(&record.event_type));
        match opened {
            None => run.discarded.push(record.clone()),
            Some(index) => {
                let t = &protocol.transitions[index];
                if t.label.log_type.len() == 1 {
                    state = &t.target;
                    run.path.push(index);
                    run.steps.push(vec![record.clone()]);
                } else {
                    run.open = Some((index, vec![record.clone()]));
                }
            }
        }
    }
    run
}
