//! Per-node append-only event logs with a Lamport-clock total order and
//! coordination-free merging.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{EventType, NodeId, ParseError};

/// A single persisted event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EventRecord {
    pub event_type: EventType,
    pub payload: Value,
    pub lamport: u64,
    pub node_id: NodeId,
    pub seq: u64,
    pub session_id: String,
}

/// Position of a record in the swarm-wide total order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrderKey {
    pub lamport: u64,
    pub node_id: NodeId,
}

/// Identity of a record: its origin stream and position in it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordKey {
    pub node_id: NodeId,
    pub seq: u64,
}

impl EventRecord {
    pub fn order_key(&self) -> OrderKey {
        OrderKey {
            lamport: self.lamport,
            node_id: self.node_id.clone(),
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            node_id: self.node_id.clone(),
            seq: self.seq,
        }
    }

    fn sort_tuple(&self) -> (u64, &str) {
        (self.lamport, self.node_id.as_str())
    }
}

/// Lexicographic on (lamport, node id).
pub fn compare(a: &EventRecord, b: &EventRecord) -> Ordering {
    a.sort_tuple().cmp(&b.sort_tuple())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConflictError {
    #[error("two different records claim stream position {}#{}", .0.node_id, .0.seq)]
    SameKey(RecordKey),
    #[error("records {}#{} and {}#{} share lamport {}", .first.node_id, .first.seq, .second.node_id, .second.seq, .lamport)]
    SameOrderKey {
        first: RecordKey,
        second: RecordKey,
        lamport: u64,
    },
}

fn same_order_key(first: &EventRecord, second: &EventRecord) -> ConflictError {
    ConflictError::SameOrderKey {
        first: first.key(),
        second: second.key(),
        lamport: first.lamport,
    }
}

/// One node's view: the records it emitted and every record it knows of,
/// kept sorted by [`OrderKey`] and deduplicated by [`RecordKey`].
#[derive(Clone, Debug)]
pub struct NodeLog {
    node_id: NodeId,
    clock: u64,
    own: Vec<EventRecord>,
    known: Vec<EventRecord>,
    by_key: HashMap<RecordKey, u64>,
}

impl NodeLog {
    pub fn new(node_id: NodeId) -> Self {
        Self {
            node_id,
            clock: 0,
            own: Vec::new(),
            known: Vec::new(),
            by_key: HashMap::new(),
        }
    }

    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn own(&self) -> &[EventRecord] {
        &self.own
    }

    pub fn known(&self) -> &[EventRecord] {
        &self.known
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.by_key.contains_key(key)
    }

    /// Emits a new record stamped with the next clock value.
    pub fn append(
        &mut self,
        event_type: EventType,
        payload: Value,
        session_id: &str,
    ) -> EventRecord {
        self.clock += 1;
        let record = EventRecord {
            event_type,
            payload,
            lamport: self.clock,
            node_id: self.node_id.clone(),
            seq: self.own.len() as u64,
            session_id: session_id.to_owned(),
        };
        self.own.push(record.clone());
        self.insert(record.clone());
        record
    }

    /// Merges `records` into `known`, returning those that were new.
    ///
    /// The whole batch is rejected if any record conflicts with a known one or
    /// with another record of the batch.
    pub fn receive<I>(&mut self, records: I) -> Result<Vec<EventRecord>, ConflictError>
    where
        I: IntoIterator<Item = EventRecord>,
    {
        let mut fresh: Vec<EventRecord> = Vec::new();
        let mut batch: HashMap<RecordKey, usize> = HashMap::new();
        for record in records {
            let key = record.key();
            if let Some(existing) = self.get(&key) {
                if *existing != record {
                    return Err(ConflictError::SameKey(key));
                }
                continue;
            }
            if let Some(&i) = batch.get(&key) {
                if fresh[i] != record {
                    return Err(ConflictError::SameKey(key));
                }
                continue;
            }
            batch.insert(key, fresh.len());
            fresh.push(record);
        }
        fresh.sort_by(compare);
        for pair in fresh.windows(2) {
            if compare(&pair[0], &pair[1]) == Ordering::Equal {
                return Err(same_order_key(&pair[0], &pair[1]));
            }
        }
        for record in &fresh {
            if let Ok(pos) = self.known.binary_search_by(|k| compare(k, record)) {
                return Err(same_order_key(&self.known[pos], record));
            }
        }
        if let Some(max) = fresh.iter().map(|r| r.lamport).max() {
            self.clock = self.clock.max(max);
        }
        for record in &fresh {
            self.insert(record.clone());
        }
        Ok(fresh)
    }

    /// Records known here but not at `other`, in order.
    pub fn missing_at(&self, other: &NodeLog) -> Vec<EventRecord> {
        self.known
            .iter()
            .filter(|r| !other.contains(&r.key()))
            .cloned()
            .collect()
    }

    fn get(&self, key: &RecordKey) -> Option<&EventRecord> {
        let lamport = *self.by_key.get(key)?;
        let probe = (lamport, key.node_id.as_str());
        let pos = self
            .known
            .binary_search_by(|r| r.sort_tuple().cmp(&probe))
            .ok()?;
        Some(&self.known[pos])
    }

    fn insert(&mut self, record: EventRecord) {
        let pos = self
            .known
            .binary_search_by(|k| compare(k, &record))
            .unwrap_or_else(|p| p);
        self.by_key.insert(record.key(), record.lamport);
        self.known.insert(pos, record);
    }
}

/// One JSON object per line.
pub fn to_ndjson(records: &[EventRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_ndjson(text: &str) -> Result<Vec<EventRecord>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            crate::model::from_json(line)
                .map_err(|e| ParseError::new(format!("line {}: {}", n + 1, e.path), e.message))
        })
        .collect()
}
