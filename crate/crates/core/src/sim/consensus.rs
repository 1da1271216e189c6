use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::eventlog::{EventRecord, NodeLog, RecordKey};
use crate::model::{EventType, NodeId, Role, Subscriptions, SwarmProtocol};
use crate::projection::{compare_shapes, project};
use crate::runner::{extract_shape, Runner};

use super::canonical::canonical_run;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("logs of `{first}` and `{second}` differ; heal and replicate before checking")]
    LogsDiffer { first: NodeId, second: NodeId },
}

/// An agent's final runner as seen by the consensus check.
#[derive(Clone, Copy, Debug)]
pub struct AgentView<'a> {
    pub agent_id: &'a str,
    pub role: &'a Role,
    pub runner: &'a Runner,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentConsensus {
    pub role: Role,
    pub final_state: String,
    pub expected_state: String,
    /// The state of the role's projection after the canonical run.
    pub projected_state: String,
    pub matches: bool,
    pub discards: usize,
    pub invalidations: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsensusReport {
    pub converged: bool,
    pub canonical_path: Vec<usize>,
    pub per_agent: BTreeMap<String, AgentConsensus>,
    pub divergences: Vec<String>,
}

impl ConsensusReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn keys(records: &[&EventRecord]) -> String {
    let items: Vec<String> = records
        .iter()
        .map(|r| format!("{}@{}#{}", r.event_type, r.node_id, r.seq))
        .collect();
    format!("[{}]", items.join(", "))
}

const NO_STATE: &str = "<none>";

/// Compares every agent against the protocol's own run over the common log.
///
/// An agent matches when it applied exactly the canonical records its role
/// subscribes to, in the same order, and stands where its machine lands after
/// those events.
pub fn consensus_check(
    protocol: &SwarmProtocol,
    subs: &Subscriptions,
    session: &str,
    agents: &[AgentView<'_>],
    logs: &[&NodeLog],
) -> Result<ConsensusReport, ConsensusError> {
    if let Some((first, rest)) = logs.split_first() {
        for other in rest {
            if other.known() != first.known() {
                return Err(ConsensusError::LogsDiffer {
                    first: first.node_id().clone(),
                    second: other.node_id().clone(),
                });
            }
        }
    }
    let session_log: Vec<EventRecord> = logs
        .first()
        .map(|l| l.known())
        .unwrap_or_default()
        .iter()
        .filter(|r| r.session_id == session)
        .cloned()
        .collect();
    let run = canonical_run(protocol, &session_log);
    let completed: Vec<&EventRecord> = run.consumed().collect();
    let open: Vec<&EventRecord> = run.open.iter().flat_map(|(_, m)| m).collect();

    let mut per_agent = BTreeMap::new();
    let mut divergences = Vec::new();
    let mut projections = BTreeMap::new();
    for agent in agents {
        let visible = subs.get(agent.role);
        let sees = |r: &&&EventRecord| visible.contains(&r.event_type);
        let done: Vec<&EventRecord> = completed.iter().filter(sees).copied().collect();
        let pending: Vec<&EventRecord> = open.iter().filter(sees).copied().collect();
        let expected_keys: Vec<RecordKey> = done.iter().chain(&pending).map(|r| r.key()).collect();
        let done_types: Vec<&EventType> = done.iter().map(|r| &r.event_type).collect();

        let shape = extract_shape(agent.runner.definition()).restrict_inputs(visible);
        let expected_state = shape
            .index()
            .walk(done_types.iter().copied())
            .map_or(NO_STATE.to_owned(), |s| s.to_string());

        if !projections.contains_key(agent.role) {
            let projected = project(protocol, subs, agent.role).ok();
            projections.insert(agent.role.clone(), projected);
        }
        let projected = projections[agent.role].as_ref();
        let projected_state = projected
            .and_then(|p| p.shape.index().walk(done_types.iter().copied()).cloned())
            .map_or(NO_STATE.to_owned(), |s| s.to_string());
        let conforms = projected.is_some_and(|p| compare_shapes(&p.shape, &shape).is_equivalent());

        let state = agent.runner.state();
        let final_state = state.state_name.to_string();
        let applied = agent.runner.applied();
        let same_records = applied == expected_keys;
        let same_state = final_state == expected_state;
        let same_progress = state.in_flight.is_some() == !pending.is_empty();
        let matches = same_records && same_state && same_progress && conforms;

        let who = format!("{} ({})", agent.agent_id, agent.role);
        if !same_records {
            let by_key: BTreeMap<RecordKey, &EventRecord> =
                agent.runner.log().iter().map(|r| (r.key(), r)).collect();
            let got: Vec<&EventRecord> = applied
                .iter()
                .filter_map(|k| by_key.get(k).copied())
                .collect();
            let want: Vec<&EventRecord> = done.iter().chain(&pending).copied().collect();
            divergences.push(format!(
                "{who}: applied {} but the canonical run gives {}",
                keys(&got),
                keys(&want)
            ));
        }
        if !same_state {
            divergences.push(format!(
                "{who}: in state `{final_state}`, expected `{expected_state}`"
            ));
        }
        if !same_progress {
            divergences.push(format!(
                "{who}: reaction progress differs from the canonical run"
            ));
        }
        if !conforms {
            divergences.push(format!(
                "{who}: machine as seen through subscription [{}] is not the role's projection",
                visible
                    .iter()
                    .map(|e| e.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        let discards = agent.runner.discards();
        per_agent.insert(
            agent.agent_id.to_owned(),
            AgentConsensus {
                role: agent.role.clone(),
                final_state,
                expected_state,
                projected_state,
                matches,
                discards: discards.len(),
                invalidations: agent.runner.invalidated_total(),
            },
        );
    }
    let converged = per_agent.values().all(|a| a.matches);
    Ok(ConsensusReport {
        converged,
        canonical_path: run.path,
        per_agent,
        divergences,
    })
}

/// Roles of the agents that did not match.
pub fn diverging_roles(report: &ConsensusReport) -> BTreeSet<&Role> {
    report
        .per_agent
        .values()
        .filter(|a| !a.matches)
        .map(|a| &a.role)
        .collect()
}
