use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::fixtures;
use crate::model::{Command, MachineLabel, NodeId, ParseError, Role, Subscriptions, SwarmProtocol};
use crate::projection::{project, ProjectionError};
use crate::runner::{DefinitionError, MachineBuilder, MachineDefinition, RunnerError, RunnerState};

use super::consensus::ConsensusError;

/// Everything needed to run one deterministic simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub protocol: SwarmProtocol,
    pub subs: Subscriptions,
    pub agents: Vec<AgentSpec>,
    pub session_id: String,
    pub seed: u64,
    pub max_steps: u64,
    #[serde(default)]
    pub partition_schedule: Vec<PartitionWindow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AgentSpec {
    pub agent_id: String,
    pub role: Role,
    /// Name of a machine definition in the registry, or `projected`.
    pub machine: String,
    pub node_id: NodeId,
    /// One strategy or a list, tried in order.
    pub strategy: Strategies,
    /// Overrides the registry's default initial payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_payload: Option<Value>,
}

/// During steps `fromStep..toStep` only nodes within the same group exchange
/// records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PartitionWindow {
    pub from_step: u64,
    pub to_step: u64,
    pub groups: Vec<Vec<NodeId>>,
}

/// Built-in decision rules an agent applies to its settled state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Strategy {
    /// Invoke `cmd` the first time it is enabled, never again.
    Once {
        cmd: Command,
        #[serde(default)]
        args: Value,
    },
    /// Bid once with `delay`, unless the auction already lists this robot.
    BidOnce {
        delay: u64,
    },
    /// Select the lowest-delay bidder once at least `bids` bids are known.
    SelectAfter {
        bids: usize,
    },
    Idle,
}

/// An agent's strategies; written as a single object or an array.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(from = "OneOrMany")]
pub struct Strategies(pub Vec<Strategy>);

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Strategy),
    Many(Vec<Strategy>),
}

impl From<OneOrMany> for Strategies {
    fn from(value: OneOrMany) -> Self {
        match value {
            OneOrMany::One(s) => Strategies(vec![s]),
            OneOrMany::Many(v) => Strategies(v),
        }
    }
}

impl Serialize for Strategies {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.0.as_slice() {
            [one] => one.serialize(serializer),
            many => many.serialize(serializer),
        }
    }
}

/// Which of an agent's strategies have fired.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AgentMemory {
    pub acted: Vec<bool>,
}

impl AgentMemory {
    pub fn new(strategies: &Strategies) -> Self {
        Self {
            acted: vec![false; strategies.0.len()],
        }
    }
}

impl Strategies {
    /// The first strategy that has not fired yet and wants to act now,
    /// with its index.
    pub fn decide(
        &self,
        agent_id: &str,
        state: &RunnerState,
        memory: &AgentMemory,
    ) -> Option<(usize, Command, Value)> {
        self.0.iter().enumerate().find_map(|(i, s)| {
            if memory.acted.get(i).copied().unwrap_or(false) {
                return None;
            }
            let (cmd, args) = s.decide(agent_id, state)?;
            Some((i, cmd, args))
        })
    }
}

impl Strategy {
    /// The command to invoke now, if any.
    pub fn decide(&self, agent_id: &str, state: &RunnerState) -> Option<(Command, Value)> {
        let enabled = |name: &str| state.enabled_commands.iter().any(|c| c == name);
        let scores = || {
            state.payload["scores"]
                .as_array()
                .map(Vec::as_slice)
                .unwrap_or(&[])
        };
        match self {
            Strategy::Idle => None,
            Strategy::Once { cmd, args } => state
                .enabled_commands
                .contains(cmd)
                .then(|| (cmd.clone(), args.clone())),
            Strategy::BidOnce { delay } => {
                let me = state.payload["robot"].as_str().unwrap_or(agent_id);
                let listed = scores().iter().any(|s| s["robot"] == me);
                (enabled("bid") && !listed)
                    .then(|| (Command::new("bid").expect("non-empty"), json!(delay)))
            }
            Strategy::SelectAfter { bids } => {
                let scores = scores();
                if !enabled("select") || scores.len() < *bids || scores.is_empty() {
                    return None;
                }
                let best = scores
                    .iter()
                    .min_by_key(|s| s["delay"].as_u64().unwrap_or(u64::MAX))
                    .expect("non-empty");
                Some((
                    Command::new("select").expect("non-empty"),
                    json!({ "winner": best["robot"] }),
                ))
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("agent `{0}` has no strategy")]
    NoStrategy(String),
    #[error("node `{0}` is used by more than one agent")]
    DuplicateNode(NodeId),
    #[error("agent id `{0}` is used more than once")]
    DuplicateAgent(String),
    #[error("agent `{agent}` plays role `{role}` which the protocol does not mention")]
    UnknownRole { agent: String, role: Role },
    #[error("role `{0}` has no subscription entry")]
    MissingSubscription(Role),
    #[error("unknown machine `{0}`")]
    UnknownMachine(String),
    #[error("agent `{agent}` plays `{role}` but machine `{machine}` is for `{machine_role}`")]
    RoleMismatch {
        agent: String,
        role: Role,
        machine: String,
        machine_role: Role,
    },
    #[error("partition window {index}: {message}")]
    BadPartition { index: usize, message: String },
    #[error("swarm did not quiesce within {0} rounds after healing")]
    NoQuiescence(u64),
    #[error("exploration limit exceeded: {0}")]
    LimitExceeded(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ParseError> {
        crate::model::from_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let roles = self.protocol.roles();
        let mut nodes = BTreeSet::new();
        let mut agents = BTreeSet::new();
        for agent in &self.agents {
            if !nodes.insert(&agent.node_id) {
                return Err(ScenarioError::DuplicateNode(agent.node_id.clone()));
            }
            if agent.strategy.0.is_empty() {
                return Err(ScenarioError::NoStrategy(agent.agent_id.clone()));
            }
            if !agents.insert(&agent.agent_id) {
                return Err(ScenarioError::DuplicateAgent(agent.agent_id.clone()));
            }
            if !roles.contains(&agent.role) {
                return Err(ScenarioError::UnknownRole {
                    agent: agent.agent_id.clone(),
                    role: agent.role.clone(),
                });
            }
            if !self.subs.has_entry(&agent.role) {
                return Err(ScenarioError::MissingSubscription(agent.role.clone()));
            }
        }
        for (index, window) in self.partition_schedule.iter().enumerate() {
            let bad = |message: &str| ScenarioError::BadPartition {
                index,
                message: message.to_owned(),
            };
            if window.from_step > window.to_step {
                return Err(bad("fromStep is after toStep"));
            }
            let mut listed = BTreeSet::new();
            for node in window.groups.iter().flatten() {
                if !nodes.contains(node) {
                    return Err(bad(&format!("unknown node `{node}`")));
                }
                if !listed.insert(node) {
                    return Err(bad(&format!("node `{node}` is in two groups")));
                }
            }
            if listed.len() != nodes.len() {
                return Err(bad("groups do not cover every node"));
            }
        }
        Ok(())
    }

    /// Group number of every agent's node at `step`; all zero when no window
    /// is active.
    pub(crate) fn groups_at(&self, step: u64) -> Vec<usize> {
        let window = self
            .partition_schedule
            .iter()
            .find(|w| w.from_step <= step && step < w.to_step);
        self.agents
            .iter()
            .map(|agent| match window {
                None => 0,
                Some(w) => w
                    .groups
                    .iter()
                    .position(|g| g.contains(&agent.node_id))
                    .expect("validated partition"),
            })
            .collect()
    }
}

type PayloadFn = fn(&str) -> Value;

/// Named machine definitions that scenarios refer to.
#[derive(Clone, Default)]
pub struct MachineRegistry {
    entries: BTreeMap<String, (Arc<MachineDefinition>, PayloadFn)>,
}

fn null_payload(_: &str) -> Value {
    Value::Null
}

fn robot_payload(agent_id: &str) -> Value {
    json!({ "robot": agent_id })
}

impl MachineRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped fixture machines.
    pub fn builtin() -> Self {
        let mut registry = Self::new();
        registry.register(
            "transport/robot",
            fixtures::transport_robot(),
            robot_payload,
        );
        registry.register(
            "transport/machine",
            fixtures::transport_machine(),
            null_payload,
        );
        registry.register("order/customer", fixtures::order_customer(), null_payload);
        registry.register("order/shop", fixtures::order_shop(), null_payload);
        registry
    }

    pub fn register(&mut self, name: &str, def: MachineDefinition, initial_payload: PayloadFn) {
        self.entries
            .insert(name.to_owned(), (Arc::new(def), initial_payload));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Looks up `agent.machine`; `projected` derives a machine from the
    /// protocol's projection onto the agent's role.
    pub fn resolve(
        &self,
        agent: &AgentSpec,
        protocol: &SwarmProtocol,
        subs: &Subscriptions,
    ) -> Result<(Arc<MachineDefinition>, Value), ScenarioError> {
        let (def, payload) = if agent.machine == "projected" {
            (
                Arc::new(projected_definition(protocol, subs, &agent.role)?),
                Value::Null,
            )
        } else {
            let (def, payload) = self
                .entries
                .get(&agent.machine)
                .ok_or_else(|| ScenarioError::UnknownMachine(agent.machine.clone()))?;
            (def.clone(), payload(&agent.agent_id))
        };
        if def.role() != &agent.role {
            return Err(ScenarioError::RoleMismatch {
                agent: agent.agent_id.clone(),
                role: agent.role.clone(),
                machine: agent.machine.clone(),
                machine_role: def.role().clone(),
            });
        }
        Ok((def, agent.initial_payload.clone().unwrap_or(payload)))
    }
}

/// A runnable machine whose graph is the role's projection. Reactions store
/// the last event payload; commands emit their arguments (spread over the
/// emitted types when given an array of matching length).
pub fn projected_definition(
    protocol: &SwarmProtocol,
    subs: &Subscriptions,
    role: &Role,
) -> Result<MachineDefinition, ScenarioError> {
    let projected = project(protocol, subs, role)?;
    let shape = &projected.shape;
    let mut builder = MachineBuilder::new(role.as_str(), shape.initial.as_str());
    for t in &shape.transitions {
        match &t.label {
            MachineLabel::Input { event_type } => {
                builder = builder.react(
                    t.source.as_str(),
                    &[event_type.as_str()],
                    t.target.as_str(),
                    |_, records| Ok(records[records.len() - 1].payload.clone()),
                );
            }
            MachineLabel::Execute { cmd, log_type } => {
                let emits: Vec<&str> = log_type.iter().map(|e| e.as_str()).collect();
                let count = emits.len();
                builder =
                    builder.command(t.source.as_str(), cmd.as_str(), &emits, move |_, args| {
                        Ok(match args.as_array() {
                            Some(items) if items.len() == count => items.clone(),
                            _ => vec![args.clone(); count],
                        })
                    });
            }
        }
    }
    Ok(builder.build()?)
}
