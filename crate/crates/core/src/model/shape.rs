use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::names::{Command, EventType, StateName};

/// One role's local state machine as a labeled graph.
///
/// Multi-event reactions appear as chains of `Input` edges through synthetic
/// states named `<source>|<k>`. Commands are `Execute` self-loops.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineShape {
    pub initial: StateName,
    pub subscriptions: BTreeSet<EventType>,
    pub transitions: Vec<MachineTransition>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineTransition {
    pub source: StateName,
    pub target: StateName,
    pub label: MachineLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "tag", deny_unknown_fields)]
pub enum MachineLabel {
    Input {
        #[serde(rename = "eventType")]
        event_type: EventType,
    },
    Execute {
        cmd: Command,
        #[serde(rename = "logType")]
        log_type: Vec<EventType>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("command `{cmd}` must be a self-loop but goes from `{source_state}` to `{target}`")]
    ExecuteMovesState {
        index: usize,
        cmd: Command,
        source_state: StateName,
        target: StateName,
    },
    #[error("reaction to `{event_type}` is not covered by the subscriptions")]
    UnsubscribedInput { index: usize, event_type: EventType },
    #[error("state `{state}` reacts to `{event_type}` more than once")]
    NondeterministicInput {
        index: usize,
        state: StateName,
        event_type: EventType,
    },
}

impl ShapeError {
    pub fn path(&self) -> String {
        match self {
            ShapeError::ExecuteMovesState { index, .. } => format!("transitions[{index}].target"),
            ShapeError::UnsubscribedInput { index, .. }
            | ShapeError::NondeterministicInput { index, .. } => {
                format!("transitions[{index}].label.eventType")
            }
        }
    }
}

impl MachineShape {
    pub fn new(initial: StateName) -> Self {
        Self {
            initial,
            subscriptions: BTreeSet::new(),
            transitions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        let mut seen = BTreeSet::new();
        for (index, t) in self.transitions.iter().enumerate() {
            match &t.label {
                MachineLabel::Execute { cmd, .. } => {
                    if t.source != t.target {
                        return Err(ShapeError::ExecuteMovesState {
                            index,
                            cmd: cmd.clone(),
                            source_state: t.source.clone(),
                            target: t.target.clone(),
                        });
                    }
                }
                MachineLabel::Input { event_type } => {
                    if !self.subscriptions.contains(event_type) {
                        return Err(ShapeError::UnsubscribedInput {
                            index,
                            event_type: event_type.clone(),
                        });
                    }
                    if !seen.insert((&t.source, event_type)) {
                        return Err(ShapeError::NondeterministicInput {
                            index,
                            state: t.source.clone(),
                            event_type: event_type.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn states(&self) -> BTreeSet<&StateName> {
        std::iter::once(&self.initial)
            .chain(self.transitions.iter().flat_map(|t| [&t.source, &t.target]))
            .collect()
    }

    /// The same machine with every reaction to an event outside `events`
    /// removed, as seen by a runner that never receives those events.
    pub fn restrict_inputs(&self, events: &BTreeSet<EventType>) -> MachineShape {
        MachineShape {
            initial: self.initial.clone(),
            subscriptions: self.subscriptions.intersection(events).cloned().collect(),
            transitions: self
                .transitions
                .iter()
                .filter(|t| match &t.label {
                    MachineLabel::Input { event_type } => events.contains(event_type),
                    MachineLabel::Execute { .. } => true,
                })
                .cloned()
                .collect(),
        }
    }

    pub fn index(&self) -> ShapeIndex {
        ShapeIndex::new(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("shape serializes")
    }
}

/// Outgoing reactions and offered commands of one state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StateView {
    pub inputs: BTreeMap<EventType, StateName>,
    pub commands: BTreeSet<(Command, Vec<EventType>)>,
}

/// Adjacency view of a [`MachineShape`]. On a nondeterministic shape the
/// first edge for an event type wins.
#[derive(Clone, Debug)]
pub struct ShapeIndex {
    pub initial: StateName,
    states: BTreeMap<StateName, StateView>,
}

static EMPTY_VIEW: std::sync::OnceLock<StateView> = std::sync::OnceLock::new();

impl ShapeIndex {
    pub fn new(shape: &MachineShape) -> Self {
        let mut states: BTreeMap<StateName, StateView> = shape
            .states()
            .into_iter()
            .map(|s| (s.clone(), StateView::default()))
            .collect();
        for t in &shape.transitions {
            let view = states.get_mut(&t.source).expect("source is a state");
            match &t.label {
                MachineLabel::Input { event_type } => {
                    view.inputs
                        .entry(event_type.clone())
                        .or_insert_with(|| t.target.clone());
                }
                MachineLabel::Execute { cmd, log_type } => {
                    view.commands.insert((cmd.clone(), log_type.clone()));
                }
            }
        }
        Self {
            initial: shape.initial.clone(),
            states,
        }
    }

    pub fn view(&self, state: &StateName) -> &StateView {
        self.states
            .get(state)
            .unwrap_or_else(|| EMPTY_VIEW.get_or_init(StateView::default))
    }

    pub fn step(&self, state: &StateName, event_type: &EventType) -> Option<&StateName> {
        self.view(state).inputs.get(event_type)
    }

    /// Follows `events` from the initial state; `None` if some event has no
    /// reaction along the way.
    pub fn walk<'a, I>(&self, events: I) -> Option<&StateName>
    where
        I: IntoIterator<Item = &'a EventType>,
    {
        let mut state = self.states.get_key_value(&self.initial)?.0;
        for event in events {
            state = self.step(state, event)?;
        }
        Some(state)
    }

    /// Runs `events` with runner semantics: events without a reaction in the
    /// current state are skipped. Returns the visited state after each event.
    pub fn run_discarding<'a, I>(&'a self, events: I) -> Vec<&'a StateName>
    where
        I: IntoIterator<Item = &'a EventType>,
    {
        let mut state = &self.initial;
        let mut visited = Vec::new();
        for event in events {
            if let Some(next) = self.step(state, event) {
                state = next;
            }
            visited.push(state);
        }
        visited
    }

    pub fn reachable(&self) -> BTreeSet<&StateName> {
        let mut seen = BTreeSet::from([&self.initial]);
        let mut queue = VecDeque::from([&self.initial]);
        while let Some(state) = queue.pop_front() {
            for next in self.view(state).inputs.values() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    pub fn states(&self) -> impl Iterator<Item = (&StateName, &StateView)> {
        self.states.iter()
    }
}
