//! Machine definitions and the runner that folds a totally ordered event log
//! through them.
//!
//! The settled state of a runner is a pure function of the merged log: when a
//! record arrives that sorts before something already processed, the whole
//! log is replayed from the initial payload and records that no longer fit
//! are reported as invalidated.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use crate::eventlog::{compare, ConflictError, EventRecord, NodeLog, RecordKey};
use crate::model::{
    Command, EmptyName, EventType, MachineLabel, MachineShape, MachineTransition, Role, StateName,
};

/// Computes the next state payload from the current one and the records that
/// completed the reaction.
pub type ReactionFn = dyn Fn(&Value, &[EventRecord]) -> Result<Value, String> + Send + Sync;

/// Computes one payload per emitted event type from the current state payload
/// and the caller's arguments.
pub type CommandFn = dyn Fn(&Value, &Value) -> Result<Vec<Value>, String> + Send + Sync;

#[derive(Clone)]
pub struct Reaction {
    pub event_types: Vec<EventType>,
    pub target: StateName,
    handler: Arc<ReactionFn>,
}

impl fmt::Debug for Reaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Reaction")
            .field("event_types", &self.event_types)
            .field("target", &self.target)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct CommandSpec {
    pub emits: Vec<EventType>,
    handler: Arc<CommandFn>,
}

impl fmt::Debug for CommandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CommandSpec")
            .field("emits", &self.emits)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, Default)]
pub struct StateSpec {
    pub reactions: Vec<Reaction>,
    pub commands: BTreeMap<Command, CommandSpec>,
}

/// One role's machine: states with their reactions and commands.
#[derive(Clone, Debug)]
pub struct MachineDefinition {
    role: Role,
    initial: StateName,
    states: BTreeMap<StateName, StateSpec>,
    subscriptions: BTreeSet<EventType>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DefinitionError {
    #[error(transparent)]
    EmptyName(#[from] EmptyName),
    #[error("reaction in state `{state}` has no event types")]
    EmptyReaction { state: StateName },
    #[error("state `{state}` has two reactions starting with `{event_type}`")]
    DuplicateFirstEvent {
        state: StateName,
        event_type: EventType,
    },
    #[error("state `{state}` declares command `{cmd}` twice")]
    DuplicateCommand { state: StateName, cmd: Command },
}

struct DraftReaction {
    source: String,
    events: Vec<String>,
    target: String,
    handler: Arc<ReactionFn>,
}

struct DraftCommand {
    state: String,
    cmd: String,
    emits: Vec<String>,
    handler: Arc<CommandFn>,
}

/// Collects states, commands and reactions; validation happens in `build`.
pub struct MachineBuilder {
    role: String,
    initial: String,
    states: Vec<String>,
    reactions: Vec<DraftReaction>,
    commands: Vec<DraftCommand>,
}

impl MachineBuilder {
    pub fn new(role: &str, initial: &str) -> Self {
        Self {
            role: role.to_owned(),
            initial: initial.to_owned(),
            states: vec![initial.to_owned()],
            reactions: Vec::new(),
            commands: Vec::new(),
        }
    }

    pub fn state(mut self, name: &str) -> Self {
        self.states.push(name.to_owned());
        self
    }

    pub fn command<F>(mut self, state: &str, cmd: &str, emits: &[&str], handler: F) -> Self
    where
        F: Fn(&Value, &Value) -> Result<Vec<Value>, String> + Send + Sync + 'static,
    {
        self.states.push(state.to_owned());
        self.commands.push(DraftCommand {
            state: state.to_owned(),
            cmd: cmd.to_owned(),
            emits: emits.iter().map(|e| (*e).to_owned()).collect(),
            handler: Arc::new(handler),
        });
        self
    }

    pub fn react<F>(mut self, source: &str, events: &[&str], target: &str, handler: F) -> Self
    where
        F: Fn(&Value, &[EventRecord]) -> Result<Value, String> + Send + Sync + 'static,
    {
        self.states.push(source.to_owned());
        self.states.push(target.to_owned());
        self.reactions.push(DraftReaction {
            source: source.to_owned(),
            events: events.iter().map(|e| (*e).to_owned()).collect(),
            target: target.to_owned(),
            handler: Arc::new(handler),
        });
        self
    }

    pub fn build(self) -> Result<MachineDefinition, DefinitionError> {
        let mut states: BTreeMap<StateName, StateSpec> = BTreeMap::new();
        for name in &self.states {
            states.entry(StateName::new(name.as_str())?).or_default();
        }
        let mut subscriptions = BTreeSet::new();
        for draft in self.reactions {
            let state = StateName::new(draft.source)?;
            let event_types = draft
                .events
                .into_iter()
                .map(EventType::new)
                .collect::<Result<Vec<_>, _>>()?;
            let Some(first) = event_types.first() else {
                return Err(DefinitionError::EmptyReaction { state });
            };
            let spec = states.get_mut(&state).expect("declared above");
            if spec.reactions.iter().any(|r| &r.event_types[0] == first) {
                return Err(DefinitionError::DuplicateFirstEvent {
                    state,
                    event_type: first.clone(),
                });
            }
            subscriptions.extend(event_types.iter().cloned());
            spec.reactions.push(Reaction {
                event_types,
                target: StateName::new(draft.target)?,
                handler: draft.handler,
            });
        }
        for draft in self.commands {
            let state = StateName::new(draft.state)?;
            let cmd = Command::new(draft.cmd)?;
            let emits = draft
                .emits
                .into_iter()
                .map(EventType::new)
                .collect::<Result<Vec<_>, _>>()?;
            let spec = states.get_mut(&state).expect("declared above");
            if spec.commands.contains_key(&cmd) {
                return Err(DefinitionError::DuplicateCommand { state, cmd });
            }
            spec.commands.insert(
                cmd,
                CommandSpec {
                    emits,
                    handler: draft.handler,
                },
            );
        }
        Ok(MachineDefinition {
            role: Role::new(self.role)?,
            initial: StateName::new(self.initial)?,
            states,
            subscriptions,
        })
    }
}

static NO_STATE: std::sync::OnceLock<StateSpec> = std::sync::OnceLock::new();

impl MachineDefinition {
    pub fn role(&self) -> &Role {
        &self.role
    }

    pub fn initial(&self) -> &StateName {
        &self.initial
    }

    /// Every event type some reaction refers to.
    pub fn subscriptions(&self) -> &BTreeSet<EventType> {
        &self.subscriptions
    }

    pub fn state(&self, name: &StateName) -> &StateSpec {
        self.states
            .get(name)
            .unwrap_or_else(|| NO_STATE.get_or_init(StateSpec::default))
    }

    pub fn states(&self) -> impl Iterator<Item = (&StateName, &StateSpec)> {
        self.states.iter()
    }
}

/// The machine's labeled graph: reactions become `Input` chains, commands
/// become `Execute` self-loops.
pub fn extract_shape(def: &MachineDefinition) -> MachineShape {
    let mut shape = MachineShape::new(def.initial.clone());
    shape.subscriptions = def.subscriptions.clone();
    for (name, spec) in &def.states {
        for (cmd, command) in &spec.commands {
            shape.transitions.push(MachineTransition {
                source: name.clone(),
                target: name.clone(),
                label: MachineLabel::Execute {
                    cmd: cmd.clone(),
                    log_type: command.emits.clone(),
                },
            });
        }
        let mut synthetic = 0;
        for reaction in &spec.reactions {
            let mut from = name.clone();
            for (k, event_type) in reaction.event_types.iter().enumerate() {
                let to = if k + 1 == reaction.event_types.len() {
                    reaction.target.clone()
                } else {
                    synthetic += 1;
                    StateName::new(format!("{name}|{synthetic}")).expect("non-empty")
                };
                shape.transitions.push(MachineTransition {
                    source: from,
                    target: to.clone(),
                    label: MachineLabel::Input {
                        event_type: event_type.clone(),
                    },
                });
                from = to;
            }
        }
    }
    shape
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DiscardReason {
    /// No reaction in the current state (or open reaction position) matched.
    Unexpected,
    /// Applied by an earlier evaluation, no longer applicable after replay.
    Invalidated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscardReport {
    pub record: EventRecord,
    pub reason: DiscardReason,
}

/// A reaction that has matched a proper prefix of its event types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub reaction: usize,
    pub event_types: Vec<EventType>,
    pub matched: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerState {
    pub state_name: StateName,
    pub payload: Value,
    pub enabled_commands: BTreeSet<Command>,
    pub in_flight: Option<InFlight>,
    pub processed_count: usize,
}

impl RunnerState {
    pub fn is_settled(&self) -> bool {
        self.in_flight.is_none()
    }
}

/// A reaction or command handler failed; `index` is the position of the
/// triggering record among the records the runner processes.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("handler failed{}: {message}", .index.map(|i| format!(" at record {i}")).unwrap_or_default())]
pub struct HandlerError {
    pub index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Handler(#[from] HandlerError),
    #[error("command `{cmd}` is not enabled in state `{state}`")]
    CommandDisabled { cmd: Command, state: StateName },
    #[error(transparent)]
    Conflict(#[from] ConflictError),
}

#[derive(Clone, Debug)]
struct Fold {
    state: StateName,
    payload: Value,
    in_flight: Option<InFlight>,
    applied: Vec<RecordKey>,
    discards: Vec<DiscardReport>,
    processed: usize,
}

impl Fold {
    fn start(def: &MachineDefinition, payload: Value) -> Self {
        Self {
            state: def.initial.clone(),
            payload,
            in_flight: None,
            applied: Vec::new(),
            discards: Vec::new(),
            processed: 0,
        }
    }

    fn run<'a, I>(def: &MachineDefinition, payload: Value, records: I) -> Result<Self, HandlerError>
    where
        I: IntoIterator<Item = &'a EventRecord>,
    {
        let mut fold = Self::start(def, payload);
        for record in records {
            fold.feed(def, record)?;
        }
        Ok(fold)
    }

    /// Consumes one relevant record; returns the discard report if it did not fit.
    fn feed(
        &mut self,
        def: &MachineDefinition,
        record: &EventRecord,
    ) -> Result<Option<DiscardReport>, HandlerError> {
        let index = self.processed;
        self.processed += 1;
        let spec = def.state(&self.state);

        let reaction = match self.in_flight.take() {
            Some(mut open) => {
                if open.event_types[open.matched.len()] != record.event_type {
                    self.in_flight = Some(open);
                    return Ok(Some(self.discard(record)));
                }
                open.matched.push(record.clone());
                if open.matched.len() < open.event_types.len() {
                    self.in_flight = Some(open);
                    return Ok(None);
                }
                (open.reaction, open.matched)
            }
            None => {
                let Some(position) = spec
                    .reactions
                    .iter()
                    .position(|r| r.event_types[0] == record.event_type)
                else {
                    return Ok(Some(self.discard(record)));
                };
                let reaction = &spec.reactions[position];
                if reaction.event_types.len() > 1 {
                    self.in_flight = Some(InFlight {
                        reaction: position,
                        event_types: reaction.event_types.clone(),
                        matched: vec![record.clone()],
                    });
                    return Ok(None);
                }
                (position, vec![record.clone()])
            }
        };

        let (position, matched) = reaction;
        let reaction = &spec.reactions[position];
        self.payload =
            (reaction.handler)(&self.payload, &matched).map_err(|message| HandlerError {
                index: Some(index),
                message,
            })?;
        self.state = reaction.target.clone();
        self.applied.extend(matched.iter().map(EventRecord::key));
        Ok(None)
    }

    fn discard(&mut self, record: &EventRecord) -> DiscardReport {
        let report = DiscardReport {
            record: record.clone(),
            reason: DiscardReason::Unexpected,
        };
        self.discards.push(report.clone());
        report
    }

    fn applied_keys(&self) -> impl Iterator<Item = RecordKey> + '_ {
        self.applied.iter().cloned().chain(
            self.in_flight
                .iter()
                .flat_map(|f| f.matched.iter().map(EventRecord::key)),
        )
    }

    fn snapshot(&self, def: &MachineDefinition, commands_blocked: bool) -> RunnerState {
        let enabled_commands = if commands_blocked || self.in_flight.is_some() {
            BTreeSet::new()
        } else {
            def.state(&self.state).commands.keys().cloned().collect()
        };
        RunnerState {
            state_name: self.state.clone(),
            payload: self.payload.clone(),
            enabled_commands,
            in_flight: self.in_flight.clone(),
            processed_count: self.processed,
        }
    }
}

fn relevant(record: &EventRecord, session: &str, subscriptions: &BTreeSet<EventType>) -> bool {
    record.session_id == session && subscriptions.contains(&record.event_type)
}

/// Folds `ordered_log` through `def` from `initial_payload`, considering only
/// records of `session` whose type the machine subscribes to.
pub fn evaluate(
    def: &MachineDefinition,
    initial_payload: Value,
    ordered_log: &[EventRecord],
    session: &str,
) -> Result<(RunnerState, Vec<DiscardReport>), HandlerError> {
    evaluate_filtered(
        def,
        def.subscriptions(),
        initial_payload,
        ordered_log,
        session,
    )
}

/// Like [`evaluate`] with an explicit subscription filter.
pub fn evaluate_filtered(
    def: &MachineDefinition,
    subscriptions: &BTreeSet<EventType>,
    initial_payload: Value,
    ordered_log: &[EventRecord],
    session: &str,
) -> Result<(RunnerState, Vec<DiscardReport>), HandlerError> {
    let fold = Fold::run(
        def,
        initial_payload,
        ordered_log
            .iter()
            .filter(|r| relevant(r, session, subscriptions)),
    )?;
    Ok((fold.snapshot(def, false), fold.discards))
}

/// Outcome of feeding a batch of records to a [`Runner`].
#[derive(Debug, Clone)]
pub struct Advance {
    pub state: RunnerState,
    pub reports: Vec<DiscardReport>,
    pub replayed: bool,
    /// Whether anything new was processed.
    pub progressed: bool,
}

/// Receives settled states and discard reports.
pub trait RunnerHooks {
    fn on_state(&mut self, _state: &RunnerState) {}
    fn on_discard(&mut self, _report: &DiscardReport) {}
}

/// Executes one machine for one session against a growing event log.
#[derive(Clone, Debug)]
pub struct Runner {
    def: Arc<MachineDefinition>,
    initial_payload: Value,
    session: String,
    subscriptions: BTreeSet<EventType>,
    log: Vec<EventRecord>,
    by_key: HashMap<RecordKey, EventRecord>,
    seen: HashSet<RecordKey>,
    fold: Fold,
    awaiting: BTreeSet<RecordKey>,
    invalidated_total: usize,
}

impl Runner {
    pub fn new(def: Arc<MachineDefinition>, initial_payload: Value, session: &str) -> Self {
        let fold = Fold::start(&def, initial_payload.clone());
        Self {
            subscriptions: def.subscriptions().clone(),
            def,
            initial_payload,
            session: session.to_owned(),
            log: Vec::new(),
            by_key: HashMap::new(),
            seen: HashSet::new(),
            fold,
            awaiting: BTreeSet::new(),
            invalidated_total: 0,
        }
    }

    /// Replaces the subscription filter (by default the event types the
    /// machine reacts to).
    pub fn with_subscriptions(mut self, subscriptions: BTreeSet<EventType>) -> Self {
        self.subscriptions = subscriptions;
        self
    }

    pub fn definition(&self) -> &MachineDefinition {
        &self.def
    }

    pub fn subscriptions(&self) -> &BTreeSet<EventType> {
        &self.subscriptions
    }

    pub fn state(&self) -> RunnerState {
        self.fold.snapshot(&self.def, !self.awaiting.is_empty())
    }

    pub fn is_settled(&self) -> bool {
        self.fold.in_flight.is_none() && self.awaiting.is_empty()
    }

    /// Relevant records received so far, in total order.
    pub fn log(&self) -> &[EventRecord] {
        &self.log
    }

    /// Records applied by the current evaluation, including those matched by
    /// an open reaction, in application order.
    pub fn applied(&self) -> Vec<RecordKey> {
        self.fold.applied_keys().collect()
    }

    /// Discards of the current evaluation.
    pub fn discards(&self) -> &[DiscardReport] {
        &self.fold.discards
    }

    pub fn invalidated_total(&self) -> usize {
        self.invalidated_total
    }

    pub fn advance_with<I>(
        &mut self,
        records: I,
        hooks: &mut dyn RunnerHooks,
    ) -> Result<Advance, RunnerError>
    where
        I: IntoIterator<Item = EventRecord>,
    {
        let advance = self.advance(records)?;
        for report in &advance.reports {
            hooks.on_discard(report);
        }
        if advance.progressed && self.is_settled() {
            hooks.on_state(&advance.state);
        }
        Ok(advance)
    }

    /// Merges `records` into the runner's log and brings the state up to date,
    /// incrementally when all new records sort after the processed ones and by
    /// full replay otherwise.
    pub fn advance<I>(&mut self, records: I) -> Result<Advance, RunnerError>
    where
        I: IntoIterator<Item = EventRecord>,
    {
        let mut fresh: Vec<EventRecord> = Vec::new();
        let mut batch: HashMap<RecordKey, usize> = HashMap::new();
        let mut seen_now = Vec::new();
        for record in records {
            let key = record.key();
            seen_now.push(key.clone());
            if !relevant(&record, &self.session, &self.subscriptions) {
                continue;
            }
            if let Some(existing) = self.by_key.get(&key) {
                if *existing != record {
                    return Err(ConflictError::SameKey(key).into());
                }
                continue;
            }
            match batch.get(&key) {
                Some(&i) if fresh[i] != record => return Err(ConflictError::SameKey(key).into()),
                Some(_) => {}
                None => {
                    batch.insert(key, fresh.len());
                    fresh.push(record);
                }
            }
        }
        fresh.sort_by(compare);

        let incremental = match (self.log.last(), fresh.first()) {
            (Some(last), Some(first)) => compare(last, first).is_lt(),
            _ => true,
        };

        let (fold, reports, log) = if incremental {
            let mut fold = self.fold.clone();
            let mut reports = Vec::new();
            for record in &fresh {
                reports.extend(fold.feed(&self.def, record)?);
            }
            let mut log = std::mem::take(&mut self.log);
            log.extend(fresh.iter().cloned());
            (fold, reports, log)
        } else {
            let mut log = self.log.clone();
            log.extend(fresh.iter().cloned());
            log.sort_by(compare);
            let previously: HashSet<RecordKey> = self.fold.applied_keys().collect();
            let mut fold = Fold::run(&self.def, self.initial_payload.clone(), &log)?;
            for report in &mut fold.discards {
                if previously.contains(&report.record.key()) {
                    report.reason = DiscardReason::Invalidated;
                }
            }
            let reports = fold.discards.clone();
            (fold, reports, log)
        };

        self.log = log;
        for record in &fresh {
            self.by_key.insert(record.key(), record.clone());
        }
        self.seen.extend(seen_now);
        self.fold = fold;
        self.invalidated_total += reports
            .iter()
            .filter(|r| r.reason == DiscardReason::Invalidated)
            .count();
        if self.fold.in_flight.is_none() && self.awaiting.iter().all(|k| self.seen.contains(k)) {
            self.awaiting.clear();
        }

        Ok(Advance {
            state: self.state(),
            reports,
            replayed: !incremental,
            progressed: !fresh.is_empty(),
        })
    }

    /// Runs command `cmd` and appends its events to `node_log`.
    ///
    /// Commands stay disabled until the runner has seen the emitted records
    /// and settled again.
    pub fn invoke(
        &mut self,
        cmd: &Command,
        args: &Value,
        node_log: &mut NodeLog,
    ) -> Result<Vec<EventRecord>, RunnerError> {
        let state = self.state();
        if !state.enabled_commands.contains(cmd) {
            return Err(RunnerError::CommandDisabled {
                cmd: cmd.clone(),
                state: state.state_name,
            });
        }
        let spec = &self.def.state(&state.state_name).commands[cmd];
        let payloads = (spec.handler)(&state.payload, args).map_err(|message| HandlerError {
            index: None,
            message,
        })?;
        if payloads.len() != spec.emits.len() {
            return Err(HandlerError {
                index: None,
                message: format!(
                    "command `{cmd}` produced {} payloads for {} event types",
                    payloads.len(),
                    spec.emits.len()
                ),
            }
            .into());
        }
        let records: Vec<EventRecord> = spec
            .emits
            .iter()
            .zip(payloads)
            .map(|(event_type, payload)| {
                node_log.append(event_type.clone(), payload, &self.session)
            })
            .collect();
        self.awaiting = records.iter().map(EventRecord::key).collect();
        Ok(records)
    }
}
