use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::names::{Command, EventType, Role, StateName};

/// Global workflow graph. The state set is implicit: the initial state plus
/// every transition source and target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmProtocol {
    pub initial: StateName,
    pub transitions: Vec<ProtocolTransition>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolTransition {
    pub source: StateName,
    pub target: StateName,
    pub label: ProtocolLabel,
}

/// Who may invoke the transition, and which event types it emits, in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProtocolLabel {
    pub cmd: Command,
    pub log_type: Vec<EventType>,
    pub role: Role,
}

impl ProtocolTransition {
    /// First emitted event type; it selects this transition among its siblings.
    pub fn guard(&self) -> Option<&EventType> {
        self.label.log_type.first()
    }

    pub fn role(&self) -> &Role {
        &self.label.role
    }
}

impl SwarmProtocol {
    pub fn new(initial: StateName) -> Self {
        Self {
            initial,
            transitions: Vec::new(),
        }
    }

    pub fn states(&self) -> BTreeSet<&StateName> {
        std::iter::once(&self.initial)
            .chain(self.transitions.iter().flat_map(|t| [&t.source, &t.target]))
            .collect()
    }

    /// Indices of transitions leaving `state`, in declaration order.
    pub fn outgoing<'a>(&'a self, state: &'a StateName) -> impl Iterator<Item = usize> + 'a {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, t)| &t.source == state)
            .map(|(i, _)| i)
    }

    /// States reachable from `from` (inclusive) along transition edges.
    pub fn reachable_from<'a>(&'a self, from: &'a StateName) -> BTreeSet<&'a StateName> {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(state) = queue.pop_front() {
            for t in self.transitions.iter().filter(|t| &t.source == state) {
                if seen.insert(&t.target) {
                    queue.push_back(&t.target);
                }
            }
        }
        seen
    }

    pub fn reachable_states(&self) -> BTreeSet<&StateName> {
        self.reachable_from(&self.initial)
    }

    /// Indices of transitions whose source is reachable from the initial state.
    pub fn reachable_transitions(&self) -> Vec<usize> {
        let reachable = self.reachable_states();
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| reachable.contains(&t.source))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn roles(&self) -> BTreeSet<&Role> {
        self.transitions.iter().map(|t| &t.label.role).collect()
    }

    pub fn event_types(&self) -> BTreeSet<&EventType> {
        self.transitions
            .iter()
            .flat_map(|t| t.label.log_type.iter())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("protocol serializes")
    }
}

/// Per-role set of event types each role receives.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subscriptions(BTreeMap<Role, BTreeSet<EventType>>);

static NO_EVENTS: BTreeSet<EventType> = BTreeSet::new();

impl Subscriptions {
    pub fn new() -> Self {
        Self::default()
    }

    /// The subscription of `role`; empty if the role has no entry.
    pub fn get(&self, role: &Role) -> &BTreeSet<EventType> {
        self.0.get(role).unwrap_or(&NO_EVENTS)
    }

    pub fn has_entry(&self, role: &Role) -> bool {
        self.0.contains_key(role)
    }

    pub fn subscribes(&self, role: &Role, event_type: &EventType) -> bool {
        self.get(role).contains(event_type)
    }

    pub fn insert(&mut self, role: Role, events: impl IntoIterator<Item = EventType>) {
        self.0.entry(role).or_default().extend(events);
    }

    pub fn set(&mut self, role: Role, events: BTreeSet<EventType>) {
        self.0.insert(role, events);
    }

    pub fn roles(&self) -> impl Iterator<Item = &Role> {
        self.0.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Role, &BTreeSet<EventType>)> {
        self.0.iter()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("subscriptions serialize")
    }
}

impl FromIterator<(Role, BTreeSet<EventType>)> for Subscriptions {
    fn from_iter<I: IntoIterator<Item = (Role, BTreeSet<EventType>)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_protocol;

    const TRANSPORT: &str = include_str!("../../fixtures/transport/protocol.json");

    #[test]
    fn transport_protocol_parses() {
        let p = parse_protocol(TRANSPORT).unwrap();
        assert_eq!(p.initial, "initial");
        assert_eq!(p.transitions.len(), 3);
        let request = &p.transitions[0];
        assert_eq!(request.label.cmd, "request");
        assert_eq!(request.label.role, "machine");
        assert_eq!(
            request.label.log_type,
            vec![EventType::new("requested").unwrap()]
        );
    }

    #[test]
    fn empty_protocol_has_one_state() {
        let p = parse_protocol(r#"{"initial":"s0","transitions":[]}"#).unwrap();
        assert_eq!(p.states().len(), 1);
        assert!(p.transitions.is_empty());
        let s0 = StateName::new("s0").unwrap();
        assert_eq!(p.reachable_states(), BTreeSet::from([&s0]));
        assert!(p.roles().is_empty());
        assert!(p.event_types().is_empty());
    }

    #[test]
    fn missing_transitions_is_an_error() {
        let err = parse_protocol(r#"{"initial":"s0"}"#).unwrap_err();
        assert!(err.message.contains("transitions"), "{err}");
    }

    #[test]
    fn parse_errors_carry_the_field_path() {
        let err = parse_protocol(
            r#"{"initial":"s0","transitions":[{"source":"s0","target":"s1",
                "label":{"cmd":"c","logType":"a","role":"r"}}]}"#,
        )
        .unwrap_err();
        assert_eq!(err.path, "transitions[0].label.logType");

        let err = parse_protocol(r#"{"initial":"s0","transitions":{}}"#).unwrap_err();
        assert_eq!(err.path, "transitions");

        let err = parse_protocol(r#"{"initial":3,"transitions":[]}"#).unwrap_err();
        assert_eq!(err.path, "initial");

        let err = parse_protocol(r#"{"initial":"","transitions":[]}"#).unwrap_err();
        assert_eq!(err.path, "initial");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = parse_protocol(
            r#"{"initial":"s0","transitions":[{"source":"s0","target":"s1",
                "label":{"cmd":"c","logtype":["a"],"role":"r"}}]}"#,
        )
        .unwrap_err();
        assert!(err.message.contains("logtype"), "{err}");
        assert!(parse_protocol(r#"{"initial":"s0","transitions":[],"x":1}"#).is_err());
    }

    #[test]
    fn reachable_states_of_transport() {
        let p = parse_protocol(TRANSPORT).unwrap();
        let names: Vec<&str> = p
            .reachable_states()
            .into_iter()
            .map(|s| s.as_str())
            .collect();
        assert_eq!(names, ["auction", "doIt", "initial"]);
    }

    #[test]
    fn disconnected_component_is_not_reachable() {
        let p = parse_protocol(
            r#"{"initial":"s0","transitions":[{"source":"t1","target":"t2",
                "label":{"cmd":"c","logType":["a"],"role":"r"}}]}"#,
        )
        .unwrap();
        let names: Vec<&str> = p
            .reachable_states()
            .into_iter()
            .map(|s| s.as_str())
            .collect();
        assert_eq!(names, ["s0"]);
        assert_eq!(p.states().len(), 3);
        assert!(p.reachable_transitions().is_empty());
    }

    #[test]
    fn roles_and_event_types_are_sets() {
        let p = parse_protocol(TRANSPORT).unwrap();
        let roles: Vec<&str> = p.roles().into_iter().map(|r| r.as_str()).collect();
        assert_eq!(roles, ["machine", "robot"]);
        let events: Vec<&str> = p.event_types().into_iter().map(|e| e.as_str()).collect();
        assert_eq!(events, ["bid", "requested", "selected"]);

        let repeated = parse_protocol(
            r#"{"initial":"s0","transitions":[
                {"source":"s0","target":"s1","label":{"cmd":"c","logType":["a","a"],"role":"r"}},
                {"source":"s1","target":"s0","label":{"cmd":"d","logType":["a"],"role":"r"}}]}"#,
        )
        .unwrap();
        assert_eq!(repeated.event_types().len(), 1);
        assert_eq!(repeated.roles().len(), 1);
    }

    #[test]
    fn subscriptions_default_to_empty() {
        let subs: Subscriptions =
            crate::model::parse_subscriptions(r#"{"robot":["bid","bid"]}"#).unwrap();
        let robot = Role::new("robot").unwrap();
        let machine = Role::new("machine").unwrap();
        assert_eq!(subs.get(&robot).len(), 1);
        assert!(subs.get(&machine).is_empty());
        assert!(!subs.has_entry(&machine));
    }
}
