//! Well-formedness of a swarm protocol under a subscription.
//!
//! A protocol passes when, on its reachable part:
//!
//! * every transition emits at least one event and no transition is unreachable;
//! * guard events (first emitted type) are distinct per state, and no event
//!   type is emitted by more than one transition;
//! * the acting role sees everything it emits, and every role that can act in
//!   the target state sees the guard that led there;
//! * at a choice, every role involved in anything that can follow sees the
//!   guard of every branch;
//! * a role that sees any event of a log also sees the log's guard.
//!
//! Violations are reported exhaustively, sorted by transition index and code.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{
    CheckResult, Diagnostic, DiagnosticCode, EventType, Role, StateName, Subscriptions,
    SwarmProtocol,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PreconditionError {
    #[error("role `{0}` has no subscription entry")]
    MissingSubscription(Role),
}

/// Derived indices over the reachable part of a protocol.
pub struct WfContext<'a> {
    pub protocol: &'a SwarmProtocol,
    pub subs: &'a Subscriptions,
    reachable: BTreeSet<&'a StateName>,
    /// Reachable transition indices leaving each reachable state.
    outgoing: BTreeMap<&'a StateName, Vec<usize>>,
}

impl<'a> WfContext<'a> {
    pub fn new(
        protocol: &'a SwarmProtocol,
        subs: &'a Subscriptions,
    ) -> Result<Self, PreconditionError> {
        if let Some(role) = protocol.roles().into_iter().find(|r| !subs.has_entry(r)) {
            return Err(PreconditionError::MissingSubscription(role.clone()));
        }
        let reachable = protocol.reachable_states();
        let mut outgoing: BTreeMap<&StateName, Vec<usize>> =
            reachable.iter().map(|s| (*s, Vec::new())).collect();
        for (i, t) in protocol.transitions.iter().enumerate() {
            if let Some(list) = outgoing.get_mut(&t.source) {
                list.push(i);
            }
        }
        Ok(Self {
            protocol,
            subs,
            reachable,
            outgoing,
        })
    }

    pub fn guard(&self, transition: usize) -> Option<&'a EventType> {
        self.protocol.transitions[transition].guard()
    }

    pub fn outgoing(&self, state: &StateName) -> &[usize] {
        self.outgoing.get(state).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Roles that may invoke a command in `state`.
    pub fn active_roles(&self, state: &StateName) -> BTreeSet<&'a Role> {
        self.outgoing(state)
            .iter()
            .map(|&i| self.protocol.transitions[i].role())
            .collect()
    }

    /// Roles acting on, or subscribing to an event emitted by, any transition
    /// reachable from `state` (including those leaving `state`).
    pub fn involved_after(&self, state: &'a StateName) -> BTreeSet<&'a Role> {
        let after = self.protocol.reachable_from(state);
        let mut roles = BTreeSet::new();
        let mut emitted = BTreeSet::new();
        for t in self
            .protocol
            .transitions
            .iter()
            .filter(|t| after.contains(&t.source))
        {
            roles.insert(t.role());
            emitted.extend(t.label.log_type.iter());
        }
        for (role, events) in self.subs.iter() {
            if events.iter().any(|e| emitted.contains(e)) {
                roles.insert(role);
            }
        }
        roles
    }

    fn reachable_transitions(&self) -> impl Iterator<Item = usize> + '_ {
        self.outgoing.values().flatten().copied()
    }
}

/// Decides whether `protocol` under `subs` guarantees eventual consensus.
pub fn check_swarm_protocol(
    protocol: &SwarmProtocol,
    subs: &Subscriptions,
) -> Result<CheckResult, PreconditionError> {
    let ctx = WfContext::new(protocol, subs)?;
    let mut diagnostics = Vec::new();
    check_shape(&ctx, &mut diagnostics);
    check_determinacy(&ctx, &mut diagnostics);
    check_causality(&ctx, &mut diagnostics);
    check_choices(&ctx, &mut diagnostics);
    check_log_closure(&ctx, &mut diagnostics);
    sort_diagnostics(&mut diagnostics);
    Ok(CheckResult::from_diagnostics(diagnostics))
}

fn sort_diagnostics(diagnostics: &mut [Diagnostic]) {
    diagnostics.sort_by(|a, b| {
        (a.transition, a.code, &a.state, &a.role, &a.event_type).cmp(&(
            b.transition,
            b.code,
            &b.state,
            &b.role,
            &b.event_type,
        ))
    });
}

fn check_shape(ctx: &WfContext<'_>, out: &mut Vec<Diagnostic>) {
    for (i, t) in ctx.protocol.transitions.iter().enumerate() {
        if !ctx.reachable.contains(&t.source) {
            out.push(
                Diagnostic::new(
                    DiagnosticCode::WfUnreachable,
                    format!(
                        "transition `{}` from `{}` is not reachable from `{}`",
                        t.label.cmd, t.source, ctx.protocol.initial
                    ),
                )
                .at_state(&t.source)
                .at_transition(i),
            );
        } else if t.label.log_type.is_empty() {
            out.push(
                Diagnostic::new(
                    DiagnosticCode::WfEmptyLog,
                    format!(
                        "command `{}` at `{}` emits no events",
                        t.label.cmd, t.source
                    ),
                )
                .at_state(&t.source)
                .at_transition(i),
            );
        }
    }
}

fn check_determinacy(ctx: &WfContext<'_>, out: &mut Vec<Diagnostic>) {
    for (state, transitions) in &ctx.outgoing {
        let mut guards: BTreeMap<&EventType, usize> = BTreeMap::new();
        for &i in transitions {
            let Some(guard) = ctx.guard(i) else { continue };
            if let Some(&first) = guards.get(guard) {
                out.push(
                    Diagnostic::new(
                        DiagnosticCode::WfGuardClash,
                        format!(
                            "transitions {first} and {i} at `{state}` both start with `{guard}`"
                        ),
                    )
                    .at_state(state)
                    .at_transition(i)
                    .for_event(guard),
                );
            } else {
                guards.insert(guard, i);
            }
        }
    }

    let mut emitter: BTreeMap<&EventType, usize> = BTreeMap::new();
    let mut reachable: Vec<usize> = ctx.reachable_transitions().collect();
    reachable.sort_unstable();
    for i in reachable {
        let t = &ctx.protocol.transitions[i];
        let own: BTreeSet<&EventType> = t.label.log_type.iter().collect();
        for event in own {
            match emitter.get(event) {
                Some(&first) if first != i => out.push(
                    Diagnostic::new(
                        DiagnosticCode::WfEventReuse,
                        format!("event type `{event}` is emitted by transitions {first} and {i}"),
                    )
                    .at_state(&t.source)
                    .at_transition(i)
                    .for_event(event),
                ),
                Some(_) => {}
                None => {
                    emitter.insert(event, i);
                }
            }
        }
    }
}

fn check_causality(ctx: &WfContext<'_>, out: &mut Vec<Diagnostic>) {
    for i in ctx.reachable_transitions() {
        let t = &ctx.protocol.transitions[i];
        let actor = t.role();
        let mut missing: BTreeSet<&EventType> = BTreeSet::new();
        for event in &t.label.log_type {
            if !ctx.subs.subscribes(actor, event) && missing.insert(event) {
                out.push(
                    Diagnostic::new(
                        DiagnosticCode::WfActorBlind,
                        format!(
                            "role `{actor}` emits `{event}` via `{}` but does not subscribe to it",
                            t.label.cmd
                        ),
                    )
                    .at_state(&t.source)
                    .at_transition(i)
                    .for_role(actor)
                    .for_event(event),
                );
            }
        }

        let Some(guard) = t.guard() else { continue };
        for role in ctx.active_roles(&t.target) {
            if !ctx.subs.subscribes(role, guard) {
                out.push(
                    Diagnostic::new(
                        DiagnosticCode::WfLaterActorBlind,
                        format!(
                            "role `{role}` acts in `{}` but does not subscribe to `{guard}` which leads there",
                            t.target
                        ),
                    )
                    .at_state(&t.target)
                    .at_transition(i)
                    .for_role(role)
                    .for_event(guard),
                );
            }
        }
    }
}

fn check_choices(ctx: &WfContext<'_>, out: &mut Vec<Diagnostic>) {
    for (state, transitions) in &ctx.outgoing {
        if transitions.len() < 2 {
            continue;
        }
        let involved = ctx.involved_after(state);
        for &i in transitions {
            let Some(guard) = ctx.guard(i) else { continue };
            for role in &involved {
                if !ctx.subs.subscribes(role, guard) {
                    out.push(
                        Diagnostic::new(
                            DiagnosticCode::WfBranchBlind,
                            format!(
                                "role `{role}` is involved after the choice at `{state}` but does not subscribe to branch event `{guard}`"
                            ),
                        )
                        .at_state(state)
                        .at_transition(i)
                        .for_role(role)
                        .for_event(guard),
                    );
                }
            }
        }
    }
}

fn check_log_closure(ctx: &WfContext<'_>, out: &mut Vec<Diagnostic>) {
    for i in ctx.reachable_transitions() {
        let t = &ctx.protocol.transitions[i];
        let Some(guard) = t.guard() else { continue };
        for (role, events) in ctx.subs.iter() {
            let sees_part = t.label.log_type[1..].iter().any(|e| events.contains(e));
            if sees_part && !events.contains(guard) {
                out.push(
                    Diagnostic::new(
                        DiagnosticCode::WfLogGap,
                        format!(
                            "role `{role}` subscribes to part of the log of `{}` but not to its first event `{guard}`",
                            t.label.cmd
                        ),
                    )
                    .at_state(&t.source)
                    .at_transition(i)
                    .for_role(role)
                    .for_event(guard),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_protocol, parse_subscriptions};

    fn transport() -> SwarmProtocol {
        parse_protocol(include_str!("../fixtures/transport/protocol.json")).unwrap()
    }

    fn subs(json: &str) -> Subscriptions {
        parse_subscriptions(json).unwrap()
    }

    fn codes(result: &CheckResult) -> Vec<DiagnosticCode> {
        result.errors().iter().map(|d| d.code).collect()
    }

    #[test]
    fn transport_is_well_formed() {
        let result = check_swarm_protocol(
            &transport(),
            &subs(include_str!("../fixtures/transport/subs.json")),
        )
        .unwrap();
        assert_eq!(result, CheckResult::Ok);
    }

    #[test]
    fn empty_protocol_is_vacuously_well_formed() {
        let p = parse_protocol(r#"{"initial":"s0","transitions":[]}"#).unwrap();
        assert_eq!(
            check_swarm_protocol(&p, &Subscriptions::new()).unwrap(),
            CheckResult::Ok
        );
    }

    #[test]
    fn missing_subscription_entry_is_a_precondition_error() {
        let err = check_swarm_protocol(&transport(), &subs(r#"{"robot":[]}"#)).unwrap_err();
        assert_eq!(
            err,
            PreconditionError::MissingSubscription("machine".parse().unwrap())
        );
    }

    #[test]
    fn robot_blind_to_selection_is_branch_blind() {
        let result = check_swarm_protocol(
            &transport(),
            &subs(include_str!(
                "../fixtures/transport/subs-robot-missing-selected.json"
            )),
        )
        .unwrap();
        assert_eq!(codes(&result), [DiagnosticCode::WfBranchBlind]);
        let d = &result.errors()[0];
        assert_eq!(d.state.as_ref().unwrap(), "auction");
        assert_eq!(d.role.as_ref().unwrap(), "robot");
        assert_eq!(d.event_type.as_ref().unwrap(), "selected");
        assert_eq!(d.transition, Some(2));
    }

    #[test]
    fn duplicated_guard_clashes() {
        let p = parse_protocol(include_str!(
            "../fixtures/transport/protocol-duplicate-guard.json"
        ))
        .unwrap();
        let result =
            check_swarm_protocol(&p, &subs(include_str!("../fixtures/transport/subs.json")))
                .unwrap();
        assert_eq!(
            codes(&result),
            [DiagnosticCode::WfEventReuse, DiagnosticCode::WfGuardClash]
        );
        let clash = &result.errors()[1];
        assert_eq!(clash.state.as_ref().unwrap(), "auction");
        assert_eq!(clash.transition, Some(2));
    }

    #[test]
    fn actor_must_see_its_own_events() {
        let result = check_swarm_protocol(
            &transport(),
            &subs(include_str!(
                "../fixtures/transport/subs-machine-missing-requested.json"
            )),
        )
        .unwrap();
        assert_eq!(
            codes(&result),
            [
                DiagnosticCode::WfActorBlind,
                DiagnosticCode::WfLaterActorBlind
            ]
        );
        for d in result.errors() {
            assert_eq!(d.role.as_ref().unwrap(), "machine");
            assert_eq!(d.event_type.as_ref().unwrap(), "requested");
            assert_eq!(d.transition, Some(0));
        }
    }

    #[test]
    fn empty_logs_and_unreachable_transitions() {
        let p = parse_protocol(
            r#"{"initial":"s0","transitions":[
                {"source":"s0","target":"s1","label":{"cmd":"go","logType":[],"role":"r"}},
                {"source":"x","target":"y","label":{"cmd":"lost","logType":["l"],"role":"r"}}]}"#,
        )
        .unwrap();
        let result = check_swarm_protocol(&p, &subs(r#"{"r":["l"]}"#)).unwrap();
        assert_eq!(
            codes(&result),
            [DiagnosticCode::WfEmptyLog, DiagnosticCode::WfUnreachable]
        );
        assert_eq!(result.errors()[1].transition, Some(1));
    }

    #[test]
    fn log_gap_requires_the_guard() {
        let p = parse_protocol(
            r#"{"initial":"s0","transitions":[
                {"source":"s0","target":"s1","label":{"cmd":"go","logType":["a","b"],"role":"r"}}]}"#,
        )
        .unwrap();
        let result = check_swarm_protocol(&p, &subs(r#"{"r":["a","b"],"watcher":["b"]}"#)).unwrap();
        assert_eq!(codes(&result), [DiagnosticCode::WfLogGap]);
        let d = &result.errors()[0];
        assert_eq!(d.role.as_ref().unwrap(), "watcher");
        assert_eq!(d.event_type.as_ref().unwrap(), "a");
        let ok = check_swarm_protocol(&p, &subs(r#"{"r":["a","b"],"watcher":["a"]}"#)).unwrap();
        assert!(ok.is_ok());
    }

    #[test]
    fn later_actor_must_see_the_guard() {
        let p = parse_protocol(
            r#"{"initial":"s0","transitions":[
                {"source":"s0","target":"s1","label":{"cmd":"a","logType":["a"],"role":"p"}},
                {"source":"s1","target":"s2","label":{"cmd":"b","logType":["b"],"role":"q"}}]}"#,
        )
        .unwrap();
        let result = check_swarm_protocol(&p, &subs(r#"{"p":["a"],"q":["b"]}"#)).unwrap();
        assert_eq!(codes(&result), [DiagnosticCode::WfLaterActorBlind]);
        assert_eq!(result.errors()[0].role.as_ref().unwrap(), "q");
    }

    #[test]
    fn involved_roles_include_later_subscribers() {
        let p = transport();
        let s = subs(
            r#"{"machine":["requested","bid","selected"],"robot":["requested","bid","selected"],"observer":["selected"]}"#,
        );
        let ctx = WfContext::new(&p, &s).unwrap();
        let auction: StateName = "auction".parse().unwrap();
        let involved: Vec<&str> = ctx
            .involved_after(&auction)
            .iter()
            .map(|r| r.as_str())
            .collect();
        assert_eq!(involved, ["machine", "observer", "robot"]);
        let initial: StateName = "initial".parse().unwrap();
        assert!(ctx.active_roles(&initial).iter().all(|r| *r == "machine"));
    }

    #[test]
    fn diagnostics_are_deterministic() {
        let p = parse_protocol(include_str!(
            "../fixtures/transport/protocol-duplicate-guard.json"
        ))
        .unwrap();
        let s = subs(r#"{"machine":[],"robot":[]}"#);
        let first = check_swarm_protocol(&p, &s).unwrap();
        let second = check_swarm_protocol(&p, &s).unwrap();
        assert_eq!(first.to_json(), second.to_json());
        let keys: Vec<_> = first
            .errors()
            .iter()
            .map(|d| (d.transition, d.code))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
