//! Role projection of a swarm protocol and conformance checking of
//! implemented machine shapes against it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::model::{
    CheckResult, Diagnostic, DiagnosticCode, EventType, MachineLabel, MachineShape,
    MachineTransition, Role, StateName, Subscriptions, SwarmProtocol,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProjectionError {
    #[error("role `{0}` has no subscription entry")]
    MissingSubscription(Role),
    #[error("projected state `{state}` reacts to `{event_type}` with different targets `{first}` and `{second}`")]
    Ambiguity {
        state: StateName,
        event_type: EventType,
        first: StateName,
        second: StateName,
    },
}

/// A role's machine derived from the protocol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectedMachine {
    pub shape: MachineShape,
    /// For each transition of `shape`, the protocol transition it came from.
    pub provenance: Vec<usize>,
    /// Projected state (equivalence class) of every reachable protocol state.
    pub classes: BTreeMap<StateName, StateName>,
}

impl ProjectedMachine {
    pub fn class_of(&self, state: &StateName) -> Option<&StateName> {
        self.classes.get(state)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// The smaller index becomes the root.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Projects `protocol` onto `role` under `subs`.
///
/// Each transition contributes the subsequence of its log that the role
/// subscribes to as a chain of reactions; transitions the role cannot observe
/// at all merge their source and target. Commands go to the (merged) source
/// state of the transitions the role performs. Merged states are named after
/// their smallest member.
pub fn project(
    protocol: &SwarmProtocol,
    subs: &Subscriptions,
    role: &Role,
) -> Result<ProjectedMachine, ProjectionError> {
    if !subs.has_entry(role) {
        return Err(ProjectionError::MissingSubscription(role.clone()));
    }
    let sub = subs.get(role);
    let states: Vec<&StateName> = protocol.reachable_states().into_iter().collect();
    let position: HashMap<&StateName, usize> =
        states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let reachable = protocol.reachable_transitions();

    let mut classes = UnionFind::new(states.len());
    for &i in &reachable {
        let t = &protocol.transitions[i];
        if t.label.log_type.iter().all(|e| !sub.contains(e)) {
            classes.union(position[&t.source], position[&t.target]);
        }
    }
    let mut class_of = |s: &StateName| states[classes.find(position[s])].clone();

    let mut shape = MachineShape::new(class_of(&protocol.initial));
    shape.subscriptions = sub.clone();
    let mut provenance = Vec::new();
    let mut inputs: BTreeMap<(StateName, EventType), StateName> = BTreeMap::new();
    let mut commands: BTreeSet<(StateName, MachineLabel)> = BTreeSet::new();
    let mut synthetic: BTreeMap<StateName, usize> = BTreeMap::new();

    for &i in &reachable {
        let t = &protocol.transitions[i];
        let source = class_of(&t.source);
        let target = class_of(&t.target);

        if t.role() == role {
            let label = MachineLabel::Execute {
                cmd: t.label.cmd.clone(),
                log_type: t.label.log_type.clone(),
            };
            if commands.insert((source.clone(), label.clone())) {
                shape.transitions.push(MachineTransition {
                    source: source.clone(),
                    target: source.clone(),
                    label,
                });
                provenance.push(i);
            }
        }

        let observed: Vec<&EventType> = t
            .label
            .log_type
            .iter()
            .filter(|e| sub.contains(*e))
            .collect();
        let mut from = source.clone();
        for (k, event) in observed.iter().enumerate() {
            let to = if k + 1 == observed.len() {
                target.clone()
            } else {
                let n = synthetic.entry(source.clone()).or_insert(0);
                *n += 1;
                StateName::new(format!("{source}|{n}")).expect("non-empty")
            };
            match inputs.get(&(from.clone(), (*event).clone())) {
                Some(existing) if *existing == to => {}
                Some(existing) => {
                    return Err(ProjectionError::Ambiguity {
                        state: from,
                        event_type: (*event).clone(),
                        first: existing.clone(),
                        second: to,
                    })
                }
                None => {
                    inputs.insert((from.clone(), (*event).clone()), to.clone());
                    shape.transitions.push(MachineTransition {
                        source: from.clone(),
                        target: to.clone(),
                        label: MachineLabel::Input {
                            event_type: (*event).clone(),
                        },
                    });
                    provenance.push(i);
                }
            }
            from = to;
        }
    }

    let classes = states.iter().map(|s| ((*s).clone(), class_of(s))).collect();
    Ok(ProjectedMachine {
        shape,
        provenance,
        classes,
    })
}

/// Result of a synchronized walk over two deterministic machines.
#[derive(Clone, Debug, Default)]
pub struct Correspondence {
    /// Visited (expected, actual) state pairs in breadth-first order.
    pub pairs: Vec<(StateName, StateName)>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Correspondence {
    pub fn is_equivalent(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// Walks `expected` and `actual` in lockstep from their initial states,
/// matching reactions by event type and comparing offered commands.
pub fn compare_shapes(expected: &MachineShape, actual: &MachineShape) -> Correspondence {
    let exp = expected.index();
    let act = actual.index();
    let mut diagnostics: Vec<(usize, Diagnostic)> = Vec::new();

    if expected.subscriptions != actual.subscriptions {
        let list = |set: &BTreeSet<EventType>| {
            set.iter()
                .map(|e| e.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        };
        diagnostics.push((
            0,
            Diagnostic::new(
                DiagnosticCode::ProjSubscriptionMismatch,
                format!(
                    "machine subscribes to [{}] but the role subscribes to [{}]",
                    list(&actual.subscriptions),
                    list(&expected.subscriptions)
                ),
            ),
        ));
    }

    let start = (exp.initial.clone(), act.initial.clone());
    let mut visited: BTreeMap<(StateName, StateName), usize> = BTreeMap::from([(start.clone(), 0)]);
    let mut order: Vec<((StateName, StateName), Vec<EventType>)> = Vec::new();
    let mut clean: Vec<bool> = Vec::new();
    let mut queue = VecDeque::from([(start, Vec::<EventType>::new())]);

    while let Some(((e, a), path)) = queue.pop_front() {
        let rank = order.len();
        let ev = exp.view(&e);
        let av = act.view(&a);
        let before = diagnostics.len();

        if ev.commands != av.commands {
            let show = |cmds: &BTreeSet<(crate::model::Command, Vec<EventType>)>| {
                cmds.iter()
                    .map(|(c, log)| {
                        let log: Vec<&str> = log.iter().map(|e| e.as_str()).collect();
                        format!("{c}[{}]", log.join(","))
                    })
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            diagnostics.push((
                rank,
                Diagnostic::new(
                    DiagnosticCode::ProjCmdSetMismatch,
                    format!(
                        "state `{a}` offers {{{}}} but projected state `{e}` offers {{{}}}",
                        show(&av.commands),
                        show(&ev.commands)
                    ),
                )
                .at_state(&a)
                .with_path(path.clone()),
            ));
        }
        for (event, e_next) in &ev.inputs {
            match av.inputs.get(event) {
                None => diagnostics.push((
                    rank,
                    Diagnostic::new(
                        DiagnosticCode::ProjMissingReaction,
                        format!(
                            "state `{a}` does not react to `{event}` (projected state `{e}` does)"
                        ),
                    )
                    .at_state(&a)
                    .for_event(event)
                    .with_path(path.clone()),
                )),
                Some(a_next) => {
                    let pair = (e_next.clone(), a_next.clone());
                    if !visited.contains_key(&pair) {
                        visited.insert(pair.clone(), visited.len());
                        let mut next_path = path.clone();
                        next_path.push(event.clone());
                        queue.push_back((pair, next_path));
                    }
                }
            }
        }
        for event in av.inputs.keys().filter(|k| !ev.inputs.contains_key(*k)) {
            diagnostics.push((
                rank,
                Diagnostic::new(
                    DiagnosticCode::ProjExtraReaction,
                    format!("state `{a}` reacts to `{event}` but projected state `{e}` does not"),
                )
                .at_state(&a)
                .for_event(event)
                .with_path(path.clone()),
            ));
        }
        clean.push(diagnostics.len() == before);
        order.push(((e, a), path));
    }

    // A faulty pair whose actual state elsewhere pairs cleanly with another
    // projected state (or vice versa) means the edge into it went astray.
    for (rank, ((e, a), path)) in order.iter().enumerate() {
        if clean[rank] || path.is_empty() {
            continue;
        }
        let elsewhere = order
            .iter()
            .enumerate()
            .find(|(r, ((e2, a2), _))| clean[*r] && ((a2 == a && e2 != e) || (e2 == e && a2 != a)));
        if let Some((_, ((e2, a2), _))) = elsewhere {
            let event = path.last().expect("non-empty path");
            let message = if a2 == a {
                format!(
                    "reaction to `{event}` leads to `{a}`, which behaves like projected state `{e2}`, but the projection leads to `{e}`"
                )
            } else {
                format!(
                    "reaction to `{event}` leads to `{a}`, but projected state `{e}` corresponds to `{a2}`"
                )
            };
            diagnostics.push((
                rank,
                Diagnostic::new(DiagnosticCode::ProjTargetMismatch, message)
                    .at_state(a)
                    .for_event(event)
                    .with_path(path.clone()),
            ));
        }
    }

    diagnostics.sort_by(|(ra, da), (rb, db)| (ra, da.code).cmp(&(rb, db.code)));
    Correspondence {
        pairs: order.into_iter().map(|(pair, _)| pair).collect(),
        diagnostics: diagnostics.into_iter().map(|(_, d)| d).collect(),
    }
}

/// Checks that `implementation` processes event sequences and enables
/// commands exactly like the projection of `protocol` onto `role`.
pub fn check_projection(
    protocol: &SwarmProtocol,
    subs: &Subscriptions,
    role: &Role,
    implementation: &MachineShape,
) -> Result<CheckResult, ProjectionError> {
    let projected = project(protocol, subs, role)?;
    let correspondence = compare_shapes(&projected.shape, implementation);
    let diagnostics = correspondence
        .diagnostics
        .into_iter()
        .map(|d| d.for_role(role))
        .collect();
    Ok(CheckResult::from_diagnostics(diagnostics))
}
