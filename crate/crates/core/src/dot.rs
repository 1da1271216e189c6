//! Graphviz export for protocols and machine shapes.

use std::fmt::Write;

use crate::model::{EventType, MachineLabel, MachineShape, SwarmProtocol};

/// Quotes `s` as a DOT string literal.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn join(log: &[EventType]) -> String {
    log.iter()
        .map(|e| e.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// One node per state (the initial state drawn with a double border) and one
/// edge per transition labeled `cmd@role / logType`.
pub fn protocol_to_dot(protocol: &SwarmProtocol) -> String {
    let mut out = String::from("digraph \"swarm protocol\" {\n");
    for state in protocol.states() {
        if *state == protocol.initial {
            writeln!(out, "  {} [peripheries=2];", quote(state.as_str())).unwrap();
        } else {
            writeln!(out, "  {};", quote(state.as_str())).unwrap();
        }
    }
    for t in &protocol.transitions {
        let label = format!(
            "{}@{} / {}",
            t.label.cmd,
            t.label.role,
            join(&t.label.log_type)
        );
        writeln!(
            out,
            "  {} -> {} [label={}];",
            quote(t.source.as_str()),
            quote(t.target.as_str()),
            quote(&label)
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

/// Reactions are solid edges labeled with their event type; commands are
/// dashed self-loops labeled `cmd! / logType`.
pub fn shape_to_dot(shape: &MachineShape) -> String {
    let mut out = String::from("digraph \"machine\" {\n");
    for state in shape.states() {
        if *state == shape.initial {
            writeln!(out, "  {} [peripheries=2];", quote(state.as_str())).unwrap();
        } else {
            writeln!(out, "  {};", quote(state.as_str())).unwrap();
        }
    }
    for t in &shape.transitions {
        let (label, style) = match &t.label {
            MachineLabel::Input { event_type } => (event_type.to_string(), "solid"),
            MachineLabel::Execute { cmd, log_type } => {
                (format!("{cmd}! / {}", join(log_type)), "dashed")
            }
        };
        writeln!(
            out,
            "  {} -> {} [label={}, style={style}];",
            quote(t.source.as_str()),
            quote(t.target.as_str()),
            quote(&label)
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}
