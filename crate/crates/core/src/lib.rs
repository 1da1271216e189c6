//! Swarm protocols: global workflow descriptions for peer-to-peer systems,
//! their well-formedness checks, per-role projection, an event-sourced
//! machine runtime over replicated logs, and a seeded swarm simulator.

pub mod dot;
pub mod eventlog;
pub mod fixtures;
pub mod model;
pub mod projection;
pub mod runner;
pub mod sim;
pub mod wellformed;

pub use model::{
    parse_machine_shape, parse_protocol, parse_subscriptions, CheckResult, Diagnostic,
    DiagnosticCode, MachineShape, ParseError, Subscriptions, SwarmProtocol,
};
pub use projection::{check_projection, project};
pub use wellformed::check_swarm_protocol;
