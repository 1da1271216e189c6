//! Data model and JSON interchange formats: swarm protocols, subscriptions,
//! machine shapes and check results.

mod diagnostic;
mod names;
mod protocol;
mod shape;

pub use diagnostic::{CheckResult, Diagnostic, DiagnosticCode};
pub use names::{Command, EmptyName, EventType, NodeId, Role, StateName};
pub use protocol::{ProtocolLabel, ProtocolTransition, Subscriptions, SwarmProtocol};
pub use shape::{MachineLabel, MachineShape, MachineTransition, ShapeError, ShapeIndex, StateView};

use serde::de::DeserializeOwned;

/// A document failed to parse. `path` points at the offending field
/// (`.` when the problem is at the top level).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ParseError {
    pub path: String,
    pub message: String,
}

impl ParseError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Strict JSON decoding that reports the path of the first bad field.
pub(crate) fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, ParseError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        ParseError::new(path, err.inner().to_string())
    })?;
    de.end()
        .map_err(|err| ParseError::new(".", err.to_string()))?;
    Ok(value)
}

pub fn parse_protocol(text: &str) -> Result<SwarmProtocol, ParseError> {
    from_json(text)
}

pub fn parse_subscriptions(text: &str) -> Result<Subscriptions, ParseError> {
    from_json(text)
}

/// Parses a machine shape and checks its structural invariants.
pub fn parse_machine_shape(text: &str) -> Result<MachineShape, ParseError> {
    let shape: MachineShape = from_json(text)?;
    shape
        .validate()
        .map_err(|err| ParseError::new(err.path(), err.to_string()))?;
    Ok(shape)
}
