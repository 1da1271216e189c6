use std::fmt;

use serde::{Deserialize, Serialize};

use super::names::{EventType, Role, StateName};

/// Closed set of diagnostic codes. Variants are declared in alphabetical order
/// of their wire names so the derived `Ord` sorts the same way as the strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagnosticCode {
    ProjCmdSetMismatch,
    ProjExtraReaction,
    ProjMissingReaction,
    ProjSubscriptionMismatch,
    ProjTargetMismatch,
    WfActorBlind,
    WfBranchBlind,
    WfEmptyLog,
    WfEventReuse,
    WfGuardClash,
    WfLaterActorBlind,
    WfLogGap,
    WfUnreachable,
}

impl DiagnosticCode {
    pub const ALL: [DiagnosticCode; 13] = [
        DiagnosticCode::ProjCmdSetMismatch,
        DiagnosticCode::ProjExtraReaction,
        DiagnosticCode::ProjMissingReaction,
        DiagnosticCode::ProjSubscriptionMismatch,
        DiagnosticCode::ProjTargetMismatch,
        DiagnosticCode::WfActorBlind,
        DiagnosticCode::WfBranchBlind,
        DiagnosticCode::WfEmptyLog,
        DiagnosticCode::WfEventReuse,
        DiagnosticCode::WfGuardClash,
        DiagnosticCode::WfLaterActorBlind,
        DiagnosticCode::WfLogGap,
        DiagnosticCode::WfUnreachable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::ProjCmdSetMismatch => "PROJ_CMD_SET_MISMATCH",
            DiagnosticCode::ProjExtraReaction => "PROJ_EXTRA_REACTION",
            DiagnosticCode::ProjMissingReaction => "PROJ_MISSING_REACTION",
            DiagnosticCode::ProjSubscriptionMismatch => "PROJ_SUBSCRIPTION_MISMATCH",
            DiagnosticCode::ProjTargetMismatch => "PROJ_TARGET_MISMATCH",
            DiagnosticCode::WfActorBlind => "WF_ACTOR_BLIND",
            DiagnosticCode::WfBranchBlind => "WF_BRANCH_BLIND",
            DiagnosticCode::WfEmptyLog => "WF_EMPTY_LOG",
            DiagnosticCode::WfEventReuse => "WF_EVENT_REUSE",
            DiagnosticCode::WfGuardClash => "WF_GUARD_CLASH",
            DiagnosticCode::WfLaterActorBlind => "WF_LATER_ACTOR_BLIND",
            DiagnosticCode::WfLogGap => "WF_LOG_GAP",
            DiagnosticCode::WfUnreachable => "WF_UNREACHABLE",
        }
    }

    /// Codes whose presence depends on what roles subscribe to.
    pub fn is_visibility(self) -> bool {
        matches!(
            self,
            DiagnosticCode::WfActorBlind
                | DiagnosticCode::WfLaterActorBlind
                | DiagnosticCode::WfBranchBlind
                | DiagnosticCode::WfLogGap
        )
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_type: Option<EventType>,
    /// Event types leading from the initial state to the discrepancy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<EventType>>,
}

impl Diagnostic {
    pub fn new(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            state: None,
            transition: None,
            role: None,
            event_type: None,
            path: None,
        }
    }

    pub fn at_state(mut self, state: &StateName) -> Self {
        self.state = Some(state.clone());
        self
    }

    pub fn at_transition(mut self, index: usize) -> Self {
        self.transition = Some(index);
        self
    }

    pub fn for_role(mut self, role: &Role) -> Self {
        self.role = Some(role.clone());
        self
    }

    pub fn for_event(mut self, event_type: &EventType) -> Self {
        self.event_type = Some(event_type.clone());
        self
    }

    pub fn with_path(mut self, path: Vec<EventType>) -> Self {
        self.path = Some(path);
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(path) = &self.path {
            let path: Vec<&str> = path.iter().map(|e| e.as_str()).collect();
            write!(f, " (after [{}])", path.join(", "))?;
        }
        Ok(())
    }
}

/// Outcome of a check: `{"type":"OK"}` or `{"type":"ERROR","errors":[...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum CheckResult {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "ERROR")]
    Error { errors: Vec<Diagnostic> },
}

impl CheckResult {
    pub fn from_diagnostics(errors: Vec<Diagnostic>) -> Self {
        if errors.is_empty() {
            CheckResult::Ok
        } else {
            CheckResult::Error { errors }
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, CheckResult::Ok)
    }

    pub fn errors(&self) -> &[Diagnostic] {
        match self {
            CheckResult::Ok => &[],
            CheckResult::Error { errors } => errors,
        }
    }

    pub fn has_code(&self, code: DiagnosticCode) -> bool {
        self.errors().iter().any(|d| d.code == code)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("check result serializes")
    }
}
