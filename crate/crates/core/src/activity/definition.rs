use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ActivityError;
use crate::petri::{Payload, Tick};

/// Subevents an activity definition may expect, in lifecycle order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Start,
    Execute,
    End,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Start => "Start",
            Phase::Execute => "Execute",
            Phase::End => "End",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsequenceAction {
    StopMachine,
    ShowConsequence { text: String, anchor: String },
    LockControls,
    None,
}

impl ConsequenceAction {
    pub fn kind(&self) -> &'static str {
        match self {
            ConsequenceAction::StopMachine => "StopMachine",
            ConsequenceAction::ShowConsequence { .. } => "ShowConsequence",
            ConsequenceAction::LockControls => "LockControls",
            ConsequenceAction::None => "None",
        }
    }
}

/// What raises an error during execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// A twin error of the named kind, e.g. `YarnBreak`.
    TwinError(String),
    /// A subevent payload value below a threshold, e.g. a measured duration.
    PayloadBelow {
        subevent: Phase,
        key: String,
        threshold: i64,
    },
    /// The activity stays active for `timeout_ticks` or longer.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSpec {
    pub error_id: String,
    pub trigger: Trigger,
    pub consequence_actions: Vec<ConsequenceAction>,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityDefinition {
    pub activity_id: String,
    pub name: String,
    /// Guard on the Pool to Start step; absent means always allowed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_name: Option<String>,
    pub expected_subevents: Vec<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ticks: Option<u64>,
    #[serde(default)]
    pub error_specs: Vec<ErrorSpec>,
}

impl ActivityDefinition {
    pub fn expects(&self, phase: Phase) -> bool {
        self.expected_subevents.contains(&phase)
    }

    pub fn error_spec(&self, error_id: &str) -> Option<&ErrorSpec> {
        self.error_specs.iter().find(|e| e.error_id == error_id)
    }

    pub fn validate(&self) -> Result<(), ActivityError> {
        let invalid = |msg: String| ActivityError::InvalidDefinition {
            activity: self.activity_id.clone(),
            message: msg,
        };
        let id_ok = |s: &str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        };
        if !id_ok(&self.activity_id) {
            return Err(invalid(
                "activity_id must be non-empty ASCII letters, digits, `_` or `-`".into(),
            ));
        }
        let subs = &self.expected_subevents;
        if subs.first() != Some(&Phase::Start) || subs.last() != Some(&Phase::End) {
            return Err(invalid("expected_subevents must begin with Start and end with End".into()));
        }
        let distinct: BTreeSet<_> = subs.iter().collect();
        if distinct.len() != subs.len() {
            return Err(invalid("expected_subevents must not repeat".into()));
        }
        if self.timeout_ticks == Some(0) {
            return Err(invalid("timeout_ticks must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for spec in &self.error_specs {
            if !id_ok(&spec.error_id) {
                return Err(invalid(format!("invalid error_id `{}`", spec.error_id)));
            }
            if !seen.insert(spec.error_id.as_str()) {
                return Err(invalid(format!("duplicate error_id `{}`", spec.error_id)));
            }
            let acts = spec
                .consequence_actions
                .iter()
                .filter(|a| **a != ConsequenceAction::None)
                .count();
            if spec.severity != Severity::Info && acts == 0 {
                return Err(invalid(format!(
                    "error `{}` is {:?} but has no consequence action",
                    spec.error_id, spec.severity
                )));
            }
            if spec.trigger == Trigger::Timeout && self.timeout_ticks.is_none() {
                return Err(invalid(format!(
                    "error `{}` triggers on timeout but timeout_ticks is unset",
                    spec.error_id
                )));
            }
        }
        Ok(())
    }
}

/// Validates a whole task list: each definition plus id uniqueness.
pub fn validate_definitions(defs: &[ActivityDefinition]) -> Result<(), ActivityError> {
    if defs.is_empty() {
        return Err(ActivityError::NoActivities);
    }
    let mut ids = BTreeSet::new();
    for d in defs {
        d.validate()?;
        if !ids.insert(d.activity_id.as_str()) {
            return Err(ActivityError::DuplicateActivity(d.activity_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubEventKind {
    Start,
    Execute,
    End,
    ErrorDetected(String),
}

impl fmt::Display for SubEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubEventKind::Start => f.write_str("Start"),
            SubEventKind::Execute => f.write_str("Execute"),
            SubEventKind::End => f.write_str("End"),
            SubEventKind::ErrorDetected(e) => write!(f, "ErrorDetected({e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubEvent {
    pub activity_id: String,
    pub kind: SubEventKind,
    pub tick: Tick,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payload: Payload,
}

impl SubEvent {
    pub fn new(activity_id: impl Into<String>, kind: SubEventKind, tick: Tick) -> Self {
        SubEvent {
            activity_id: activity_id.into(),
            kind,
            tick,
            payload: Payload::new(),
        }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }
}
