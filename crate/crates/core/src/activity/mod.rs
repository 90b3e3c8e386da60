//! Activity definitions and the three-layer activity nets built from them.

mod definition;
mod dispatch;
pub mod templates;

use thiserror::Error;

pub use definition::{
    validate_definitions, ActivityDefinition, ConsequenceAction, ErrorSpec, Phase, Severity,
    SubEvent, SubEventKind, Trigger,
};
pub use dispatch::{
    ActivityEngine, ActivityInstance, ActivityState, ConsequenceCommand, DispatchOutcome,
    HistoryEntry, LogEntry, LogKind, StateChange,
};
pub use templates::{
    abstract_net, close_with_environment, compose, demonstrator_net, error_net, execution_net,
    settled_predicate, Census, EnvironmentModel,
};

use crate::petri::{PetriError, StructuralError, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActivityError {
    #[error("activity `{activity}`: {message}")]
    InvalidDefinition { activity: String, message: String },
    #[error("task list is empty")]
    NoActivities,
    #[error("duplicate activity `{0}`")]
    DuplicateActivity(String),
    #[error("unknown activity `{0}`")]
    UnknownActivity(String),
    #[error("fusion groups without a partner across layers: {}", .0.join(", "))]
    FusionMismatch(Vec<String>),
    #[error("id `{0}` is used by more than one layer")]
    IdCollision(String),
    #[error("event at tick {tick} precedes current tick {now}")]
    StaleTick { tick: Tick, now: Tick },
    #[error(transparent)]
    Net(#[from] StructuralError),
    #[error(transparent)]
    Petri(#[from] PetriError),
}
