//! Training sessions: scenario loading, the twin-to-net event pipeline,
//! the event log, replay and debriefing.

mod debrief;
mod manager;
mod scenario;
#[allow(clippy::module_inception)]
mod session;
mod trace;

use thiserror::Error;

pub use debrief::{debrief, ActivityOutcome, CriterionResult, Debrief, ErrorReport, TimelineEntry};
pub use manager::{SessionManager, SharedSession};
pub use scenario::{error_path_length, Criterion, ScenarioSpec, ScriptedFault, TWIN_ERROR_KINDS};
pub use session::{
    DeltaBody, LogRecord, RecordKind, Session, SessionSnapshot, SessionStatus, StateDelta,
};
pub use trace::{parse_log, parse_trace, replay, run_trace, simulate, Simulation, TraceLine, TraceStep};

use crate::activity::ActivityError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("invalid scenario: {}", .0.join("; "))]
    ScenarioInvalid(Vec<String>),
    #[error("scenario `{0}` already exists")]
    ScenarioExists(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session is {0:?}, not running")]
    SessionNotRunning(SessionStatus),
    #[error("session cannot go from {from:?} to {to:?}")]
    InvalidTransition { from: SessionStatus, to: SessionStatus },
    #[error("session is still {0:?}")]
    SessionStillRunning(SessionStatus),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("replay diverged at record {seq}")]
    ReplayDiverged { seq: u64 },
    #[error(transparent)]
    Activity(#[from] ActivityError),
}
