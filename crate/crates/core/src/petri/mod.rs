//! Deterministic colored, time-extended Petri net kernel.
//!
//! Conflict resolution is fixed: enabled transitions are ordered by
//! (priority desc, transition id asc) and each input arc binds the
//! FIFO-oldest ready tokens of its place. Only that one candidate binding is
//! offered to the guard; there is no search over alternative bindings.

mod definition;
mod engine;
mod guard;
mod marking;
mod net;
mod token;

use thiserror::Error;

pub use definition::{
    ArcDefinition, NetDefinition, PayloadRule, PlaceDefinition, TransitionDefinition,
};
pub use engine::{
    enabled_transitions, fire, fire_mut, run_to_quiescence, run_to_quiescence_mut,
    trace_to_jsonl, ArcTokens, Enabled, Env, FiringRecord,
};
pub use guard::{Guard, GuardContext, GuardRegistry};
pub use marking::{Marking, MarkingView};
pub use net::{
    build_net, InputArc, Net, OutputArc, Place, StructuralError, StructuralErrorKind, Transition,
};
pub use token::{payload, Payload, Scalar, Tick, Token, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PetriError {
    #[error(transparent)]
    Structural(#[from] StructuralError),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("place `{place}` would exceed its capacity of {capacity}")]
    CapacityExceeded { place: String, capacity: u32 },
    #[error("net still enabled after {steps} firings at one tick (livelock)")]
    NonQuiescent { steps: usize },
    #[error("token {token}: ready_at {ready_at} precedes created_at {created_at}")]
    InvalidToken {
        token: TokenId,
        created_at: Tick,
        ready_at: Tick,
    },
    #[error("{0}")]
    InvalidArgument(String),
}
