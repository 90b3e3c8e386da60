use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::activity::Phase;
use crate::petri::{Payload, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MachineStatus {
    Off,
    Setup,
    Run,
    EmergencyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

pub const RPM: &str = "main_shaft_rpm";
pub const PILE_HEIGHT: &str = "pile_height";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineTwin {
    pub status: MachineStatus,
    /// Actual shaft speed; zero unless running.
    pub main_shaft_rpm: f64,
    /// Speed the shaft runs at once started.
    pub rpm_setpoint: f64,
    pub pile_height: f64,
    /// Needle, gripper and knife position as one angle in degrees.
    pub tool_phase: f64,
    pub parameter_bounds: BTreeMap<String, Bounds>,
    pub interlocked: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoolSlot {
    pub occupied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yarn_type: Option<String>,
    pub connected: bool,
    pub tension_blocked: bool,
    #[serde(default)]
    pub yarn_broken: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreelTwin {
    pub slots: Vec<SpoolSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstrateTwin {
    pub material: String,
    pub length_m: f64,
    pub seam_positions_m: Vec<f64>,
    pub advanced_m: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowQuality {
    Regular,
    Interrupted(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRow {
    pub index: u64,
    pub quality: RowQuality,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductTwin {
    pub rows: Vec<ProductRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorTwin {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_action: Option<OperatorAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OperatorAction {
    MountSpool { slot: usize, yarn_type: String },
    RemoveSpool { slot: usize },
    ConnectYarn { slot: usize },
    SpliceYarn { slot: usize, duration_ticks: u64 },
    ApplyCompressedAir { duration_ticks: u64 },
    SetParameter { name: String, value: f64 },
    StartMachine,
    StopMachine,
    Focus { element: String },
}

impl OperatorAction {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorAction::MountSpool { .. } => "MountSpool",
            OperatorAction::RemoveSpool { .. } => "RemoveSpool",
            OperatorAction::ConnectYarn { .. } => "ConnectYarn",
            OperatorAction::SpliceYarn { .. } => "SpliceYarn",
            OperatorAction::ApplyCompressedAir { .. } => "ApplyCompressedAir",
            OperatorAction::SetParameter { .. } => "SetParameter",
            OperatorAction::StartMachine => "StartMachine",
            OperatorAction::StopMachine => "StopMachine",
            OperatorAction::Focus { .. } => "Focus",
        }
    }

    pub fn slot(&self) -> Option<usize> {
        match self {
            OperatorAction::MountSpool { slot, .. }
            | OperatorAction::RemoveSpool { slot }
            | OperatorAction::ConnectYarn { slot }
            | OperatorAction::SpliceYarn { slot, .. } => Some(*slot),
            _ => None,
        }
    }
}

/// Fault taxonomy of the work cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TwinError {
    WrongYarnType(usize),
    TensionBlocked(usize),
    EmptySlotConnected(usize),
    YarnBreak(usize),
    AirDurationTooShort { measured: u64, required: u64 },
    SeamUnderNeedles,
    StartWhileSetupIncomplete,
}

impl TwinError {
    /// Variant name, as referenced by error-spec triggers.
    pub fn kind(&self) -> &'static str {
        match self {
            TwinError::WrongYarnType(_) => "WrongYarnType",
            TwinError::TensionBlocked(_) => "TensionBlocked",
            TwinError::EmptySlotConnected(_) => "EmptySlotConnected",
            TwinError::YarnBreak(_) => "YarnBreak",
            TwinError::AirDurationTooShort { .. } => "AirDurationTooShort",
            TwinError::SeamUnderNeedles => "SeamUnderNeedles",
            TwinError::StartWhileSetupIncomplete => "StartWhileSetupIncomplete",
        }
    }

    pub fn slot(&self) -> Option<usize> {
        match self {
            TwinError::WrongYarnType(s)
            | TwinError::TensionBlocked(s)
            | TwinError::EmptySlotConnected(s)
            | TwinError::YarnBreak(s) => Some(*s),
            _ => None,
        }
    }
}

impl fmt::Display for TwinError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TwinError::AirDurationTooShort { measured, required } => {
                write!(f, "AirDurationTooShort({measured} < {required})")
            }
            e => match e.slot() {
                Some(s) => write!(f, "{}({s})", e.kind()),
                None => f.write_str(e.kind()),
            },
        }
    }
}

/// Work-cell operations that activities bind to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    MountSpool,
    RemoveSpool,
    ConnectYarn,
    SpliceYarn,
    ApplyCompressedAir,
    Production,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TwinEvent {
    Signal {
        operation: Operation,
        phase: Phase,
        tick: Tick,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        payload: Payload,
    },
    Fault {
        error: TwinError,
        tick: Tick,
    },
}

impl TwinEvent {
    pub fn tick(&self) -> Tick {
        match self {
            TwinEvent::Signal { tick, .. } | TwinEvent::Fault { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedItem {
    pub tick: Tick,
    pub text: String,
    pub anchor: String,
    pub activity_id: String,
    pub error_id: String,
}

/// A fault waiting for its onset, and whether the onset was reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatchedFault {
    pub error: TwinError,
    pub reported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSignal {
    pub due: Tick,
    pub operation: Operation,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefusalKind {
    InterlockActive,
    InvalidSlot,
    InvalidState,
    InvalidTarget,
    UnknownParameter,
    ParameterOutOfBounds,
    InvalidDuration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct Refusal {
    pub kind: RefusalKind,
    pub message: String,
}

impl Refusal {
    pub fn new(kind: RefusalKind, message: impl Into<String>) -> Self {
        Refusal {
            kind,
            message: message.into(),
        }
    }
}
