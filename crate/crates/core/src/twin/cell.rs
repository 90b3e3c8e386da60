use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::model::*;
use crate::activity::{ConsequenceAction, ConsequenceCommand, Phase};
use crate::petri::{payload, Payload, Scalar, Tick};

fn d_slots() -> usize {
    8
}
fn d_row_period() -> u64 {
    10
}
fn d_ratio() -> f64 {
    0.5
}
fn d_rpm() -> f64 {
    600.0
}
fn d_pile() -> f64 {
    8.0
}
fn d_air() -> u64 {
    5
}
fn d_row_len() -> f64 {
    0.005
}
fn d_bounds() -> BTreeMap<String, Bounds> {
    BTreeMap::from([
        (RPM.to_owned(), Bounds { min: 0.0, max: 1200.0 }),
        (PILE_HEIGHT.to_owned(), Bounds { min: 2.0, max: 20.0 }),
    ])
}

/// Machine-specific constants. Every field has a documented default so
/// scenario files may omit it, but the shipped scenarios state all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineConfig {
    #[serde(default = "d_slots")]
    pub slot_count: usize,
    /// Ticks of running per product row.
    #[serde(default = "d_row_period")]
    pub row_period_ticks: u64,
    /// Tool phase advance per tick, in degrees per rpm.
    #[serde(default = "d_ratio")]
    pub degrees_per_rpm_tick: f64,
    #[serde(default = "d_rpm")]
    pub default_rpm: f64,
    #[serde(default = "d_pile")]
    pub default_pile_height: f64,
    #[serde(default = "d_bounds")]
    pub parameter_bounds: BTreeMap<String, Bounds>,
    /// Minimum compressed-air duration in ticks.
    #[serde(default = "d_air")]
    pub air_min_ticks: u64,
    /// Substrate consumed per product row.
    #[serde(default = "d_row_len")]
    pub row_length_m: f64,
    /// Yarn each production slot must carry. Setup is complete when every
    /// listed slot holds its yarn, is connected and is healthy.
    #[serde(default)]
    pub required_yarn: BTreeMap<usize, String>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            slot_count: d_slots(),
            row_period_ticks: d_row_period(),
            degrees_per_rpm_tick: d_ratio(),
            default_rpm: d_rpm(),
            default_pile_height: d_pile(),
            parameter_bounds: d_bounds(),
            air_min_ticks: d_air(),
            row_length_m: d_row_len(),
            required_yarn: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstrateSpec {
    pub material: String,
    pub length_m: f64,
    #[serde(default)]
    pub seam_positions_m: Vec<f64>,
}

/// Work-cell state at session start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default = "d_status")]
    pub status: MachineStatus,
    /// Pre-filled creel slots by index; unlisted slots start empty.
    #[serde(default)]
    pub slots: BTreeMap<usize, SpoolSlot>,
    pub substrate: SubstrateSpec,
}

fn d_status() -> MachineStatus {
    MachineStatus::Off
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("slot {slot} is out of range for a {count}-slot creel")]
    SlotOutOfRange { slot: usize, count: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Complete mutable state. Serialized as the work-cell snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkCellState {
    pub tick: Tick,
    pub machine: MachineTwin,
    pub creel: CreelTwin,
    pub substrate: SubstrateTwin,
    pub product: ProductTwin,
    pub operator: OperatorTwin,
    pub feed: Vec<FeedItem>,
    pub latched: Vec<LatchedFault>,
    pub pending: Vec<PendingSignal>,
    pub row_progress: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkCell {
    config: MachineConfig,
    state: WorkCellState,
}

fn slot_payload(slot: usize) -> Payload {
    let mut p = Payload::new();
    p.insert("slot".into(), Scalar::Int(slot as i64));
    p
}

fn signal(operation: Operation, phase: Phase, tick: Tick, payload: Payload) -> TwinEvent {
    TwinEvent::Signal {
        operation,
        phase,
        tick,
        payload,
    }
}

impl WorkCell {
    pub fn new(config: MachineConfig, initial: &InitialState) -> Result<Self, ConfigError> {
        let count = config.slot_count;
        if count == 0 {
            return Err(ConfigError::Invalid("slot_count must be positive".into()));
        }
        if config.row_period_ticks == 0 {
            return Err(ConfigError::Invalid("row_period_ticks must be positive".into()));
        }
        for (&slot, s) in &initial.slots {
            if slot >= count {
                return Err(ConfigError::SlotOutOfRange { slot, count });
            }
            if (s.connected || s.tension_blocked || s.yarn_broken) && !s.occupied {
                return Err(ConfigError::Invalid(format!("slot {slot} is connected or blocked but empty")));
            }
        }
        for &slot in config.required_yarn.keys() {
            if slot >= count {
                return Err(ConfigError::SlotOutOfRange { slot, count });
            }
        }
        for name in [RPM, PILE_HEIGHT] {
            if !config.parameter_bounds.contains_key(name) {
                return Err(ConfigError::Invalid(format!("missing bounds for `{name}`")));
            }
        }
        let bounds = &config.parameter_bounds;
        if !bounds[RPM].contains(config.default_rpm) || !bounds[PILE_HEIGHT].contains(config.default_pile_height) {
            return Err(ConfigError::Invalid("default parameters are outside their bounds".into()));
        }
        if config.default_pile_height <= 0.0 {
            return Err(ConfigError::Invalid("pile height must be positive".into()));
        }
        let sub = &initial.substrate;
        if sub.length_m <= 0.0 {
            return Err(ConfigError::Invalid("substrate length must be positive".into()));
        }
        if sub.seam_positions_m.windows(2).any(|w| w[0] > w[1])
            || sub.seam_positions_m.iter().any(|&p| p < 0.0 || p >= sub.length_m)
        {
            return Err(ConfigError::Invalid("seam positions must be sorted and inside the substrate".into()));
        }
        if matches!(initial.status, MachineStatus::Run | MachineStatus::EmergencyStop) {
            return Err(ConfigError::Invalid("a session starts with the machine Off or in Setup".into()));
        }

        let mut slots = vec![SpoolSlot::default(); count];
        for (&i, s) in &initial.slots {
            slots[i] = s.clone();
        }
        let state = WorkCellState {
            tick: 0,
            machine: MachineTwin {
                status: initial.status,
                main_shaft_rpm: 0.0,
                rpm_setpoint: config.default_rpm,
                pile_height: config.default_pile_height,
                tool_phase: 0.0,
                parameter_bounds: config.parameter_bounds.clone(),
                interlocked: false,
            },
            creel: CreelTwin { slots },
            substrate: SubstrateTwin {
                material: sub.material.clone(),
                length_m: sub.length_m,
                seam_positions_m: sub.seam_positions_m.clone(),
                advanced_m: 0.0,
            },
            product: ProductTwin::default(),
            operator: OperatorTwin::default(),
            feed: Vec::new(),
            latched: Vec::new(),
            pending: Vec::new(),
            row_progress: 0,
        };
        Ok(WorkCell { config, state })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn state(&self) -> &WorkCellState {
        &self.state
    }

    pub fn now(&self) -> Tick {
        self.state.tick
    }

    /// Element ids that Focus and consequence anchors may name.
    pub fn elements(&self) -> Vec<String> {
        let mut v: Vec<String> = ["machine", "machine.panel", "machine.shaft", "machine.needles", "creel"]
            .into_iter()
            .map(String::from)
            .collect();
        v.extend((0..self.config.slot_count).map(|i| format!("creel.slot.{i}")));
        v.extend(["substrate", "product", "air_gun", "splicer"].map(String::from));
        v
    }

    pub fn has_element(&self, id: &str) -> bool {
        self.elements().iter().any(|e| e == id)
    }

    /// Every required slot holds its yarn, is connected and is healthy. With
    /// no requirements, at least one healthy connected slot.
    pub fn setup_complete(&self) -> bool {
        let healthy = |s: &SpoolSlot| s.occupied && s.connected && !s.yarn_broken && !s.tension_blocked;
        let slots = &self.state.creel.slots;
        if self.config.required_yarn.is_empty() {
            return slots.iter().any(healthy);
        }
        self.config.required_yarn.iter().all(|(&i, yarn)| {
            healthy(&slots[i]) && slots[i].yarn_type.as_deref() == Some(yarn.as_str())
        })
    }

    fn check_slot(&self, slot: usize) -> Result<(), Refusal> {
        if slot >= self.config.slot_count {
            return Err(Refusal::new(
                RefusalKind::InvalidSlot,
                format!("slot {slot} does not exist (creel has {})", self.config.slot_count),
            ));
        }
        Ok(())
    }

    fn enter_setup(&mut self) {
        if self.state.machine.status == MachineStatus::Off {
            self.state.machine.status = MachineStatus::Setup;
        }
    }

    fn clear_latches(&mut self, slot: usize, kinds: &[&str]) {
        self.state
            .latched
            .retain(|l| !(l.error.slot() == Some(slot) && kinds.contains(&l.error.kind())));
    }

    /// Applies an operator action at the current tick. Refused actions
    /// leave the state untouched.
    pub fn apply_action(&mut self, action: &OperatorAction) -> Result<Vec<TwinEvent>, Refusal> {
        let t = self.state.tick;
        if self.state.machine.interlocked && !matches!(action, OperatorAction::Focus { .. }) {
            return Err(Refusal::new(
                RefusalKind::InterlockActive,
                format!("{} refused: interlock engaged", action.name()),
            ));
        }
        if let Some(slot) = action.slot() {
            self.check_slot(slot)?;
        }
        let invalid = |msg: String| Err(Refusal::new(RefusalKind::InvalidState, msg));
        let mut events = Vec::new();
        match action {
            OperatorAction::MountSpool { slot, yarn_type } => {
                let s = &mut self.state.creel.slots[*slot];
                if s.occupied {
                    return invalid(format!("slot {slot} is already occupied"));
                }
                s.occupied = true;
                s.yarn_type = Some(yarn_type.clone());
                let mut p = slot_payload(*slot);
                p.insert("yarn_type".into(), yarn_type.as_str().into());
                events.push(signal(Operation::MountSpool, Phase::Start, t, p.clone()));
                events.push(signal(Operation::MountSpool, Phase::End, t, p));
                self.enter_setup();
            }
            OperatorAction::RemoveSpool { slot } => {
                let s = &mut self.state.creel.slots[*slot];
                if !s.occupied {
                    return invalid(format!("slot {slot} is empty"));
                }
                *s = SpoolSlot::default();
                self.state.latched.retain(|l| l.error.slot() != Some(*slot));
                let p = slot_payload(*slot);
                events.push(signal(Operation::RemoveSpool, Phase::Start, t, p.clone()));
                events.push(signal(Operation::RemoveSpool, Phase::End, t, p));
                self.enter_setup();
            }
            OperatorAction::ConnectYarn { slot } => {
                let required = self.config.required_yarn.get(slot).cloned();
                let s = &mut self.state.creel.slots[*slot];
                if s.connected {
                    return invalid(format!("slot {slot} is already connected"));
                }
                let p = slot_payload(*slot);
                events.push(signal(Operation::ConnectYarn, Phase::Start, t, p.clone()));
                if !s.occupied {
                    events.push(TwinEvent::Fault {
                        error: TwinError::EmptySlotConnected(*slot),
                        tick: t,
                    });
                } else {
                    s.connected = true;
                    if required.is_some_and(|r| s.yarn_type.as_deref() != Some(r.as_str())) {
                        events.push(TwinEvent::Fault {
                            error: TwinError::WrongYarnType(*slot),
                            tick: t,
                        });
                    }
                    events.push(signal(Operation::ConnectYarn, Phase::End, t, p));
                }
                self.enter_setup();
            }
            OperatorAction::SpliceYarn { slot, duration_ticks } => {
                if *duration_ticks == 0 {
                    return Err(Refusal::new(RefusalKind::InvalidDuration, "duration must be positive"));
                }
                if !self.state.creel.slots[*slot].occupied {
                    return invalid(format!("slot {slot} is empty"));
                }
                let mut p = slot_payload(*slot);
                events.push(signal(Operation::SpliceYarn, Phase::Start, t, p.clone()));
                events.push(signal(Operation::SpliceYarn, Phase::Execute, t, p.clone()));
                p.insert("requested_ticks".into(), Scalar::Int(*duration_ticks as i64));
                self.state.pending.push(PendingSignal {
                    due: t + duration_ticks,
                    operation: Operation::SpliceYarn,
                    phase: Phase::End,
                    payload: p,
                });
                self.enter_setup();
            }
            OperatorAction::ApplyCompressedAir { duration_ticks } => {
                if *duration_ticks == 0 {
                    return Err(Refusal::new(RefusalKind::InvalidDuration, "duration must be positive"));
                }
                let p = payload([("requested_ticks", *duration_ticks as i64)]);
                events.push(signal(Operation::ApplyCompressedAir, Phase::Start, t, p.clone()));
                let required = self.config.air_min_ticks;
                if *duration_ticks < required {
                    events.push(TwinEvent::Fault {
                        error: TwinError::AirDurationTooShort {
                            measured: *duration_ticks,
                            required,
                        },
                        tick: t,
                    });
                }
                self.state.pending.push(PendingSignal {
                    due: t + duration_ticks,
                    operation: Operation::ApplyCompressedAir,
                    phase: Phase::End,
                    payload: p,
                });
                self.enter_setup();
            }
            OperatorAction::SetParameter { name, value } => {
                let Some(bounds) = self.config.parameter_bounds.get(name) else {
                    return Err(Refusal::new(RefusalKind::UnknownParameter, format!("no parameter `{name}`")));
                };
                if !value.is_finite() || !bounds.contains(*value) {
                    return Err(Refusal::new(
                        RefusalKind::ParameterOutOfBounds,
                        format!("{name} = {value} is outside [{}, {}]", bounds.min, bounds.max),
                    ));
                }
                let m = &mut self.state.machine;
                match name.as_str() {
                    RPM => {
                        if m.status == MachineStatus::Run && *value <= 0.0 {
                            return invalid("a running shaft needs a positive speed".into());
                        }
                        m.rpm_setpoint = *value;
                        if m.status == MachineStatus::Run {
                            m.main_shaft_rpm = *value;
                        }
                    }
                    PILE_HEIGHT => {
                        if *value <= 0.0 {
                            return invalid("pile height must be positive".into());
                        }
                        m.pile_height = *value;
                    }
                    _ => {}
                }
                self.enter_setup();
            }
            OperatorAction::StartMachine => {
                let m = &mut self.state.machine;
                if m.status == MachineStatus::Run {
                    return invalid("machine is already running".into());
                }
                if m.rpm_setpoint <= 0.0 {
                    return invalid("shaft speed setpoint is zero".into());
                }
                let complete = self.setup_complete();
                let m = &mut self.state.machine;
                m.status = MachineStatus::Run;
                m.main_shaft_rpm = m.rpm_setpoint;
                events.push(signal(Operation::Production, Phase::Start, t, Payload::new()));
                if !complete {
                    events.push(TwinEvent::Fault {
                        error: TwinError::StartWhileSetupIncomplete,
                        tick: t,
                    });
                }
            }
            OperatorAction::StopMachine => {
                let m = &mut self.state.machine;
                if m.status != MachineStatus::Run {
                    return invalid("machine is not running".into());
                }
                m.status = MachineStatus::Setup;
                m.main_shaft_rpm = 0.0;
                events.push(signal(Operation::Production, Phase::End, t, self.production_payload()));
            }
            OperatorAction::Focus { element } => {
                if !self.has_element(element) {
                    return Err(Refusal::new(RefusalKind::InvalidTarget, format!("no element `{element}`")));
                }
                self.state.operator.focus_element = Some(element.clone());
            }
        }
        self.state.operator.last_action = Some(action.clone());
        Ok(events)
    }

    fn production_payload(&self) -> Payload {
        let rows = &self.state.product.rows;
        let regular = rows.iter().filter(|r| r.quality == RowQuality::Regular).count();
        payload([("rows", rows.len() as i64), ("regular_rows", regular as i64)])
    }

    /// Defect spoiling the next row, if any.
    fn row_defect(&self) -> Option<String> {
        for (i, s) in self.state.creel.slots.iter().enumerate() {
            if !s.connected {
                continue;
            }
            if s.yarn_broken {
                return Some(TwinError::YarnBreak(i).kind().into());
            }
            if s.tension_blocked {
                return Some(TwinError::TensionBlocked(i).kind().into());
            }
            if let Some(r) = self.config.required_yarn.get(&i) {
                if s.yarn_type.as_deref() != Some(r.as_str()) {
                    return Some(TwinError::WrongYarnType(i).kind().into());
                }
            }
        }
        None
    }

    fn manifests(&self, e: &TwinError) -> bool {
        match e {
            TwinError::YarnBreak(s) | TwinError::TensionBlocked(s) | TwinError::WrongYarnType(s) => {
                self.state.creel.slots[*s].connected
            }
            _ => true,
        }
    }

    /// Advances the clock by `dt` ticks, one tick at a time.
    pub fn tick(&mut self, dt: u64) -> Result<Vec<TwinEvent>, Refusal> {
        if dt == 0 {
            return Err(Refusal::new(RefusalKind::InvalidDuration, "advance by at least one tick"));
        }
        let mut events = Vec::new();
        for _ in 0..dt {
            self.step(&mut events);
        }
        Ok(events)
    }

    fn step(&mut self, events: &mut Vec<TwinEvent>) {
        self.state.tick += 1;
        let t = self.state.tick;

        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.state.pending)
            .into_iter()
            .partition(|p| p.due <= t);
        self.state.pending = later;
        for p in due {
            if p.operation == Operation::SpliceYarn {
                let slot = p.payload.get("slot").and_then(Scalar::as_int).unwrap_or(0) as usize;
                let s = &mut self.state.creel.slots[slot];
                if s.occupied {
                    s.connected = true;
                    s.yarn_broken = false;
                    self.clear_latches(slot, &["YarnBreak"]);
                }
            }
            events.push(signal(p.operation, p.phase, t, p.payload));
        }

        if self.state.machine.status != MachineStatus::Run {
            return;
        }
        let m = &mut self.state.machine;
        m.tool_phase = (m.tool_phase + m.main_shaft_rpm * self.config.degrees_per_rpm_tick) % 360.0;

        for i in 0..self.state.latched.len() {
            let l = &self.state.latched[i];
            if !l.reported && self.manifests(&l.error) {
                events.push(TwinEvent::Fault {
                    error: l.error.clone(),
                    tick: t,
                });
                self.state.latched[i].reported = true;
            }
        }

        self.state.row_progress += 1;
        if self.state.row_progress < self.config.row_period_ticks {
            return;
        }
        self.state.row_progress = 0;
        let quality = match self.row_defect() {
            Some(kind) => RowQuality::Interrupted(kind),
            None => RowQuality::Regular,
        };
        let index = self.state.product.rows.len() as u64;
        self.state.product.rows.push(ProductRow { index, quality });

        let sub = &mut self.state.substrate;
        let before = sub.advanced_m;
        sub.advanced_m = (before + self.config.row_length_m).min(sub.length_m);
        let after = sub.advanced_m;
        if sub.seam_positions_m.iter().any(|&p| p > before && p <= after) {
            events.push(TwinEvent::Fault {
                error: TwinError::SeamUnderNeedles,
                tick: t,
            });
        }
        if after >= sub.length_m {
            let m = &mut self.state.machine;
            m.status = MachineStatus::Setup;
            m.main_shaft_rpm = 0.0;
            events.push(signal(Operation::Production, Phase::End, t, self.production_payload()));
        }
    }

    /// Latches a scripted fault; it manifests on a later tick while the
    /// machine runs (slot faults only once that slot is connected).
    pub fn inject_fault(&mut self, fault: TwinError) -> Result<(), Refusal> {
        if let Some(slot) = fault.slot() {
            if slot >= self.config.slot_count {
                return Err(Refusal::new(RefusalKind::InvalidTarget, format!("slot {slot} does not exist")));
            }
            let s = &mut self.state.creel.slots[slot];
            let needs_spool = !matches!(fault, TwinError::EmptySlotConnected(_));
            if needs_spool && !s.occupied {
                return Err(Refusal::new(RefusalKind::InvalidTarget, format!("slot {slot} is unoccupied")));
            }
            match fault {
                TwinError::YarnBreak(_) => s.yarn_broken = true,
                TwinError::TensionBlocked(_) => s.tension_blocked = true,
                _ => {}
            }
        }
        self.state.latched.push(LatchedFault {
            error: fault,
            reported: false,
        });
        Ok(())
    }

    /// Carries out a consequence command. Idempotent.
    pub fn execute_command(&mut self, cmd: &ConsequenceCommand) {
        let m = &mut self.state.machine;
        match &cmd.action {
            ConsequenceAction::StopMachine => {
                if m.status != MachineStatus::Off {
                    m.status = MachineStatus::EmergencyStop;
                }
                m.main_shaft_rpm = 0.0;
                m.interlocked = true;
            }
            ConsequenceAction::ShowConsequence { text, anchor } => self.state.feed.push(FeedItem {
                tick: cmd.tick,
                text: text.clone(),
                anchor: anchor.clone(),
                activity_id: cmd.activity_id.clone(),
                error_id: cmd.error_id.clone(),
            }),
            ConsequenceAction::LockControls => {
                match m.status {
                    MachineStatus::Run => m.status = MachineStatus::EmergencyStop,
                    MachineStatus::Setup => m.status = MachineStatus::Off,
                    _ => {}
                }
                m.main_shaft_rpm = 0.0;
                m.interlocked = true;
            }
            ConsequenceAction::None => {}
        }
    }

    /// Clears the interlock after an instructor or scenario reset. Returns
    /// false when nothing was locked.
    pub fn reset_interlock(&mut self) -> bool {
        let m = &mut self.state.machine;
        if !m.interlocked {
            return false;
        }
        m.interlocked = false;
        if m.status == MachineStatus::EmergencyStop {
            m.status = MachineStatus::Off;
        }
        true
    }

    pub fn snapshot_value(&self) -> Value {
        serde_json::to_value(&self.state).expect("work-cell state always serializes")
    }

    /// Canonical JSON: sorted keys, no whitespace.
    pub fn snapshot(&self) -> String {
        self.snapshot_value().to_string()
    }

    pub fn from_snapshot(config: MachineConfig, snapshot: &str) -> Result<Self, serde_json::Error> {
        Ok(WorkCell {
            config,
            state: serde_json::from_str(snapshot)?,
        })
    }

    /// Read-only view handed to guards: the snapshot plus derived flags.
    pub fn guard_context(&self) -> Value {
        let mut v = self.snapshot_value();
        v["setup_complete"] = Value::Bool(self.setup_complete());
        v
    }
}
