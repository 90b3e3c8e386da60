use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::scenario::{error_path_length, ScenarioSpec};
use super::SessionError;
use crate::activity::{
    ActivityEngine, ActivityInstance, ActivityState, DispatchOutcome, Phase, SubEvent, SubEventKind,
    Trigger,
};
use crate::petri::{Payload, Scalar, Tick};
use crate::twin::{self, FeedItem, OperatorAction, Refusal, TwinError, TwinEvent, WorkCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Created,
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    /// Session lifecycle change. Input.
    Status,
    /// Accepted operator action. Input.
    Action,
    /// Refused operator action. Input.
    Refusal,
    /// Clock advance. Input.
    Advance,
    /// Interlock reset. Input.
    Reset,
    /// Fault injection; an input unless scripted by the scenario.
    Inject,
    Fault,
    SubEvent,
    Firing,
    History,
    Log,
    Command,
}

/// One line of the session event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub tick: Tick,
    pub kind: RecordKind,
    pub body: Value,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }

    /// True for records that replay feeds back into a session.
    pub fn is_input(&self) -> bool {
        match self.kind {
            RecordKind::Status
            | RecordKind::Action
            | RecordKind::Refusal
            | RecordKind::Advance
            | RecordKind::Reset => true,
            RecordKind::Inject => self.body.get("scripted") != Some(&Value::Bool(true)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBody {
    pub records: Vec<LogRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal: Option<Refusal>,
    pub status: SessionStatus,
    pub twin: Value,
}

/// What one committed command changed. Also the stream message format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDelta {
    pub tick: Tick,
    pub delta: DeltaBody,
    pub consequences: Vec<FeedItem>,
    pub activity_states: BTreeMap<String, ActivityState>,
}

/// Full, consistent view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub scenario_id: String,
    pub status: SessionStatus,
    pub tick: Tick,
    pub twin: Value,
    pub activities: BTreeMap<String, ActivityInstance>,
    pub consequences: Vec<FeedItem>,
    pub log_len: usize,
}

/// One training session: a work cell, the activity nets driven by it, and
/// the append-only event log. All mutation goes through `&mut self`, so a
/// session is a single-writer value; the manager serializes access.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    scenario: Arc<ScenarioSpec>,
    status: SessionStatus,
    twin: WorkCell,
    engine: ActivityEngine,
    log: Vec<LogRecord>,
    next_fault: usize,
    error_paths: BTreeMap<String, usize>,
}

impl Session {
    pub fn new(id: impl Into<String>, scenario: Arc<ScenarioSpec>) -> Result<Self, SessionError> {
        scenario.validate()?;
        let twin = WorkCell::new(scenario.machine.clone(), &scenario.initial)
            .map_err(|e| SessionError::ScenarioInvalid(vec![e.to_string()]))?;
        let engine = ActivityEngine::new(scenario.activities.clone(), twin::guards())?;
        let mut error_paths = BTreeMap::new();
        for a in &scenario.activities {
            if a.error_specs.is_empty() {
                continue;
            }
            let n = error_path_length(engine.net(), &a.activity_id).ok_or_else(|| {
                SessionError::ScenarioInvalid(vec![format!(
                    "activity `{}`: no error path in the composed net",
                    a.activity_id
                )])
            })?;
            error_paths.insert(a.activity_id.clone(), n);
        }
        let mut faults = scenario.faults.clone();
        faults.sort_by_key(|f| f.tick);
        let scenario = if faults != scenario.faults {
            let mut s = (*scenario).clone();
            s.faults = faults;
            Arc::new(s)
        } else {
            scenario
        };
        Ok(Session {
            id: id.into(),
            scenario,
            status: SessionStatus::Created,
            twin,
            engine,
            log: Vec::new(),
            next_fault: 0,
            error_paths,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scenario(&self) -> &Arc<ScenarioSpec> {
        &self.scenario
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn now(&self) -> Tick {
        self.twin.now()
    }

    pub fn twin(&self) -> &WorkCell {
        &self.twin
    }

    pub fn engine(&self) -> &ActivityEngine {
        &self.engine
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }

    /// Firing bound between an activity's error subevent and its first
    /// command, computed from the composed net at load time.
    pub fn error_path_length(&self, activity: &str) -> Option<usize> {
        self.error_paths.get(activity).copied()
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id.clone(),
            scenario_id: self.scenario.scenario_id.clone(),
            status: self.status,
            tick: self.now(),
            twin: self.twin.snapshot_value(),
            activities: self.engine.activity_states().clone(),
            consequences: self.twin.state().feed.clone(),
            log_len: self.log.len(),
        }
    }

    /// Canonical JSON of [`Session::snapshot`].
    pub fn snapshot_json(&self) -> String {
        serde_json::to_value(self.snapshot())
            .expect("snapshots always serialize")
            .to_string()
    }

    fn push(&mut self, kind: RecordKind, body: Value) -> LogRecord {
        let r = LogRecord {
            seq: self.log.len() as u64 + 1,
            tick: self.now(),
            kind,
            body,
        };
        self.log.push(r.clone());
        r
    }

    fn require_running(&self) -> Result<(), SessionError> {
        if self.status != SessionStatus::Running {
            return Err(SessionError::SessionNotRunning(self.status));
        }
        Ok(())
    }

    fn delta(&self, from: usize, refusal: Option<Refusal>, feed_from: usize) -> StateDelta {
        StateDelta {
            tick: self.now(),
            delta: DeltaBody {
                records: self.log[from..].to_vec(),
                refusal,
                status: self.status,
                twin: self.twin.snapshot_value(),
            },
            consequences: self.twin.state().feed[feed_from..].to_vec(),
            activity_states: self
                .engine
                .activity_states()
                .iter()
                .map(|(k, v)| (k.clone(), v.state))
                .collect(),
        }
    }

    fn set_status(&mut self, to: SessionStatus) -> Result<StateDelta, SessionError> {
        use SessionStatus::*;
        let ok = matches!(
            (self.status, to),
            (Created, Running) | (Running, Completed) | (Running, Aborted) | (Created, Aborted)
        );
        if !ok {
            return Err(SessionError::InvalidTransition { from: self.status, to });
        }
        let mark = self.log.len();
        let feed = self.twin.state().feed.len();
        self.status = to;
        self.push(RecordKind::Status, json!({ "status": to }));
        if to == Running {
            self.inject_due()?;
        }
        Ok(self.delta(mark, None, feed))
    }

    pub fn start(&mut self) -> Result<StateDelta, SessionError> {
        self.set_status(SessionStatus::Running)
    }

    pub fn finish(&mut self) -> Result<StateDelta, SessionError> {
        self.set_status(SessionStatus::Completed)
    }

    pub fn abort(&mut self) -> Result<StateDelta, SessionError> {
        self.set_status(SessionStatus::Aborted)
    }

    /// Applies an operator action and everything it sets off. A refused
    /// action is not an error: it is logged and reported in the delta.
    pub fn post_action(&mut self, action: OperatorAction) -> Result<StateDelta, SessionError> {
        self.require_running()?;
        let mark = self.log.len();
        let feed = self.twin.state().feed.len();
        match self.twin.apply_action(&action) {
            Ok(events) => {
                self.push(RecordKind::Action, json!({ "action": action }));
                self.process(events)?;
                Ok(self.delta(mark, None, feed))
            }
            Err(refusal) => {
                self.push(RecordKind::Refusal, json!({ "action": action, "refusal": refusal }));
                Ok(self.delta(mark, Some(refusal), feed))
            }
        }
    }

    /// Advances the clock tick by tick, injecting scripted faults as their
    /// tick is reached and checking activity timeouts.
    pub fn advance(&mut self, ticks: u64) -> Result<StateDelta, SessionError> {
        self.require_running()?;
        if ticks == 0 {
            return Err(SessionError::InvalidArgument("advance needs at least one tick".into()));
        }
        let mark = self.log.len();
        let feed = self.twin.state().feed.len();
        self.push(RecordKind::Advance, json!({ "ticks": ticks }));
        for _ in 0..ticks {
            let events = self.twin.tick(1).expect("one tick is a valid advance");
            self.process(events)?;
            let ctx = self.twin.guard_context();
            let out = self.engine.check_timeouts(self.now(), &ctx)?;
            self.record_outcome(out);
            self.inject_due()?;
        }
        Ok(self.delta(mark, None, feed))
    }

    /// Clears the interlock. Logged as an input so replay repeats it.
    pub fn reset_interlock(&mut self) -> Result<StateDelta, SessionError> {
        self.require_running()?;
        let mark = self.log.len();
        let feed = self.twin.state().feed.len();
        let cleared = self.twin.reset_interlock();
        self.push(RecordKind::Reset, json!({ "cleared": cleared }));
        Ok(self.delta(mark, None, feed))
    }

    /// Injects a fault outside the scenario script, e.g. from a trace.
    pub fn inject_fault(&mut self, fault: TwinError) -> Result<StateDelta, SessionError> {
        self.require_running()?;
        let mark = self.log.len();
        let feed = self.twin.state().feed.len();
        let refusal = self.twin.inject_fault(fault.clone()).err();
        self.push(
            RecordKind::Inject,
            json!({ "fault": fault, "scripted": false, "refusal": refusal }),
        );
        Ok(self.delta(mark, refusal, feed))
    }

    fn inject_due(&mut self) -> Result<(), SessionError> {
        while let Some(f) = self.scenario.faults.get(self.next_fault) {
            if f.tick > self.now() {
                break;
            }
            let f = f.clone();
            self.next_fault += 1;
            let refusal = self.twin.inject_fault(f.fault.clone()).err();
            self.push(
                RecordKind::Inject,
                json!({ "fault": f.fault, "scripted": true, "refusal": refusal }),
            );
        }
        Ok(())
    }

    /// Turns twin events into subevents and runs them through the nets.
    /// Per tick, starts and progress markers go first so that faults raised
    /// by the same action can be attributed to the activity it started;
    /// errors and ends then share one batch, where errors take precedence.
    fn process(&mut self, events: Vec<TwinEvent>) -> Result<(), SessionError> {
        let mut i = 0;
        while i < events.len() {
            let tick = events[i].tick();
            let n = events[i..].iter().take_while(|e| e.tick() == tick).count();
            let group = &events[i..i + n];
            i += n;

            let mut first = Vec::new();
            for e in group {
                if let TwinEvent::Signal { operation, phase: phase @ (Phase::Start | Phase::Execute), payload, .. } = e {
                    first.extend(self.subevents(*operation, *phase, tick, payload));
                }
            }
            self.dispatch(first)?;

            let mut second = Vec::new();
            for e in group {
                match e {
                    TwinEvent::Fault { error, .. } => {
                        let target = self.attribute(error);
                        self.push(
                            RecordKind::Fault,
                            json!({
                                "error": error,
                                "activity_id": target.as_ref().map(|(a, _)| a),
                                "error_id": target.as_ref().map(|(_, e)| e),
                            }),
                        );
                        if let Some((a, e)) = target {
                            let mut p = Payload::new();
                            p.insert("fault".into(), Scalar::Str(error.to_string()));
                            if let Some(s) = error.slot() {
                                p.insert("slot".into(), Scalar::Int(s as i64));
                            }
                            second.push(SubEvent::new(a, SubEventKind::ErrorDetected(e), tick).with_payload(p));
                        }
                    }
                    TwinEvent::Signal { operation, phase: Phase::End, payload, .. } => {
                        second.extend(self.subevents(*operation, Phase::End, tick, payload));
                    }
                    TwinEvent::Signal { .. } => {}
                }
            }
            self.dispatch(second)?;
        }
        Ok(())
    }

    fn subevents(&self, op: twin::Operation, phase: Phase, tick: Tick, payload: &Payload) -> Vec<SubEvent> {
        let kind = match phase {
            Phase::Start => SubEventKind::Start,
            Phase::Execute => SubEventKind::Execute,
            Phase::End => SubEventKind::End,
        };
        self.scenario
            .bound_to(op)
            .filter(|a| a.expects(phase))
            .map(|a| SubEvent::new(a.activity_id.clone(), kind.clone(), tick).with_payload(payload.clone()))
            .collect()
    }

    /// First active activity, in task-list order, with an error spec
    /// triggered by this twin error kind.
    fn attribute(&self, error: &TwinError) -> Option<(String, String)> {
        self.scenario.activities.iter().find_map(|a| {
            if self.engine.state_of(&a.activity_id) != Some(ActivityState::Active) {
                return None;
            }
            a.error_specs
                .iter()
                .find(|s| matches!(&s.trigger, Trigger::TwinError(k) if k == error.kind()))
                .map(|s| (a.activity_id.clone(), s.error_id.clone()))
        })
    }

    fn dispatch(&mut self, events: Vec<SubEvent>) -> Result<(), SessionError> {
        if events.is_empty() {
            return Ok(());
        }
        for ev in &events {
            self.push(RecordKind::SubEvent, serde_json::to_value(ev).expect("subevents serialize"));
        }
        let ctx = self.twin.guard_context();
        let out = self.engine.dispatch_batch(events, &ctx)?;
        self.record_outcome(out);
        Ok(())
    }

    fn record_outcome(&mut self, out: DispatchOutcome) {
        for f in &out.firings {
            self.push(RecordKind::Firing, serde_json::to_value(f).expect("firings serialize"));
        }
        for h in &out.history {
            self.push(RecordKind::History, serde_json::to_value(h).expect("history serializes"));
        }
        for l in &out.log {
            self.push(RecordKind::Log, serde_json::to_value(l).expect("log entries serialize"));
        }
        for c in &out.commands {
            self.twin.execute_command(c);
            let m = &self.twin.state().machine;
            let body = json!({
                "command": c,
                "machine_status": m.status,
                "interlocked": m.interlocked,
            });
            self.push(RecordKind::Command, body);
        }
    }
}
