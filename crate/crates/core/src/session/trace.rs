use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::debrief::{debrief, Debrief};
use super::scenario::ScenarioSpec;
use super::session::{LogRecord, RecordKind, Session, SessionStatus};
use super::SessionError;
use crate::petri::Tick;
use crate::twin::{OperatorAction, TwinError};

/// One line of an operator trace: `{"tick", "kind", "body"}`. The clock is
/// advanced to `tick` before the step is applied, so ticks must not
/// decrease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub tick: Tick,
    #[serde(flatten)]
    pub step: TraceStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body")]
pub enum TraceStep {
    Action(OperatorAction),
    Fault(TwinError),
    /// Only moves the clock.
    Advance,
    /// Clears the interlock, as an instructor would.
    Reset,
}

/// Parses JSONL, skipping blank lines and `#` comments.
pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>, SessionError> {
    let mut out: Vec<TraceLine> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: TraceLine = serde_json::from_str(line).map_err(|e| SessionError::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if t.tick < prev.tick {
                return Err(SessionError::Trace {
                    line: i + 1,
                    message: format!("tick {} goes back from {}", t.tick, prev.tick),
                });
            }
        }
        out.push(t);
    }
    Ok(out)
}

/// Parses a session log. Lines that are not log records, such as a
/// metadata header, are skipped.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(_) if line.trim().is_empty() => continue,
            Err(e) => {
                return Err(SessionError::Trace {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        };
        if v.get("seq").is_none() {
            continue;
        }
        out.push(serde_json::from_value(v).map_err(|e| SessionError::Trace {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Rebuilds a session by re-applying the input records of `records`.
/// Derived records are regenerated and must match the given ones. A log
/// cut short inside the output of an input replays to a longer log of
/// which it is a prefix.
pub fn replay(
    id: &str,
    scenario: Arc<ScenarioSpec>,
    records: &[LogRecord],
) -> Result<Session, SessionError> {
    let mut s = Session::new(id, scenario)?;
    for r in records.iter().filter(|r| r.is_input()) {
        if r.seq != s.log().len() as u64 + 1 {
            return Err(SessionError::ReplayDiverged { seq: r.seq });
        }
        let bad = |_| SessionError::ReplayDiverged { seq: r.seq };
        match r.kind {
            RecordKind::Status => {
                let to: SessionStatus =
                    serde_json::from_value(r.body["status"].clone()).map_err(bad)?;
                match to {
                    SessionStatus::Running => s.start()?,
                    SessionStatus::Completed => s.finish()?,
                    SessionStatus::Aborted => s.abort()?,
                    SessionStatus::Created => return Err(SessionError::ReplayDiverged { seq: r.seq }),
                };
            }
            RecordKind::Action | RecordKind::Refusal => {
                let a: OperatorAction =
                    serde_json::from_value(r.body["action"].clone()).map_err(bad)?;
                s.post_action(a)?;
            }
            RecordKind::Advance => {
                let n = r.body["ticks"].as_u64().ok_or(SessionError::ReplayDiverged { seq: r.seq })?;
                s.advance(n)?;
            }
            RecordKind::Reset => {
                s.reset_interlock()?;
            }
            RecordKind::Inject => {
                let f: TwinError = serde_json::from_value(r.body["fault"].clone()).map_err(bad)?;
                s.inject_fault(f)?;
            }
            _ => unreachable!("filtered to input records"),
        }
    }
    let n = s.log().len().min(records.len());
    if let Some(i) = (0..n).find(|&i| s.log()[i] != records[i]) {
        return Err(SessionError::ReplayDiverged { seq: records[i].seq });
    }
    if s.log().len() < records.len() {
        return Err(SessionError::ReplayDiverged { seq: n as u64 + 1 });
    }
    Ok(s)
}

/// Output of a headless run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub session: Session,
    pub debrief: Debrief,
}

impl Simulation {
    pub fn log_jsonl(&self) -> String {
        self.session.log_jsonl()
    }

    pub fn snapshot_json(&self) -> String {
        self.session.snapshot_json()
    }

    pub fn debrief_json(&self) -> String {
        serde_json::to_string_pretty(&self.debrief).expect("debriefs always serialize")
    }
}

/// Applies trace lines to a running session. On error the session keeps
/// everything applied so far.
pub fn run_trace(s: &mut Session, trace: &[TraceLine]) -> Result<(), SessionError> {
    for (i, line) in trace.iter().enumerate() {
        if line.tick < s.now() {
            return Err(SessionError::Trace {
                line: i + 1,
                message: format!("tick {} is behind the clock at {}", line.tick, s.now()),
            });
        }
        if line.tick > s.now() {
            s.advance(line.tick - s.now())?;
        }
        match &line.step {
            TraceStep::Action(action) => {
                s.post_action(action.clone())?;
            }
            TraceStep::Fault(fault) => {
                s.inject_fault(fault.clone())?;
            }
            TraceStep::Reset => {
                s.reset_interlock()?;
            }
            TraceStep::Advance => {}
        }
    }
    Ok(())
}

/// Runs a trace against a scenario without a server: start, apply every
/// line, finish.
pub fn simulate(scenario: Arc<ScenarioSpec>, trace: &[TraceLine]) -> Result<Simulation, SessionError> {
    let mut s = Session::new("sim", scenario)?;
    s.start()?;
    run_trace(&mut s, trace)?;
    s.finish()?;
    let d = debrief(s.id(), s.scenario().clone(), s.log())?;
    Ok(Simulation { session: s, debrief: d })
}
