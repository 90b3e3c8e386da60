use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::definition::{
    ActivityDefinition, ConsequenceAction, Phase, Severity, SubEvent, SubEventKind, Trigger,
};
use super::templates::{self, ids, ABS_HISTORY, ABS_LOG};
use super::ActivityError;
use crate::petri::{
    run_to_quiescence_mut, Env, FiringRecord, GuardRegistry, Marking, MarkingView, Net, Payload,
    Scalar, Tick, Token,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityState {
    Pending,
    Active,
    Finished,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityInstance {
    pub instance_id: String,
    pub activity_id: String,
    pub state: ActivityState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_at: Option<Tick>,
    /// Active time measured by the execution layer's timer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ticks: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub tick: Tick,
    pub instance_id: String,
    pub activity_id: String,
    pub error_id: String,
    pub severity: Severity,
    pub description: String,
    /// Marking version at the time of the error. Versions of dispatches
    /// that interrupted an activity have a full snapshot stored.
    pub snapshot_ref: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogKind {
    Started,
    Progressed,
    Finished,
    Interrupted,
    Refused,
    Ignored,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub tick: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity_id: Option<String>,
    pub kind: LogKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsequenceCommand {
    pub tick: Tick,
    pub activity_id: String,
    pub error_id: String,
    pub severity: Severity,
    pub action: ConsequenceAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub tick: Tick,
    pub activity_id: String,
    pub from: ActivityState,
    pub to: ActivityState,
}

/// Everything one dispatch produced, in production order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchOutcome {
    pub firings: Vec<FiringRecord>,
    pub changes: Vec<StateChange>,
    pub history: Vec<HistoryEntry>,
    pub log: Vec<LogEntry>,
    pub commands: Vec<ConsequenceCommand>,
}

impl DispatchOutcome {
    fn absorb(&mut self, other: DispatchOutcome) {
        self.firings.extend(other.firings);
        self.changes.extend(other.changes);
        self.history.extend(other.history);
        self.log.extend(other.log);
        self.commands.extend(other.commands);
    }
}

const MAX_STEPS: usize = 10_000;

/// Runs the composed activity net for a task list. Subevents are injected
/// into the execution layer, the net runs to quiescence at the event tick,
/// and the results are read back out of the History, Log and command
/// places, which are emptied after every dispatch.
#[derive(Debug, Clone)]
pub struct ActivityEngine {
    defs: Vec<ActivityDefinition>,
    net: Arc<Net>,
    guards: GuardRegistry,
    marking: Marking,
    now: Tick,
    seq: u64,
    version: u64,
    instances: BTreeMap<String, ActivityInstance>,
    history: Vec<HistoryEntry>,
    log: Vec<LogEntry>,
    snapshots: BTreeMap<u64, MarkingView>,
    timed_out: BTreeSet<String>,
}

impl ActivityEngine {
    pub fn new(defs: Vec<ActivityDefinition>, guards: GuardRegistry) -> Result<Self, ActivityError> {
        let net = templates::demonstrator_net(&defs)?;
        let marking = Marking::initial(&net);
        let instances = defs
            .iter()
            .map(|d| {
                let inst = ActivityInstance {
                    instance_id: format!("{}#1", d.activity_id),
                    activity_id: d.activity_id.clone(),
                    state: ActivityState::Pending,
                    started_at: None,
                    ended_at: None,
                    duration_ticks: None,
                    errors: Vec::new(),
                };
                (d.activity_id.clone(), inst)
            })
            .collect();
        Ok(ActivityEngine {
            defs,
            net: Arc::new(net),
            guards,
            marking,
            now: 0,
            seq: 0,
            version: 0,
            instances,
            history: Vec::new(),
            log: Vec::new(),
            snapshots: BTreeMap::new(),
            timed_out: BTreeSet::new(),
        })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn marking(&self) -> &Marking {
        &self.marking
    }

    pub fn definitions(&self) -> &[ActivityDefinition] {
        &self.defs
    }

    pub fn definition(&self, activity: &str) -> Option<&ActivityDefinition> {
        self.defs.iter().find(|d| d.activity_id == activity)
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn snapshot(&self, version: u64) -> Option<&MarkingView> {
        self.snapshots.get(&version)
    }

    pub fn activity_states(&self) -> &BTreeMap<String, ActivityInstance> {
        &self.instances
    }

    pub fn state_of(&self, activity: &str) -> Option<ActivityState> {
        self.instances.get(activity).map(|i| i.state)
    }

    /// Lifecycle states read directly from the lifecycle places.
    pub fn states_from_marking(&self) -> BTreeMap<String, ActivityState> {
        let count = |p: String| self.marking.count(&self.net, &p);
        self.defs
            .iter()
            .map(|d| {
                let a = d.activity_id.as_str();
                let s = if count(ids::active(a)) > 0 {
                    ActivityState::Active
                } else if count(ids::finished(a)) > 0 {
                    ActivityState::Finished
                } else if count(ids::interrupted(a)) > 0 {
                    ActivityState::Interrupted
                } else {
                    ActivityState::Pending
                };
                (d.activity_id.clone(), s)
            })
            .collect()
    }

    pub fn dispatch(&mut self, event: SubEvent, ctx: &Value) -> Result<DispatchOutcome, ActivityError> {
        self.dispatch_batch(vec![event], ctx)
    }

    /// Dispatches events in tick order; events sharing a tick are injected
    /// together before the net runs, so an error raised at the same tick as
    /// an End takes precedence.
    pub fn dispatch_batch(
        &mut self,
        mut events: Vec<SubEvent>,
        ctx: &Value,
    ) -> Result<DispatchOutcome, ActivityError> {
        for ev in &events {
            if self.definition(&ev.activity_id).is_none() {
                return Err(ActivityError::UnknownActivity(ev.activity_id.clone()));
            }
            if ev.tick < self.now {
                return Err(ActivityError::StaleTick {
                    tick: ev.tick,
                    now: self.now,
                });
            }
        }
        events.sort_by_key(|e| e.tick);
        let mut outcome = DispatchOutcome::default();
        let mut rest = events.as_slice();
        while let Some(first) = rest.first() {
            let n = rest.iter().take_while(|e| e.tick == first.tick).count();
            let (group, tail) = rest.split_at(n);
            outcome.absorb(self.dispatch_tick(group, ctx)?);
            rest = tail;
        }
        Ok(outcome)
    }

    /// Raises timeout errors for activities active for at least their
    /// `timeout_ticks`. Each activity times out once.
    pub fn check_timeouts(&mut self, now: Tick, ctx: &Value) -> Result<DispatchOutcome, ActivityError> {
        let mut events = Vec::new();
        let mut outcome = DispatchOutcome::default();
        for d in &self.defs {
            let (Some(limit), Some(inst)) = (d.timeout_ticks, self.instances.get(&d.activity_id)) else {
                continue;
            };
            let Some(started) = inst.started_at else { continue };
            if inst.state != ActivityState::Active
                || now < started + limit
                || self.timed_out.contains(&d.activity_id)
            {
                continue;
            }
            self.timed_out.insert(d.activity_id.clone());
            match d.error_specs.iter().find(|s| s.trigger == Trigger::Timeout) {
                Some(spec) => events.push(SubEvent::new(
                    d.activity_id.clone(),
                    SubEventKind::ErrorDetected(spec.error_id.clone()),
                    now,
                )),
                None => {
                    self.seq += 1;
                    let entry = LogEntry {
                        seq: self.seq,
                        tick: now,
                        activity_id: Some(d.activity_id.clone()),
                        kind: LogKind::TimedOut,
                        message: format!("{} exceeded {limit} ticks", d.activity_id),
                    };
                    self.log.push(entry.clone());
                    outcome.log.push(entry);
                }
            }
        }
        if !events.is_empty() {
            outcome.absorb(self.dispatch_batch(events, ctx)?);
        }
        Ok(outcome)
    }

    fn push_log(&mut self, out: &mut DispatchOutcome, tick: Tick, activity: Option<&str>, kind: LogKind, message: String) {
        self.seq += 1;
        let entry = LogEntry {
            seq: self.seq,
            tick,
            activity_id: activity.map(str::to_owned),
            kind,
            message,
        };
        self.log.push(entry.clone());
        out.log.push(entry);
    }

    /// Measured active time so far, from the running timer token.
    fn running_duration(&self, activity: &str, now: Tick) -> Option<u64> {
        self.marking
            .tokens(&self.net, &ids::timer(activity))
            .ok()?
            .front()
            .map(|t| now - t.created_at())
    }

    fn dispatch_tick(&mut self, group: &[SubEvent], ctx: &Value) -> Result<DispatchOutcome, ActivityError> {
        let tick = group[0].tick;
        self.now = tick;
        self.version += 1;
        let mut out = DispatchOutcome::default();

        // Payload thresholds turn an End into an error at the same tick.
        let mut events: Vec<SubEvent> = Vec::new();
        for ev in group {
            events.push(ev.clone());
            let def = self.definition(&ev.activity_id).expect("checked by caller");
            if ev.kind != SubEventKind::End {
                continue;
            }
            for spec in &def.error_specs {
                let Trigger::PayloadBelow { subevent: Phase::End, key, threshold } = &spec.trigger else {
                    continue;
                };
                let value = ev.payload.get(key).and_then(Scalar::as_int).or_else(|| {
                    (key == "duration_ticks")
                        .then(|| self.running_duration(&ev.activity_id, tick))
                        .flatten()
                        .map(|d| d as i64)
                });
                if value.is_some_and(|v| v < *threshold) {
                    events.push(SubEvent::new(
                        ev.activity_id.clone(),
                        SubEventKind::ErrorDetected(spec.error_id.clone()),
                        tick,
                    ));
                }
            }
        }

        for ev in &events {
            let a = ev.activity_id.as_str();
            let def = self.definition(a).expect("checked by caller");
            let (role, extra) = match &ev.kind {
                SubEventKind::Start => ("Start", None),
                SubEventKind::Execute if def.expects(Phase::Execute) => ("Execute", None),
                SubEventKind::Execute => {
                    self.push_log(&mut out, tick, Some(a), LogKind::Ignored, format!("{a}: Execute is not an expected subevent"));
                    continue;
                }
                SubEventKind::End => ("End", None),
                SubEventKind::ErrorDetected(e) if def.error_spec(e).is_some() => ("Error", Some(e.clone())),
                SubEventKind::ErrorDetected(e) => {
                    self.push_log(&mut out, tick, Some(a), LogKind::Ignored, format!("{a}: no error spec `{e}`"));
                    continue;
                }
            };
            let mut p: Payload = ev.payload.clone();
            p.insert("activity".into(), a.into());
            p.insert("kind".into(), role.into());
            p.insert("tick".into(), Scalar::Int(tick as i64));
            if let Some(e) = extra {
                p.insert("error_id".into(), e.into());
            }
            let token = self.marking.mint(p, tick, tick)?;
            self.marking.inject_mut(&self.net, &ids::exe_in(a, role), token)?;
        }

        let env = Env::new(&self.guards, ctx);
        let firings = run_to_quiescence_mut(&self.net, &mut self.marking, tick, MAX_STEPS, &env)?;

        let mut interrupted = false;
        for f in &firings {
            let parts: Vec<&str> = f.transition_id.splitn(3, '.').collect();
            let [layer, a, what] = parts[..] else { continue };
            let to = match (layer, what) {
                ("abs", "start") => ActivityState::Active,
                ("abs", "finish") => ActivityState::Finished,
                ("abs", "interrupt") => {
                    interrupted = true;
                    ActivityState::Interrupted
                }
                ("abs", "execute") => {
                    self.push_log(&mut out, tick, Some(a), LogKind::Progressed, format!("{a} progressed"));
                    continue;
                }
                _ => continue,
            };
            let duration = (to == ActivityState::Finished)
                .then(|| self.marking.tokens(&self.net, &ids::duration(a)).ok()?.back()?.get("duration_ticks")?.as_int())
                .flatten();
            let inst = self.instances.get_mut(a).expect("one instance per activity");
            let from = inst.state;
            inst.state = to;
            match to {
                ActivityState::Active => inst.started_at = Some(tick),
                _ => {
                    inst.ended_at = Some(tick);
                    inst.duration_ticks = duration.map(|d| d as u64).or_else(|| inst.started_at.map(|s| tick - s));
                }
            }
            out.changes.push(StateChange {
                tick,
                activity_id: a.to_owned(),
                from,
                to,
            });
            if to == ActivityState::Active {
                self.push_log(&mut out, tick, Some(a), LogKind::Started, format!("{a} started"));
            }
        }
        if interrupted {
            self.snapshots.insert(self.version, self.marking.view(&self.net));
        }
        out.firings = firings;

        for tok in self.marking.drain(&self.net, ABS_HISTORY)? {
            let a = str_of(&tok, "activity");
            let e = str_of(&tok, "error_id");
            let spec = self.definition(&a).and_then(|d| d.error_spec(&e));
            let severity = spec.map_or(Severity::Info, |s| s.severity);
            let description = spec
                .and_then(|s| s.description.clone())
                .unwrap_or_else(|| format!("{e} during {a}"));
            self.seq += 1;
            let entry = HistoryEntry {
                seq: self.seq,
                tick,
                instance_id: format!("{a}#1"),
                activity_id: a.clone(),
                error_id: e.clone(),
                severity,
                description,
                snapshot_ref: self.version,
            };
            if let Some(inst) = self.instances.get_mut(&a) {
                inst.errors.push(entry.clone());
            }
            self.history.push(entry.clone());
            out.history.push(entry);
        }

        for tok in self.marking.drain(&self.net, ABS_LOG)? {
            let a = str_of(&tok, "activity");
            let (kind, verb) = match str_of(&tok, "event").as_str() {
                "finished" => (LogKind::Finished, "finished"),
                _ => (LogKind::Interrupted, "interrupted"),
            };
            self.push_log(&mut out, tick, Some(&a), kind, format!("{a} {verb}"));
        }

        let mut commands: Vec<Token> = Vec::new();
        for d in &self.defs {
            commands.extend(self.marking.drain(&self.net, &ids::commands(&d.activity_id))?);
        }
        commands.sort_by_key(Token::id);
        out.commands = commands.iter().map(|t| command_of(t, tick)).collect();

        let defs = self.defs.clone();
        for d in &defs {
            self.drain_leftovers(&mut out, d, tick)?;
        }
        Ok(out)
    }

    /// Empties the subevent inboxes and explains what was not consumed.
    fn drain_leftovers(&mut self, out: &mut DispatchOutcome, d: &ActivityDefinition, tick: Tick) -> Result<(), ActivityError> {
        let a = d.activity_id.as_str();
        let state = self.instances[a].state;
        let started = self.marking.drain(&self.net, &ids::exe_in(a, "Start"))?;
        if !started.is_empty() {
            let (kind, msg) = match (state, &d.guard_name) {
                (ActivityState::Pending, Some(g)) => (LogKind::Refused, format!("{a}: start refused, guard `{g}` not satisfied")),
                (ActivityState::Pending, None) => (LogKind::Refused, format!("{a}: start refused")),
                (s, _) => (LogKind::Ignored, format!("{a}: Start ignored while {s:?}")),
            };
            self.push_log(out, tick, Some(a), kind, msg);
        }
        let mut roles = vec!["End", "Error"];
        if d.expects(Phase::Execute) {
            roles.insert(0, "Execute");
        }
        for role in roles {
            if !self.marking.drain(&self.net, &ids::exe_in(a, role))?.is_empty() {
                self.push_log(out, tick, Some(a), LogKind::Ignored, format!("{a}: {role} ignored while {state:?}"));
            }
        }
        for role in ["End", "Error"] {
            self.marking.drain(&self.net, &ids::exe_signal(a, role))?;
        }
        Ok(())
    }
}

fn str_of(t: &Token, key: &str) -> String {
    t.get(key).map(ToString::to_string).unwrap_or_default()
}

fn command_of(t: &Token, tick: Tick) -> ConsequenceCommand {
    let action = match str_of(t, "action").as_str() {
        "StopMachine" => ConsequenceAction::StopMachine,
        "LockControls" => ConsequenceAction::LockControls,
        "ShowConsequence" => ConsequenceAction::ShowConsequence {
            text: str_of(t, "text"),
            anchor: str_of(t, "anchor"),
        },
        _ => ConsequenceAction::None,
    };
    let severity = match str_of(t, "severity").as_str() {
        "Critical" => Severity::Critical,
        "Warning" => Severity::Warning,
        _ => Severity::Info,
    };
    ConsequenceCommand {
        tick,
        activity_id: str_of(t, "activity"),
        error_id: str_of(t, "error_id"),
        severity,
        action,
    }
}
