use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scenario::{Criterion, ScenarioSpec};
use super::session::{LogRecord, RecordKind, SessionStatus};
use super::trace::replay;
use super::SessionError;
use crate::activity::{ActivityState, ConsequenceAction, Severity, Trigger};
use crate::petri::Tick;
use crate::twin::RowQuality;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error_id: String,
    pub tick: Tick,
    pub severity: Severity,
    /// What raised the error: the twin fault, or the trigger condition.
    pub cause: String,
    pub description: String,
    pub consequences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityOutcome {
    pub activity_id: String,
    pub name: String,
    pub state: ActivityState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ticks: Option<u64>,
    pub errors: Vec<ErrorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: Criterion,
    pub met: bool,
}

/// An error on the session timeline with the place counts of the marking
/// stored for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub tick: Tick,
    pub activity_id: String,
    pub error_id: String,
    pub snapshot_ref: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub marking: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Debrief {
    pub session_id: String,
    pub scenario_id: String,
    pub status: SessionStatus,
    pub final_tick: Tick,
    pub success: bool,
    pub criteria: Vec<CriterionResult>,
    pub activities: Vec<ActivityOutcome>,
    pub timeline: Vec<TimelineEntry>,
    pub rows_total: u64,
    pub rows_regular: u64,
    pub refusals: usize,
}

/// Debrief of an ended session, computed from its log alone.
pub fn debrief(
    session_id: &str,
    scenario: Arc<ScenarioSpec>,
    log: &[LogRecord],
) -> Result<Debrief, SessionError> {
    let s = replay(session_id, scenario.clone(), log)?;
    if !matches!(s.status(), SessionStatus::Completed | SessionStatus::Aborted) {
        return Err(SessionError::SessionStillRunning(s.status()));
    }
    let engine = s.engine();
    let rows = &s.twin().state().product.rows;
    let rows_total = rows.len() as u64;
    let rows_regular = rows.iter().filter(|r| r.quality == RowQuality::Regular).count() as u64;

    let causes: BTreeMap<(Tick, &str, &str), String> = s
        .log()
        .iter()
        .filter(|r| r.kind == RecordKind::Fault)
        .filter_map(|r| {
            let a = r.body.get("activity_id")?.as_str()?;
            let e = r.body.get("error_id")?.as_str()?;
            let fault = r.body.get("error")?;
            Some(((r.tick, a, e), fault_text(fault)))
        })
        .collect();

    let mut activities = Vec::new();
    let mut timeline = Vec::new();
    for def in &scenario.activities {
        let inst = &engine.activity_states()[&def.activity_id];
        let mut errors = Vec::new();
        for h in &inst.errors {
            let spec = def.error_spec(&h.error_id);
            let cause = causes
                .get(&(h.tick, h.activity_id.as_str(), h.error_id.as_str()))
                .cloned()
                .unwrap_or_else(|| match spec.map(|s| &s.trigger) {
                    Some(Trigger::Timeout) => "timeout".into(),
                    Some(Trigger::PayloadBelow { subevent, key, threshold }) => {
                        format!("{key} below {threshold} at {}", subevent.as_str())
                    }
                    Some(Trigger::TwinError(k)) => k.clone(),
                    None => "unknown".into(),
                });
            let consequences = spec
                .map(|s| {
                    s.consequence_actions
                        .iter()
                        .filter_map(|a| match a {
                            ConsequenceAction::ShowConsequence { text, .. } => Some(text.clone()),
                            _ => None,
                        })
                        .collect()
                })
                .unwrap_or_default();
            errors.push(ErrorReport {
                error_id: h.error_id.clone(),
                tick: h.tick,
                severity: h.severity,
                cause,
                description: h.description.clone(),
                consequences,
                hint: scenario.hints.get(&h.error_id).cloned(),
            });
            timeline.push(TimelineEntry {
                tick: h.tick,
                activity_id: h.activity_id.clone(),
                error_id: h.error_id.clone(),
                snapshot_ref: h.snapshot_ref,
                marking: engine.snapshot(h.snapshot_ref).map(|m| m.counts()).unwrap_or_default(),
            });
        }
        activities.push(ActivityOutcome {
            activity_id: def.activity_id.clone(),
            name: def.name.clone(),
            state: inst.state,
            duration_ticks: inst.duration_ticks,
            errors,
        });
    }
    timeline.sort_by_key(|a| (a.tick, a.snapshot_ref));

    let error_count: usize = activities.iter().map(|a| a.errors.len()).sum();
    let criteria: Vec<CriterionResult> = scenario
        .success_criteria
        .iter()
        .map(|c| {
            let met = match c {
                Criterion::AllActivitiesFinished => {
                    activities.iter().all(|a| a.state == ActivityState::Finished)
                }
                Criterion::NoErrors => error_count == 0,
                Criterion::ActivityFinished(id) => activities
                    .iter()
                    .any(|a| &a.activity_id == id && a.state == ActivityState::Finished),
                Criterion::MinRegularRows(n) => rows_regular >= *n,
            };
            CriterionResult { criterion: c.clone(), met }
        })
        .collect();
    let success = s.status() == SessionStatus::Completed && criteria.iter().all(|c| c.met);

    Ok(Debrief {
        session_id: session_id.to_owned(),
        scenario_id: scenario.scenario_id.clone(),
        status: s.status(),
        final_tick: s.now(),
        success,
        criteria,
        activities,
        timeline,
        rows_total,
        rows_regular,
        refusals: log.iter().filter(|r| r.kind == RecordKind::Refusal).count(),
    })
}

fn fault_text(v: &serde_json::Value) -> String {
    serde_json::from_value::<crate::twin::TwinError>(v.clone())
        .map(|e| e.to_string())
        .unwrap_or_else(|_| v.to_string())
}
