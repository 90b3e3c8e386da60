use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::activity::{self, templates::ids, ActivityDefinition, ConsequenceAction, Trigger};
use crate::petri::{Net, Tick};
use crate::twin::{self, InitialState, MachineConfig, Operation, TwinError, WorkCell};

use super::SessionError;

/// Twin error kinds an error spec may trigger on.
pub const TWIN_ERROR_KINDS: [&str; 7] = [
    "WrongYarnType",
    "TensionBlocked",
    "EmptySlotConnected",
    "YarnBreak",
    "AirDurationTooShort",
    "SeamUnderNeedles",
    "StartWhileSetupIncomplete",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFault {
    pub tick: Tick,
    pub fault: TwinError,
}

/// Named predicate over the final session state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Criterion {
    AllActivitiesFinished,
    NoErrors,
    ActivityFinished(String),
    MinRegularRows(u64),
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::AllActivitiesFinished => f.write_str("all_activities_finished"),
            Criterion::NoErrors => f.write_str("no_errors"),
            Criterion::ActivityFinished(a) => write!(f, "activity_finished:{a}"),
            Criterion::MinRegularRows(n) => write!(f, "min_regular_rows:{n}"),
        }
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "all_activities_finished" => Ok(Criterion::AllActivitiesFinished),
            None if s == "no_errors" => Ok(Criterion::NoErrors),
            Some(("activity_finished", a)) if !a.is_empty() => Ok(Criterion::ActivityFinished(a.into())),
            Some(("min_regular_rows", n)) => n
                .parse()
                .map(Criterion::MinRegularRows)
                .map_err(|_| format!("bad row count in `{s}`")),
            _ => Err(format!("unknown success criterion `{s}`")),
        }
    }
}

impl Serialize for Criterion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Criterion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub title: String,
    #[serde(default)]
    pub machine: MachineConfig,
    pub initial: InitialState,
    /// Ordered task list.
    pub activities: Vec<ActivityDefinition>,
    /// Work-cell operation whose signals drive each activity.
    pub bindings: BTreeMap<String, Operation>,
    #[serde(default)]
    pub faults: Vec<ScriptedFault>,
    #[serde(default)]
    pub success_criteria: Vec<Criterion>,
    /// Improvement hints keyed by error id.
    #[serde(default)]
    pub hints: BTreeMap<String, String>,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let spec: ScenarioSpec = serde_json::from_str(text)
            .map_err(|e| SessionError::ScenarioInvalid(vec![format!("parse: {e}")]))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialize")
    }

    pub fn activity(&self, id: &str) -> Option<&ActivityDefinition> {
        self.activities.iter().find(|a| a.activity_id == id)
    }

    /// Activities bound to `op`, in task-list order.
    pub fn bound_to(&self, op: Operation) -> impl Iterator<Item = &ActivityDefinition> {
        self.activities
            .iter()
            .filter(move |a| self.bindings.get(&a.activity_id) == Some(&op))
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<(), SessionError> {
        let mut diags = Vec::new();
        if self.scenario_id.is_empty() {
            diags.push("scenario_id is empty".into());
        }
        if let Err(e) = activity::validate_definitions(&self.activities) {
            diags.push(e.to_string());
        }
        let cell = match WorkCell::new(self.machine.clone(), &self.initial) {
            Ok(c) => Some(c),
            Err(e) => {
                diags.push(format!("work cell: {e}"));
                None
            }
        };
        let known: BTreeSet<&str> = self.activities.iter().map(|a| a.activity_id.as_str()).collect();
        for a in &self.activities {
            if !self.bindings.contains_key(&a.activity_id) {
                diags.push(format!("activity `{}` has no binding", a.activity_id));
            }
        }
        for id in self.bindings.keys() {
            if !known.contains(id.as_str()) {
                diags.push(format!("binding for unknown activity `{id}`"));
            }
        }
        let guards = twin::guards();
        let mut error_ids = BTreeSet::new();
        for a in &self.activities {
            if let Some(g) = &a.guard_name {
                let family = ["payload_eq:", "ctx_eq:", "ctx_ne:"].iter().any(|p| g.starts_with(p));
                if !family && !guards.resolves(g) {
                    diags.push(format!("activity `{}`: unknown guard `{g}`", a.activity_id));
                }
            }
            for spec in &a.error_specs {
                error_ids.insert(spec.error_id.as_str());
                if let Trigger::TwinError(kind) = &spec.trigger {
                    if !TWIN_ERROR_KINDS.contains(&kind.as_str()) {
                        diags.push(format!(
                            "activity `{}`, error `{}`: unknown twin error `{kind}`",
                            a.activity_id, spec.error_id
                        ));
                    }
                }
                for action in &spec.consequence_actions {
                    if let (ConsequenceAction::ShowConsequence { anchor, .. }, Some(c)) = (action, &cell) {
                        if !c.has_element(anchor) {
                            diags.push(format!(
                                "activity `{}`, error `{}`: unknown anchor `{anchor}`",
                                a.activity_id, spec.error_id
                            ));
                        }
                    }
                }
            }
        }
        if let Some(c) = &cell {
            let n = c.config().slot_count;
            for f in &self.faults {
                if let Some(slot) = f.fault.slot() {
                    if slot >= n {
                        diags.push(format!("fault at tick {}: slot {slot} of a {n}-slot creel", f.tick));
                    }
                }
            }
        }
        for c in &self.success_criteria {
            if let Criterion::ActivityFinished(a) = c {
                if !known.contains(a.as_str()) {
                    diags.push(format!("criterion `{c}` names an unknown activity"));
                }
            }
        }
        for e in self.hints.keys() {
            if !error_ids.contains(e.as_str()) {
                diags.push(format!("hint for unknown error `{e}`"));
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(SessionError::ScenarioInvalid(diags))
        }
    }
}

/// Transitions on the way from an activity's error inbox to its command
/// place and to its Interrupted place, shortest paths joined. This bounds
/// the firings between an injected error and its first command.
pub fn error_path_length(net: &Net, activity: &str) -> Option<usize> {
    let from = ids::exe_in(activity, "Error");
    let to_cmd = shortest_path(net, &from, &ids::commands(activity))?;
    let to_int = shortest_path(net, &from, &ids::interrupted(activity))?;
    let all: BTreeSet<usize> = to_cmd.into_iter().chain(to_int).collect();
    Some(all.len())
}

/// Transition indices on a shortest place-to-place path, following fusion
/// aliases as the same place.
fn shortest_path(net: &Net, from: &str, to: &str) -> Option<Vec<usize>> {
    let start = net.storage_of(net.place_index(from)?);
    let goal = net.storage_of(net.place_index(to)?);
    let mut prev: BTreeMap<usize, Option<(usize, usize)>> = BTreeMap::from([(start, None)]);
    let mut queue = VecDeque::from([start]);
    while let Some(slot) = queue.pop_front() {
        if slot == goal {
            let mut path = Vec::new();
            let mut at = slot;
            while let Some(Some((p, t))) = prev.get(&at) {
                path.push(*t);
                at = *p;
            }
            path.reverse();
            return Some(path);
        }
        for (ti, t) in net.transitions().iter().enumerate() {
            if !t.input_places().iter().any(|&p| net.storage_of(p) == slot) {
                continue;
            }
            for &p in t.output_places() {
                let s = net.storage_of(p);
                if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(s) {
                    e.insert(Some((slot, ti)));
                    queue.push_back(s);
                }
            }
        }
    }
    None
}
