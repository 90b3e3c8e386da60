//! Net templates instantiated per activity definition, plus composition.
//!
//! Place ids are namespaced by layer and activity (`abs.<a>.*`, `exe.<a>.*`,
//! `err.<a>.*`). Layers meet only through fusion groups named
//! `fuse.<a>.<role>` and the shared `fuse.history`.

use std::collections::{BTreeMap, BTreeSet};

use super::definition::{ActivityDefinition, ConsequenceAction, Phase};
use super::ActivityError;
use crate::analysis::TerminalPredicate;
use crate::petri::{
    payload, ArcDefinition, Net, NetDefinition, Payload, PayloadRule, PlaceDefinition, Scalar,
    TransitionDefinition,
};

pub const HISTORY_GROUP: &str = "fuse.history";
pub const ABS_HISTORY: &str = "abs.history";
pub const ABS_LOG: &str = "abs.log";

pub const PRIO_START: i64 = 0;
pub const PRIO_EXECUTE: i64 = 1;
pub const PRIO_END: i64 = 5;
pub const PRIO_FINISH: i64 = 5;
pub const PRIO_INTERRUPT: i64 = 10;
pub const PRIO_DETECT: i64 = 15;
pub const PRIO_ENTRY: i64 = 20;
pub const PRIO_ARM: i64 = 30;

pub fn group(a: &str, role: &str) -> String {
    format!("fuse.{a}.{role}")
}

/// Place ids of one activity across all three layers.
pub mod ids {
    pub fn pool(a: &str) -> String {
        format!("abs.{a}.pool")
    }
    pub fn active(a: &str) -> String {
        format!("abs.{a}.active")
    }
    pub fn finished(a: &str) -> String {
        format!("abs.{a}.finished")
    }
    pub fn interrupted(a: &str) -> String {
        format!("abs.{a}.interrupted")
    }
    pub fn abs_signal(a: &str, role: &str) -> String {
        format!("abs.{a}.sig.{role}")
    }
    pub fn exe_in(a: &str, role: &str) -> String {
        format!("exe.{a}.in.{role}")
    }
    pub fn exe_signal(a: &str, role: &str) -> String {
        format!("exe.{a}.sig.{role}")
    }
    pub fn idle(a: &str) -> String {
        format!("exe.{a}.idle")
    }
    pub fn timer(a: &str) -> String {
        format!("exe.{a}.timer")
    }
    pub fn duration(a: &str) -> String {
        format!("exe.{a}.duration")
    }
    pub fn armed(a: &str) -> String {
        format!("err.{a}.armed")
    }
    pub fn handled(a: &str) -> String {
        format!("err.{a}.handled")
    }
    pub fn commands(a: &str) -> String {
        format!("err.{a}.commands")
    }
}

fn place(id: String, name: String) -> PlaceDefinition {
    PlaceDefinition {
        id,
        name,
        capacity: None,
        fusion_group: None,
        initial: Vec::new(),
    }
}

fn fused(id: String, name: String, g: String) -> PlaceDefinition {
    PlaceDefinition {
        fusion_group: Some(g),
        ..place(id, name)
    }
}

fn arc(place: &str) -> ArcDefinition {
    ArcDefinition {
        place: place.to_owned(),
        weight: 1,
        payload_rule: None,
    }
}

fn out(place: &str, rule: PayloadRule) -> ArcDefinition {
    ArcDefinition {
        payload_rule: Some(rule),
        ..arc(place)
    }
}

fn transition(
    id: String,
    name: String,
    priority: i64,
    inputs: Vec<ArcDefinition>,
    outputs: Vec<ArcDefinition>,
) -> TransitionDefinition {
    TransitionDefinition {
        id,
        name,
        guard: None,
        delay: None,
        priority: (priority != 0).then_some(priority),
        inputs,
        outputs,
    }
}

fn activity_token(a: &str) -> Payload {
    payload([("activity", a)])
}

/// Lifecycle layer for all activities: Pool, Active, Finished, Interrupted,
/// with shared History and Log places.
pub fn abstract_net(defs: &[ActivityDefinition]) -> Result<Net, ActivityError> {
    super::validate_definitions(defs)?;
    let mut places = Vec::new();
    let mut transitions = Vec::new();
    for d in defs {
        let a = d.activity_id.as_str();
        places.push(PlaceDefinition {
            initial: vec![activity_token(a)],
            ..place(ids::pool(a), format!("{} waiting", d.name))
        });
        places.push(PlaceDefinition {
            capacity: Some(1),
            ..fused(ids::active(a), format!("{} active", d.name), group(a, "Active"))
        });
        places.push(place(ids::finished(a), format!("{} finished", d.name)));
        places.push(place(ids::interrupted(a), format!("{} interrupted", d.name)));
        let mut roles = vec!["Start"];
        if d.expects(Phase::Execute) {
            roles.push("Execute");
        }
        roles.extend(["End", "Error"]);
        for role in roles {
            places.push(fused(
                ids::abs_signal(a, role),
                format!("{} {role} signal", d.name),
                group(a, role),
            ));
        }

        let active = ids::active(a);
        transitions.push(TransitionDefinition {
            guard: d.guard_name.clone(),
            ..transition(
                format!("abs.{a}.start"),
                format!("start {}", d.name),
                PRIO_START,
                vec![arc(&ids::pool(a)), arc(&ids::abs_signal(a, "Start"))],
                vec![out(&active, PayloadRule::Merge)],
            )
        });
        if d.expects(Phase::Execute) {
            transitions.push(transition(
                format!("abs.{a}.execute"),
                format!("progress {}", d.name),
                PRIO_EXECUTE,
                vec![arc(&active), arc(&ids::abs_signal(a, "Execute"))],
                vec![out(&active, PayloadRule::Copy(0))],
            ));
        }
        let log = |event: &str| {
            out(
                ABS_LOG,
                PayloadRule::Literal(payload([("activity", a), ("event", event)])),
            )
        };
        transitions.push(transition(
            format!("abs.{a}.finish"),
            format!("finish {}", d.name),
            PRIO_FINISH,
            vec![arc(&active), arc(&ids::abs_signal(a, "End"))],
            vec![out(&ids::finished(a), PayloadRule::Merge), log("finished")],
        ));
        transitions.push(transition(
            format!("abs.{a}.interrupt"),
            format!("interrupt {}", d.name),
            PRIO_INTERRUPT,
            vec![arc(&active), arc(&ids::abs_signal(a, "Error"))],
            vec![out(&ids::interrupted(a), PayloadRule::Merge), log("interrupted")],
        ));
    }
    places.push(fused(ABS_HISTORY.into(), "History".into(), HISTORY_GROUP.into()));
    places.push(place(ABS_LOG.into(), "Log".into()));
    build(NetDefinition {
        net_id: "abstract".into(),
        places,
        transitions,
        fusion_groups: BTreeMap::new(),
    })
}

/// Execution layer of one activity: receives subevents, measures the
/// active duration with a timer token, and routes errors to History.
pub fn execution_net(d: &ActivityDefinition) -> Result<Net, ActivityError> {
    let a = d.activity_id.as_str();
    let mut places = vec![fused(ids::exe_in(a, "Start"), "Start received".into(), group(a, "Start"))];
    if d.expects(Phase::Execute) {
        places.push(fused(
            ids::exe_in(a, "Execute"),
            "Execute received".into(),
            group(a, "Execute"),
        ));
    }
    places.extend([
        place(ids::exe_in(a, "End"), "End received".into()),
        place(ids::exe_in(a, "Error"), "Error received".into()),
        PlaceDefinition {
            initial: vec![activity_token(a)],
            ..place(ids::idle(a), "timer idle".into())
        },
        fused(format!("exe.{a}.active"), "active".into(), group(a, "Active")),
        place(ids::timer(a), "timer running".into()),
        place(ids::duration(a), "measured duration".into()),
        fused(ids::exe_signal(a, "End"), "End to lifecycle".into(), group(a, "End")),
        fused(ids::exe_signal(a, "Error"), "Error to lifecycle".into(), group(a, "Error")),
        fused(format!("exe.{a}.history"), "History".into(), HISTORY_GROUP.into()),
    ]);

    let active = format!("exe.{a}.active");
    let mut transitions = vec![
        transition(
            format!("exe.{a}.arm"),
            "start timer".into(),
            PRIO_ARM,
            vec![arc(&ids::idle(a)), arc(&active)],
            vec![
                out(&active, PayloadRule::Copy(1)),
                out(&ids::timer(a), PayloadRule::Copy(1)),
            ],
        ),
        transition(
            format!("exe.{a}.end"),
            "stop timer".into(),
            PRIO_END,
            vec![arc(&ids::timer(a)), arc(&ids::exe_in(a, "End"))],
            vec![
                out(&ids::duration(a), PayloadRule::Elapsed(0)),
                out(&ids::exe_signal(a, "End"), PayloadRule::Merge),
            ],
        ),
    ];
    for spec in &d.error_specs {
        let e = spec.error_id.as_str();
        transitions.push(TransitionDefinition {
            guard: Some(format!("payload_eq:error_id={e}")),
            ..transition(
                format!("exe.{a}.detect.{e}"),
                format!("detect {e}"),
                PRIO_DETECT,
                vec![arc(&ids::exe_in(a, "Error")), arc(&ids::timer(a))],
                vec![
                    out(&format!("exe.{a}.history"), PayloadRule::Copy(0)),
                    out(&ids::exe_signal(a, "Error"), PayloadRule::Copy(0)),
                ],
            )
        });
    }
    build(NetDefinition {
        net_id: format!("exe.{a}"),
        places,
        transitions,
        fusion_groups: BTreeMap::new(),
    })
}

/// Error-handling layer of one activity. An entry fires only when a
/// matching History token and the Active token coexist, then emits one
/// command token per consequence action.
pub fn error_net(d: &ActivityDefinition) -> Result<Net, ActivityError> {
    let a = d.activity_id.as_str();
    let history = format!("err.{a}.history");
    let active = format!("err.{a}.active");
    let places = vec![
        fused(history.clone(), "History".into(), HISTORY_GROUP.into()),
        fused(active.clone(), "active".into(), group(a, "Active")),
        PlaceDefinition {
            initial: vec![activity_token(a)],
            ..place(ids::armed(a), "handler armed".into())
        },
        place(ids::handled(a), "handled".into()),
        place(ids::commands(a), "pending commands".into()),
    ];
    let mut transitions = Vec::new();
    for spec in &d.error_specs {
        let e = spec.error_id.as_str();
        let mut outputs = vec![
            out(&history, PayloadRule::Copy(0)),
            out(&active, PayloadRule::Copy(1)),
            out(&ids::handled(a), PayloadRule::Copy(0)),
        ];
        let actions = spec
            .consequence_actions
            .iter()
            .filter(|c| **c != ConsequenceAction::None);
        for (seq, action) in actions.enumerate() {
            let mut p = payload([
                ("activity", a),
                ("error_id", e),
                ("action", action.kind()),
                ("severity", severity_str(spec.severity)),
            ]);
            p.insert("seq".into(), Scalar::Int(seq as i64));
            if let ConsequenceAction::ShowConsequence { text, anchor } = action {
                p.insert("text".into(), text.as_str().into());
                p.insert("anchor".into(), anchor.as_str().into());
            }
            outputs.push(out(&ids::commands(a), PayloadRule::Literal(p)));
        }
        transitions.push(TransitionDefinition {
            guard: Some(format!("payload_eq:activity={a},error_id={e}")),
            ..transition(
                format!("err.{a}.entry.{e}"),
                format!("handle {e}"),
                PRIO_ENTRY,
                vec![arc(&history), arc(&active), arc(&ids::armed(a))],
                outputs,
            )
        });
    }
    build(NetDefinition {
        net_id: format!("err.{a}"),
        places,
        transitions,
        fusion_groups: BTreeMap::new(),
    })
}

pub(crate) fn severity_str(s: super::Severity) -> &'static str {
    match s {
        super::Severity::Info => "Info",
        super::Severity::Warning => "Warning",
        super::Severity::Critical => "Critical",
    }
}

fn build(def: NetDefinition) -> Result<Net, ActivityError> {
    Ok(Net::from_definition(&def)?)
}

/// Merges the layers into one net. Fusion groups with the same id are
/// joined; a group present on only one side of the abstract/lower boundary
/// is reported. Alias places are kept, so the composed net has the sum of
/// the parts' places and one storage slot per merged group.
pub fn compose(abstract_net: &Net, execution: &[Net], error: &[Net]) -> Result<Net, ActivityError> {
    let upper: BTreeSet<&String> = abstract_net.fusion_groups().keys().collect();
    let lower: BTreeSet<&String> = execution
        .iter()
        .chain(error)
        .flat_map(|n| n.fusion_groups().keys())
        .collect();
    let mismatched: Vec<String> = upper.symmetric_difference(&lower).map(|g| (*g).clone()).collect();
    if !mismatched.is_empty() {
        return Err(ActivityError::FusionMismatch(mismatched));
    }

    let mut def = NetDefinition {
        net_id: "composed".into(),
        places: Vec::new(),
        transitions: Vec::new(),
        fusion_groups: BTreeMap::new(),
    };
    let mut seen = BTreeSet::new();
    for part in std::iter::once(abstract_net).chain(execution).chain(error) {
        let d = part.to_definition();
        for id in d
            .places
            .iter()
            .map(|p| &p.id)
            .chain(d.transitions.iter().map(|t| &t.id))
        {
            if !seen.insert(id.clone()) {
                return Err(ActivityError::IdCollision(id.clone()));
            }
        }
        def.places.extend(d.places);
        def.transitions.extend(d.transitions);
        for (g, members) in d.fusion_groups {
            def.fusion_groups.entry(g).or_default().extend(members);
        }
    }
    build(def)
}

/// Builds and composes all three layers for a task list.
pub fn demonstrator_net(defs: &[ActivityDefinition]) -> Result<Net, ActivityError> {
    super::validate_definitions(defs)?;
    let abs = abstract_net(defs)?;
    let exe = defs.iter().map(execution_net).collect::<Result<Vec<_>, _>>()?;
    let err = defs.iter().map(error_net).collect::<Result<Vec<_>, _>>()?;
    compose(&abs, &exe, &err)
}

/// How the closing environment offers subevents during analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnvironmentModel {
    /// Every activity's operator runs independently.
    Concurrent,
    /// Activities are attempted one after another in task-list order.
    #[default]
    Sequential,
}

/// Adds an environment that supplies each activity's subevents once: Start,
/// optionally Execute, then End or one of the declared errors. The result
/// is a closed net whose intended terminal markings satisfy
/// [`settled_predicate`]. In the sequential model the next activity is
/// offered only after the abstract layer has recorded an outcome.
pub fn close_with_environment(
    composed: &Net,
    defs: &[ActivityDefinition],
    model: EnvironmentModel,
) -> Result<Net, ActivityError> {
    let mut def = composed.to_definition();
    def.net_id = "closed".into();
    for (i, d) in defs.iter().enumerate() {
        let a = d.activity_id.as_str();
        let ready = format!("env.{a}.ready");
        let started = format!("env.{a}.started");
        let done = format!("env.{a}.done");
        let first = i == 0 || model == EnvironmentModel::Concurrent;
        def.places.push(PlaceDefinition {
            initial: if first { vec![activity_token(a)] } else { Vec::new() },
            ..place(ready.clone(), format!("{} not yet started", d.name))
        });
        def.places.push(place(started.clone(), format!("{} started", d.name)));
        def.places.push(place(done.clone(), format!("{} done", d.name)));
        def.transitions.push(transition(
            format!("env.{a}.start"),
            format!("operator starts {}", d.name),
            0,
            vec![arc(&ready)],
            vec![arc(&ids::exe_in(a, "Start")), arc(&started)],
        ));
        let mut body = started.clone();
        if d.expects(Phase::Execute) {
            let executed = format!("env.{a}.executed");
            def.places.push(place(executed.clone(), format!("{} executed", d.name)));
            def.transitions.push(transition(
                format!("env.{a}.execute"),
                format!("operator progresses {}", d.name),
                0,
                vec![arc(&started)],
                vec![arc(&ids::exe_in(a, "Execute")), arc(&executed)],
            ));
            body = executed;
        }
        let next = match (model, defs.get(i + 1)) {
            (EnvironmentModel::Sequential, Some(n)) => Some(format!("env.{}.ready", n.activity_id)),
            _ => None,
        };
        let waiting = format!("env.{a}.waiting");
        if next.is_some() {
            def.places.push(place(waiting.clone(), format!("{} awaiting its outcome", d.name)));
        }
        let finish_outputs = |signal: String| {
            let mut v = vec![arc(&signal), arc(&done)];
            if next.is_some() {
                v.push(arc(&waiting));
            }
            v
        };
        def.transitions.push(transition(
            format!("env.{a}.end"),
            format!("operator ends {}", d.name),
            0,
            vec![arc(&body)],
            finish_outputs(ids::exe_in(a, "End")),
        ));
        for spec in &d.error_specs {
            def.transitions.push(transition(
                format!("env.{a}.fail.{}", spec.error_id),
                format!("{} occurs", spec.error_id),
                0,
                vec![arc(&body)],
                finish_outputs(ids::exe_in(a, "Error")),
            ));
        }
        // Outcome places are read through self-loops.
        if let Some(next) = &next {
            let mut outcomes = vec![("finished", ids::finished(a))];
            if !d.error_specs.is_empty() {
                outcomes.push(("interrupted", ids::interrupted(a)));
            }
            for (label, p) in outcomes {
                def.transitions.push(transition(
                    format!("env.{a}.handoff.{label}"),
                    format!("{} {label}, next activity", d.name),
                    0,
                    vec![arc(&waiting), arc(&p)],
                    vec![arc(&p), arc(next)],
                ));
            }
        }
    }
    build(def)
}

/// Each activity ended in exactly one of Finished or Interrupted.
pub fn settled_predicate(defs: &[ActivityDefinition]) -> TerminalPredicate {
    TerminalPredicate::sums_equal(defs.iter().map(|d| {
        let a = d.activity_id.as_str();
        (vec![ids::finished(a), ids::interrupted(a)], 1)
    }))
}

/// Place and transition counts of the generated layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub places: usize,
    pub transitions: usize,
}

impl Census {
    pub fn of(net: &Net) -> Self {
        Census {
            places: net.places().len(),
            transitions: net.transitions().len(),
        }
    }
}
