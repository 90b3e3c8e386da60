use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use super::definition::{
    ArcDefinition, NetDefinition, PayloadRule, PlaceDefinition, TransitionDefinition,
};
use super::token::{Payload, Tick};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Place {
    pub id: String,
    pub name: String,
    pub capacity: Option<u32>,
    pub fusion_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputArc {
    pub place: String,
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputArc {
    pub place: String,
    pub weight: u32,
    pub rule: PayloadRule,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub id: String,
    pub name: String,
    pub guard: Option<String>,
    pub delay: Tick,
    pub priority: i64,
    pub inputs: Vec<InputArc>,
    pub outputs: Vec<OutputArc>,
    input_places: Vec<usize>,
    output_places: Vec<usize>,
}

impl Transition {
    /// Place indices of the input arcs, in arc order.
    pub fn input_places(&self) -> &[usize] {
        &self.input_places
    }

    pub fn output_places(&self) -> &[usize] {
        &self.output_places
    }

    pub fn consumed_count(&self) -> u32 {
        self.inputs.iter().map(|a| a.weight).sum()
    }

    pub fn produced_count(&self) -> u32 {
        self.outputs.iter().map(|a| a.weight).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructuralErrorKind {
    DuplicateId(String),
    DanglingReference(String),
    /// An arc endpoint names a transition, which would join two transitions.
    NonBipartite(String),
    MultipleFusionGroups {
        place: String,
        groups: [String; 2],
    },
    EmptyTransition,
    InvalidValue(String),
}

impl fmt::Display for StructuralErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId(id) => write!(f, "duplicate id `{id}`"),
            Self::DanglingReference(id) => write!(f, "reference to undeclared place `{id}`"),
            Self::NonBipartite(id) => {
                write!(f, "arc endpoint `{id}` is a transition; arcs must join a place and a transition")
            }
            Self::MultipleFusionGroups { place, groups } => write!(
                f,
                "place `{place}` belongs to fusion groups `{}` and `{}`",
                groups[0], groups[1]
            ),
            Self::EmptyTransition => f.write_str("transition has no input or output arcs"),
            Self::InvalidValue(msg) => f.write_str(msg),
        }
    }
}

/// Rejection of a net definition, with a path to the offending element.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{location}: {kind}")]
pub struct StructuralError {
    pub location: String,
    pub kind: StructuralErrorKind,
}

impl StructuralError {
    fn new(location: impl Into<String>, kind: StructuralErrorKind) -> Self {
        StructuralError {
            location: location.into(),
            kind,
        }
    }
}

/// A validated net. Fusion aliases stay addressable by their own ids but
/// share one storage slot in every [`Marking`](super::Marking).
#[derive(Debug, Clone)]
pub struct Net {
    id: String,
    places: Vec<Place>,
    transitions: Vec<Transition>,
    fusion_groups: BTreeMap<String, BTreeSet<String>>,
    initial: Vec<Vec<Payload>>,
    place_index: HashMap<String, usize>,
    transition_index: HashMap<String, usize>,
    storage_of: Vec<usize>,
    storage_members: Vec<Vec<usize>>,
    storage_capacity: Vec<Option<u32>>,
    firing_order: Vec<usize>,
}

/// Validates a definition and builds the net.
pub fn build_net(def: &NetDefinition) -> Result<Net, StructuralError> {
    Net::from_definition(def)
}

impl Net {
    pub fn from_definition(def: &NetDefinition) -> Result<Net, StructuralError> {
        let mut place_index = HashMap::new();
        let mut places = Vec::with_capacity(def.places.len());
        let mut initial = Vec::with_capacity(def.places.len());
        for (i, p) in def.places.iter().enumerate() {
            let loc = format!("places[{i}]");
            if p.id.is_empty() {
                return Err(StructuralError::new(
                    loc,
                    StructuralErrorKind::InvalidValue("place id must not be empty".into()),
                ));
            }
            if place_index.insert(p.id.clone(), i).is_some() {
                return Err(StructuralError::new(
                    format!("{loc}.id"),
                    StructuralErrorKind::DuplicateId(p.id.clone()),
                ));
            }
            let capacity = match p.capacity {
                None => None,
                Some(c) if c >= 1 && c <= u32::MAX as i64 => Some(c as u32),
                Some(c) => {
                    return Err(StructuralError::new(
                        format!("{loc}.capacity"),
                        StructuralErrorKind::InvalidValue(format!(
                            "capacity must be a positive integer, got {c}"
                        )),
                    ))
                }
            };
            places.push(Place {
                id: p.id.clone(),
                name: p.name.clone(),
                capacity,
                fusion_group: None,
            });
            initial.push(p.initial.clone());
        }

        let mut transition_index = HashMap::new();
        for (i, t) in def.transitions.iter().enumerate() {
            let loc = format!("transitions[{i}].id");
            if t.id.is_empty() {
                return Err(StructuralError::new(
                    loc,
                    StructuralErrorKind::InvalidValue("transition id must not be empty".into()),
                ));
            }
            if place_index.contains_key(&t.id) || transition_index.insert(t.id.clone(), i).is_some()
            {
                return Err(StructuralError::new(
                    loc,
                    StructuralErrorKind::DuplicateId(t.id.clone()),
                ));
            }
        }

        // Fusion membership from both the per-place field and the group table.
        let mut group_of: Vec<Option<String>> = vec![None; places.len()];
        let mut assign = |idx: usize, group: &str, loc: String| -> Result<(), StructuralError> {
            match &group_of[idx] {
                Some(g) if g != group => Err(StructuralError::new(
                    loc,
                    StructuralErrorKind::MultipleFusionGroups {
                        place: places[idx].id.clone(),
                        groups: [g.clone(), group.to_owned()],
                    },
                )),
                _ => {
                    group_of[idx] = Some(group.to_owned());
                    Ok(())
                }
            }
        };
        for (i, p) in def.places.iter().enumerate() {
            if let Some(g) = &p.fusion_group {
                if g.is_empty() {
                    return Err(StructuralError::new(
                        format!("places[{i}].fusion_group"),
                        StructuralErrorKind::InvalidValue("fusion group id must not be empty".into()),
                    ));
                }
                assign(i, g, format!("places[{i}].fusion_group"))?;
            }
        }
        for (group, members) in &def.fusion_groups {
            if members.is_empty() {
                return Err(StructuralError::new(
                    format!("fusion_groups.{group}"),
                    StructuralErrorKind::InvalidValue("fusion group has no members".into()),
                ));
            }
            for (j, member) in members.iter().enumerate() {
                let loc = format!("fusion_groups.{group}[{j}]");
                let Some(&idx) = place_index.get(member) else {
                    let kind = if transition_index.contains_key(member) {
                        StructuralErrorKind::NonBipartite(member.clone())
                    } else {
                        StructuralErrorKind::DanglingReference(member.clone())
                    };
                    return Err(StructuralError::new(loc, kind));
                };
                assign(idx, group, loc)?;
            }
        }
        let mut fusion_groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (idx, g) in group_of.iter().enumerate() {
            if let Some(g) = g {
                places[idx].fusion_group = Some(g.clone());
                fusion_groups
                    .entry(g.clone())
                    .or_default()
                    .insert(places[idx].id.clone());
            }
        }

        // Storage slots: one per fusion group, one per unfused place.
        let mut storage_of = vec![usize::MAX; places.len()];
        let mut storage_members: Vec<Vec<usize>> = Vec::new();
        let mut slot_of_group: HashMap<&str, usize> = HashMap::new();
        for idx in 0..places.len() {
            let slot = match &group_of[idx] {
                Some(g) => *slot_of_group.entry(g.as_str()).or_insert_with(|| {
                    storage_members.push(Vec::new());
                    storage_members.len() - 1
                }),
                None => {
                    storage_members.push(Vec::new());
                    storage_members.len() - 1
                }
            };
            storage_of[idx] = slot;
            storage_members[slot].push(idx);
        }
        let storage_capacity: Vec<Option<u32>> = storage_members
            .iter()
            .map(|members| members.iter().filter_map(|&m| places[m].capacity).min())
            .collect();
        for (slot, members) in storage_members.iter().enumerate() {
            if let Some(cap) = storage_capacity[slot] {
                let count: usize = members.iter().map(|&m| initial[m].len()).sum();
                if count > cap as usize {
                    return Err(StructuralError::new(
                        format!("places[{}].initial", members[0]),
                        StructuralErrorKind::InvalidValue(format!(
                            "{count} initial tokens exceed capacity {cap}"
                        )),
                    ));
                }
            }
        }

        let mut transitions = Vec::with_capacity(def.transitions.len());
        for (i, t) in def.transitions.iter().enumerate() {
            transitions.push(resolve_transition(i, t, &place_index, &transition_index)?);
        }

        let mut firing_order: Vec<usize> = (0..transitions.len()).collect();
        firing_order.sort_by(|&a, &b| {
            let (ta, tb) = (&transitions[a], &transitions[b]);
            tb.priority.cmp(&ta.priority).then_with(|| ta.id.cmp(&tb.id))
        });

        Ok(Net {
            id: def.net_id.clone(),
            places,
            transitions,
            fusion_groups,
            initial,
            place_index,
            transition_index,
            storage_of,
            storage_members,
            storage_capacity,
            firing_order,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn fusion_groups(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.fusion_groups
    }

    pub fn place(&self, id: &str) -> Option<&Place> {
        self.place_index.get(id).map(|&i| &self.places[i])
    }

    pub fn place_index(&self, id: &str) -> Option<usize> {
        self.place_index.get(id).copied()
    }

    pub fn transition(&self, id: &str) -> Option<&Transition> {
        self.transition_index.get(id).map(|&i| &self.transitions[i])
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.transition_index.get(id).copied()
    }

    /// Storage slot backing a place (shared by all aliases of a fusion group).
    pub fn storage_of(&self, place: usize) -> usize {
        self.storage_of[place]
    }

    /// Number of distinct token stores: places minus merged fusion aliases.
    pub fn storage_len(&self) -> usize {
        self.storage_members.len()
    }

    pub fn storage_members(&self, slot: usize) -> &[usize] {
        &self.storage_members[slot]
    }

    pub fn storage_capacity(&self, slot: usize) -> Option<u32> {
        self.storage_capacity[slot]
    }

    /// Canonical name of a storage slot: the first member place in
    /// declaration order.
    pub fn storage_name(&self, slot: usize) -> &str {
        &self.places[self.storage_members[slot][0]].id
    }

    /// Transition indices ordered by (priority desc, id asc).
    pub fn firing_order(&self) -> &[usize] {
        &self.firing_order
    }

    pub(crate) fn initial_payloads(&self, place: usize) -> &[Payload] {
        &self.initial[place]
    }

    pub fn initial_token_count(&self, place: usize) -> usize {
        self.initial[place].len()
    }

    /// Serializes back into the file representation. Fusion membership is
    /// written to the `fusion_groups` table only.
    pub fn to_definition(&self) -> NetDefinition {
        NetDefinition {
            net_id: self.id.clone(),
            places: self
                .places
                .iter()
                .zip(&self.initial)
                .map(|(p, init)| PlaceDefinition {
                    id: p.id.clone(),
                    name: p.name.clone(),
                    capacity: p.capacity.map(i64::from),
                    fusion_group: None,
                    initial: init.clone(),
                })
                .collect(),
            transitions: self
                .transitions
                .iter()
                .map(|t| TransitionDefinition {
                    id: t.id.clone(),
                    name: t.name.clone(),
                    guard: t.guard.clone(),
                    delay: (t.delay != 0).then_some(t.delay as i64),
                    priority: (t.priority != 0).then_some(t.priority),
                    inputs: t
                        .inputs
                        .iter()
                        .map(|a| ArcDefinition {
                            place: a.place.clone(),
                            weight: a.weight as i64,
                            payload_rule: None,
                        })
                        .collect(),
                    outputs: t
                        .outputs
                        .iter()
                        .map(|a| ArcDefinition {
                            place: a.place.clone(),
                            weight: a.weight as i64,
                            payload_rule: (a.rule != PayloadRule::Merge).then(|| a.rule.clone()),
                        })
                        .collect(),
                })
                .collect(),
            fusion_groups: self
                .fusion_groups
                .iter()
                .map(|(g, m)| (g.clone(), m.iter().cloned().collect()))
                .collect(),
        }
    }
}

fn resolve_transition(
    i: usize,
    t: &TransitionDefinition,
    place_index: &HashMap<String, usize>,
    transition_index: &HashMap<String, usize>,
) -> Result<Transition, StructuralError> {
    let loc = format!("transitions[{i}]");
    if t.inputs.is_empty() && t.outputs.is_empty() {
        return Err(StructuralError::new(loc, StructuralErrorKind::EmptyTransition));
    }
    let delay = match t.delay.unwrap_or(0) {
        d if d >= 0 => d as Tick,
        d => {
            return Err(StructuralError::new(
                format!("{loc}.delay"),
                StructuralErrorKind::InvalidValue(format!("delay must be >= 0, got {d}")),
            ))
        }
    };
    if let Some(g) = &t.guard {
        if g.is_empty() {
            return Err(StructuralError::new(
                format!("{loc}.guard"),
                StructuralErrorKind::InvalidValue("guard name must not be empty".into()),
            ));
        }
    }

    let endpoint = |arc: &ArcDefinition, loc: &str| -> Result<(usize, u32), StructuralError> {
        let idx = match place_index.get(&arc.place) {
            Some(&idx) => idx,
            None if transition_index.contains_key(&arc.place) => {
                return Err(StructuralError::new(
                    format!("{loc}.place"),
                    StructuralErrorKind::NonBipartite(arc.place.clone()),
                ))
            }
            None => {
                return Err(StructuralError::new(
                    format!("{loc}.place"),
                    StructuralErrorKind::DanglingReference(arc.place.clone()),
                ))
            }
        };
        if arc.weight < 1 || arc.weight > u32::MAX as i64 {
            return Err(StructuralError::new(
                format!("{loc}.weight"),
                StructuralErrorKind::InvalidValue(format!(
                    "weight must be a positive integer, got {}",
                    arc.weight
                )),
            ));
        }
        Ok((idx, arc.weight as u32))
    };

    let mut inputs = Vec::new();
    let mut input_places = Vec::new();
    for (j, arc) in t.inputs.iter().enumerate() {
        let aloc = format!("{loc}.inputs[{j}]");
        let (idx, weight) = endpoint(arc, &aloc)?;
        if arc.payload_rule.is_some() {
            return Err(StructuralError::new(
                format!("{aloc}.payload_rule"),
                StructuralErrorKind::InvalidValue("payload rules apply to output arcs only".into()),
            ));
        }
        inputs.push(InputArc {
            place: arc.place.clone(),
            weight,
        });
        input_places.push(idx);
    }
    let consumed: u64 = inputs.iter().map(|a| a.weight as u64).sum();

    let mut outputs = Vec::new();
    let mut output_places = Vec::new();
    for (j, arc) in t.outputs.iter().enumerate() {
        let aloc = format!("{loc}.outputs[{j}]");
        let (idx, weight) = endpoint(arc, &aloc)?;
        let rule = arc.payload_rule.clone().unwrap_or_default();
        if let PayloadRule::Copy(k) | PayloadRule::Elapsed(k) = rule {
            if k as u64 >= consumed {
                return Err(StructuralError::new(
                    format!("{aloc}.payload_rule"),
                    StructuralErrorKind::InvalidValue(format!(
                        "token index {k} out of range: transition consumes {consumed} tokens"
                    )),
                ));
            }
        }
        outputs.push(OutputArc {
            place: arc.place.clone(),
            weight,
            rule,
        });
        output_places.push(idx);
    }

    Ok(Transition {
        id: t.id.clone(),
        name: t.name.clone(),
        guard: t.guard.clone(),
        delay,
        priority: t.priority.unwrap_or(0),
        inputs,
        outputs,
        input_places,
        output_places,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> NetDefinition {
        serde_json::from_str(
            r#"{
              "net_id": "chain",
              "places": [{"id": "p1", "name": "P1"}, {"id": "p2", "name": "P2"}],
              "transitions": [{"id": "t", "name": "T",
                 "inputs": [{"place": "p1", "weight": 1}],
                 "outputs": [{"place": "p2", "weight": 1}]}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_chain_builds() {
        let net = build_net(&chain()).unwrap();
        assert_eq!(net.places().len(), 2);
        assert_eq!(net.transitions().len(), 1);
        assert_eq!(net.storage_len(), 2);
    }

    #[test]
    fn arc_to_transition_is_non_bipartite() {
        let mut def = chain();
        def.transitions[0].outputs[0].place = "t".into();
        let err = build_net(&def).unwrap_err();
        assert_eq!(err.location, "transitions[0].outputs[0].place");
        assert!(matches!(err.kind, StructuralErrorKind::NonBipartite(_)));
    }

    #[test]
    fn dangling_and_duplicate_ids() {
        let mut def = chain();
        def.transitions[0].inputs[0].place = "nowhere".into();
        assert!(matches!(
            build_net(&def).unwrap_err().kind,
            StructuralErrorKind::DanglingReference(_)
        ));

        let mut def = chain();
        def.places[1].id = "p1".into();
        assert_eq!(build_net(&def).unwrap_err().location, "places[1].id");

        let mut def = chain();
        def.transitions[0].id = "p2".into();
        assert!(matches!(
            build_net(&def).unwrap_err().kind,
            StructuralErrorKind::DuplicateId(_)
        ));
    }

    #[test]
    fn place_in_two_groups_is_rejected() {
        let mut def = chain();
        def.places[0].fusion_group = Some("g1".into());
        def.fusion_groups.insert("g2".into(), vec!["p1".into()]);
        let err = build_net(&def).unwrap_err();
        assert!(matches!(err.kind, StructuralErrorKind::MultipleFusionGroups { .. }));
    }

    #[test]
    fn fusion_aliases_share_storage() {
        let mut def = chain();
        def.fusion_groups.insert("g".into(), vec!["p1".into(), "p2".into()]);
        let net = build_net(&def).unwrap();
        assert_eq!(net.storage_len(), 1);
        assert_eq!(net.storage_of(0), net.storage_of(1));
        assert_eq!(net.storage_name(0), "p1");
    }

    #[test]
    fn invalid_values_are_located() {
        let mut def = chain();
        def.transitions[0].delay = Some(-1);
        assert_eq!(build_net(&def).unwrap_err().location, "transitions[0].delay");

        let mut def = chain();
        def.transitions[0].inputs[0].weight = 0;
        assert_eq!(build_net(&def).unwrap_err().location, "transitions[0].inputs[0].weight");

        let mut def = chain();
        def.places[0].capacity = Some(0);
        assert_eq!(build_net(&def).unwrap_err().location, "places[0].capacity");

        let mut def = chain();
        def.transitions[0].outputs[0].payload_rule = Some(PayloadRule::Copy(1));
        assert!(build_net(&def).is_err());

        let mut def = chain();
        def.transitions[0].inputs.clear();
        def.transitions[0].outputs.clear();
        assert_eq!(build_net(&def).unwrap_err().kind, StructuralErrorKind::EmptyTransition);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"net_id": "x", "places": [], "transitions": [], "colour": 1}"#;
        assert!(NetDefinition::from_json(text).is_err());
    }

    #[test]
    fn definition_round_trips() {
        let mut def = chain();
        def.fusion_groups.insert("g".into(), vec!["p1".into()]);
        let net = build_net(&def).unwrap();
        let again = build_net(&net.to_definition()).unwrap();
        assert_eq!(again.to_definition(), net.to_definition());
    }
}
