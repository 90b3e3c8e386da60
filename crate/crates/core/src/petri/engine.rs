//! Firing rule: enabling, firing and the quiescence loop.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::definition::PayloadRule;
use super::guard::{GuardContext, GuardRegistry};
use super::marking::Marking;
use super::net::{Net, Transition};
use super::token::{Payload, Scalar, Tick, Token, TokenId};
use super::PetriError;

static NO_GUARDS: GuardRegistry = GuardRegistry::empty();
static NULL: Value = Value::Null;

/// Guard registry plus the read-only context snapshot guards may consult.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub guards: &'a GuardRegistry,
    pub snapshot: &'a Value,
}

impl<'a> Env<'a> {
    pub fn new(guards: &'a GuardRegistry, snapshot: &'a Value) -> Self {
        Env { guards, snapshot }
    }
}

impl Env<'static> {
    /// No registered guards and a null snapshot. Only the parameterized
    /// payload guards can accept under this environment.
    pub fn bare() -> Self {
        Env {
            guards: &NO_GUARDS,
            snapshot: &NULL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArcTokens {
    pub place: String,
    pub tokens: Vec<TokenId>,
}

/// Audit record of one firing. Field order is the JSON Lines order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiringRecord {
    pub tick: Tick,
    pub transition_id: String,
    pub consumed: Vec<ArcTokens>,
    pub produced: Vec<ArcTokens>,
}

impl FiringRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("firing records always serialize")
    }
}

/// Writes a trace as JSON Lines.
pub fn trace_to_jsonl(trace: &[FiringRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct Enabled<'n> {
    pub index: usize,
    pub transition: &'n Transition,
    /// Token ids chosen per input arc.
    pub binding: Vec<Vec<TokenId>>,
}

/// Positions (within each slot queue) of the FIFO-oldest ready tokens, per
/// input arc. `None` when some arc lacks enough ready tokens.
fn candidate_positions(
    net: &Net,
    marking: &Marking,
    t: &Transition,
    now: Tick,
) -> Option<Vec<(usize, Vec<usize>)>> {
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut per_arc = Vec::with_capacity(t.inputs.len());
    for (arc, &place) in t.inputs.iter().zip(t.input_places()) {
        let slot = net.storage_of(place);
        let skip = taken
            .iter()
            .find(|(s, _)| *s == slot)
            .map_or(0, |(_, n)| *n);
        let positions: Vec<usize> = marking
            .slot(slot)
            .iter()
            .enumerate()
            .filter(|(_, tok)| tok.is_ready(now))
            .skip(skip)
            .take(arc.weight as usize)
            .map(|(i, _)| i)
            .collect();
        if positions.len() < arc.weight as usize {
            return None;
        }
        match taken.iter_mut().find(|(s, _)| *s == slot) {
            Some((_, n)) => *n += positions.len(),
            None => taken.push((slot, positions.len())),
        }
        per_arc.push((slot, positions));
    }
    Some(per_arc)
}

fn guard_accepts(
    marking: &Marking,
    t: &Transition,
    positions: &[(usize, Vec<usize>)],
    env: &Env<'_>,
) -> bool {
    let Some(name) = &t.guard else {
        return true;
    };
    let binding: Vec<&Token> = positions
        .iter()
        .flat_map(|(slot, pos)| pos.iter().map(move |&p| &marking.slot(*slot)[p]))
        .collect();
    env.guards.evaluate(
        name,
        &GuardContext {
            binding: &binding,
            snapshot: env.snapshot,
        },
    )
}

fn binding_of(
    net: &Net,
    marking: &Marking,
    t: &Transition,
    now: Tick,
    env: &Env<'_>,
) -> Option<Vec<(usize, Vec<usize>)>> {
    let positions = candidate_positions(net, marking, t, now)?;
    guard_accepts(marking, t, &positions, env).then_some(positions)
}

/// Enabled transitions ordered by (priority desc, transition id asc).
pub fn enabled_transitions<'n>(
    net: &'n Net,
    marking: &Marking,
    now: Tick,
    env: &Env<'_>,
) -> Vec<Enabled<'n>> {
    net.firing_order()
        .iter()
        .filter_map(|&index| {
            let t = &net.transitions()[index];
            let positions = binding_of(net, marking, t, now, env)?;
            Some(Enabled {
                index,
                transition: t,
                binding: positions
                    .iter()
                    .map(|(slot, pos)| pos.iter().map(|&p| marking.slot(*slot)[p].id()).collect())
                    .collect(),
            })
        })
        .collect()
}

fn first_enabled(net: &Net, marking: &Marking, now: Tick, env: &Env<'_>) -> Option<usize> {
    net.firing_order()
        .iter()
        .copied()
        .find(|&i| binding_of(net, marking, &net.transitions()[i], now, env).is_some())
}

/// Fires `transition_id`, returning the successor marking.
pub fn fire(
    net: &Net,
    marking: &Marking,
    transition_id: &str,
    now: Tick,
    env: &Env<'_>,
) -> Result<(Marking, FiringRecord), PetriError> {
    let mut next = marking.clone();
    let record = fire_mut(net, &mut next, transition_id, now, env)?;
    Ok((next, record))
}

/// In-place variant of [`fire`]. On error the marking is unchanged.
pub fn fire_mut(
    net: &Net,
    marking: &mut Marking,
    transition_id: &str,
    now: Tick,
    env: &Env<'_>,
) -> Result<FiringRecord, PetriError> {
    let index = net
        .transition_index(transition_id)
        .ok_or_else(|| PetriError::UnknownTransition(transition_id.to_owned()))?;
    fire_index(net, marking, index, now, env)
}

fn fire_index(
    net: &Net,
    marking: &mut Marking,
    index: usize,
    now: Tick,
    env: &Env<'_>,
) -> Result<FiringRecord, PetriError> {
    let t = &net.transitions()[index];
    let positions =
        binding_of(net, marking, t, now, env).ok_or_else(|| PetriError::NotEnabled(t.id.clone()))?;

    // Capacity is checked on the post-firing counts before anything moves.
    let mut delta: Vec<(usize, i64)> = Vec::new();
    let mut bump = |slot: usize, by: i64| match delta.iter_mut().find(|(s, _)| *s == slot) {
        Some((_, d)) => *d += by,
        None => delta.push((slot, by)),
    };
    for (slot, pos) in &positions {
        bump(*slot, -(pos.len() as i64));
    }
    for (arc, &place) in t.outputs.iter().zip(t.output_places()) {
        bump(net.storage_of(place), arc.weight as i64);
    }
    for (arc, &place) in t.outputs.iter().zip(t.output_places()) {
        let slot = net.storage_of(place);
        if let Some(cap) = net.storage_capacity(slot) {
            let d = delta.iter().find(|(s, _)| *s == slot).map_or(0, |(_, d)| *d);
            if marking.slot(slot).len() as i64 + d > cap as i64 {
                return Err(PetriError::CapacityExceeded {
                    place: arc.place.clone(),
                    capacity: cap,
                });
            }
        }
    }

    // Consume. Positions within one slot are removed highest-first.
    let flat_ids: Vec<Vec<TokenId>> = positions
        .iter()
        .map(|(slot, pos)| pos.iter().map(|&p| marking.slot(*slot)[p].id()).collect())
        .collect();
    let mut removal: Vec<(usize, usize)> = positions
        .iter()
        .flat_map(|(slot, pos)| pos.iter().map(move |&p| (*slot, p)))
        .collect();
    removal.sort_unstable_by(|a, b| b.cmp(a));
    let mut removed: Vec<Token> = Vec::with_capacity(removal.len());
    for (slot, p) in removal {
        removed.push(marking.slot_mut(slot).remove(p).expect("bound position exists"));
    }
    let consumed_tokens: Vec<Token> = flat_ids
        .iter()
        .flatten()
        .map(|id| {
            removed
                .iter()
                .find(|tok| tok.id() == *id)
                .cloned()
                .expect("removed token present")
        })
        .collect();

    let mut produced = Vec::with_capacity(t.outputs.len());
    for (arc, &place) in t.outputs.iter().zip(t.output_places()) {
        let slot = net.storage_of(place);
        let mut ids = Vec::with_capacity(arc.weight as usize);
        for _ in 0..arc.weight {
            let payload = derive_payload(&arc.rule, &consumed_tokens, now);
            let token = marking.mint(payload, now, now + t.delay)?;
            ids.push(token.id());
            marking.slot_mut(slot).push_back(token);
        }
        produced.push(ArcTokens {
            place: arc.place.clone(),
            tokens: ids,
        });
    }
    debug_assert!(marking.fusion_coherent(net));

    Ok(FiringRecord {
        tick: now,
        transition_id: t.id.clone(),
        consumed: t
            .inputs
            .iter()
            .zip(flat_ids)
            .map(|(arc, tokens)| ArcTokens {
                place: arc.place.clone(),
                tokens,
            })
            .collect(),
        produced,
    })
}

fn derive_payload(rule: &PayloadRule, consumed: &[Token], now: Tick) -> Payload {
    match rule {
        PayloadRule::Copy(i) => consumed[*i].payload().clone(),
        PayloadRule::Literal(p) => p.clone(),
        PayloadRule::Merge => {
            let mut out = Payload::new();
            for tok in consumed {
                out.extend(tok.payload().iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            out
        }
        PayloadRule::Elapsed(i) => {
            let source = &consumed[*i];
            let mut out = source.payload().clone();
            let elapsed = now.saturating_sub(source.created_at());
            out.insert("duration_ticks".into(), Scalar::Int(elapsed as i64));
            out
        }
    }
}

/// Fires the first enabled transition until none is enabled at `now`.
pub fn run_to_quiescence(
    net: &Net,
    marking: &Marking,
    now: Tick,
    max_steps: usize,
    env: &Env<'_>,
) -> Result<(Marking, Vec<FiringRecord>), PetriError> {
    let mut next = marking.clone();
    let trace = run_to_quiescence_mut(net, &mut next, now, max_steps, env)?;
    Ok((next, trace))
}

/// In-place variant of [`run_to_quiescence`]. On `NonQuiescent` the marking
/// holds the state after `max_steps` firings.
pub fn run_to_quiescence_mut(
    net: &Net,
    marking: &mut Marking,
    now: Tick,
    max_steps: usize,
    env: &Env<'_>,
) -> Result<Vec<FiringRecord>, PetriError> {
    if max_steps == 0 {
        return Err(PetriError::InvalidArgument("max_steps must be >= 1".into()));
    }
    let mut trace = Vec::new();
    for _ in 0..max_steps {
        let Some(index) = first_enabled(net, marking, now, env) else {
            return Ok(trace);
        };
        trace.push(fire_index(net, marking, index, now, env)?);
    }
    if first_enabled(net, marking, now, env).is_some() {
        return Err(PetriError::NonQuiescent { steps: max_steps });
    }
    Ok(trace)
}
