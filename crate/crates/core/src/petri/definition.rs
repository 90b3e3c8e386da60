//! Serialized form of a net, as read from and written to net files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::token::Payload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDefinition {
    pub net_id: String,
    pub places: Vec<PlaceDefinition>,
    pub transitions: Vec<TransitionDefinition>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fusion_groups: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceDefinition {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_group: Option<String>,
    /// Payloads of the tokens present in the initial marking.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<Payload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDefinition {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<i64>,
    #[serde(default)]
    pub inputs: Vec<ArcDefinition>,
    #[serde(default)]
    pub outputs: Vec<ArcDefinition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcDefinition {
    pub place: String,
    #[serde(default = "default_weight")]
    pub weight: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_rule: Option<PayloadRule>,
}

fn default_weight() -> i64 {
    1
}

/// How an output arc derives the payload of the tokens it produces.
///
/// Token indices refer to the consumed tokens of the firing, flattened in
/// input-arc order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum PayloadRule {
    Copy(usize),
    Literal(Payload),
    /// Union of all consumed payloads; later tokens win on key clashes.
    #[default]
    Merge,
    /// Copy of the indexed token plus `duration_ticks` = firing tick minus
    /// that token's creation tick. Realizes the time-step counter.
    Elapsed(usize),
}

impl NetDefinition {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("net definitions always serialize")
    }
}
