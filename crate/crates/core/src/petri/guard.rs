//! Named transition guards.
//!
//! Net files reference guards by name. A name is either registered in a
//! [`GuardRegistry`] or belongs to one of the parameterized families below,
//! which keep common payload and context checks declarative:
//!
//! * `payload_eq:key=value[,key=value...]` compares the first token of the
//!   binding against each pair (values compared in their display form).
//! * `ctx_eq:/json/pointer=value` and `ctx_ne:/json/pointer=value` read the
//!   context snapshot. A missing pointer never equals anything.
//!
//! Unknown names reject every binding.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;

use super::token::Token;

/// What a guard sees: the candidate binding (FIFO-oldest tokens, flattened
/// in input-arc order) and a read-only context snapshot.
pub struct GuardContext<'a> {
    pub binding: &'a [&'a Token],
    pub snapshot: &'a Value,
}

pub trait Guard: Send + Sync {
    fn accepts(&self, ctx: &GuardContext<'_>) -> bool;
}

impl<F> Guard for F
where
    F: Fn(&GuardContext<'_>) -> bool + Send + Sync,
{
    fn accepts(&self, ctx: &GuardContext<'_>) -> bool {
        self(ctx)
    }
}

#[derive(Clone, Default)]
pub struct GuardRegistry {
    named: BTreeMap<String, Arc<dyn Guard>>,
}

impl fmt::Debug for GuardRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.named.keys()).finish()
    }
}

impl GuardRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub const fn empty() -> Self {
        GuardRegistry {
            named: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, guard: impl Guard + 'static) {
        self.named.insert(name.into(), Arc::new(guard));
    }

    pub fn with(mut self, name: impl Into<String>, guard: impl Guard + 'static) -> Self {
        self.register(name, guard);
        self
    }

    /// True if `name` resolves to a registered guard or a well-formed
    /// parameterized family member.
    pub fn resolves(&self, name: &str) -> bool {
        self.named.contains_key(name) || Family::parse(name).is_some()
    }

    pub fn evaluate(&self, name: &str, ctx: &GuardContext<'_>) -> bool {
        if let Some(g) = self.named.get(name) {
            return g.accepts(ctx);
        }
        match Family::parse(name) {
            Some(family) => family.accepts(ctx),
            None => false,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.named.keys().map(String::as_str)
    }
}

enum Family<'a> {
    PayloadEq(Vec<(&'a str, &'a str)>),
    CtxEq(&'a str, &'a str),
    CtxNe(&'a str, &'a str),
}

impl<'a> Family<'a> {
    fn parse(name: &'a str) -> Option<Self> {
        let (family, args) = name.split_once(':')?;
        match family {
            "payload_eq" => {
                let pairs = args
                    .split(',')
                    .map(|kv| kv.split_once('='))
                    .collect::<Option<Vec<_>>>()?;
                (!pairs.is_empty()).then_some(Family::PayloadEq(pairs))
            }
            "ctx_eq" | "ctx_ne" => {
                let (pointer, value) = args.split_once('=')?;
                if !pointer.starts_with('/') {
                    return None;
                }
                Some(if family == "ctx_eq" {
                    Family::CtxEq(pointer, value)
                } else {
                    Family::CtxNe(pointer, value)
                })
            }
            _ => None,
        }
    }

    fn accepts(&self, ctx: &GuardContext<'_>) -> bool {
        match self {
            Family::PayloadEq(pairs) => match ctx.binding.first() {
                Some(token) => pairs.iter().all(|(k, v)| {
                    token.get(k).is_some_and(|s| s.to_string() == *v)
                }),
                None => false,
            },
            Family::CtxEq(pointer, value) => pointer_equals(ctx.snapshot, pointer, value),
            Family::CtxNe(pointer, value) => !pointer_equals(ctx.snapshot, pointer, value),
        }
    }
}

#[allow(clippy::cmp_owned)]
fn pointer_equals(snapshot: &Value, pointer: &str, expected: &str) -> bool {
    match snapshot.pointer(pointer) {
        Some(Value::String(s)) => s == expected,
        Some(Value::Null) | None => false,
        Some(other) => other.to_string() == expected,
    }
}
