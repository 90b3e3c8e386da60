use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PetriError;

/// Logical time. The engine never reads a wall clock.
pub type Tick = u64;

/// Scalar value carried in a token payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Scalar {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_owned())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Str(s)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

/// Token color: a flat key to scalar map. Keys are unique by construction.
pub type Payload = BTreeMap<String, Scalar>;

/// Builds a payload from `(key, value)` pairs.
pub fn payload<K, V, I>(pairs: I) -> Payload
where
    K: Into<String>,
    V: Into<Scalar>,
    I: IntoIterator<Item = (K, V)>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u64);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A timestamped token. Fields are private so the payload cannot change
/// after creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    id: TokenId,
    payload: Payload,
    created_at: Tick,
    ready_at: Tick,
}

impl Token {
    pub fn new(
        id: TokenId,
        payload: Payload,
        created_at: Tick,
        ready_at: Tick,
    ) -> Result<Self, PetriError> {
        if ready_at < created_at {
            return Err(PetriError::InvalidToken {
                token: id,
                created_at,
                ready_at,
            });
        }
        Ok(Token {
            id,
            payload,
            created_at,
            ready_at,
        })
    }

    pub fn id(&self) -> TokenId {
        self.id
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn get(&self, key: &str) -> Option<&Scalar> {
        self.payload.get(key)
    }

    pub fn created_at(&self) -> Tick {
        self.created_at
    }

    pub fn ready_at(&self) -> Tick {
        self.ready_at
    }

    pub fn is_ready(&self, now: Tick) -> bool {
        self.ready_at <= now
    }
}
