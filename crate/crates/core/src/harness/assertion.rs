// SPDX-License-Identifier: Apache-2.0

//! Expected-property assertions over a benchmark's output document.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::Digest;
use crate::pipeline::sandbox::ExitStatus;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyExpectation {
    pub key: String,
    pub value: String,
}

/// Exactly the fields of each kind are accepted on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Assertion {
    StatusOnly { expected_exit: i32 },
    OutputDigest { expected_digest: Digest },
    KeyEquals { expectations: Vec<KeyExpectation> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

impl Assertion {
    pub fn key_equals<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let expectations = pairs
            .into_iter()
            .map(|(k, v)| KeyExpectation { key: k.into(), value: v.into() })
            .collect();
        Assertion::KeyEquals { expectations }.normalized()
    }

    /// Sorted, de-duplicated expectations so equal assertions compare equal.
    pub fn normalized(self) -> Self {
        match self {
            Assertion::KeyEquals { mut expectations } => {
                expectations.sort();
                expectations.dedup();
                Assertion::KeyEquals { expectations }
            }
            other => other,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Assertion::KeyEquals { expectations } if expectations.is_empty() => {
                Err("KEY_EQUALS needs at least one expectation".into())
            }
            Assertion::KeyEquals { expectations } => {
                let mut keys: Vec<&str> = expectations.iter().map(|e| e.key.as_str()).collect();
                keys.sort_unstable();
                if keys.iter().any(|k| k.is_empty()) {
                    return Err("KEY_EQUALS keys must be non-empty".into());
                }
                match keys.windows(2).find(|w| w[0] == w[1]) {
                    Some(w) => Err(format!("key {:?} has conflicting expectations", w[0])),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn needs_output(&self) -> bool {
        !matches!(self, Assertion::StatusOnly { .. })
    }
}

/// Textual form used for KEY_EQUALS: strings as-is, other values as JSON.
pub fn scalar_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Evaluates one cell. `output` is the parsed output document, or `None`
/// when the tool produced none or it did not parse.
pub fn evaluate(assertion: &Assertion, exit: &ExitStatus, output: Option<&Value>) -> Verdict {
    match assertion {
        Assertion::StatusOnly { expected_exit } => {
            if exit.code() == Some(*expected_exit) {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        Assertion::OutputDigest { expected_digest } => match output {
            None => Verdict::Error,
            Some(doc) if Digest::of_canonical_json(doc) == *expected_digest => Verdict::Pass,
            Some(_) => Verdict::Fail,
        },
        Assertion::KeyEquals { expectations } => {
            let Some(Value::Object(doc)) = output else {
                return Verdict::Error;
            };
            let all = expectations
                .iter()
                .all(|e| doc.get(&e.key).is_some_and(|v| scalar_text(v) == e.value));
            if all {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
    }
}
