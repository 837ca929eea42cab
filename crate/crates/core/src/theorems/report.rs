//! Structured results of theorem-checker runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// 64-bit FNV-1a, printed as fixed-width hex; used to fingerprint checker
/// inputs and run configurations.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

pub fn digest_json(value: &Value) -> String {
    digest_bytes(value.to_string().as_bytes())
}

/// Result of one checker run: the asserted relation, what was observed,
/// and the signed margin against the tolerance. `pass` is derived, never
/// set directly, so reports stay consistent with their margins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub id: String,
    pub relation: String,
    pub inputs_digest: String,
    /// Observed quantities (lhs/rhs arrays or scalars, ladders, witnesses).
    pub observed: Value,
    /// Signed margin; the check passes iff margin >= -tolerance.
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Informational status such as "hypothesis-not-satisfied".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub grid: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub runtime_ms: f64,
}

/// Incremental construction so every checker records runtime and inputs
/// uniformly.
pub struct ReportBuilder {
    id: String,
    relation: String,
    tolerance: f64,
    inputs: Value,
    observed: serde_json::Map<String, Value>,
    grid: Value,
    seed: Option<u64>,
    note: Option<String>,
    started: Instant,
}

impl ReportBuilder {
    pub fn new(id: &str, relation: &str, tolerance: f64, inputs: Value) -> Self {
        ReportBuilder {
            id: id.to_string(),
            relation: relation.to_string(),
            tolerance,
            inputs,
            observed: serde_json::Map::new(),
            grid: Value::Null,
            seed: None,
            note: None,
            started: Instant::now(),
        }
    }

    pub fn observe(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.observed.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable"),
        );
        self
    }

    pub fn grid(&mut self, value: impl Serialize) -> &mut Self {
        self.grid = serde_json::to_value(value).expect("serializable");
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.note = Some(note.into());
        self
    }

    /// Seal the report; pass iff margin >= -tolerance.
    pub fn finish(self, margin: f64) -> CheckReport {
        CheckReport {
            id: self.id,
            relation: self.relation,
            inputs_digest: digest_json(&self.inputs),
            observed: Value::Object(self.observed),
            margin,
            tolerance: self.tolerance,
            pass: margin >= -self.tolerance,
            note: self.note,
            grid: self.grid,
            seed: self.seed,
            runtime_ms: self.started.elapsed().as_secs_f64() * 1e3,
        }
    }
}
