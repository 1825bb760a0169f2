// SPDX-License-Identifier: Apache-2.0

//! Downlink telemetry: one canonical JSON record per query, plus the uplink
//! cost model and the embedding codecs it is priced in.
//!
//! The canonical form has a fixed key order, no whitespace and scores with
//! exactly four decimals, so the byte length of a record is a function of its
//! content alone.

mod quant;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heads::Prediction;
use crate::index::RankedMatches;
use crate::model::{QueryRecord, TaskKind};

pub use quant::{dequantize_embedding, encoded_len, quantize_embedding, round_trip, QuantError, QuantizationScheme};

/// Records must stay under one kilobyte.
pub const MAX_TELEMETRY_BYTES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TelemetryError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("telemetry needs at least one match")]
    EmptyMatches,
    #[error("{matches} matches exceed k = {k}")]
    TooManyMatches { matches: usize, k: usize },
    #[error("telemetry record is {size} bytes, over the {MAX_TELEMETRY_BYTES}-byte budget")]
    Oversized { size: usize },
    #[error("invalid telemetry record: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMatch {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryRecord {
    pub task: TaskKind,
    pub query_id: String,
    pub label: String,
    pub k: usize,
    pub matches: Vec<TelemetryMatch>,
}

/// Fixed-point score text with four decimals; negative zero prints as zero.
pub fn format_score(score: f64) -> String {
    let s = format!("{score:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Score value as it appears after a canonical round-trip.
pub fn round_score(score: f64) -> f64 {
    format_score(score).parse().expect("formatted score parses")
}

fn push_json_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization cannot fail"));
}

impl TelemetryRecord {
    pub fn new(task: TaskKind, query_id: &str, label: &str, k: usize, matches: &RankedMatches) -> Self {
        Self {
            task,
            query_id: query_id.to_string(),
            label: label.to_string(),
            k,
            matches: matches.iter().map(|m| TelemetryMatch { id: m.id.clone(), score: round_score(m.score) }).collect(),
        }
    }

    /// Canonical serialization, without size checks.
    pub fn to_canonical(&self) -> String {
        let mut out = String::with_capacity(96 + self.matches.len() * 48);
        out.push_str("{\"task\":");
        push_json_str(&mut out, self.task.as_str());
        out.push_str(",\"query_id\":");
        push_json_str(&mut out, &self.query_id);
        out.push_str(",\"label\":");
        push_json_str(&mut out, &self.label);
        let _ = write!(out, ",\"k\":{},\"matches\":[", self.k);
        for (i, m) in self.matches.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("{\"id\":");
            push_json_str(&mut out, &m.id);
            out.push_str(",\"score\":");
            out.push_str(&format_score(m.score));
            out.push('}');
        }
        out.push_str("]}");
        out
    }

    /// Checked canonical bytes.
    pub fn encode(&self) -> Result<Vec<u8>, TelemetryError> {
        if self.k == 0 {
            return Err(TelemetryError::ZeroK);
        }
        if self.matches.is_empty() {
            return Err(TelemetryError::EmptyMatches);
        }
        if self.matches.len() > self.k {
            return Err(TelemetryError::TooManyMatches { matches: self.matches.len(), k: self.k });
        }
        let bytes = self.to_canonical().into_bytes();
        if bytes.len() > MAX_TELEMETRY_BYTES {
            return Err(TelemetryError::Oversized { size: bytes.len() });
        }
        Ok(bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, TelemetryError> {
        serde_json::from_slice(bytes).map_err(|e| TelemetryError::Parse(e.to_string()))
    }
}

/// Builds and encodes the telemetry record for one answered query.
pub fn emit_telemetry(
    q: &QueryRecord,
    p: &Prediction,
    matches: &RankedMatches,
    k: usize,
) -> Result<Vec<u8>, TelemetryError> {
    TelemetryRecord::new(q.task, &q.id, &p.label, k, matches).encode()
}

pub fn payload_size(record: &[u8]) -> usize {
    record.len()
}

/// Bytes per hint-set refresh: `n_hints * dim * b`. The INT8 per-vector
/// scale is not included here; see [`uplink_cost_with_overhead`].
pub fn uplink_cost(n_hints: u64, dim: u64, scheme: QuantizationScheme) -> u64 {
    n_hints * dim * scheme.bytes_per_component() as u64
}

/// Uplink cost including per-vector codec overhead (the INT8 scale).
pub fn uplink_cost_with_overhead(n_hints: u64, dim: u64, scheme: QuantizationScheme) -> u64 {
    n_hints * encoded_len(scheme, dim as usize) as u64
}

/// CSV with header `n_hints,dim,scheme,bytes`, one row per scheme.
pub fn uplink_cost_csv(n_hints: u64, dim: u64) -> String {
    let mut out = String::from("n_hints,dim,scheme,bytes\n");
    for scheme in QuantizationScheme::ALL {
        let _ = writeln!(out, "{n_hints},{dim},{scheme},{}", uplink_cost(n_hints, dim, scheme));
    }
    out
}
