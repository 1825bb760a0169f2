// SPDX-License-Identifier: Apache-2.0

//! Domain types shared by every other module: unit-norm embeddings, task
//! kinds, hint/query records and the JSONL line format they travel in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vectors whose L2 norm is below this are rejected as zero vectors.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Maximum tolerated deviation from unit norm for a constructed embedding.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Inputs already this close to unit norm are stored without rescaling, which
/// makes normalization idempotent on its own f32 output.
const PASSTHROUGH_TOL: f64 = 4.0 * f32::EPSILON as f64;

pub const CLEAR_MAX_PERCENT: f64 = 10.0;
pub const CLOUDY_MIN_PERCENT: f64 = 20.0;

pub const HAZARD_GROUPS: [&str; 3] = ["flood", "normal", "wildfire"];
pub const TIME_TAGS: [&str; 2] = ["after", "before"];
pub const BUILDINGS_ABSENT: &str = "absent";
pub const BUILDINGS_PRESENT: &str = "present";
pub const QUADRANTS: u8 = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding: expected {expected} components, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("embedding[{index}]: non-finite component")]
    NonFinite { index: usize },
    #[error("embedding: zero vector (norm {norm:e})")]
    ZeroVector { norm: f64 },
    #[error("embedding: dimension must be positive")]
    ZeroDim,
    #[error("embedding: norm {norm} is not unit within {UNIT_NORM_TOL:e}")]
    NotUnit { norm: f64 },
}

/// A fixed-dimension, unit-norm, finite embedding stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Box<[f32]>,
}

impl Embedding {
    /// Validates `raw` against `dim` and scales it to unit L2 norm.
    ///
    /// The norm is computed in f64 and the quotient rounded to f32.
    pub fn normalize(raw: &[f64], dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if raw.len() != dim {
            return Err(EmbeddingError::LengthMismatch { expected: dim, actual: raw.len() });
        }
        if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= ZERO_NORM_EPS) {
            return Err(EmbeddingError::ZeroVector { norm });
        }
        let values: Box<[f32]> = if (norm - 1.0).abs() <= PASSTHROUGH_TOL {
            raw.iter().map(|&v| v as f32).collect()
        } else {
            raw.iter().map(|&v| (v / norm) as f32).collect()
        };
        // A finite f64 can overflow to inf when narrowed; catch it here.
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn normalize_f32(raw: &[f32]) -> Result<Self, EmbeddingError> {
        let wide: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
        Self::normalize(&wide, raw.len())
    }

    /// Wraps values that must already be unit norm, keeping their bits.
    pub fn from_unit_f32(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDim);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        let norm = values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(EmbeddingError::NotUnit { norm });
        }
        Ok(Self { values: values.into_boxed_slice() })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Hazard,
    Change,
    Cloud,
    Buildings,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Hazard, TaskKind::Change, TaskKind::Cloud, TaskKind::Buildings];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Hazard => "hazard",
            TaskKind::Change => "change",
            TaskKind::Cloud => "cloud",
            TaskKind::Buildings => "buildings",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task `{0}` (expected hazard, change, cloud or buildings)")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hazard" => Ok(TaskKind::Hazard),
            "change" => Ok(TaskKind::Change),
            "cloud" => Ok(TaskKind::Cloud),
            "buildings" => Ok(TaskKind::Buildings),
            other => Err(UnknownTask(other.to_string())),
        }
    }
}

/// Cloud label from STAC cloud cover: `<= 10` clear, `>= 20` cloudy, and
/// `None` for the excluded band in between.
pub fn cloud_label_from_cover(percent: f64) -> Result<Option<&'static str>, RecordError> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(RecordError::OutOfRange {
            field: "meta.cloud_cover_percent".into(),
            reason: format!("{percent} not in [0, 100]"),
        });
    }
    Ok(if percent <= CLEAR_MAX_PERCENT {
        Some("clear")
    } else if percent >= CLOUDY_MIN_PERCENT {
        Some("cloudy")
    } else {
        None
    })
}

pub fn buildings_label(count: u64) -> &'static str {
    if count == 0 {
        BUILDINGS_ABSENT
    } else {
        BUILDINGS_PRESENT
    }
}

/// A metadata value: integers stay integers so that round-trips are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl MetaValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            MetaValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            MetaValue::Int(i) => Some(*i as f64),
            MetaValue::Float(f) => Some(*f),
            MetaValue::Str(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            MetaValue::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl From<&str> for MetaValue {
    fn from(s: &str) -> Self {
        MetaValue::Str(s.to_string())
    }
}

impl From<String> for MetaValue {
    fn from(s: String) -> Self {
        MetaValue::Str(s)
    }
}

impl From<i64> for MetaValue {
    fn from(v: i64) -> Self {
        MetaValue::Int(v)
    }
}

impl From<f64> for MetaValue {
    fn from(v: f64) -> Self {
        MetaValue::Float(v)
    }
}

pub type Meta = BTreeMap<String, MetaValue>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has wrong type: expected {expected}")]
    WrongType { field: String, expected: &'static str },
    #[error(transparent)]
    UnknownTask(#[from] UnknownTask),
    #[error("field `{field}` out of range: {reason}")]
    OutOfRange { field: String, reason: String },
    #[error("label `{label}` inconsistent with meta: {reason}")]
    LabelInconsistent { label: String, reason: String },
    #[error("field `id` must be non-empty")]
    EmptyId,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A record that failed to parse, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {source}")]
pub struct LineError {
    pub line: usize,
    #[source]
    pub source: RecordError,
}

/// One (embedding, metadata) tuple. Hints and queries share the shape; a
/// query's label is ground truth kept for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub task: TaskKind,
    pub label: String,
    pub embedding: Embedding,
    pub meta: Meta,
}

pub type HintRecord = Record;
pub type QueryRecord = Record;

impl Record {
    /// Builds a record, normalizing `raw` and enforcing the per-task meta rules.
    pub fn new(
        id: impl Into<String>,
        task: TaskKind,
        label: impl Into<String>,
        raw: &[f64],
        meta: Meta,
    ) -> Result<Self, RecordError> {
        let embedding = Embedding::normalize(raw, raw.len())?;
        Self::from_parts(id.into(), task, label.into(), embedding, meta)
    }

    pub fn from_parts(
        id: String,
        task: TaskKind,
        label: String,
        embedding: Embedding,
        meta: Meta,
    ) -> Result<Self, RecordError> {
        if id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        let record = Self { id, task, label, embedding, meta };
        record.validate_meta()?;
        Ok(record)
    }

    pub fn meta_str(&self, key: &str) -> Result<&str, RecordError> {
        self.require(key)?.as_str().ok_or_else(|| RecordError::WrongType {
            field: format!("meta.{key}"),
            expected: "string",
        })
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64, RecordError> {
        self.require(key)?.as_f64().ok_or_else(|| RecordError::WrongType {
            field: format!("meta.{key}"),
            expected: "number",
        })
    }

    pub fn meta_i64(&self, key: &str) -> Result<i64, RecordError> {
        self.require(key)?.as_i64().ok_or_else(|| RecordError::WrongType {
            field: format!("meta.{key}"),
            expected: "integer",
        })
    }

    fn require(&self, key: &str) -> Result<&MetaValue, RecordError> {
        self.meta.get(key).ok_or_else(|| RecordError::MissingField(format!("meta.{key}")))
    }

    /// Quadrant index; only meaningful for hazard, change and cloud records.
    pub fn quadrant(&self) -> Result<u8, RecordError> {
        let q = self.meta_i64("quadrant")?;
        if !(0..i64::from(QUADRANTS)).contains(&q) {
            return Err(RecordError::OutOfRange {
                field: "meta.quadrant".into(),
                reason: format!("{q} not in 0..=3"),
            });
        }
        Ok(q as u8)
    }

    /// The spatial unit whose quadrants are split between hints and queries.
    ///
    /// Hazard: `scene_id`. Change: `pair_id`. Cloud: `scene_id` when present,
    /// otherwise `site_id`. Buildings: `aoi_id`.
    pub fn scene_key(&self) -> Result<&str, RecordError> {
        match self.task {
            TaskKind::Hazard => self.meta_str("scene_id"),
            TaskKind::Change => self.meta_str("pair_id"),
            TaskKind::Cloud => match self.meta.get("scene_id") {
                Some(_) => self.meta_str("scene_id"),
                None => self.meta_str("site_id"),
            },
            TaskKind::Buildings => self.meta_str("aoi_id"),
        }
    }

    fn validate_meta(&self) -> Result<(), RecordError> {
        let inconsistent = |reason: String| RecordError::LabelInconsistent {
            label: self.label.clone(),
            reason,
        };
        match self.task {
            TaskKind::Hazard => {
                self.meta_str("scene_id")?;
                let group = self.meta_str("group")?;
                if !HAZARD_GROUPS.contains(&group) {
                    return Err(RecordError::OutOfRange {
                        field: "meta.group".into(),
                        reason: format!("`{group}` not one of wildfire, flood, normal"),
                    });
                }
                self.quadrant()?;
                if self.label != group {
                    return Err(inconsistent(format!("hazard label must equal group `{group}`")));
                }
            }
            TaskKind::Change => {
                self.meta_str("pair_id")?;
                let tag = self.meta_str("time_tag")?;
                if !TIME_TAGS.contains(&tag) {
                    return Err(RecordError::OutOfRange {
                        field: "meta.time_tag".into(),
                        reason: format!("`{tag}` not one of before, after"),
                    });
                }
                self.quadrant()?;
                if self.label != tag {
                    return Err(inconsistent(format!("change label must equal time_tag `{tag}`")));
                }
            }
            TaskKind::Cloud => {
                self.meta_str("site_id")?;
                if self.meta.contains_key("scene_id") {
                    self.meta_str("scene_id")?;
                }
                let cover = self.meta_f64("cloud_cover_percent")?;
                self.quadrant()?;
                match cloud_label_from_cover(cover)? {
                    Some(expected) if expected == self.label => {}
                    Some(expected) => {
                        return Err(inconsistent(format!("cloud_cover_percent {cover} implies `{expected}`")))
                    }
                    None => {
                        return Err(inconsistent(format!(
                            "cloud_cover_percent {cover} is in the excluded band ({CLEAR_MAX_PERCENT}, {CLOUDY_MIN_PERCENT})"
                        )))
                    }
                }
            }
            TaskKind::Buildings => {
                self.meta_str("aoi_id")?;
                let count = self.meta_i64("building_count")?;
                if count < 0 {
                    return Err(RecordError::OutOfRange {
                        field: "meta.building_count".into(),
                        reason: format!("{count} is negative"),
                    });
                }
                let expected = buildings_label(count as u64);
                if self.label != expected {
                    return Err(inconsistent(format!("building_count {count} implies `{expected}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    id: &'a str,
    task: TaskKind,
    label: &'a str,
    embedding: &'a [f32],
    meta: &'a Meta,
}

/// Parses one JSONL line. `line_no` is 1-based and attached to any error.
pub fn parse_record_line(line: &str, line_no: usize) -> Result<Record, LineError> {
    parse_record(line).map_err(|source| LineError { line: line_no, source })
}

/// Alias kept for readability at hint-ingest call sites.
pub fn parse_hint_line(line: &str, line_no: usize) -> Result<HintRecord, LineError> {
    parse_record_line(line, line_no)
}

fn parse_record(line: &str) -> Result<Record, RecordError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| RecordError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| RecordError::Json("line is not a JSON object".into()))?;

    let field = |name: &str| obj.get(name).ok_or_else(|| RecordError::MissingField(name.into()));
    let string_field = |name: &'static str| -> Result<String, RecordError> {
        field(name)?
            .as_str()
            .map(str::to_string)
            .ok_or(RecordError::WrongType { field: name.into(), expected: "string" })
    };

    let id = string_field("id")?;
    let task: TaskKind = string_field("task")?.parse()?;
    let label = string_field("label")?;

    let raw_embedding = field("embedding")?
        .as_array()
        .ok_or(RecordError::WrongType { field: "embedding".into(), expected: "array of numbers" })?;
    let raw: Vec<f64> = raw_embedding
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64().ok_or_else(|| RecordError::WrongType {
                field: format!("embedding[{i}]"),
                expected: "number",
            })
        })
        .collect::<Result<_, _>>()?;
    let embedding = Embedding::normalize(&raw, raw.len())?;

    let meta_obj = field("meta")?
        .as_object()
        .ok_or(RecordError::WrongType { field: "meta".into(), expected: "object" })?;
    let mut meta = Meta::new();
    for (key, v) in meta_obj {
        let mv = match v {
            serde_json::Value::String(s) => MetaValue::Str(s.clone()),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => MetaValue::Int(i),
                None => MetaValue::Float(n.as_f64().ok_or_else(|| RecordError::WrongType {
                    field: format!("meta.{key}"),
                    expected: "finite number",
                })?),
            },
            _ => {
                return Err(RecordError::WrongType { field: format!("meta.{key}"), expected: "string or number" })
            }
        };
        meta.insert(key.clone(), mv);
    }

    Record::from_parts(id, task, label, embedding, meta)
}

/// Serializes a record as one JSONL line (no trailing newline).
pub fn format_record(record: &Record) -> String {
    serde_json::to_string(&WireOut {
        id: &record.id,
        task: record.task,
        label: &record.label,
        embedding: record.embedding.as_slice(),
        meta: &record.meta,
    })
    .expect("record serialization cannot fail")
}

pub fn format_hint(record: &HintRecord) -> String {
    format_record(record)
}

/// Parses a whole JSONL document, skipping blank lines.
pub fn parse_jsonl(text: &str) -> Result<Vec<Record>, LineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record_line(l, i + 1))
        .collect()
}
