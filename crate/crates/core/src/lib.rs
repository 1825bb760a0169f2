// SPDX-License-Identifier: Apache-2.0

//! On-board triage from compact embeddings: an exact cosine index over
//! ground-curated hints, lightweight decision heads, compact telemetry, and
//! an offline benchmark harness.

pub mod bench;
pub mod heads;
pub mod index;
pub mod model;
pub mod rng;
pub mod telemetry;

pub use heads::{HeadKind, Prediction};
pub use index::{build_index, search_topk, Match, RankedMatches, VectorIndex};
pub use model::{Embedding, HintRecord, QueryRecord, Record, TaskKind};
pub use telemetry::{emit_telemetry, QuantizationScheme, TelemetryRecord};
