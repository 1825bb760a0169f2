// SPDX-License-Identifier: Apache-2.0

//! Exact in-memory cosine index.
//!
//! Embeddings are unit norm, so cosine similarity is a dot product. Products
//! of two f32 values are exact in f64 and are summed in f64 in component
//! order, which makes every score a pure function of its two inputs.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Embedding, HintRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty hint set")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {actual} (id `{id}`)")]
    DimMismatch { expected: usize, actual: usize, id: String },
    #[error("duplicate hint id `{0}`")]
    DuplicateId(String),
    #[error("no hint matches the group filter")]
    EmptyGroup,
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimMismatch { expected: a.dim(), actual: b.dim(), id: String::new() });
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += f64::from(x) * f64::from(y);
    }
    acc.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub id: String,
    pub score: f64,
}

/// Top-k result: scores non-increasing, equal scores in ascending id order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedMatches(pub Vec<Match>);

impl RankedMatches {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Match> {
        self.0.iter()
    }

    pub fn top(&self) -> Option<&Match> {
        self.0.first()
    }
}

/// The ranking order used everywhere: score descending, then id ascending.
#[inline]
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// How a group's similarities are reduced to one number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupAggregation {
    #[default]
    Mean,
    Max,
}

/// Immutable exact index over a hint set. Vectors live in one contiguous
/// row-major buffer; entries keep insertion order.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    data: Vec<f32>,
    hints: Vec<HintRecord>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn build(hints: Vec<HintRecord>) -> Result<Self, IndexError> {
        let first = hints.first().ok_or(IndexError::Empty)?;
        let dim = first.embedding.dim();
        let mut positions = HashMap::with_capacity(hints.len());
        let mut data = Vec::with_capacity(dim * hints.len());
        for (i, h) in hints.iter().enumerate() {
            if h.embedding.dim() != dim {
                return Err(IndexError::DimMismatch { expected: dim, actual: h.embedding.dim(), id: h.id.clone() });
            }
            if positions.insert(h.id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(h.id.clone()));
            }
            data.extend_from_slice(h.embedding.as_slice());
        }
        Ok(Self { dim, data, hints, positions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.hints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hints.is_empty()
    }

    pub fn hints(&self) -> &[HintRecord] {
        &self.hints
    }

    pub fn get(&self, id: &str) -> Option<&HintRecord> {
        self.positions.get(id).map(|&i| &self.hints[i])
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn check_dim(&self, q: &Embedding) -> Result<(), IndexError> {
        if q.dim() != self.dim {
            return Err(IndexError::DimMismatch { expected: self.dim, actual: q.dim(), id: String::new() });
        }
        Ok(())
    }

    /// Similarity of `q` to every entry, in insertion order.
    pub fn scores(&self, q: &Embedding) -> Result<Vec<f64>, IndexError> {
        self.check_dim(q)?;
        Ok((0..self.len()).map(|i| dot(self.row(i), q.as_slice())).collect())
    }

    /// Exact top-k by full scan. Returns fewer than `k` matches only when the
    /// index is smaller than `k`.
    pub fn search_topk(&self, q: &Embedding, k: usize) -> Result<RankedMatches, IndexError> {
        let scores = self.scores(q)?;
        let k = k.min(self.len());
        if k == 0 {
            return Ok(RankedMatches::default());
        }
        let cmp = |&a: &usize, &b: &usize| rank_order(scores[a], &self.hints[a].id, scores[b], &self.hints[b].id);
        let mut order: Vec<usize> = (0..self.len()).collect();
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(RankedMatches(
            order.into_iter().map(|i| Match { id: self.hints[i].id.clone(), score: scores[i] }).collect(),
        ))
    }

    /// Mean (or max) similarity of `q` to every entry accepted by `filter`.
    pub fn group_similarity(
        &self,
        q: &Embedding,
        filter: impl Fn(&HintRecord) -> bool,
        aggregation: GroupAggregation,
    ) -> Result<f64, IndexError> {
        self.check_dim(q)?;
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        let mut n = 0usize;
        for (i, h) in self.hints.iter().enumerate() {
            if filter(h) {
                let s = dot(self.row(i), q.as_slice());
                sum += s;
                max = max.max(s);
                n += 1;
            }
        }
        if n == 0 {
            return Err(IndexError::EmptyGroup);
        }
        Ok(match aggregation {
            GroupAggregation::Mean => sum / n as f64,
            GroupAggregation::Max => max,
        })
    }

    pub fn group_mean_similarity(&self, q: &Embedding, filter: impl Fn(&HintRecord) -> bool) -> Result<f64, IndexError> {
        self.group_similarity(q, filter, GroupAggregation::Mean)
    }
}

pub fn build_index(hints: Vec<HintRecord>) -> Result<VectorIndex, IndexError> {
    VectorIndex::build(hints)
}

pub fn search_topk(index: &VectorIndex, q: &Embedding, k: usize) -> Result<RankedMatches, IndexError> {
    index.search_topk(q, k)
}
