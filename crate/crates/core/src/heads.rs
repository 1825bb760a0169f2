// SPDX-License-Identifier: Apache-2.0

//! Decision heads: everything that turns a query embedding (plus, for the
//! retrieval head, its ranked neighbours) into a label.
//!
//! Every tie in this module is broken toward the lexicographically smallest
//! label, and [`Prediction::tied`] records when that rule decided the output.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::RankedMatches;
use crate::model::{Embedding, HintRecord, QueryRecord};
use crate::rng::SplitMix64;

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-3;

/// Relative residual the ridge solve must reach before a model is returned.
pub const RIDGE_RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeadError {
    #[error("no matches to vote over")]
    EmptyMatches,
    #[error("match id `{0}` has no label")]
    UnlabeledId(String),
    #[error("empty hint set")]
    EmptyHints,
    #[error("hint set has a single class `{0}`; need at least two")]
    SingleClass(String),
    #[error("class `{0}` has no hints")]
    EmptyClass(String),
    #[error("class `{0}` has a zero mean embedding")]
    ZeroCentroid(String),
    #[error("dimension mismatch: model {expected}, query {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("ridge lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("ridge solve failed: {0}")]
    Solve(String),
    #[error("empty label set")]
    EmptyLabels,
    #[error("unknown head `{0}` (expected retrieval, centroid, probe, random, constant or oracle)")]
    UnknownHead(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Retrieval,
    Centroid,
    Probe,
    Random,
    Constant,
    Oracle,
}

impl HeadKind {
    pub const ALL: [HeadKind; 6] =
        [HeadKind::Retrieval, HeadKind::Centroid, HeadKind::Probe, HeadKind::Random, HeadKind::Constant, HeadKind::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Retrieval => "retrieval",
            HeadKind::Centroid => "centroid",
            HeadKind::Probe => "probe",
            HeadKind::Random => "random",
            HeadKind::Constant => "constant",
            HeadKind::Oracle => "oracle",
        }
    }

    /// Heads whose label does not depend on how many neighbours are retrieved.
    pub fn is_k_independent(self) -> bool {
        matches!(self, HeadKind::Centroid | HeadKind::Probe)
    }

    /// Heads that read hint embeddings.
    pub fn uses_embeddings(self) -> bool {
        matches!(self, HeadKind::Retrieval | HeadKind::Centroid | HeadKind::Probe)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = HeadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeadKind::ALL.into_iter().find(|h| h.as_str() == s).ok_or_else(|| HeadError::UnknownHead(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub head: HeadKind,
    /// Head-specific and uncalibrated.
    pub confidence: Option<f64>,
    /// True when the winning label was chosen by the tie rule.
    pub tied: bool,
}

/// Picks the best-scoring label from `(label, score)` pairs iterated in
/// ascending label order; a later label must be strictly better to win.
fn argmax_labels<'a>(scores: impl IntoIterator<Item = (&'a str, f64)>) -> Option<(&'a str, f64, bool)> {
    let mut best: Option<(&str, f64, bool)> = None;
    for (label, score) in scores {
        match &mut best {
            Some((_, best_score, tied)) if score <= *best_score => {
                if score == *best_score {
                    *tied = true;
                }
            }
            _ => best = Some((label, score, false)),
        }
    }
    best
}

/// Similarity-weighted vote over retrieved neighbours.
///
/// Each neighbour votes for its label with weight `max(score, 0)`. If every
/// weight is zero the vote falls back to plain counts. Per-label weights are
/// summed in sorted order so the outcome does not depend on how equal-score
/// neighbours were ordered.
pub fn knn_vote<'a>(
    matches: &RankedMatches,
    label_of: impl Fn(&str) -> Option<&'a str>,
) -> Result<Prediction, HeadError> {
    if matches.is_empty() {
        return Err(HeadError::EmptyMatches);
    }
    let mut weights: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in matches.iter() {
        let label = label_of(&m.id).ok_or_else(|| HeadError::UnlabeledId(m.id.clone()))?;
        weights.entry(label).or_default().push(m.score.max(0.0));
    }
    let mut sums: BTreeMap<&str, f64> = weights
        .iter_mut()
        .map(|(label, ws)| {
            ws.sort_by(f64::total_cmp);
            (*label, ws.iter().sum::<f64>())
        })
        .collect();
    let mut total: f64 = sums.values().sum();
    if total == 0.0 {
        for (label, s) in sums.iter_mut() {
            *s = weights[label].len() as f64;
        }
        total = matches.len() as f64;
    }
    let (label, score, tied) = argmax_labels(sums.iter().map(|(l, s)| (*l, *s))).expect("non-empty");
    Ok(Prediction { label: label.to_string(), head: HeadKind::Retrieval, confidence: Some(score / total), tied })
}

fn class_members(hints: &[HintRecord]) -> Result<BTreeMap<&str, Vec<&HintRecord>>, HeadError> {
    if hints.is_empty() {
        return Err(HeadError::EmptyHints);
    }
    let mut by_class: BTreeMap<&str, Vec<&HintRecord>> = BTreeMap::new();
    for h in hints {
        by_class.entry(h.label.as_str()).or_default().push(h);
    }
    if by_class.len() < 2 {
        return Err(HeadError::SingleClass(hints[0].label.clone()));
    }
    Ok(by_class)
}

fn common_dim(hints: &[HintRecord]) -> Result<usize, HeadError> {
    let dim = hints[0].embedding.dim();
    for h in hints {
        if h.embedding.dim() != dim {
            return Err(HeadError::DimMismatch { expected: dim, actual: h.embedding.dim() });
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    /// Sorted by label.
    pub centroids: Vec<(String, Embedding)>,
}

/// Per-class mean of member embeddings, re-normalized to unit length.
pub fn fit_centroids(hints: &[HintRecord]) -> Result<CentroidModel, HeadError> {
    let by_class = class_members(hints)?;
    let dim = common_dim(hints)?;
    let mut centroids = Vec::with_capacity(by_class.len());
    for (label, members) in by_class {
        let mut mean = vec![0.0f64; dim];
        for h in &members {
            for (m, &v) in mean.iter_mut().zip(h.embedding.as_slice()) {
                *m += f64::from(v);
            }
        }
        let n = members.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let centroid =
            Embedding::normalize(&mean, dim).map_err(|_| HeadError::ZeroCentroid(label.to_string()))?;
        centroids.push((label.to_string(), centroid));
    }
    Ok(CentroidModel { centroids })
}

impl CentroidModel {
    pub fn dim(&self) -> usize {
        self.centroids[0].1.dim()
    }

    pub fn predict(&self, q: &Embedding) -> Result<Prediction, HeadError> {
        if q.dim() != self.dim() {
            return Err(HeadError::DimMismatch { expected: self.dim(), actual: q.dim() });
        }
        let scores: Vec<(&str, f64)> = self
            .centroids
            .iter()
            .map(|(label, c)| {
                let s: f64 = c.as_slice().iter().zip(q.as_slice()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                (label.as_str(), s)
            })
            .collect();
        let (label, score, tied) = argmax_labels(scores).expect("at least two centroids");
        Ok(Prediction { label: label.to_string(), head: HeadKind::Centroid, confidence: Some(score), tied })
    }
}

pub fn centroid_predict(model: &CentroidModel, q: &Embedding) -> Result<Prediction, HeadError> {
    model.predict(q)
}

/// One-vs-rest ridge regression on one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeProbeModel {
    /// dim x classes.
    pub weights: DMatrix<f64>,
    /// Sorted labels; column `j` of `weights` scores `classes[j]`.
    pub classes: Vec<String>,
    pub lambda: f64,
}

/// Row-major design matrix and one-hot targets for `hints` in input order.
pub fn design_matrices(hints: &[HintRecord], classes: &[String]) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = hints[0].embedding.dim();
    let x = DMatrix::from_fn(hints.len(), dim, |i, j| f64::from(hints[i].embedding.as_slice()[j]));
    let y = DMatrix::from_fn(hints.len(), classes.len(), |i, j| if hints[i].label == classes[j] { 1.0 } else { 0.0 });
    (x, y)
}

/// Solves `(XᵀX + λI) W = XᵀY` by Cholesky.
///
/// When there are fewer samples than dimensions the equivalent dual system
/// `W = Xᵀ (XXᵀ + λI)⁻¹ Y` is solved instead, which is much smaller for the
/// usual hint-set sizes. The primal residual is checked either way.
pub fn solve_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, HeadError> {
    if !(lambda > 0.0) {
        return Err(HeadError::NonPositiveLambda(lambda));
    }
    let (n, d) = x.shape();
    let xt = x.transpose();
    let w = if n < d {
        let mut gram = x * &xt;
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let chol = gram.cholesky().ok_or_else(|| HeadError::Solve("dual Gram matrix is not positive definite".into()))?;
        &xt * chol.solve(y)
    } else {
        let mut gram = &xt * x;
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let chol = gram.cholesky().ok_or_else(|| HeadError::Solve("Gram matrix is not positive definite".into()))?;
        chol.solve(&(&xt * y))
    };

    let rhs = &xt * y;
    let lhs = &xt * (x * &w) + &w * lambda;
    let denom = rhs.norm();
    let residual = (lhs - &rhs).norm() / if denom > 0.0 { denom } else { 1.0 };
    if residual > RIDGE_RESIDUAL_TOL {
        return Err(HeadError::Solve(format!("relative residual {residual:e} exceeds {RIDGE_RESIDUAL_TOL:e}")));
    }
    Ok(w)
}

pub fn fit_ridge_probe(hints: &[HintRecord], lambda: f64) -> Result<RidgeProbeModel, HeadError> {
    if !(lambda > 0.0) {
        return Err(HeadError::NonPositiveLambda(lambda));
    }
    let classes: Vec<String> = class_members(hints)?.keys().map(|s| s.to_string()).collect();
    common_dim(hints)?;
    let (x, y) = design_matrices(hints, &classes);
    let weights = solve_ridge(&x, &y, lambda)?;
    Ok(RidgeProbeModel { weights, classes, lambda })
}

impl RidgeProbeModel {
    pub fn scores(&self, q: &Embedding) -> Result<Vec<f64>, HeadError> {
        if q.dim() != self.weights.nrows() {
            return Err(HeadError::DimMismatch { expected: self.weights.nrows(), actual: q.dim() });
        }
        let qv = DVector::from_iterator(q.dim(), q.as_slice().iter().map(|&v| f64::from(v)));
        Ok((self.weights.transpose() * qv).iter().copied().collect())
    }

    pub fn predict(&self, q: &Embedding) -> Result<Prediction, HeadError> {
        let scores = self.scores(q)?;
        let (label, score, tied) =
            argmax_labels(self.classes.iter().map(String::as_str).zip(scores)).expect("at least two classes");
        Ok(Prediction { label: label.to_string(), head: HeadKind::Probe, confidence: Some(score), tied })
    }
}

pub fn probe_predict(model: &RidgeProbeModel, q: &Embedding) -> Result<Prediction, HeadError> {
    model.predict(q)
}

/// Uniform draws over the distinct hint labels from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomHead {
    labels: Vec<String>,
    rng: SplitMix64,
}

impl RandomHead {
    pub fn new(labels: impl IntoIterator<Item = String>, rng: SplitMix64) -> Result<Self, HeadError> {
        let mut labels: Vec<String> = labels.into_iter().collect();
        labels.sort();
        labels.dedup();
        if labels.is_empty() {
            return Err(HeadError::EmptyLabels);
        }
        Ok(Self { labels, rng })
    }

    pub fn from_hints(hints: &[HintRecord], rng: SplitMix64) -> Result<Self, HeadError> {
        Self::new(hints.iter().map(|h| h.label.clone()), rng)
    }

    pub fn predict(&mut self) -> Prediction {
        let i = self.rng.next_below(self.labels.len() as u64) as usize;
        Prediction { label: self.labels[i].clone(), head: HeadKind::Random, confidence: None, tied: false }
    }
}

pub fn random_baseline(labels: &[String], rng: &mut SplitMix64) -> Result<Prediction, HeadError> {
    let mut head = RandomHead::new(labels.iter().cloned(), rng.clone())?;
    let p = head.predict();
    *rng = head.rng;
    Ok(p)
}

/// Majority hint label, ties to the smallest label.
pub fn constant_baseline(hints: &[HintRecord]) -> Result<Prediction, HeadError> {
    if hints.is_empty() {
        return Err(HeadError::EmptyHints);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for h in hints {
        *counts.entry(h.label.as_str()).or_default() += 1;
    }
    let (label, count, tied) = argmax_labels(counts.iter().map(|(l, &c)| (*l, c as f64))).expect("non-empty");
    Ok(Prediction {
        label: label.to_string(),
        head: HeadKind::Constant,
        confidence: Some(count / hints.len() as f64),
        tied,
    })
}

pub fn oracle(q: &QueryRecord) -> Prediction {
    Prediction { label: q.label.clone(), head: HeadKind::Oracle, confidence: Some(1.0), tied: false }
}
