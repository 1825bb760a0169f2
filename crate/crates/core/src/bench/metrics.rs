// SPDX-License-Identifier: Apache-2.0

//! Per-task metrics. Every metric lies in [0, 1].

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::index::{GroupAggregation, IndexError, RankedMatches, VectorIndex};
use crate::model::QueryRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric over an empty query set")]
    Empty,
    #[error("class `{0}` has no true queries")]
    EmptyClass(String),
    #[error("query `{id}`: {source}")]
    Group {
        id: String,
        #[source]
        source: IndexError,
    },
    #[error("query `{0}` is missing meta.pair_id")]
    MissingPair(String),
}

/// 1 if any retrieved hint carries the query's label.
pub fn recall_at_k<'a>(matches: &RankedMatches, truth: &str, label_of: impl Fn(&str) -> Option<&'a str>) -> u8 {
    u8::from(matches.iter().any(|m| label_of(&m.id) == Some(truth)))
}

/// Fraction of true indicators.
pub fn top1_accuracy(indicators: &[bool]) -> Result<f64, MetricError> {
    if indicators.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(indicators.iter().filter(|&&b| b).count() as f64 / indicators.len() as f64)
}

/// Fraction of change queries whose similarity to their pair's `after` hints
/// strictly exceeds their similarity to the pair's `before` hints.
pub fn time_preference_accuracy(
    queries: &[QueryRecord],
    index: &VectorIndex,
    aggregation: GroupAggregation,
) -> Result<f64, MetricError> {
    let indicators = queries
        .iter()
        .map(|q| time_preference(q, index, aggregation))
        .collect::<Result<Vec<_>, _>>()?;
    top1_accuracy(&indicators)
}

/// Per-query time preference; equal group similarities count as incorrect.
pub fn time_preference(q: &QueryRecord, index: &VectorIndex, aggregation: GroupAggregation) -> Result<bool, MetricError> {
    let pair = q.meta_str("pair_id").map_err(|_| MetricError::MissingPair(q.id.clone()))?;
    let group = |tag: &'static str| {
        index
            .group_similarity(
                &q.embedding,
                |h| h.label == tag && h.meta.get("pair_id").and_then(|v| v.as_str()) == Some(pair),
                aggregation,
            )
            .map_err(|source| MetricError::Group { id: q.id.clone(), source })
    };
    Ok(group("after")? > group("before")?)
}

/// Truth x prediction counts over a declared label set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Confusion {
    classes: BTreeSet<String>,
    declared: BTreeSet<String>,
    counts: BTreeMap<(String, String), usize>,
    total: usize,
}

impl Confusion {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares classes that must be present as truth for balanced accuracy.
    pub fn with_classes<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let declared: BTreeSet<String> = classes.into_iter().map(Into::into).collect();
        Self { classes: declared.clone(), declared, ..Self::default() }
    }

    pub fn record(&mut self, truth: &str, predicted: &str) {
        self.classes.insert(truth.to_string());
        self.classes.insert(predicted.to_string());
        *self.counts.entry((truth.to_string(), predicted.to_string())).or_default() += 1;
        self.total += 1;
    }

    pub fn add(&mut self, truth: &str, predicted: &str, n: usize) {
        for _ in 0..n {
            self.record(truth, predicted);
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count(&self, truth: &str, predicted: &str) -> usize {
        self.counts.get(&(truth.to_string(), predicted.to_string())).copied().unwrap_or(0)
    }

    fn true_total(&self, class: &str) -> usize {
        self.counts.iter().filter(|((t, _), _)| t == class).map(|(_, c)| c).sum()
    }

    fn predicted_total(&self, class: &str) -> usize {
        self.counts.iter().filter(|((_, p), _)| p == class).map(|(_, c)| c).sum()
    }

    pub fn accuracy(&self) -> Result<f64, MetricError> {
        if self.total == 0 {
            return Err(MetricError::Empty);
        }
        let correct: usize = self.counts.iter().filter(|((t, p), _)| t == p).map(|(_, c)| c).sum();
        Ok(correct as f64 / self.total as f64)
    }
}

/// Unweighted mean of per-class recall over classes that occur as truth (or
/// were declared). Classes that only ever appear as predictions are ignored.
pub fn balanced_accuracy(confusion: &Confusion) -> Result<f64, MetricError> {
    if confusion.total == 0 {
        return Err(MetricError::Empty);
    }
    let mut recalls = Vec::new();
    for class in &confusion.classes {
        let total = confusion.true_total(class);
        if total == 0 {
            if confusion.declared.contains(class) {
                return Err(MetricError::EmptyClass(class.clone()));
            }
            continue;
        }
        recalls.push(confusion.count(class, class) as f64 / total as f64);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Unweighted mean of per-class F1 over every class seen as truth, as a
/// prediction, or declared. A class with no true and no predicted members
/// scores 0.
pub fn macro_f1(confusion: &Confusion) -> Result<f64, MetricError> {
    if confusion.total == 0 {
        return Err(MetricError::Empty);
    }
    let f1s: Vec<f64> = confusion
        .classes
        .iter()
        .map(|class| {
            let tp = confusion.count(class, class) as f64;
            let fp = confusion.predicted_total(class) as f64 - tp;
            let fn_ = confusion.true_total(class) as f64 - tp;
            let denom = 2.0 * tp + fp + fn_;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect();
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, Match};
    use crate::model::{Meta, MetaValue, Record, TaskKind};
    use proptest::prelude::*;

    fn change(id: &str, pair: &str, tag: &str, q: i64, v: &[f64]) -> Record {
        let meta = Meta::from([
            ("pair_id".to_string(), MetaValue::from(pair)),
            ("time_tag".to_string(), MetaValue::from(tag)),
            ("quadrant".to_string(), MetaValue::Int(q)),
        ]);
        Record::new(id, TaskKind::Change, tag, v, meta).unwrap()
    }

    #[test]
    fn recall_examples() {
        let labels = |id: &str| Some(if id.starts_with('a') { "A" } else { "B" });
        let m = RankedMatches(
            ["b1", "b2", "a1", "b3", "b4"].iter().map(|id| Match { id: id.to_string(), score: 0.5 }).collect(),
        );
        assert_eq!(recall_at_k(&m, "A", labels), 1);
        assert_eq!(recall_at_k(&m, "C", labels), 0);
        let top1 = RankedMatches(vec![Match { id: "a9".into(), score: 0.9 }]);
        assert_eq!(recall_at_k(&top1, "A", labels), 1);
    }

    #[test]
    fn top1_examples() {
        assert_eq!(top1_accuracy(&[true; 4]).unwrap(), 1.0);
        let mut nine = vec![true; 9];
        nine.push(false);
        assert_eq!(top1_accuracy(&nine).unwrap(), 0.9);
        assert_eq!(top1_accuracy(&[]).unwrap_err(), MetricError::Empty);
    }

    #[test]
    fn time_preference_examples() {
        let index = build_index(vec![
            change("p-a1", "p", "after", 1, &[1.0, 0.0, 0.0]),
            change("p-a2", "p", "after", 2, &[0.8, 0.6, 0.0]),
            change("p-b1", "p", "before", 1, &[0.0, 0.0, 1.0]),
            change("p-b2", "p", "before", 2, &[0.0, 0.6, 0.8]),
        ])
        .unwrap();
        let q = change("q", "p", "after", 0, &[1.0, 0.0, 0.0]);
        assert_eq!(time_preference_accuracy(&[q], &index, GroupAggregation::Mean).unwrap(), 1.0);

        // Equidistant from both groups: strict inequality marks it wrong.
        let tie_index = build_index(vec![
            change("p-a1", "p", "after", 1, &[1.0, 0.0]),
            change("p-b1", "p", "before", 1, &[0.0, 1.0]),
        ])
        .unwrap();
        let q = change("q", "p", "after", 0, &[1.0, 1.0]);
        assert_eq!(time_preference_accuracy(&[q], &tie_index, GroupAggregation::Mean).unwrap(), 0.0);

        let q = change("q", "other", "after", 0, &[1.0, 0.0]);
        assert!(matches!(
            time_preference_accuracy(&[q], &tie_index, GroupAggregation::Mean),
            Err(MetricError::Group { source: IndexError::EmptyGroup, .. })
        ));
    }

    #[test]
    fn balanced_accuracy_examples() {
        let mut perfect = Confusion::new();
        perfect.add("A", "A", 3);
        perfect.add("B", "B", 2);
        assert_eq!(balanced_accuracy(&perfect).unwrap(), 1.0);

        let mut constant = Confusion::new();
        constant.add("A", "A", 7);
        constant.add("B", "A", 3);
        assert_eq!(balanced_accuracy(&constant).unwrap(), 0.5);

        let mut mixed = Confusion::new();
        mixed.add("A", "A", 8);
        mixed.add("A", "B", 2);
        mixed.add("B", "B", 3);
        mixed.add("B", "A", 2);
        assert!((balanced_accuracy(&mixed).unwrap() - 0.7).abs() < 1e-12);

        let mut missing = Confusion::with_classes(["A", "B"]);
        missing.add("A", "A", 2);
        assert_eq!(balanced_accuracy(&missing).unwrap_err(), MetricError::EmptyClass("B".into()));
    }

    #[test]
    fn macro_f1_examples() {
        let mut perfect = Confusion::new();
        perfect.add("A", "A", 2);
        perfect.add("B", "B", 2);
        assert_eq!(macro_f1(&perfect).unwrap(), 1.0);

        let mut c = Confusion::new();
        c.add("A", "A", 1);
        c.add("B", "A", 1);
        c.add("A", "B", 1);
        c.add("B", "B", 1);
        assert!((macro_f1(&c).unwrap() - 0.5).abs() < 1e-12);

        let mut one_class = Confusion::new();
        one_class.add("A", "A", 2);
        one_class.add("B", "A", 2);
        assert!((macro_f1(&one_class).unwrap() - 1.0 / 3.0).abs() < 1e-12);

        let mut declared = Confusion::with_classes(["A", "B", "C"]);
        declared.add("A", "A", 1);
        declared.add("B", "B", 1);
        assert!((macro_f1(&declared).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_std_constant_series() {
        assert_eq!(mean_std(&[0.7; 10]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 0.0]);
        assert_eq!((m, s), (0.5, 0.5));
    }

    proptest! {
        #[test]
        fn balanced_equals_accuracy_when_balanced_and_symmetric(n in 1usize..20, correct in 0usize..20) {
            let correct = correct.min(n);
            let mut c = Confusion::new();
            c.add("A", "A", correct);
            c.add("A", "B", n - correct);
            c.add("B", "B", correct);
            c.add("B", "A", n - correct);
            prop_assert!((balanced_accuracy(&c).unwrap() - c.accuracy().unwrap()).abs() < 1e-12);
        }

        #[test]
        fn metrics_in_unit_interval(pairs in prop::collection::vec((0u8..3, 0u8..3), 1..60)) {
            let mut c = Confusion::new();
            for (t, p) in &pairs {
                c.record(&format!("c{t}"), &format!("c{p}"));
            }
            for v in [balanced_accuracy(&c).unwrap(), macro_f1(&c).unwrap(), c.accuracy().unwrap()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
