// SPDX-License-Identifier: Apache-2.0

//! Benchmark reports and their CSV / JSON / text renderings.
//!
//! All float fields print with Rust's shortest round-trip formatting, so a
//! report's bytes are a pure function of its values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::heads::HeadKind;
use crate::model::TaskKind;
use crate::telemetry::QuantizationScheme;

pub const METRIC_RECALL_AT_K: &str = "recall_at_k";
pub const METRIC_TOP1: &str = "top1";
pub const METRIC_FALSE_POSITIVE_RATE: &str = "false_positive_rate";
pub const METRIC_TIME_PREF: &str = "time_pref";
pub const METRIC_TIME_PREF_GROUP: &str = "time_pref_group";
pub const METRIC_BALANCED_ACC: &str = "balanced_acc";
pub const METRIC_MACRO_F1: &str = "macro_f1";

/// Significance marker used in the summary tables.
pub fn significance_marker(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        _ => "",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub task: TaskKind,
    pub head: HeadKind,
    pub k: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub per_seed: Vec<f64>,
    /// Paired Wilcoxon p-value against the retrieval head's per-seed series.
    pub p_vs_retrieval: Option<f64>,
    pub mean_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell {
    pub task: TaskKind,
    pub head: Option<HeadKind>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCount {
    pub task: TaskKind,
    pub seed: u64,
    pub hints: usize,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub quant: QuantizationScheme,
    pub cells: Vec<MetricCell>,
    pub errors: Vec<ErrorCell>,
    pub counts: Vec<SplitCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryEntry {
    head: HeadKind,
    mean: f64,
    std: f64,
    p_vs_retrieval: Option<f64>,
    marker: &'static str,
    mean_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryRow {
    task: TaskKind,
    metric: String,
    heads: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryTable {
    k: usize,
    rows: Vec<SummaryRow>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    seeds: &'a [u64],
    ks: &'a [usize],
    quant: QuantizationScheme,
    n_seeds: usize,
    /// One table per k: rows are (task, metric), columns are heads.
    summary: Vec<SummaryTable>,
    cells: &'a [MetricCell],
    errors: &'a [ErrorCell],
    counts: &'a [SplitCount],
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }

    pub fn cell(&self, task: TaskKind, head: HeadKind, k: usize, metric: &str) -> Option<&MetricCell> {
        self.cells.iter().find(|c| c.task == task && c.head == head && c.k == k && c.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,head,k,metric,mean,std,n_seeds,p_vs_retrieval,mean_bytes\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.task,
                c.head,
                c.k,
                c.metric,
                c.mean,
                c.std,
                c.n_seeds,
                fmt_opt(c.p_vs_retrieval),
                c.mean_bytes
            );
        }
        out
    }

    fn summary(&self) -> Vec<SummaryTable> {
        self.ks
            .iter()
            .map(|&k| {
                let mut rows: Vec<SummaryRow> = Vec::new();
                for c in self.cells.iter().filter(|c| c.k == k) {
                    let entry = SummaryEntry {
                        head: c.head,
                        mean: c.mean,
                        std: c.std,
                        p_vs_retrieval: c.p_vs_retrieval,
                        marker: significance_marker(c.p_vs_retrieval),
                        mean_bytes: c.mean_bytes,
                    };
                    match rows.iter_mut().find(|r| r.task == c.task && r.metric == c.metric) {
                        Some(row) => row.heads.push(entry),
                        None => rows.push(SummaryRow { task: c.task, metric: c.metric.clone(), heads: vec![entry] }),
                    }
                }
                SummaryTable { k, rows }
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            seeds: &self.seeds,
            ks: &self.ks,
            quant: self.quant,
            n_seeds: self.seeds.len(),
            summary: self.summary(),
            cells: &self.cells,
            errors: &self.errors,
            counts: &self.counts,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serialization cannot fail");
        s.push('\n');
        s
    }

    /// Reads back the `cells`/`errors`/`counts` of a JSON report.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Doc {
            seeds: Vec<u64>,
            ks: Vec<usize>,
            quant: QuantizationScheme,
            cells: Vec<MetricCell>,
            errors: Vec<ErrorCell>,
            counts: Vec<SplitCount>,
        }
        let d: Doc = serde_json::from_str(text)?;
        Ok(Self { seeds: d.seeds, ks: d.ks, quant: d.quant, cells: d.cells, errors: d.errors, counts: d.counts })
    }

    /// Markdown table at one k: rows (task, metric), columns heads, cells
    /// `mean±std` with significance markers against retrieval.
    pub fn to_markdown(&self, k: usize) -> String {
        let mut heads: Vec<HeadKind> = Vec::new();
        for c in self.cells.iter().filter(|c| c.k == k) {
            if !heads.contains(&c.head) {
                heads.push(c.head);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "k = {k}, {} seeds, {} hints", self.seeds.len(), self.quant);
        let _ = write!(out, "| task | metric |");
        for h in &heads {
            let _ = write!(out, " {h} |");
        }
        out.push('\n');
        out.push_str("|---|---|");
        for _ in &heads {
            out.push_str("---|");
        }
        out.push('\n');
        for table in self.summary().into_iter().filter(|t| t.k == k) {
            for row in table.rows {
                let _ = write!(out, "| {} | {} |", row.task, row.metric);
                for h in &heads {
                    match row.heads.iter().find(|e| e.head == *h) {
                        Some(e) => {
                            let _ = write!(out, " {:.2}±{:.2}{} |", e.mean, e.std, e.marker);
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
        }
        if !self.errors.is_empty() {
            let _ = writeln!(out, "\n{} error cell(s):", self.errors.len());
            for e in &self.errors {
                let _ = writeln!(
                    out,
                    "- {} {} k={} seed={}: {}",
                    e.task,
                    e.head.map(|h| h.to_string()).unwrap_or_else(|| "*".into()),
                    e.k.map(|k| k.to_string()).unwrap_or_else(|| "*".into()),
                    e.seed.map(|s| s.to_string()).unwrap_or_else(|| "*".into()),
                    e.message
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: TaskKind,
    pub head: HeadKind,
    /// `None` for k-independent heads, reported once per task.
    pub k: Option<usize>,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub mean_bytes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Collapses a multi-k report: k-independent heads keep one row per
    /// metric (from the first k), every other head keeps one row per k.
    pub fn from_report(report: &MetricReport) -> Self {
        let first_k = report.ks.first().copied();
        let rows = report
            .cells
            .iter()
            .filter(|c| !c.head.is_k_independent() || Some(c.k) == first_k)
            .map(|c| {
                let flat = c.head.is_k_independent();
                SweepRow {
                    task: c.task,
                    head: c.head,
                    k: (!flat).then_some(c.k),
                    metric: c.metric.clone(),
                    mean: c.mean,
                    std: c.std,
                    mean_bytes: (!flat).then_some(c.mean_bytes),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,head,k,metric,mean,std,mean_bytes\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.task,
                r.head,
                r.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                r.metric,
                r.mean,
                r.std,
                r.mean_bytes.map(|b| b.to_string()).unwrap_or_else(|| "-".into())
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(head: HeadKind, k: usize, mean: f64, p: Option<f64>) -> MetricCell {
        MetricCell {
            task: TaskKind::Cloud,
            head,
            k,
            metric: METRIC_BALANCED_ACC.into(),
            mean,
            std: 0.0,
            n_seeds: 2,
            per_seed: vec![mean, mean],
            p_vs_retrieval: p,
            mean_bytes: 100.0 + k as f64,
        }
    }

    fn report() -> MetricReport {
        MetricReport {
            seeds: vec![0, 1],
            ks: vec![1, 5],
            quant: QuantizationScheme::Fp32,
            cells: vec![
                cell(HeadKind::Retrieval, 1, 0.9, None),
                cell(HeadKind::Centroid, 1, 0.8, Some(0.004)),
                cell(HeadKind::Retrieval, 5, 0.92, None),
                cell(HeadKind::Centroid, 5, 0.8, Some(0.03)),
            ],
            errors: vec![],
            counts: vec![SplitCount { task: TaskKind::Cloud, seed: 0, hints: 225, queries: 75 }],
        }
    }

    #[test]
    fn markers() {
        assert_eq!(significance_marker(Some(0.002)), "**");
        assert_eq!(significance_marker(Some(0.02)), "*");
        assert_eq!(significance_marker(Some(0.2)), "");
        assert_eq!(significance_marker(None), "");
    }

    #[test]
    fn csv_layout() {
        let csv = report().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "task,head,k,metric,mean,std,n_seeds,p_vs_retrieval,mean_bytes");
        assert_eq!(lines[1], "cloud,retrieval,1,balanced_acc,0.9,0,2,,101");
        assert_eq!(lines[2], "cloud,centroid,1,balanced_acc,0.8,0,2,0.004,101");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn json_round_trip() {
        let r = report();
        let json = r.to_json();
        assert!(json.contains("\"summary\""));
        assert!(json.contains("\"marker\": \"**\""));
        assert_eq!(MetricReport::from_json(&json).unwrap(), r);
    }

    #[test]
    fn sweep_collapses_k_independent_heads() {
        let sweep = SweepTable::from_report(&report());
        assert_eq!(sweep.rows.len(), 3);
        let csv = sweep.to_csv();
        assert!(csv.contains("cloud,centroid,-,balanced_acc,0.8,0,-\n"));
        assert!(csv.contains("cloud,retrieval,5,balanced_acc,0.92,0,105\n"));
    }

    #[test]
    fn markdown_table() {
        let md = report().to_markdown(1);
        assert!(md.contains("| cloud | balanced_acc | 0.90±0.00 | 0.80±0.00** |"), "{md}");
    }
}
