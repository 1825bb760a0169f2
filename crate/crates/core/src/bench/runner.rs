// SPDX-License-Identifier: Apache-2.0

//! Runs every (task, seed) job, then aggregates per-seed metrics in seed order.
//! Jobs are independent and their results are merged in a fixed order, so the
//! report does not depend on the thread count.

use rayon::prelude::*;

use super::config::BenchConfig;
use super::metrics::{balanced_accuracy, macro_f1, mean_std, recall_at_k, time_preference, Confusion};
use super::report::*;
use super::splits::{make_splits, SplitOptions, SplitSpec};
use super::synth::Corpus;
use super::wilcoxon::wilcoxon_signed_rank;
use super::BenchError;
use crate::heads::{
    constant_baseline, fit_centroids, fit_ridge_probe, knn_vote, oracle, CentroidModel, HeadKind, Prediction, RandomHead,
    RidgeProbeModel,
};
use crate::index::{GroupAggregation, VectorIndex};
use crate::model::{HintRecord, QueryRecord, Record, TaskKind};
use crate::rng::SplitMix64;
use crate::telemetry::{emit_telemetry, round_trip, QuantizationScheme};

const HAZARD_NORMAL: &str = "normal";
const CHANGE_AFTER: &str = "after";

enum FittedHead {
    Retrieval,
    Centroid(CentroidModel),
    Probe(RidgeProbeModel),
    Random(Vec<String>),
    Constant(Prediction),
    Oracle,
}

fn fit_head(kind: HeadKind, hints: &[HintRecord], lambda: f64) -> Result<FittedHead, String> {
    let fitted = match kind {
        HeadKind::Retrieval => FittedHead::Retrieval,
        HeadKind::Centroid => FittedHead::Centroid(fit_centroids(hints).map_err(|e| e.to_string())?),
        HeadKind::Probe => FittedHead::Probe(fit_ridge_probe(hints, lambda).map_err(|e| e.to_string())?),
        HeadKind::Random => FittedHead::Random(hints.iter().map(|h| h.label.clone()).collect()),
        HeadKind::Constant => FittedHead::Constant(constant_baseline(hints).map_err(|e| e.to_string())?),
        HeadKind::Oracle => FittedHead::Oracle,
    };
    Ok(fitted)
}

struct CellValues {
    metrics: Vec<(&'static str, f64)>,
    mean_bytes: f64,
}

struct SeedOutcome {
    task: TaskKind,
    seed: u64,
    counts: Option<(usize, usize)>,
    /// Set when the whole job failed before any head ran.
    failure: Option<String>,
    results: Vec<(HeadKind, usize, Result<CellValues, String>)>,
}

fn quantize_hints(hints: &[HintRecord], scheme: QuantizationScheme) -> Result<Vec<HintRecord>, String> {
    hints
        .iter()
        .map(|h| {
            let embedding = round_trip(&h.embedding, scheme).map_err(|e| format!("hint `{}`: {e}", h.id))?;
            Ok(Record { embedding, ..h.clone() })
        })
        .collect()
}

fn evaluate(
    task: TaskKind,
    seed: u64,
    head: &FittedHead,
    split: &SplitSpec,
    index: &VectorIndex,
    k: usize,
    aggregation: GroupAggregation,
) -> Result<CellValues, String> {
    let label_of = |id: &str| index.get(id).map(|h| h.label.as_str());
    let mut random = match head {
        FittedHead::Random(labels) => Some(
            RandomHead::new(labels.iter().cloned(), SplitMix64::keyed(&[seed.into(), task.as_str().into(), "random".into()]))
                .map_err(|e| e.to_string())?,
        ),
        _ => None,
    };

    let mut bytes = 0usize;
    let mut hits = Vec::new();
    let mut correct = Vec::new();
    let mut false_pos = Vec::new();
    let mut time_pref = Vec::new();
    let mut time_pref_group = Vec::new();
    let mut confusion = Confusion::new();

    for q in &split.queries {
        let matches = index.search_topk(&q.embedding, k).map_err(|e| format!("query `{}`: {e}", q.id))?;
        let prediction = match head {
            FittedHead::Retrieval => knn_vote(&matches, label_of),
            FittedHead::Centroid(m) => m.predict(&q.embedding),
            FittedHead::Probe(m) => m.predict(&q.embedding),
            FittedHead::Random(_) => Ok(random.as_mut().expect("random head").predict()),
            FittedHead::Constant(p) => Ok(p.clone()),
            FittedHead::Oracle => Ok(oracle(q)),
        }
        .map_err(|e| format!("query `{}`: {e}", q.id))?;
        bytes += emit_telemetry(q, &prediction, &matches, k).map_err(|e| format!("query `{}`: {e}", q.id))?.len();

        let right = prediction.label == q.label;
        match task {
            TaskKind::Hazard if q.label == HAZARD_NORMAL => false_pos.push(prediction.label != HAZARD_NORMAL),
            TaskKind::Hazard => {
                let hit = match head {
                    FittedHead::Retrieval => recall_at_k(&matches, &q.label, label_of) == 1,
                    _ => right,
                };
                hits.push(hit);
                correct.push(right);
            }
            TaskKind::Change => {
                time_pref.push(prediction.label == CHANGE_AFTER && !prediction.tied);
                if matches!(head, FittedHead::Retrieval) {
                    time_pref_group.push(time_preference(q, index, aggregation).map_err(|e| e.to_string())?);
                }
            }
            TaskKind::Cloud | TaskKind::Buildings => confusion.record(&q.label, &prediction.label),
        }
    }

    let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
    let mut metrics = Vec::new();
    match task {
        TaskKind::Hazard => {
            if !hits.is_empty() {
                metrics.push((METRIC_RECALL_AT_K, frac(&hits)));
                metrics.push((METRIC_TOP1, frac(&correct)));
            }
            if !false_pos.is_empty() {
                metrics.push((METRIC_FALSE_POSITIVE_RATE, frac(&false_pos)));
            }
        }
        TaskKind::Change => {
            metrics.push((METRIC_TIME_PREF, frac(&time_pref)));
            if !time_pref_group.is_empty() {
                metrics.push((METRIC_TIME_PREF_GROUP, frac(&time_pref_group)));
            }
        }
        TaskKind::Cloud | TaskKind::Buildings => {
            metrics.push((METRIC_BALANCED_ACC, balanced_accuracy(&confusion).map_err(|e| e.to_string())?));
            metrics.push((METRIC_MACRO_F1, macro_f1(&confusion).map_err(|e| e.to_string())?));
        }
    }
    if split.queries.is_empty() || metrics.is_empty() {
        return Err("split produced no queries".into());
    }
    Ok(CellValues { metrics, mean_bytes: bytes as f64 / split.queries.len() as f64 })
}

fn run_job(config: &BenchConfig, heads: &[HeadKind], corpus: &Corpus, task: TaskKind, seed: u64) -> SeedOutcome {
    let mut outcome = SeedOutcome { task, seed, counts: None, failure: None, results: Vec::new() };
    let options =
        SplitOptions { include_normal_queries: config.include_normal_queries, max_tiles_per_aoi: config.max_tiles_per_aoi };
    let prepared = make_splits(corpus.task(task), task, seed, &options)
        .map_err(|e| e.to_string())
        .and_then(|mut split| {
            split.hints = quantize_hints(&split.hints, config.quant)?;
            let index = VectorIndex::build(split.hints.clone()).map_err(|e| e.to_string())?;
            Ok((split, index))
        });
    let (split, index) = match prepared {
        Ok(p) => p,
        Err(e) => {
            outcome.failure = Some(e);
            return outcome;
        }
    };
    outcome.counts = Some((split.hints.len(), split.queries.len()));
    for &kind in heads {
        match fit_head(kind, &split.hints, config.ridge_lambda) {
            Ok(fitted) => {
                for &k in &config.ks {
                    let r = evaluate(task, seed, &fitted, &split, &index, k, config.group_aggregation);
                    outcome.results.push((kind, k, r));
                }
            }
            Err(e) => {
                for &k in &config.ks {
                    outcome.results.push((kind, k, Err(e.clone())));
                }
            }
        }
    }
    outcome
}

fn aggregate(config: &BenchConfig, heads: &[HeadKind], outcomes: Vec<SeedOutcome>) -> MetricReport {
    let mut report = MetricReport {
        seeds: config.seeds.clone(),
        ks: config.ks.clone(),
        quant: config.quant,
        cells: Vec::new(),
        errors: Vec::new(),
        counts: Vec::new(),
    };
    for o in &outcomes {
        if let Some((hints, queries)) = o.counts {
            report.counts.push(SplitCount { task: o.task, seed: o.seed, hints, queries });
        }
        if let Some(msg) = &o.failure {
            report.errors.push(ErrorCell { task: o.task, head: None, k: None, seed: Some(o.seed), message: msg.clone() });
        }
    }

    for &task in &config.tasks {
        let jobs: Vec<&SeedOutcome> = outcomes.iter().filter(|o| o.task == task).collect();
        if jobs.iter().any(|o| o.failure.is_some()) {
            continue;
        }
        for &k in &config.ks {
            let first = report.cells.len();
            for &head in heads {
                let mut per_seed: Vec<&CellValues> = Vec::new();
                let mut failed = false;
                for o in &jobs {
                    let (_, _, r) = o.results.iter().find(|(h, kk, _)| *h == head && *kk == k).expect("every head ran");
                    match r {
                        Ok(v) => per_seed.push(v),
                        Err(e) => {
                            failed = true;
                            report.errors.push(ErrorCell {
                                task,
                                head: Some(head),
                                k: Some(k),
                                seed: Some(o.seed),
                                message: e.clone(),
                            });
                        }
                    }
                }
                if failed {
                    continue;
                }
                let names: Vec<&str> = per_seed[0].metrics.iter().map(|m| m.0).collect();
                if per_seed.iter().any(|v| v.metrics.iter().map(|m| m.0).ne(names.iter().copied())) {
                    report.errors.push(ErrorCell {
                        task,
                        head: Some(head),
                        k: Some(k),
                        seed: None,
                        message: "metric set differs across seeds".into(),
                    });
                    continue;
                }
                let bytes: Vec<f64> = per_seed.iter().map(|v| v.mean_bytes).collect();
                let mean_bytes = mean_std(&bytes).0;
                for (i, name) in names.iter().enumerate() {
                    let values: Vec<f64> = per_seed.iter().map(|v| v.metrics[i].1).collect();
                    let (mean, std) = mean_std(&values);
                    report.cells.push(MetricCell {
                        task,
                        head,
                        k,
                        metric: name.to_string(),
                        mean,
                        std,
                        n_seeds: values.len(),
                        per_seed: values,
                        p_vs_retrieval: None,
                        mean_bytes,
                    });
                }
            }
            attach_p_values(&mut report.cells[first..]);
        }
    }
    report
}

fn attach_p_values(cells: &mut [MetricCell]) {
    let baselines: Vec<(String, Vec<f64>)> = cells
        .iter()
        .filter(|c| c.head == HeadKind::Retrieval)
        .map(|c| (c.metric.clone(), c.per_seed.clone()))
        .collect();
    for c in cells.iter_mut().filter(|c| c.head != HeadKind::Retrieval) {
        if let Some((_, base)) = baselines.iter().find(|(m, _)| *m == c.metric) {
            c.p_vs_retrieval = wilcoxon_signed_rank(&c.per_seed, base).ok().map(|r| r.p_value);
        }
    }
}

/// Validates `config`, loads its corpus and runs every task x seed x head x k
/// cell. Failures inside a cell are reported as error cells, not as `Err`.
pub fn run_benchmark(config: &BenchConfig) -> Result<MetricReport, BenchError> {
    let heads = config.validate()?;
    let corpus = config.load_corpus()?;
    let jobs: Vec<(TaskKind, u64)> =
        config.tasks.iter().flat_map(|&t| config.seeds.iter().map(move |&s| (t, s))).collect();
    let run = || -> Vec<SeedOutcome> {
        jobs.par_iter().map(|&(task, seed)| run_job(config, &heads, &corpus, task, seed)).collect()
    };
    let outcomes = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BenchError::ThreadPool(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(aggregate(config, &heads, outcomes))
}

/// Runs the benchmark at each k and collapses k-independent heads.
pub fn k_sweep(config: &BenchConfig, ks: &[usize]) -> Result<(MetricReport, SweepTable), BenchError> {
    let config = BenchConfig { ks: ks.to_vec(), ..config.clone() };
    let report = run_benchmark(&config)?;
    let table = SweepTable::from_report(&report);
    Ok((report, table))
}

/// Fraction of queries whose ordered top-k ids are unchanged when the hints
/// are passed through `scheme`.
pub fn topk_agreement(
    hints: &[HintRecord],
    queries: &[QueryRecord],
    k: usize,
    scheme: QuantizationScheme,
) -> Result<f64, BenchError> {
    let to_err = |e: String| BenchError::Config(e);
    let reference = VectorIndex::build(hints.to_vec()).map_err(|e| to_err(e.to_string()))?;
    let quantized = VectorIndex::build(quantize_hints(hints, scheme).map_err(to_err)?).map_err(|e| to_err(e.to_string()))?;
    if queries.is_empty() {
        return Err(BenchError::Config("no queries".into()));
    }
    let mut same = 0usize;
    for q in queries {
        let a = reference.search_topk(&q.embedding, k).map_err(|e| to_err(e.to_string()))?;
        let b = quantized.search_topk(&q.embedding, k).map_err(|e| to_err(e.to_string()))?;
        if a.iter().map(|m| &m.id).eq(b.iter().map(|m| &m.id)) {
            same += 1;
        }
    }
    Ok(same as f64 / queries.len() as f64)
}
