// SPDX-License-Identifier: Apache-2.0

//! Offline benchmark: synthetic corpora, leakage-safe splits, per-task metrics,
//! seed aggregation and paired significance tests.

use std::path::PathBuf;

use thiserror::Error;

use crate::model::LineError;

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod splits;
pub mod synth;
pub mod wilcoxon;

pub use config::{BenchConfig, CorpusSource, DEFAULT_KS, SWEEP_KS};
pub use metrics::{balanced_accuracy, macro_f1, mean_std, recall_at_k, time_preference_accuracy, top1_accuracy, Confusion};
pub use report::{ErrorCell, MetricCell, MetricReport, SplitCount, SweepRow, SweepTable};
pub use runner::{k_sweep, run_benchmark, topk_agreement};
pub use splits::{audit_split, make_splits, SplitOptions, SplitSpec};
pub use synth::{synth_generate, Corpus, SynthSpec};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown head `{0}` (expected retrieval, centroid, probe, random, constant or oracle)")]
    UnknownHead(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: LineError,
    },
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}
