// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{synth_generate, Corpus, SynthSpec};
use super::BenchError;
use crate::heads::{HeadKind, DEFAULT_RIDGE_LAMBDA};
use crate::index::GroupAggregation;
use crate::model::{parse_jsonl, TaskKind};
use crate::telemetry::QuantizationScheme;

pub const DEFAULT_KS: [usize; 1] = [5];
pub const SWEEP_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CorpusSource {
    /// Generated in memory.
    Synth {
        seed: u64,
        #[serde(default)]
        spec: SynthSpec,
    },
    /// JSONL files; relative paths resolve against the config file's directory.
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub tasks: Vec<TaskKind>,
    /// Head names; validated before any work starts.
    pub heads: Vec<String>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub quant: QuantizationScheme,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_true")]
    pub include_normal_queries: bool,
    #[serde(default)]
    pub group_aggregation: GroupAggregation,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
    #[serde(default = "default_max_tiles")]
    pub max_tiles_per_aoi: usize,
    pub corpus: CorpusSource,
}

fn default_ks() -> Vec<usize> {
    DEFAULT_KS.to_vec()
}

fn default_true() -> bool {
    true
}

fn default_lambda() -> f64 {
    DEFAULT_RIDGE_LAMBDA
}

fn default_max_tiles() -> usize {
    super::splits::DEFAULT_MAX_TILES_PER_AOI
}

impl BenchConfig {
    /// Synthetic config over every task and head.
    pub fn synthetic(spec: SynthSpec, corpus_seed: u64, seeds: Vec<u64>) -> Self {
        Self {
            tasks: TaskKind::ALL.to_vec(),
            heads: HeadKind::ALL.iter().map(|h| h.as_str().to_string()).collect(),
            ks: default_ks(),
            seeds,
            quant: QuantizationScheme::Fp32,
            threads: None,
            include_normal_queries: true,
            group_aggregation: GroupAggregation::Mean,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            max_tiles_per_aoi: default_max_tiles(),
            corpus: CorpusSource::Synth { seed: corpus_seed, spec },
        }
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Reads a config file and resolves relative corpus paths against it.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut config = Self::from_json(&text)?;
        if let CorpusSource::Files(paths) = &mut config.corpus {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// Parsed head list; fails on the first unknown name.
    pub fn head_kinds(&self) -> Result<Vec<HeadKind>, BenchError> {
        self.heads.iter().map(|h| h.parse::<HeadKind>().map_err(|_| BenchError::UnknownHead(h.clone()))).collect()
    }

    pub fn validate(&self) -> Result<Vec<HeadKind>, BenchError> {
        let heads = self.head_kinds()?;
        let config = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.tasks.is_empty() {
            return config("`tasks` must not be empty");
        }
        if heads.is_empty() {
            return config("`heads` must not be empty");
        }
        if self.seeds.is_empty() {
            return config("`seeds` must not be empty");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return config("`ks` must be a non-empty list of positive integers");
        }
        if !(self.ridge_lambda > 0.0) {
            return config("`ridge_lambda` must be positive");
        }
        if self.max_tiles_per_aoi == 0 {
            return config("`max_tiles_per_aoi` must be positive");
        }
        if self.threads == Some(0) {
            return config("`threads` must be positive");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = heads.iter().find(|h| !seen.insert(**h)) {
            return Err(BenchError::Config(format!("head `{dup}` listed twice")));
        }
        if let CorpusSource::Files(paths) = &self.corpus {
            if paths.is_empty() {
                return config("`corpus.files` must list at least one path");
            }
            if let Some(missing) = paths.iter().find(|p| !p.exists()) {
                return Err(BenchError::Io { path: missing.clone(), message: "file not found".into() });
            }
        }
        Ok(heads)
    }

    pub fn load_corpus(&self) -> Result<Corpus, BenchError> {
        match &self.corpus {
            CorpusSource::Synth { seed, spec } => Ok(synth_generate(spec, *seed)?),
            CorpusSource::Files(paths) => {
                let mut records = Vec::new();
                for path in paths {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| BenchError::Io { path: path.clone(), message: e.to_string() })?;
                    records.extend(parse_jsonl(&text).map_err(|e| BenchError::Parse { path: path.clone(), source: e })?);
                }
                Ok(Corpus::from_records(records))
            }
        }
    }
}
