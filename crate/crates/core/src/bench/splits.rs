// SPDX-License-Identifier: Apache-2.0

//! Seeded hint/query splits.
//!
//! * hazard, cloud: per scene, one quadrant is held out as the query and the
//!   other crops become hints (leave-one-crop-out).
//! * change: per pair, one quadrant is held out; the after-scene crop there
//!   is the query and the before-scene crop there is dropped, so neither time
//!   step contributes that location to the hints.
//! * buildings: the AOI at `seed mod n_aois` (sorted by id) is the query set;
//!   each other AOI contributes up to `max_tiles_per_aoi` seeded tiles.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HintRecord, QueryRecord, Record, RecordError, TaskKind};
use crate::rng::SplitMix64;

pub const DEFAULT_MAX_TILES_PER_AOI: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("no {0} records in the corpus")]
    EmptyCorpus(TaskKind),
    #[error("record `{0}` belongs to a different task")]
    WrongTask(String),
    #[error("scene `{scene}` has {quadrants} quadrant(s); need at least 2")]
    TooFewQuadrants { scene: String, quadrants: usize },
    #[error("pair `{0}` has no before or no after hints left after the hold-out")]
    IncompletePair(String),
    #[error("buildings split needs at least 2 AOIs, found {0}")]
    TooFewAois(usize),
    #[error("record `{id}`: {source}")]
    Record {
        id: String,
        #[source]
        source: RecordError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Keep hazard `normal` scenes' held-out crops as queries.
    pub include_normal_queries: bool,
    pub max_tiles_per_aoi: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { include_normal_queries: true, max_tiles_per_aoi: DEFAULT_MAX_TILES_PER_AOI }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub task: TaskKind,
    pub seed: u64,
    pub hints: Vec<HintRecord>,
    pub queries: Vec<QueryRecord>,
    /// Spatial units withheld from the hints: `(scene key, quadrant)` for
    /// quadrant tasks, `(aoi_id, None)` for buildings.
    pub held_out: Vec<(String, Option<u8>)>,
}

fn rec_err(r: &Record) -> impl FnOnce(RecordError) -> SplitError + '_ {
    move |source| SplitError::Record { id: r.id.clone(), source }
}

pub fn make_splits(corpus: &[Record], task: TaskKind, seed: u64, options: &SplitOptions) -> Result<SplitSpec, SplitError> {
    if corpus.is_empty() {
        return Err(SplitError::EmptyCorpus(task));
    }
    if let Some(r) = corpus.iter().find(|r| r.task != task) {
        return Err(SplitError::WrongTask(r.id.clone()));
    }
    match task {
        TaskKind::Buildings => aoi_holdout(corpus, seed, options),
        _ => quadrant_holdout(corpus, task, seed, options),
    }
}

fn quadrant_holdout(corpus: &[Record], task: TaskKind, seed: u64, options: &SplitOptions) -> Result<SplitSpec, SplitError> {
    // For change the query side is the after scene; its quadrants drive the pick.
    let mut candidates: BTreeMap<&str, BTreeSet<u8>> = BTreeMap::new();
    let mut all: BTreeMap<&str, BTreeSet<u8>> = BTreeMap::new();
    for r in corpus {
        let scene = r.scene_key().map_err(rec_err(r))?;
        let q = r.quadrant().map_err(rec_err(r))?;
        all.entry(scene).or_default().insert(q);
        if task != TaskKind::Change || r.label == "after" {
            candidates.entry(scene).or_default().insert(q);
        }
    }
    let mut held: BTreeMap<&str, u8> = BTreeMap::new();
    for (scene, quadrants) in &all {
        let options_for_query: Vec<u8> = candidates.get(scene).map(|s| s.iter().copied().collect()).unwrap_or_default();
        if quadrants.len() < 2 || options_for_query.is_empty() {
            return Err(SplitError::TooFewQuadrants { scene: scene.to_string(), quadrants: quadrants.len() });
        }
        let mut rng = SplitMix64::keyed(&[seed.into(), task.as_str().into(), (*scene).into()]);
        let pick = options_for_query[rng.next_below(options_for_query.len() as u64) as usize];
        held.insert(scene, pick);
    }

    let mut hints = Vec::new();
    let mut queries = Vec::new();
    for r in corpus {
        let scene = r.scene_key().map_err(rec_err(r))?;
        let q = r.quadrant().map_err(rec_err(r))?;
        if held[scene] != q {
            hints.push(r.clone());
            continue;
        }
        let is_query = match task {
            TaskKind::Change => r.label == "after",
            TaskKind::Hazard => options.include_normal_queries || r.label != "normal",
            _ => true,
        };
        if is_query {
            queries.push(r.clone());
        }
    }

    if task == TaskKind::Change {
        for scene in held.keys() {
            let has = |tag: &str| hints.iter().any(|h: &Record| h.label == tag && h.scene_key().ok() == Some(*scene));
            if !has("before") || !has("after") {
                return Err(SplitError::IncompletePair(scene.to_string()));
            }
        }
    }

    Ok(SplitSpec {
        task,
        seed,
        hints,
        queries,
        held_out: held.into_iter().map(|(s, q)| (s.to_string(), Some(q))).collect(),
    })
}

fn aoi_holdout(corpus: &[Record], seed: u64, options: &SplitOptions) -> Result<SplitSpec, SplitError> {
    let mut tiles: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.iter().enumerate() {
        tiles.entry(r.scene_key().map_err(rec_err(r))?).or_default().push(i);
    }
    if tiles.len() < 2 {
        return Err(SplitError::TooFewAois(tiles.len()));
    }
    let aois: Vec<&str> = tiles.keys().copied().collect();
    let query_aoi = aois[(seed % aois.len() as u64) as usize];

    let mut keep: HashSet<usize> = HashSet::new();
    for (aoi, idx) in &tiles {
        if *aoi == query_aoi {
            continue;
        }
        let mut chosen = idx.clone();
        if chosen.len() > options.max_tiles_per_aoi {
            let mut rng = SplitMix64::keyed(&[seed.into(), "buildings-tiles".into(), (*aoi).into()]);
            rng.shuffle(&mut chosen);
            chosen.truncate(options.max_tiles_per_aoi);
        }
        keep.extend(chosen);
    }

    let mut hints = Vec::new();
    let mut queries = Vec::new();
    for (i, r) in corpus.iter().enumerate() {
        if tiles[query_aoi].contains(&i) {
            queries.push(r.clone());
        } else if keep.contains(&i) {
            hints.push(r.clone());
        }
    }
    Ok(SplitSpec { task: TaskKind::Buildings, seed, hints, queries, held_out: vec![(query_aoi.to_string(), None)] })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LeakError {
    #[error("unit {0:?} appears in both hints and queries")]
    SharedUnit(String),
    #[error("held-out unit {0:?} appears in the hints")]
    HeldOutInHints(String),
    #[error("record `{0}` is missing split metadata")]
    Meta(String),
}

/// Checks that no spatial unit contributes to both sides of a split.
pub fn audit_split(split: &SplitSpec) -> Result<(), LeakError> {
    let unit = |r: &Record| -> Result<String, LeakError> {
        let scene = r.scene_key().map_err(|_| LeakError::Meta(r.id.clone()))?;
        if split.task == TaskKind::Buildings {
            Ok(scene.to_string())
        } else {
            let q = r.quadrant().map_err(|_| LeakError::Meta(r.id.clone()))?;
            Ok(format!("{scene}#{q}"))
        }
    };
    let query_units: HashSet<String> = split.queries.iter().map(unit).collect::<Result<_, _>>()?;
    let held: HashSet<String> = split
        .held_out
        .iter()
        .map(|(s, q)| match q {
            Some(q) => format!("{s}#{q}"),
            None => s.clone(),
        })
        .collect();
    for h in &split.hints {
        let u = unit(h)?;
        if query_units.contains(&u) {
            return Err(LeakError::SharedUnit(u));
        }
        if held.contains(&u) {
            return Err(LeakError::HeldOutInHints(u));
        }
    }
    Ok(())
}
