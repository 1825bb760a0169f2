// SPDX-License-Identifier: Apache-2.0

//! Synthetic corpora with known cluster structure.
//!
//! Every class label gets a unit mean direction. A scene (or building AOI)
//! is `normalize(mean + scene_noise)` and each crop (or tile) of it is
//! `normalize(scene + crop_noise)`. Noise vectors have i.i.d. components with
//! standard deviation `sigma / sqrt(dim)`, so their expected norm is about
//! `sigma` whatever the dimension.
//!
//! Each random draw comes from a stream keyed by the corpus seed and the
//! record's coordinates, so any record can be regenerated on its own.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Meta, MetaValue, Record, RecordError, TaskKind, QUADRANTS};
use crate::rng::{KeyPart, SplitMix64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("degenerate synthetic spec: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub dim: usize,
    /// Scene-level (hazard, change, cloud) or AOI-level (buildings) noise.
    pub scene_noise: f64,
    /// Within-scene noise between quadrant crops or tiles.
    pub crop_noise: f64,
    pub hazard_scenes_per_class: usize,
    pub change_pairs: usize,
    pub cloud_sites: usize,
    pub cloud_scenes_per_site: usize,
    pub building_aois: usize,
    pub building_tiles_per_aoi: usize,
    /// Optional fixed mean directions keyed by class label; re-normalized.
    pub class_means: BTreeMap<String, Vec<f64>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 768,
            scene_noise: 1.0,
            crop_noise: 1.0,
            hazard_scenes_per_class: 9,
            change_pairs: 8,
            cloud_sites: 15,
            cloud_scenes_per_site: 5,
            building_aois: 5,
            building_tiles_per_aoi: 36,
            class_means: BTreeMap::new(),
        }
    }
}

impl SynthSpec {
    pub fn with_noise(mut self, scene_noise: f64, crop_noise: f64) -> Self {
        self.scene_noise = scene_noise;
        self.crop_noise = crop_noise;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let degenerate = |m: &str| Err(SynthError::Degenerate(m.to_string()));
        if self.dim == 0 {
            return degenerate("dim must be positive");
        }
        for (name, v) in [("scene_noise", self.scene_noise), ("crop_noise", self.crop_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::Degenerate(format!("{name} must be finite and non-negative")));
            }
        }
        for (name, v) in [
            ("hazard_scenes_per_class", self.hazard_scenes_per_class),
            ("change_pairs", self.change_pairs),
            ("cloud_sites", self.cloud_sites),
            ("cloud_scenes_per_site", self.cloud_scenes_per_site),
            ("building_aois", self.building_aois),
            ("building_tiles_per_aoi", self.building_tiles_per_aoi),
        ] {
            if v == 0 {
                return Err(SynthError::Degenerate(format!("{name} must be positive (zero classes or scenes)")));
            }
        }
        for (label, mean) in &self.class_means {
            if mean.len() != self.dim {
                return Err(SynthError::Degenerate(format!("class mean `{label}` has {} components, dim is {}", mean.len(), self.dim)));
            }
            if !(mean.iter().all(|v| v.is_finite()) && mean.iter().any(|&v| v != 0.0)) {
                return Err(SynthError::Degenerate(format!("class mean `{label}` must be finite and non-zero")));
            }
        }
        Ok(())
    }
}

/// Records grouped by task, each group in generation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub by_task: BTreeMap<TaskKind, Vec<Record>>,
}

impl Corpus {
    pub fn from_records(records: impl IntoIterator<Item = Record>) -> Self {
        let mut by_task: BTreeMap<TaskKind, Vec<Record>> = BTreeMap::new();
        for r in records {
            by_task.entry(r.task).or_default().push(r);
        }
        Self { by_task }
    }

    pub fn task(&self, task: TaskKind) -> &[Record] {
        self.by_task.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_task.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.by_task.values().flatten()
    }
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    seed: u64,
    means: BTreeMap<&'static str, Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec, seed: u64) -> Self {
        let labels: [&'static str; 9] =
            ["wildfire", "flood", "normal", "before", "after", "clear", "cloudy", "absent", "present"];
        let means = labels
            .into_iter()
            .map(|label| {
                let mut m = match spec.class_means.get(label) {
                    Some(fixed) => fixed.clone(),
                    None => {
                        let mut rng = SplitMix64::keyed(&[seed.into(), "class-mean".into(), label.into()]);
                        (0..spec.dim).map(|_| rng.next_gaussian()).collect()
                    }
                };
                normalize(&mut m);
                (label, m)
            })
            .collect();
        Self { spec, seed, means }
    }

    fn perturb(&self, base: &[f64], sigma: f64, key: &[KeyPart<'_>]) -> Vec<f64> {
        let mut parts = vec![KeyPart::Int(self.seed)];
        parts.extend_from_slice(key);
        let mut rng = SplitMix64::keyed(&parts);
        let scale = sigma / (self.spec.dim as f64).sqrt();
        let mut v: Vec<f64> = base.iter().map(|&b| b + scale * rng.next_gaussian()).collect();
        normalize(&mut v);
        v
    }

    fn scene(&self, task: TaskKind, label: &str, scene: &str) -> Vec<f64> {
        self.perturb(&self.means[label], self.spec.scene_noise, &[task.as_str().into(), label.into(), scene.into()])
    }

    fn crop(&self, task: TaskKind, label: &str, scene: &str, base: &[f64], unit: u64) -> Vec<f64> {
        self.perturb(base, self.spec.crop_noise, &[task.as_str().into(), label.into(), scene.into(), unit.into()])
    }

    fn quadrants(&self, task: TaskKind, label: &str, scene: &str, meta: &Meta, out: &mut Vec<Record>) -> Result<(), SynthError> {
        let base = self.scene(task, label, scene);
        for q in 0..u64::from(QUADRANTS) {
            let mut m = meta.clone();
            m.insert("quadrant".into(), MetaValue::Int(q as i64));
            let v = self.crop(task, label, scene, &base, q);
            out.push(Record::new(format!("{scene}-q{q}"), task, label, &v, m)?);
        }
        Ok(())
    }

    fn hazard(&self, out: &mut Vec<Record>) -> Result<(), SynthError> {
        for group in ["wildfire", "flood", "normal"] {
            for s in 0..self.spec.hazard_scenes_per_class {
                let scene = format!("hz-{group}-s{s:02}");
                let meta = Meta::from([
                    ("scene_id".to_string(), MetaValue::from(scene.as_str())),
                    ("group".to_string(), MetaValue::from(group)),
                ]);
                self.quadrants(TaskKind::Hazard, group, &scene, &meta, out)?;
            }
        }
        Ok(())
    }

    fn change(&self, out: &mut Vec<Record>) -> Result<(), SynthError> {
        for p in 0..self.spec.change_pairs {
            let pair = format!("cd-p{p:02}");
            for tag in ["before", "after"] {
                let scene = format!("{pair}-{tag}");
                let meta = Meta::from([
                    ("pair_id".to_string(), MetaValue::from(pair.as_str())),
                    ("time_tag".to_string(), MetaValue::from(tag)),
                ]);
                self.quadrants(TaskKind::Change, tag, &scene, &meta, out)?;
            }
        }
        Ok(())
    }

    fn cloud(&self, out: &mut Vec<Record>) -> Result<(), SynthError> {
        for site in 0..self.spec.cloud_sites {
            let site_id = format!("cl-site{site:02}");
            for s in 0..self.spec.cloud_scenes_per_site {
                let scene = format!("{site_id}-s{s}");
                let label = if (site + s) % 2 == 0 { "clear" } else { "cloudy" };
                let mut rng = SplitMix64::keyed(&[self.seed.into(), "cover".into(), scene.as_str().into()]);
                let cover = if label == "clear" { 10.0 * rng.next_f64() } else { 20.0 + 80.0 * rng.next_f64() };
                // Two decimals, as STAC reports it.
                let cover = (cover * 100.0).round() / 100.0;
                let meta = Meta::from([
                    ("site_id".to_string(), MetaValue::from(site_id.as_str())),
                    ("scene_id".to_string(), MetaValue::from(scene.as_str())),
                    ("cloud_cover_percent".to_string(), MetaValue::Float(cover)),
                ]);
                self.quadrants(TaskKind::Cloud, label, &scene, &meta, out)?;
            }
        }
        Ok(())
    }

    fn buildings(&self, out: &mut Vec<Record>) -> Result<(), SynthError> {
        for a in 0..self.spec.building_aois {
            let aoi = format!("bd-aoi{a}");
            // AOI offset shared by both classes: the cross-city shift.
            let shift = self.perturb(&vec![0.0; self.spec.dim], self.spec.scene_noise, &["buildings".into(), "aoi".into(), aoi.as_str().into()]);
            let shift_scale = self.spec.scene_noise;
            for t in 0..self.spec.building_tiles_per_aoi {
                let id = format!("{aoi}-t{t:03}");
                let mut rng = SplitMix64::keyed(&[self.seed.into(), "tile".into(), id.as_str().into()]);
                let present = rng.next_below(2) == 1;
                let count = if present { 1 + rng.next_below(40) as i64 } else { 0 };
                let label = if present { "present" } else { "absent" };
                let base: Vec<f64> =
                    self.means[label].iter().zip(&shift).map(|(m, s)| m + shift_scale * s).collect();
                let v = self.crop(TaskKind::Buildings, label, &aoi, &base, t as u64);
                let meta = Meta::from([
                    ("aoi_id".to_string(), MetaValue::from(aoi.as_str())),
                    ("building_count".to_string(), MetaValue::Int(count)),
                ]);
                out.push(Record::new(id, TaskKind::Buildings, label, &v, meta)?);
            }
        }
        Ok(())
    }
}

/// Generates all four task corpora.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let g = Generator::new(spec, seed);
    let mut corpus = Corpus::default();
    for task in TaskKind::ALL {
        let mut out = Vec::new();
        match task {
            TaskKind::Hazard => g.hazard(&mut out)?,
            TaskKind::Change => g.change(&mut out)?,
            TaskKind::Cloud => g.cloud(&mut out)?,
            TaskKind::Buildings => g.buildings(&mut out)?,
        }
        corpus.by_task.insert(task, out);
    }
    Ok(corpus)
}
