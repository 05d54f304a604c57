//! Triplet enumeration and balanced per-anchor sampling.
//!
//! A trial pairs an anchor with a *shape match* (same shape class and
//! instance, different texture class) and a *texture match* (same texture
//! class and instance, different shape class). Only stimuli derived from the
//! same source shape or texture count as matches.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::{fnv1a64, keyed_rng};
use crate::stimulus::StimulusMeta;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripletTrial {
    pub anchor_id: String,
    pub shape_match_id: String,
    pub texture_match_id: String,
    #[serde(default)]
    pub replication_index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Exhaustive,
    BalancedSample,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    #[serde(default = "default_k")]
    pub triplets_per_anchor: usize,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default = "default_mode")]
    pub mode: SamplingMode,
}

fn default_k() -> usize {
    28
}
fn default_replications() -> u32 {
    3
}
fn default_mode() -> SamplingMode {
    SamplingMode::BalancedSample
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            triplets_per_anchor: default_k(),
            replications: default_replications(),
            global_seed: 0,
            mode: default_mode(),
        }
    }
}

impl SamplingPlan {
    pub fn exhaustive() -> Self {
        SamplingPlan {
            mode: SamplingMode::Exhaustive,
            ..SamplingPlan::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == SamplingMode::BalancedSample
            && (self.triplets_per_anchor == 0 || self.replications == 0)
        {
            return Err(invalid("balanced sampling needs triplets_per_anchor >= 1 and replications >= 1"));
        }
        Ok(())
    }

    /// Number of replications the plan produces.
    pub fn replication_count(&self) -> u32 {
        match self.mode {
            SamplingMode::Exhaustive => 1,
            SamplingMode::BalancedSample => self.replications,
        }
    }

    /// Short stable hash naming triplet files. Exhaustive plans ignore k and R.
    pub fn hash_hex(&self) -> String {
        let canon = match self.mode {
            SamplingMode::Exhaustive => "exhaustive".to_owned(),
            SamplingMode::BalancedSample => format!(
                "balanced/k={}/r={}/seed={}",
                self.triplets_per_anchor, self.replications, self.global_seed
            ),
        };
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }
}

/// Every valid trial in the manifest, sorted lexicographically by
/// `(anchor, shape match, texture match)` id.
pub fn enumerate_triplets(manifest: &[StimulusMeta]) -> Result<Vec<TripletTrial>> {
    let mut seen = HashSet::with_capacity(manifest.len());
    for m in manifest {
        if !seen.insert(m.stimulus_id.as_str()) {
            return Err(invalid(format!("duplicate stimulus id {}", m.stimulus_id)));
        }
    }

    let mut by_shape: BTreeMap<(&str, &str), Vec<&StimulusMeta>> = BTreeMap::new();
    let mut by_texture: BTreeMap<(&str, &str), Vec<&StimulusMeta>> = BTreeMap::new();
    for m in manifest {
        by_shape
            .entry((&m.shape_class, &m.shape_instance))
            .or_default()
            .push(m);
        by_texture
            .entry((&m.texture_class, &m.texture_instance))
            .or_default()
            .push(m);
    }

    let mut anchors: Vec<&StimulusMeta> = manifest.iter().collect();
    anchors.sort_by(|a, b| a.stimulus_id.cmp(&b.stimulus_id));

    let per_anchor: Vec<Vec<TripletTrial>> = anchors
        .par_iter()
        .map(|anchor| {
            let mut shape_ids: Vec<&str> = by_shape[&(anchor.shape_class.as_str(), anchor.shape_instance.as_str())]
                .iter()
                .filter(|m| m.texture_class != anchor.texture_class)
                .map(|m| m.stimulus_id.as_str())
                .collect();
            let mut texture_ids: Vec<&str> = by_texture
                [&(anchor.texture_class.as_str(), anchor.texture_instance.as_str())]
                .iter()
                .filter(|m| m.shape_class != anchor.shape_class)
                .map(|m| m.stimulus_id.as_str())
                .collect();
            shape_ids.sort_unstable();
            texture_ids.sort_unstable();
            let mut out = Vec::with_capacity(shape_ids.len() * texture_ids.len());
            for s in &shape_ids {
                for t in &texture_ids {
                    out.push(TripletTrial {
                        anchor_id: anchor.stimulus_id.clone(),
                        shape_match_id: (*s).to_owned(),
                        texture_match_id: (*t).to_owned(),
                        replication_index: 0,
                    });
                }
            }
            out
        })
        .collect();
    Ok(per_anchor.into_iter().flatten().collect())
}

/// Draws `k` distinct trials per anchor for each replication.
///
/// Each anchor's candidates are put in canonical order, shuffled with an RNG
/// keyed by `(global_seed, replication, anchor_id)`, and the first `k` kept.
/// Output is ordered by replication, then anchor, then trial. Exhaustive plans
/// return the candidates unchanged as replication 0.
pub fn sample_balanced(triplets: &[TripletTrial], plan: &SamplingPlan) -> Result<Vec<TripletTrial>> {
    plan.validate()?;
    let mut groups: BTreeMap<&str, Vec<&TripletTrial>> = BTreeMap::new();
    for t in triplets {
        groups.entry(&t.anchor_id).or_default().push(t);
    }
    for group in groups.values_mut() {
        group.sort_by(|a, b| {
            (&a.shape_match_id, &a.texture_match_id).cmp(&(&b.shape_match_id, &b.texture_match_id))
        });
        group.dedup_by(|a, b| {
            a.shape_match_id == b.shape_match_id && a.texture_match_id == b.texture_match_id
        });
    }

    if plan.mode == SamplingMode::Exhaustive {
        return Ok(groups
            .values()
            .flatten()
            .map(|t| TripletTrial {
                replication_index: 0,
                ..(*t).clone()
            })
            .collect());
    }

    let k = plan.triplets_per_anchor;
    if let Some((anchor, group)) = groups.iter().find(|(_, g)| g.len() < k) {
        return Err(Error::InsufficientCandidates {
            anchor_id: (*anchor).to_owned(),
            available: group.len(),
            required: k,
        });
    }

    let groups: Vec<(&str, Vec<&TripletTrial>)> = groups.into_iter().collect();
    let mut out = Vec::with_capacity(groups.len() * k * plan.replications as usize);
    for r in 0..plan.replications {
        let chunks: Vec<Vec<TripletTrial>> = groups
            .par_iter()
            .map(|(anchor, group)| {
                let mut rng = keyed_rng(plan.global_seed, &format!("sample/{r}/{anchor}"));
                let mut idx: Vec<usize> = (0..group.len()).collect();
                idx.shuffle(&mut rng);
                let mut chosen = idx[..k].to_vec();
                chosen.sort_unstable();
                chosen
                    .into_iter()
                    .map(|i| TripletTrial {
                        replication_index: r,
                        ..group[i].clone()
                    })
                    .collect()
            })
            .collect();
        out.extend(chunks.into_iter().flatten());
    }
    Ok(out)
}

pub fn write_triplets(path: &Path, trials: &[TripletTrial]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in trials {
        let line = serde_json::to_string(t).expect("trials serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_triplets(path: &Path) -> Result<Vec<TripletTrial>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::ParseError {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
