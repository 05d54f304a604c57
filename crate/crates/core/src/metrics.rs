//! Trial decisions by embedding similarity and their aggregation into
//! shape-bias reports.
//!
//! A trial is a *shape* decision when the anchor is strictly closer to the
//! shape match, a *texture* decision when strictly closer to the texture
//! match, and a *tie* otherwise. No trial is discarded; ties count half
//! toward the shape-bias numerator, and `n_tie` is reported so other tie
//! policies can be recomputed.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{invalid, Error, Result};
use crate::stimulus::Condition;
use crate::triplet::TripletTrial;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Dot,
    Euclidean,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cosine, Metric::Dot, Metric::Euclidean];

    /// Euclidean is a distance: smaller favours.
    pub fn lower_is_closer(self) -> bool {
        self == Metric::Euclidean
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Dot => "dot",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "dot" => Ok(Metric::Dot),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(invalid(format!("unknown metric {other:?}"))),
        }
    }
}

/// Neumaier-compensated sum. Products of two `f32` are exact in `f64`, so
/// this is the only rounding in the dot product besides the final result.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)))
}

pub fn similarity(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(match metric {
        Metric::Dot => dot(a, b),
        Metric::Cosine => {
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::DegenerateEmbedding("zero-norm vector under cosine".into()));
            }
            dot(a, b) / (na * nb)
        }
        Metric::Euclidean => compensated_sum(a.iter().zip(b).map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        }))
        .sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Shape,
    Texture,
    Tie,
}

impl Outcome {
    /// The outcome after exchanging shape and texture match.
    pub fn swapped(self) -> Outcome {
        match self {
            Outcome::Shape => Outcome::Texture,
            Outcome::Texture => Outcome::Shape,
            Outcome::Tie => Outcome::Tie,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialDecision {
    #[serde(flatten)]
    pub trial: TripletTrial,
    pub metric: Metric,
    /// Similarity (or distance, for Euclidean) between anchor and shape match.
    pub sim_shape: f64,
    pub sim_texture: f64,
    pub outcome: Outcome,
}

/// Exact comparison; equal values are a tie.
pub fn outcome_of(sim_shape: f64, sim_texture: f64, metric: Metric) -> Outcome {
    let (closer_shape, closer_texture) = if metric.lower_is_closer() {
        (sim_shape < sim_texture, sim_texture < sim_shape)
    } else {
        (sim_shape > sim_texture, sim_texture > sim_shape)
    };
    match (closer_shape, closer_texture) {
        (true, _) => Outcome::Shape,
        (_, true) => Outcome::Texture,
        _ => Outcome::Tie,
    }
}

pub fn decide_trial(
    trial: &TripletTrial,
    anchor: &EmbeddingVector,
    shape_match: &EmbeddingVector,
    texture_match: &EmbeddingVector,
    metric: Metric,
) -> Result<TrialDecision> {
    if anchor.model_id != shape_match.model_id || anchor.model_id != texture_match.model_id {
        return Err(invalid("trial embeddings come from different models"));
    }
    let sim_shape = similarity(&anchor.values, &shape_match.values, metric)?;
    let sim_texture = similarity(&anchor.values, &texture_match.values, metric)?;
    Ok(TrialDecision {
        trial: trial.clone(),
        metric,
        sim_shape,
        sim_texture,
        outcome: outcome_of(sim_shape, sim_texture, metric),
    })
}

/// A decision tagged with the model and condition it was made under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDecision {
    pub model: String,
    #[serde(flatten)]
    pub condition: Condition,
    #[serde(flatten)]
    pub decision: TrialDecision,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub n_trials: u64,
    pub n_shape: u64,
    pub n_texture: u64,
    pub n_tie: u64,
}

impl Tally {
    pub fn add(&mut self, outcome: Outcome) {
        self.n_trials += 1;
        match outcome {
            Outcome::Shape => self.n_shape += 1,
            Outcome::Texture => self.n_texture += 1,
            Outcome::Tie => self.n_tie += 1,
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.n_trials += other.n_trials;
        self.n_shape += other.n_shape;
        self.n_texture += other.n_texture;
        self.n_tie += other.n_tie;
    }

    /// `(n_shape + n_tie / 2) / n_trials`, computed with a single rounding.
    pub fn shape_bias(&self) -> f64 {
        (2 * self.n_shape + self.n_tie) as f64 / (2 * self.n_trials) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStat {
    pub replication: u32,
    #[serde(flatten)]
    pub tally: Tally,
    pub shape_bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub model: String,
    #[serde(flatten)]
    pub condition: Condition,
    pub metric: Metric,
    #[serde(flatten)]
    pub tally: Tally,
    /// Pooled over every trial of every replication.
    pub shape_bias: f64,
    pub replication_mean: f64,
    /// Population standard deviation; 0 with a single replication.
    pub replication_stdev: f64,
    pub replications: Vec<ReplicationStat>,
}

impl BiasReport {
    /// Builds a report from per-replication tallies. `None` when no trials.
    pub fn from_tallies(
        model: &str,
        condition: &Condition,
        metric: Metric,
        per_replication: &BTreeMap<u32, Tally>,
    ) -> Option<BiasReport> {
        let mut pooled = Tally::default();
        for t in per_replication.values() {
            pooled.merge(t);
        }
        if pooled.n_trials == 0 {
            return None;
        }
        let replications: Vec<ReplicationStat> = per_replication
            .iter()
            .filter(|(_, t)| t.n_trials > 0)
            .map(|(&r, t)| ReplicationStat {
                replication: r,
                tally: *t,
                shape_bias: t.shape_bias(),
            })
            .collect();
        let k = replications.len() as f64;
        let equal_sizes = replications.windows(2).all(|w| w[0].tally.n_trials == w[1].tally.n_trials);
        // With equal replication sizes the mean of the ratios is the pooled ratio.
        let mean = if equal_sizes {
            pooled.shape_bias()
        } else {
            replications.iter().map(|r| r.shape_bias).sum::<f64>() / k
        };
        let var = replications
            .iter()
            .map(|r| (r.shape_bias - mean).powi(2))
            .sum::<f64>()
            / k;
        Some(BiasReport {
            model: model.to_owned(),
            condition: condition.clone(),
            metric,
            tally: pooled,
            shape_bias: pooled.shape_bias(),
            replication_mean: mean,
            replication_stdev: var.sqrt(),
            replications,
        })
    }

    pub fn texture_bias(&self) -> f64 {
        1.0 - self.shape_bias
    }
}

/// One report per `(model, dataset, metric)` group, sorted by that key.
pub fn aggregate(decisions: &[LabeledDecision]) -> Vec<BiasReport> {
    type Group<'a> = (&'a Condition, BTreeMap<u32, Tally>);
    let mut groups: BTreeMap<(&str, &str, Metric), Group> = BTreeMap::new();
    for d in decisions {
        let key = (d.model.as_str(), d.condition.dataset.as_str(), d.decision.metric);
        let (_, tallies) = groups.entry(key).or_insert_with(|| (&d.condition, BTreeMap::new()));
        tallies
            .entry(d.decision.trial.replication_index)
            .or_default()
            .add(d.decision.outcome);
    }
    groups
        .into_iter()
        .filter_map(|((model, _, metric), (cond, tallies))| {
            BiasReport::from_tallies(model, cond, metric, &tallies)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::Placement;
    use proptest::prelude::*;

    fn ev(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector {
            stimulus_id: "x".into(),
            model_id: "m".into(),
            values: values.to_vec(),
        }
    }

    fn trial(r: u32) -> TripletTrial {
        TripletTrial {
            anchor_id: "a".into(),
            shape_match_id: "s".into(),
            texture_match_id: "t".into(),
            replication_index: r,
        }
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[1.0, 0.0], &[1.0, 0.0], Metric::Cosine).unwrap(), 1.0);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap(), 0.0);
        assert_eq!(similarity(&[1.0, 1.0], &[4.0, 5.0], Metric::Euclidean).unwrap(), 5.0);
        assert_eq!(similarity(&[1.0, 2.0], &[3.0, 4.0], Metric::Dot).unwrap(), 11.0);
    }

    #[test]
    fn similarity_errors() {
        assert!(matches!(
            similarity(&[0.0, 0.0], &[1.0, 0.0], Metric::Cosine),
            Err(Error::DegenerateEmbedding(_))
        ));
        assert!(similarity(&[0.0, 0.0], &[1.0, 0.0], Metric::Dot).is_ok());
        assert!(matches!(similarity(&[1.0], &[1.0, 0.0], Metric::Dot), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn decide_examples() {
        let d = |a: &[f32], s: &[f32], t: &[f32]| {
            decide_trial(&trial(0), &ev(a), &ev(s), &ev(t), Metric::Cosine).unwrap()
        };
        assert_eq!(d(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).outcome, Outcome::Shape);
        assert_eq!(d(&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]).outcome, Outcome::Tie);
        let dec = d(&[1.0, 1.0], &[2.0, 2.0], &[1.0, 0.0]);
        assert_eq!(dec.outcome, Outcome::Shape);
        assert!((dec.sim_shape - 1.0).abs() < 1e-15);
        assert!((dec.sim_texture - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn euclidean_prefers_smaller_distance() {
        let dec = decide_trial(&trial(0), &ev(&[0.0]), &ev(&[1.0]), &ev(&[3.0]), Metric::Euclidean).unwrap();
        assert_eq!(dec.outcome, Outcome::Shape);
        assert_eq!((dec.sim_shape, dec.sim_texture), (1.0, 3.0));
    }

    #[test]
    fn degenerate_propagates() {
        let r = decide_trial(&trial(0), &ev(&[0.0, 0.0]), &ev(&[1.0, 0.0]), &ev(&[0.0, 1.0]), Metric::Cosine);
        assert!(matches!(r, Err(Error::DegenerateEmbedding(_))));
    }

    fn labeled(outcome: Outcome, r: u32) -> LabeledDecision {
        LabeledDecision {
            model: "m".into(),
            condition: Condition::textured_silhouette(1.0),
            decision: TrialDecision {
                trial: trial(r),
                metric: Metric::Cosine,
                sim_shape: 0.0,
                sim_texture: 0.0,
                outcome,
            },
        }
    }

    #[test]
    fn aggregate_examples() {
        use Outcome::*;
        let ds: Vec<_> = [Shape, Shape, Texture, Texture].iter().map(|&o| labeled(o, 0)).collect();
        let r = aggregate(&ds);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].shape_bias, 0.5);
        assert_eq!(r[0].replication_stdev, 0.0);

        assert_eq!(aggregate(&[labeled(Shape, 0)])[0].shape_bias, 1.0);
        assert_eq!(aggregate(&[labeled(Texture, 0)])[0].shape_bias, 0.0);
        assert_eq!(aggregate(&[labeled(Tie, 0)])[0].shape_bias, 0.5);
        assert!(aggregate(&[]).is_empty());
    }

    #[test]
    fn constant_replications_have_zero_stdev() {
        use Outcome::*;
        let mut ds = Vec::new();
        for r in 0..3 {
            for o in [Shape, Shape, Shape, Texture, Texture] {
                ds.push(labeled(o, r));
            }
        }
        let rep = &aggregate(&ds)[0];
        assert_eq!(rep.replications.len(), 3);
        assert!(rep.replications.iter().all(|r| r.shape_bias == 0.6));
        assert_eq!(rep.replication_mean, 0.6);
        assert_eq!(rep.replication_stdev, 0.0);
    }

    #[test]
    fn replication_spread() {
        use Outcome::*;
        let ds = vec![labeled(Shape, 0), labeled(Texture, 1)];
        let rep = &aggregate(&ds)[0];
        assert_eq!(rep.replication_mean, 0.5);
        assert_eq!(rep.replication_stdev, 0.5);
    }

    #[test]
    fn groups_split_by_metric_and_dataset() {
        let mut a = labeled(Outcome::Shape, 0);
        a.decision.metric = Metric::Dot;
        let mut b = labeled(Outcome::Shape, 0);
        b.condition = Condition::scaled_silhouette(0.2, Placement::Aligned);
        let reps = aggregate(&[labeled(Outcome::Shape, 0), a, b]);
        assert_eq!(reps.len(), 3);
    }

    fn outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![Just(Outcome::Shape), Just(Outcome::Texture), Just(Outcome::Tie)]
    }

    proptest! {
        #[test]
        fn complement_and_counts(outs in prop::collection::vec((outcome(), 0u32..3), 1..200)) {
            let ds: Vec<_> = outs.iter().map(|&(o, r)| labeled(o, r)).collect();
            let rep = &aggregate(&ds)[0];
            let t = rep.tally;
            prop_assert_eq!(t.n_shape + t.n_texture + t.n_tie, t.n_trials);
            prop_assert_eq!(t.n_trials as usize, outs.len());
            prop_assert_eq!(rep.shape_bias + rep.texture_bias(), 1.0);
            prop_assert!((0.0..=1.0).contains(&rep.shape_bias));
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            outs in prop::collection::vec((outcome(), 0u32..3), 1..100),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let ds: Vec<_> = outs.iter().map(|&(o, r)| labeled(o, r)).collect();
            let mut shuffled = ds.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&ds), aggregate(&shuffled));
        }

        #[test]
        fn swap_is_antisymmetric(
            a in prop::collection::vec(-4i8..4, 4),
            s in prop::collection::vec(-4i8..4, 4),
            t in prop::collection::vec(-4i8..4, 4),
        ) {
            let f = |v: &[i8]| ev(&v.iter().map(|&x| f32::from(x)).collect::<Vec<_>>());
            for metric in Metric::ALL {
                let fwd = decide_trial(&trial(0), &f(&a), &f(&s), &f(&t), metric);
                let rev = decide_trial(&trial(0), &f(&a), &f(&t), &f(&s), metric);
                match (fwd, rev) {
                    (Ok(x), Ok(y)) => prop_assert_eq!(x.outcome.swapped(), y.outcome),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "asymmetric failure"),
                }
            }
        }

        #[test]
        fn power_of_two_rescaling_is_bit_exact_under_cosine(
            a in prop::collection::vec(-100f32..100.0, 1..16),
            k in -20i32..20,
        ) {
            prop_assume!(a.iter().any(|&x| x != 0.0));
            let b: Vec<f32> = a.iter().rev().map(|x| x + 1.0).collect();
            prop_assume!(b.iter().any(|&x| x != 0.0));
            let scale = 2f32.powi(k);
            let scaled: Vec<f32> = a.iter().map(|x| x * scale).collect();
            prop_assert_eq!(
                similarity(&a, &b, Metric::Cosine).unwrap().to_bits(),
                similarity(&scaled, &b, Metric::Cosine).unwrap().to_bits()
            );
        }
    }
}
