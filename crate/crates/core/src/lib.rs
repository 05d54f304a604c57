//! Shape-versus-texture bias measurement for image-embedding models.
//!
//! Stimuli pit an object's shape against its texture. For every anchor
//! image a triplet trial asks whether the model embeds the anchor closer to
//! a same-shape image or to a same-texture image; the fraction of trials won
//! by shape is the model's shape bias.
//!
//! ```
//! use shapebias::metrics::{similarity, Metric};
//!
//! let s = similarity(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap();
//! assert_eq!(s, 0.0);
//! ```

pub mod config;
pub mod embedding;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod seed;
pub mod stimulus;
pub mod triplet;

pub use config::RunConfig;
pub use embedding::{build_embedder, embed, embed_all, Embedder, EmbeddingVector, ModelConfig, SyntheticKind};
pub use error::{Error, Result};
pub use metrics::{aggregate, decide_trial, similarity, BiasReport, Metric, Outcome, TrialDecision};
pub use pipeline::{run, run_experiment1, run_experiment2, run_experiment3, Experiment};
pub use report::emit_outputs;
pub use stimulus::{Condition, Placement, SourceCorpus, StimulusMeta, StimulusRecord};
pub use triplet::{enumerate_triplets, sample_balanced, SamplingMode, SamplingPlan, TripletTrial};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/stimuli.md")]
    mod stimuli {}
    #[doc = include_str!("../../../book/src/triplets.md")]
    mod triplets {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/decisions.md")]
    mod decisions {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
