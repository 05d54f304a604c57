//! End-to-end experiment runner: synthesize, enumerate and sample, embed,
//! decide and aggregate.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::embedding::{build_embedder, embed_all, Embedder, EmbeddingVector};
use crate::error::{invalid, Error, Result};
use crate::metrics::{outcome_of, similarity, BiasReport, Metric, Tally, TrialDecision};
use crate::report::{emit_outputs, EmittedFiles};
use crate::seed::{fnv1a64, splitmix64};
use crate::stimulus::{
    make_novel_set, make_textured_silhouette_set, place_dataset, write_dataset, Condition,
    SourceCorpus, StimulusMeta, StimulusRecord,
};
use crate::triplet::{enumerate_triplets, sample_balanced, write_triplets, SamplingPlan, TripletTrial};

/// Marker file recording which configuration produced an output directory.
pub const RUN_FILE: &str = "run.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Experiment {
    /// Textured silhouettes over background opacity.
    One,
    /// Scaled and placed white-background silhouettes.
    Two,
    /// Novel texture-by-shape stimuli over size and placement.
    Three,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::One, Experiment::Two, Experiment::Three];

    pub fn number(self) -> u8 {
        match self {
            Experiment::One => 1,
            Experiment::Two => 2,
            Experiment::Three => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Experiment::One),
            2 => Ok(Experiment::Two),
            3 => Ok(Experiment::Three),
            _ => Err(invalid(format!("no experiment {n}; expected 1, 2 or 3"))),
        }
    }

    /// Base name of the report files.
    pub fn run_name(self) -> String {
        format!("experiment{}", self.number())
    }

    /// Whether `config` has a section for this experiment.
    pub fn is_configured(self, config: &RunConfig) -> bool {
        match self {
            Experiment::One => config.experiment1.is_some(),
            Experiment::Two => config.experiment2.is_some(),
            Experiment::Three => config.experiment3.is_some(),
        }
    }

    /// Conditions in config order.
    pub fn conditions(self, config: &RunConfig) -> Vec<Condition> {
        match self {
            Experiment::One => config
                .experiment1
                .iter()
                .flat_map(|e| e.alphas.iter().map(|&a| Condition::textured_silhouette(a)))
                .collect(),
            Experiment::Two => config
                .experiment2
                .iter()
                .flat_map(|e| {
                    e.size_fractions.iter().flat_map(|&f| {
                        e.placements.iter().map(move |&p| Condition::scaled_silhouette(f, p))
                    })
                })
                .collect(),
            Experiment::Three => config
                .experiment3
                .iter()
                .flat_map(|e| {
                    e.size_fractions
                        .iter()
                        .flat_map(|&f| e.placements.iter().map(move |&p| Condition::novel(f, p)))
                })
                .collect(),
        }
    }

    /// Experiment 3 always enumerates exhaustively; the others use the
    /// configured plan.
    pub fn sampling_plan(self, config: &RunConfig) -> SamplingPlan {
        match self {
            Experiment::Three => SamplingPlan {
                global_seed: config.global_seed,
                ..SamplingPlan::exhaustive()
            },
            _ => config.sampling_plan(),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Builds the stimulus set of one condition.
///
/// Cue-conflict images must already be `canvas_size` square, so that scaling
/// at 1.0 is the identity.
pub fn build_dataset(
    corpus: &SourceCorpus,
    config: &RunConfig,
    experiment: Experiment,
    condition: &Condition,
) -> Result<Vec<StimulusRecord>> {
    match experiment {
        Experiment::One => {
            check_cue_conflict_canvas(corpus, config.canvas_size)?;
            make_textured_silhouette_set(corpus, &[condition.alpha], config.threshold)
        }
        Experiment::Two => {
            check_cue_conflict_canvas(corpus, config.canvas_size)?;
            let base = make_textured_silhouette_set(corpus, &[1.0], config.threshold)?;
            place_dataset(&base, condition, config.canvas_size, config.global_seed)
        }
        Experiment::Three => {
            let base = make_novel_set(corpus, config.canvas_size, config.global_seed)?;
            place_dataset(&base, condition, config.canvas_size, config.global_seed)
        }
    }
}

fn check_cue_conflict_canvas(corpus: &SourceCorpus, canvas: u32) -> Result<()> {
    if corpus.cue_conflict.is_empty() {
        return Err(Error::CorpusInconsistent("no cue-conflict images".into()));
    }
    match corpus.cue_conflict.iter().find(|(_, img)| img.dimensions() != (canvas, canvas)) {
        Some((key, img)) => Err(Error::CorpusInconsistent(format!(
            "cue-conflict image {} is {:?}, canvas_size is {canvas}",
            key.id(),
            img.dimensions()
        ))),
        None => Ok(()),
    }
}

/// Enumerated, then sampled (or kept whole) trials of one dataset.
pub fn trials_for(manifest: &[StimulusMeta], plan: &SamplingPlan) -> Result<Vec<TripletTrial>> {
    let all = enumerate_triplets(manifest)?;
    sample_balanced(&all, plan)
}

/// Decides every trial under `metric`.
///
/// Each distinct (anchor, match) similarity is computed once and shared by
/// every trial that needs it; outcomes equal those of
/// [`crate::metrics::decide_trial`].
pub fn decide_all(
    trials: &[TripletTrial],
    embeddings: &[EmbeddingVector],
    metric: Metric,
) -> Result<Vec<TrialDecision>> {
    let index: HashMap<&str, usize> = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| (e.stimulus_id.as_str(), i))
        .collect();
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| invalid(format!("trial references unknown stimulus {id}")))
    };
    let resolved: Vec<(usize, usize, usize)> = trials
        .iter()
        .map(|t| Ok((lookup(&t.anchor_id)?, lookup(&t.shape_match_id)?, lookup(&t.texture_match_id)?)))
        .collect::<Result<_>>()?;
    let mut pairs: Vec<(usize, usize)> = resolved
        .iter()
        .flat_map(|&(a, s, t)| [(a, s), (a, t)])
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let sims: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| similarity(&embeddings[a].values, &embeddings[b].values, metric))
        .collect::<Result<_>>()?;
    let sim = |p: (usize, usize)| sims[pairs.binary_search(&p).expect("pair cached")];
    Ok(trials
        .iter()
        .zip(&resolved)
        .map(|(trial, &(a, s, t))| {
            let sim_shape = sim((a, s));
            let sim_texture = sim((a, t));
            TrialDecision {
                trial: trial.clone(),
                metric,
                sim_shape,
                sim_texture,
                outcome: outcome_of(sim_shape, sim_texture, metric),
            }
        })
        .collect())
}

fn tallies(decisions: &[TrialDecision]) -> BTreeMap<u32, Tally> {
    let mut out: BTreeMap<u32, Tally> = BTreeMap::new();
    for d in decisions {
        out.entry(d.trial.replication_index).or_default().add(d.outcome);
    }
    out
}

/// A loaded model ready to embed.
pub struct LoadedModel {
    pub model_id: String,
    pub embedder: Box<dyn Embedder>,
}

pub fn load_models(config: &RunConfig) -> Result<Vec<LoadedModel>> {
    config
        .models
        .iter()
        .map(|m| {
            Ok(LoadedModel {
                model_id: m.model_id.clone(),
                embedder: build_embedder(m)?,
            })
        })
        .collect()
}

/// Reports for one experiment, with decisions streamed to `decision_sink`.
fn evaluate(
    corpus: &SourceCorpus,
    config: &RunConfig,
    models: &[LoadedModel],
    experiment: Experiment,
    mut decision_sink: Option<&mut dyn Write>,
    stimuli_dir: Option<&Path>,
) -> Result<Vec<BiasReport>> {
    if !experiment.is_configured(config) {
        return Err(Error::Config(format!("experiment {experiment} is not configured")));
    }
    let plan = experiment.sampling_plan(config);
    let mut reports = Vec::new();
    for condition in experiment.conditions(config) {
        let records = build_dataset(corpus, config, experiment, &condition)?;
        if let Some(dir) = stimuli_dir {
            write_dataset(&dir.join(&condition.dataset), &records)?;
        }
        let manifest: Vec<StimulusMeta> = records.iter().map(|r| r.meta.clone()).collect();
        let trials = trials_for(&manifest, &plan)?;
        for model in models {
            let embeddings = embed_all(&records, model.embedder.as_ref())?;
            for &metric in &config.metrics {
                let decisions = decide_all(&trials, &embeddings, metric)?;
                if let Some(report) =
                    BiasReport::from_tallies(&model.model_id, &condition, metric, &tallies(&decisions))
                {
                    reports.push(report);
                }
                if let Some(sink) = decision_sink.as_mut() {
                    write_decisions(&mut **sink, &model.model_id, &condition, &decisions)?;
                }
            }
        }
    }
    Ok(reports)
}

fn write_decisions(
    sink: &mut dyn Write,
    model: &str,
    condition: &Condition,
    decisions: &[TrialDecision],
) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        model: &'a str,
        #[serde(flatten)]
        condition: &'a Condition,
        #[serde(flatten)]
        decision: &'a TrialDecision,
    }
    for decision in decisions {
        let line = serde_json::to_string(&Line { model, condition, decision }).expect("decisions serialize");
        writeln!(sink, "{line}").map_err(|e| Error::io("<decisions>", e))?;
    }
    Ok(())
}

/// Runs `f` on a pool of `workers` threads, or the global pool when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Loads the corpus named by the config.
pub fn load_corpus(config: &RunConfig) -> Result<SourceCorpus> {
    SourceCorpus::load(config.corpus()?)
}

fn compute(config: &RunConfig, experiment: Experiment) -> Result<Vec<BiasReport>> {
    config.validate()?;
    with_workers(config.workers, || {
        let corpus = load_corpus(config)?;
        let models = load_models(config)?;
        evaluate(&corpus, config, &models, experiment, None, None)
    })?
}

/// Per (model, alpha, metric) reports over textured silhouettes. Writes nothing.
pub fn run_experiment1(config: &RunConfig) -> Result<Vec<BiasReport>> {
    compute(config, Experiment::One)
}

/// Per (model, size, placement, metric) reports over scaled silhouettes.
pub fn run_experiment2(config: &RunConfig) -> Result<Vec<BiasReport>> {
    compute(config, Experiment::Two)
}

/// Per (model, size, placement, metric) reports over novel stimuli, all
/// trials enumerated.
pub fn run_experiment3(config: &RunConfig) -> Result<Vec<BiasReport>> {
    compute(config, Experiment::Three)
}

/// What the output directory's marker file records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMarker {
    pub fingerprint: String,
    pub corpus_digest: String,
    pub config: String,
}

/// Hash of everything that determines output bytes: the config without
/// paths and worker count, the corpus contents and model file contents.
pub fn run_marker(config: &RunConfig) -> Result<RunMarker> {
    let mut canon = config.clone();
    canon.workers = None;
    canon.output_dir = PathBuf::new();
    canon.corpus_path = None;
    for m in &mut canon.models {
        if let Some(p) = m.model_path.as_mut() {
            *p = PathBuf::from(format!("{:016x}", digest_file(p)?));
        }
    }
    let corpus_digest = format!("{:016x}", digest_tree(config.corpus()?)?);
    let text = canon.to_toml();
    let fingerprint = format!(
        "{:016x}",
        splitmix64(fnv1a64(text.as_bytes()) ^ splitmix64(u64::from_str_radix(&corpus_digest, 16).expect("hex")))
    );
    Ok(RunMarker {
        fingerprint,
        corpus_digest,
        config: text,
    })
}

fn digest_file(path: &Path) -> Result<u64> {
    Ok(fnv1a64(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn digest_tree(root: &Path) -> Result<u64> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, root, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.push((rel, path));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files.sort();
    let mut h = fnv1a64(b"corpus");
    for (rel, path) in files {
        h = splitmix64(h ^ fnv1a64(rel.as_bytes()));
        h = splitmix64(h ^ digest_file(&path)?);
    }
    Ok(h)
}

/// Claims `config.output_dir` for this configuration.
///
/// A directory written by a different configuration, or holding results with
/// no marker, is refused with [`Error::OutputConflict`].
pub fn prepare_output_dir(config: &RunConfig) -> Result<RunMarker> {
    let marker = run_marker(config)?;
    let dir = &config.output_dir;
    let path = dir.join(RUN_FILE);
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let existing: RunMarker = serde_json::from_str(&text)
            .map_err(|_| Error::OutputConflict(dir.clone()))?;
        if existing.fingerprint != marker.fingerprint {
            return Err(Error::OutputConflict(dir.clone()));
        }
        return Ok(marker);
    }
    if ["reports", "decisions", "plots", "stimuli", "triplets"]
        .iter()
        .any(|d| dir.join(d).exists())
    {
        return Err(Error::OutputConflict(dir.clone()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = serde_json::to_string_pretty(&marker).expect("marker serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(marker)
}

/// Files produced by [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub reports: Vec<BiasReport>,
    pub files: EmittedFiles,
    pub decisions: Option<PathBuf>,
}

/// Runs the experiments and writes reports, plots and decisions under
/// `config.output_dir`. Nothing is written for an experiment that fails.
pub fn run(config: &RunConfig, experiments: &[Experiment]) -> Result<Vec<RunSummary>> {
    config.validate()?;
    for e in experiments {
        if !e.is_configured(config) {
            return Err(Error::Config(format!("experiment {e} is not configured")));
        }
    }
    prepare_output_dir(config)?;
    with_workers(config.workers, || {
        let corpus = load_corpus(config)?;
        let models = load_models(config)?;
        experiments
            .iter()
            .map(|&e| run_one(&corpus, config, &models, e))
            .collect()
    })?
}

fn run_one(
    corpus: &SourceCorpus,
    config: &RunConfig,
    models: &[LoadedModel],
    experiment: Experiment,
) -> Result<RunSummary> {
    let out = &config.output_dir;
    let name = experiment.run_name();
    let stimuli = config.write_stimuli.then(|| out.join("stimuli"));
    let final_path = out.join("decisions").join(format!("{name}.jsonl"));
    let tmp_path = final_path.with_extension("jsonl.partial");

    let result = if config.write_decisions {
        fs::create_dir_all(out.join("decisions")).map_err(|e| Error::io(out, e))?;
        let file = File::create(&tmp_path).map_err(|e| Error::io(&tmp_path, e))?;
        let mut w = BufWriter::new(file);
        let reports = evaluate(corpus, config, models, experiment, Some(&mut w), stimuli.as_deref());
        let flushed = w.flush().map_err(|e| Error::io(&tmp_path, e));
        reports.and_then(|r| flushed.map(|_| r))
    } else {
        evaluate(corpus, config, models, experiment, None, stimuli.as_deref())
    };
    let reports = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = fs::remove_file(&tmp_path);
            return Err(e);
        }
    };
    let decisions = if config.write_decisions {
        fs::rename(&tmp_path, &final_path).map_err(|e| Error::io(&final_path, e))?;
        Some(final_path)
    } else {
        None
    };
    let files = emit_outputs(&reports, out, &name)?;
    Ok(RunSummary {
        experiment,
        reports,
        files,
        decisions,
    })
}

/// Writes every configured condition's stimuli under `<output_dir>/stimuli/`.
pub fn synthesize(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    prepare_output_dir(config)?;
    with_workers(config.workers, || {
        let corpus = load_corpus(config)?;
        let mut written = Vec::new();
        for e in Experiment::ALL.into_iter().filter(|e| e.is_configured(config)) {
            for condition in e.conditions(config) {
                let records = build_dataset(&corpus, config, e, &condition)?;
                let dir = config.output_dir.join("stimuli").join(&condition.dataset);
                write_dataset(&dir, &records)?;
                written.push(dir);
            }
        }
        Ok(written)
    })?
}

/// Writes every configured condition's trials to
/// `<output_dir>/triplets/<dataset>-<plan hash>.jsonl`.
pub fn write_all_triplets(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    prepare_output_dir(config)?;
    with_workers(config.workers, || {
        let corpus = load_corpus(config)?;
        let mut written = Vec::new();
        for e in Experiment::ALL.into_iter().filter(|e| e.is_configured(config)) {
            let plan = e.sampling_plan(config);
            for condition in e.conditions(config) {
                let records = build_dataset(&corpus, config, e, &condition)?;
                let manifest: Vec<StimulusMeta> = records.into_iter().map(|r| r.meta).collect();
                let trials = trials_for(&manifest, &plan)?;
                let path = config
                    .output_dir
                    .join("triplets")
                    .join(format!("{}-{}.jsonl", condition.dataset, plan.hash_hex()));
                write_triplets(&path, &trials)?;
                written.push(path);
            }
        }
        Ok(written)
    })?
}
