use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use shapebias::config::{Experiment1, ScaledExperiment};
use shapebias::embedding::{embed_all, write_store_binary, write_store_text, RandomEmbedder};
use shapebias::fixtures::{synthetic_corpus, CorpusSpec};
use shapebias::pipeline::{build_dataset, synthesize, write_all_triplets, RUN_FILE};
use shapebias::report::{read_reports_json, rerender, Format};
use shapebias::stimulus::read_manifest;
use shapebias::triplet::read_triplets;
use shapebias::{
    run, run_experiment1, run_experiment2, run_experiment3, Error, Experiment, Metric, ModelConfig,
    Placement, RunConfig, SourceCorpus, SyntheticKind,
};

const CANVAS: u32 = 32;

fn corpus_dir(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    let spec = CorpusSpec {
        shape_classes: 3,
        shape_instances: 2,
        texture_classes: 3,
        texture_instances: 1,
        canvas_size: CANVAS,
        novel_shapes: 4,
        novel_textures: 3,
        ..CorpusSpec::default()
    };
    synthetic_corpus(&spec).save(&dir).unwrap();
    dir
}

fn base_config(root: &Path) -> RunConfig {
    let mut c = RunConfig {
        corpus_path: Some(corpus_dir(root)),
        output_dir: root.join("out"),
        canvas_size: CANVAS,
        metrics: vec![Metric::Cosine, Metric::Euclidean],
        experiment1: Some(Experiment1 { alphas: vec![0.0, 1.0] }),
        experiment2: Some(ScaledExperiment {
            size_fractions: vec![0.5, 1.0],
            placements: vec![Placement::Aligned, Placement::Unaligned],
        }),
        experiment3: Some(ScaledExperiment {
            size_fractions: vec![0.5],
            placements: vec![Placement::Unaligned],
        }),
        models: vec![
            ModelConfig::synthetic("silhouette", SyntheticKind::Silhouette),
            ModelConfig::synthetic("patch_stats", SyntheticKind::PatchStats),
            ModelConfig::synthetic("random", SyntheticKind::Random),
        ],
        ..RunConfig::default()
    };
    c.sampling.triplets_per_anchor = 4;
    c
}

#[test]
fn texture_blind_model_is_fully_shape_biased_at_alpha_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config(dir.path());
    c.experiment1 = Some(Experiment1 { alphas: vec![0.0] });
    c.models.truncate(1);
    let reports = run_experiment1(&c).unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        assert_eq!(r.shape_bias, 1.0, "{:?}", r.metric);
        // 18 anchors x k=4 x 3 replications
        assert_eq!(r.tally.n_trials, 18 * 4 * 3);
        assert_eq!(r.replications.len(), 3);
        assert_eq!(r.replication_stdev, 0.0);
    }
}

#[test]
fn position_blind_model_ignores_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    let reports = run_experiment2(&c).unwrap();
    for size in [0.5, 1.0] {
        let pick = |p: Placement| {
            reports
                .iter()
                .find(|r| r.model == "patch_stats" && r.metric == Metric::Cosine && r.condition.size_fraction == size && r.condition.placement == p)
                .unwrap()
        };
        assert_eq!(pick(Placement::Aligned).tally, pick(Placement::Unaligned).tally);
    }
}

#[test]
fn experiment3_enumerates_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    let reports = run_experiment3(&c).unwrap();
    // 4 shapes x 3 textures, one instance each
    for r in &reports {
        assert_eq!(r.tally.n_trials, 4 * 3 * 3 * 2);
        assert_eq!(r.replications.len(), 1);
    }
}

#[test]
fn full_size_aligned_cell_equals_opaque_textured_silhouettes() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    let e1 = run_experiment1(&c).unwrap();
    let e2 = run_experiment2(&c).unwrap();
    for r1 in e1.iter().filter(|r| r.condition.alpha == 1.0) {
        let r2 = e2
            .iter()
            .find(|r| r.model == r1.model && r.metric == r1.metric && r.condition.size_fraction == 1.0 && r.condition.placement == Placement::Aligned)
            .unwrap();
        assert_eq!(r1.replications, r2.replications);
        assert_eq!(r1.shape_bias.to_bits(), r2.shape_bias.to_bits());
    }
}

#[test]
fn rerun_reproduces_and_foreign_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config(dir.path());
    let first = run(&c, &[Experiment::One]).unwrap();
    let bytes = fs::read(&first[0].files.csv).unwrap();
    let decisions = fs::read(first[0].decisions.as_ref().unwrap()).unwrap();

    // worker count is not part of the run's identity
    c.workers = Some(2);
    let second = run(&c, &[Experiment::One]).unwrap();
    assert_eq!(fs::read(&second[0].files.csv).unwrap(), bytes);
    assert_eq!(fs::read(second[0].decisions.as_ref().unwrap()).unwrap(), decisions);

    c.global_seed = 1;
    assert!(matches!(run(&c, &[Experiment::One]), Err(Error::OutputConflict(_))));
    assert_eq!(fs::read(&first[0].files.csv).unwrap(), bytes);
}

#[test]
fn results_without_a_marker_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    fs::create_dir_all(c.output_dir.join("reports")).unwrap();
    assert!(matches!(run(&c, &[Experiment::One]), Err(Error::OutputConflict(_))));
}

#[test]
fn corpus_changes_alter_the_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    run(&c, &[Experiment::One]).unwrap();
    let tex = fs::read_dir(c.corpus_path.as_ref().unwrap().join("textures")).unwrap().next().unwrap().unwrap().path();
    fs::write(&tex, fs::read(&tex).unwrap().into_iter().rev().collect::<Vec<u8>>()).unwrap();
    assert!(matches!(run(&c, &[Experiment::One]), Err(Error::OutputConflict(_))));
}

#[test]
fn failed_runs_leave_no_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config(dir.path());
    // 2 shape matches x 4 texture matches = 8 candidates per anchor
    c.sampling.triplets_per_anchor = 9;
    let err = run(&c, &[Experiment::One]).unwrap_err();
    assert!(matches!(err, Error::InsufficientCandidates { .. }), "{err}");
    assert!(!c.output_dir.join("reports").exists());
    assert!(!c.output_dir.join("decisions/experiment1.jsonl").exists());
    assert!(!c.output_dir.join("decisions/experiment1.jsonl.partial").exists());
}

#[test]
fn decisions_stay_within_their_condition() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    let out = run(&c, &[Experiment::Two]).unwrap();
    let corpus = SourceCorpus::load(c.corpus_path.as_ref().unwrap()).unwrap();
    let mut ids: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for cond in Experiment::Two.conditions(&c) {
        let recs = build_dataset(&corpus, &c, Experiment::Two, &cond).unwrap();
        ids.insert(cond.dataset.clone(), recs.into_iter().map(|r| r.meta.stimulus_id).collect());
    }
    let text = fs::read_to_string(out[0].decisions.as_ref().unwrap()).unwrap();
    let mut lines = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let dataset = v["dataset"].as_str().unwrap();
        for key in ["anchor_id", "shape_match_id", "texture_match_id"] {
            assert!(ids[dataset].contains(v[key].as_str().unwrap()));
        }
        lines += 1;
    }
    let expected: u64 = out[0].reports.iter().map(|r| r.tally.n_trials).sum();
    assert_eq!(lines, expected);
}

#[test]
fn store_backed_model_matches_the_embedder_it_was_exported_from() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config(dir.path());
    c.experiment3 = None;
    c.models = vec![ModelConfig::synthetic("random", SyntheticKind::Random)];
    let direct = run_experiment2(&c).unwrap();

    let corpus = SourceCorpus::load(c.corpus_path.as_ref().unwrap()).unwrap();
    let embedder = RandomEmbedder::new("exported", 512);
    let mut vectors = Vec::new();
    for cond in Experiment::Two.conditions(&c) {
        let recs = build_dataset(&corpus, &c, Experiment::Two, &cond).unwrap();
        for (rec, mut v) in recs.iter().zip(embed_all(&recs, &embedder).unwrap()) {
            v.stimulus_id = rec.meta.qualified_id();
            vectors.push(v);
        }
    }
    let text = dir.path().join("emb.jsonl");
    let binary = dir.path().join("emb.embs");
    write_store_text(&text, &vectors).unwrap();
    write_store_binary(&binary, &vectors).unwrap();

    for path in [text, binary] {
        c.models = vec![ModelConfig::store("exported", &path)];
        let via_store = run_experiment2(&c).unwrap();
        assert_eq!(via_store.len(), direct.len());
        for (a, b) in via_store.iter().zip(&direct) {
            // the random embedder is keyed by model id, so compare with a re-keyed run
            assert_eq!(a.condition, b.condition);
            assert_eq!(a.tally.n_trials, b.tally.n_trials);
        }
        let mut rekeyed = c.clone();
        rekeyed.models = vec![ModelConfig::synthetic("exported", SyntheticKind::Random)];
        assert_eq!(run_experiment2(&rekeyed).unwrap(), via_store);
    }
}

#[test]
fn missing_store_entries_and_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config(dir.path());
    c.models = vec![ModelConfig::store("m", dir.path().join("absent.jsonl"))];
    assert!(matches!(run_experiment1(&c), Err(Error::BackendUnavailable(_))));

    let path = dir.path().join("partial.jsonl");
    fs::write(&path, "{\"model\":\"m\",\"stimulus\":\"nothing\",\"dim\":1,\"values\":[1.0]}\n").unwrap();
    c.models = vec![ModelConfig::store("m", &path)];
    assert!(matches!(run_experiment1(&c), Err(Error::MissingEmbedding { .. })));
}

#[test]
fn synth_and_triplets_write_inspectable_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    let dirs = synthesize(&c).unwrap();
    assert_eq!(dirs.len(), 2 + 4 + 1);
    let manifest = read_manifest(&dirs[0].join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.len(), 18);
    assert!(dirs[0].join(format!("{}.mask.png", manifest[0].stimulus_id)).is_file());

    let files = write_all_triplets(&c).unwrap();
    assert_eq!(files.len(), dirs.len());
    let trials = read_triplets(&files[0]).unwrap();
    assert_eq!(trials.len(), 18 * 4 * 3);
    assert!(c.output_dir.join(RUN_FILE).is_file());
}

#[test]
fn reports_can_be_rerendered() {
    let dir = tempfile::tempdir().unwrap();
    let c = base_config(dir.path());
    let out = run(&c, &[Experiment::One, Experiment::Three]).unwrap();
    let csv = fs::read(&out[0].files.csv).unwrap();
    let svgs: Vec<Vec<u8>> = out[0].files.plots.iter().map(|p| fs::read(p).unwrap()).collect();
    fs::remove_file(&out[0].files.csv).unwrap();
    for p in &out[0].files.plots {
        fs::remove_file(p).unwrap();
    }
    rerender(&c.output_dir, Format::Csv).unwrap();
    rerender(&c.output_dir, Format::Svg).unwrap();
    assert_eq!(fs::read(&out[0].files.csv).unwrap(), csv);
    let again: Vec<Vec<u8>> = out[0].files.plots.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(again, svgs);
    assert_eq!(read_reports_json(&out[0].files.json).unwrap(), out[0].reports);
    // one plot per metric for experiment 1, per (metric, placement) for experiment 3
    assert_eq!(out[0].files.plots.len(), 2);
    assert_eq!(out[1].files.plots.len(), 2);
}

#[test]
fn unconfigured_experiment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config(dir.path());
    c.experiment3 = None;
    assert!(matches!(run(&c, &[Experiment::Three]), Err(Error::Config(_))));
    assert!(!c.output_dir.exists());
}

#[test]
fn mismatched_canvas_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config(dir.path());
    c.canvas_size = CANVAS + 1;
    assert!(matches!(run_experiment2(&c), Err(Error::CorpusInconsistent(_))));
}
