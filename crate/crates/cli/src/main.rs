use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use shapebias::config::{Experiment1, ScaledExperiment};
use shapebias::fixtures::{synthetic_corpus, CorpusSpec};
use shapebias::pipeline::{self, Experiment};
use shapebias::report::{self, Format};
use shapebias::{Metric, ModelConfig, RunConfig, SyntheticKind};

/// Measure the shape-versus-texture bias of image-embedding models.
#[derive(Debug, Parser)]
#[command(name = "shapebias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write every configured condition's stimuli under <out>/stimuli/.
    Synth(ConfigArgs),
    /// Write every configured condition's trials under <out>/triplets/.
    Triplets(ConfigArgs),
    /// Run experiments and write reports, plots and decisions.
    Run(RunArgs),
    /// Regenerate report files from <run>/reports/*.json.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// csv, json or svg; all three when omitted.
        #[arg(long)]
        format: Option<String>,
    },
    /// Generate a small procedural corpus and a config that uses it.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 96)]
        canvas: u32,
        #[arg(long, default_value_t = 6)]
        shape_classes: usize,
        #[arg(long, default_value_t = 6)]
        texture_classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// 1, 2 or 3; repeatable. Defaults to every configured experiment.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    experiment: Vec<u8>,
    /// Comma-separated model ids to keep.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// cosine, dot or euclidean; repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    metric: Vec<String>,
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.global_seed = seed;
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    Ok(config)
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = load_config(&args.common)?;
    if !args.models.is_empty() {
        for id in &args.models {
            if !config.models.iter().any(|m| &m.model_id == id) {
                bail!(shapebias::Error::Config(format!("no model {id:?} in config")));
            }
        }
        config.models.retain(|m| args.models.contains(&m.model_id));
    }
    if !args.metric.is_empty() {
        config.metrics = args
            .metric
            .iter()
            .map(|m| m.parse::<Metric>())
            .collect::<Result<_, _>>()?;
    }
    let experiments: Vec<Experiment> = if args.experiment.is_empty() {
        Experiment::ALL.into_iter().filter(|e| e.is_configured(&config)).collect()
    } else {
        args.experiment
            .iter()
            .map(|&n| Experiment::from_number(n))
            .collect::<Result<_, _>>()?
    };
    for summary in pipeline::run(&config, &experiments)? {
        println!("experiment {}", summary.experiment);
        for r in &summary.reports {
            println!(
                "  {:<16} {:<28} {:<9} shape_bias {:.4} (mean {:.4} sd {:.4}, n={})",
                r.model,
                r.condition.dataset,
                r.metric,
                r.shape_bias,
                r.replication_mean,
                r.replication_stdev,
                r.tally.n_trials
            );
        }
        println!("  wrote {}", summary.files.csv.display());
        println!("  wrote {}", summary.files.json.display());
        for p in &summary.files.plots {
            println!("  wrote {}", p.display());
        }
        if let Some(p) = &summary.decisions {
            println!("  wrote {}", p.display());
        }
    }
    Ok(())
}

fn fixture(out: &Path, spec: CorpusSpec) -> anyhow::Result<()> {
    let corpus = out.join("corpus");
    synthetic_corpus(&spec).save(&corpus)?;
    let mut config = RunConfig {
        corpus_path: Some(PathBuf::from("corpus")),
        output_dir: PathBuf::from("results"),
        canvas_size: spec.canvas_size,
        metrics: Metric::ALL.to_vec(),
        experiment1: Some(Experiment1::default()),
        experiment2: Some(ScaledExperiment::default()),
        experiment3: Some(ScaledExperiment::default()),
        models: [
            ("silhouette", SyntheticKind::Silhouette),
            ("patch_stats", SyntheticKind::PatchStats),
            ("raw_pixel", SyntheticKind::RawPixel),
            ("random", SyntheticKind::Random),
        ]
        .into_iter()
        .map(|(id, kind)| ModelConfig::synthetic(id, kind))
        .collect(),
        ..RunConfig::default()
    };
    let candidates = (spec.shape_classes.saturating_sub(1) * spec.shape_instances)
        * (spec.texture_classes.saturating_sub(1) * spec.texture_instances);
    config.sampling.triplets_per_anchor = config.sampling.triplets_per_anchor.min(candidates.max(1));
    let path = out.join("shapebias.toml");
    std::fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", corpus.display());
    println!("wrote {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => {
            for dir in pipeline::synthesize(&load_config(&args)?)? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Triplets(args) => {
            for file in pipeline::write_all_triplets(&load_config(&args)?)? {
                println!("wrote {}", file.display());
            }
        }
        Command::Run(args) => run(args)?,
        Command::Report { run, format } => {
            let formats = match format {
                Some(f) => vec![f.parse::<Format>()?],
                None => vec![Format::Json, Format::Csv, Format::Svg],
            };
            for f in formats {
                for file in report::rerender(&run, f)? {
                    println!("wrote {}", file.display());
                }
            }
        }
        Command::Fixture {
            out,
            canvas,
            shape_classes,
            texture_classes,
            seed,
        } => fixture(
            &out,
            CorpusSpec {
                shape_classes,
                texture_classes,
                canvas_size: canvas,
                seed,
                ..CorpusSpec::default()
            },
        )?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<shapebias::Error>()
                .map_or("Error", shapebias::Error::kind);
            eprintln!("error: {e:#}");
            eprintln!("{}", serde_json::json!({ "error": kind, "message": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
