use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use timid_core::eval::{
    read_score_record, render_score_plot, score_episodes, scores_from_map, sha256_file, sha256_hex,
    Provenance, ScoreRecord, ScoreReport, METRICS_FILE, SCORES_DIR,
};
use timid_core::model::{load_checkpoint, ModelParams, TemporalMode};
use timid_core::simgen::{
    generate_dataset, Dataset, LabelRecord, MistakeKind, Split, Task, MANIFEST_FILE,
};
use timid_core::train::{train_loop, FINAL_CHECKPOINT, LOSS_LOG_FILE};

mod config;

use config::RunFile;

#[derive(Parser)]
#[command(name = "timid", version, about = "Temporal mistake detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-robot dataset
    Gen(GenArgs),
    /// Train a model on the train split
    Train(TrainArgs),
    /// Score a split and write frame-level metrics
    Eval(EvalArgs),
    /// Write per-episode probabilities without computing metrics
    Score(ScoreArgs),
    /// Render one episode's probabilities against its ground truth as SVG
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    mistake: Option<MistakeKind>,
    #[arg(long)]
    normal: Option<usize>,
    #[arg(long)]
    anomalous: Option<usize>,
    /// Restrict episodes to one arena layout (default: all)
    #[arg(long)]
    layout: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feature_dim: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Temporal {
    Dual,
    GlobalOnly,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from these parameters instead of a fresh initialisation
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    contrastive_weight: Option<f64>,
    /// Seeds both parameter initialisation and batch order
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    temporal: Option<Temporal>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, required_unless_present = "scores_file")]
    checkpoint: Option<PathBuf>,
    /// JSON object mapping episode id to per-step probabilities, used
    /// instead of a model
    #[arg(long, conflicts_with = "checkpoint")]
    scores_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Episode id to score; repeatable (default: every episode)
    #[arg(long = "episode")]
    episodes: Vec<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Score record written by `eval` or `score`
    #[arg(long)]
    scores: PathBuf,
    /// Dataset holding the episode's labels
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TIMID_LOG", "warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Score(a) => cmd_score(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut gen = RunFile::load(a.config.as_deref())?.generator;
    if let Some(task) = a.task {
        gen.task = task;
    }
    if a.mistake.is_some() {
        gen.mistake = a.mistake;
    }
    if let Some(n) = a.normal {
        gen.n_normal = n;
    }
    if let Some(n) = a.anomalous {
        gen.n_anomalous = n;
    }
    if let Some(l) = a.layout {
        gen.layouts = vec![l];
    }
    if let Some(s) = a.seed {
        gen.seed = s;
    }
    if let Some(d) = a.feature_dim {
        gen.feature_dim = d;
    }
    let manifest = generate_dataset(&gen, &a.out).context("generating dataset")?;
    println!(
        "{} episodes ({} task) in {}",
        manifest.episodes.len(),
        manifest.task,
        a.out.display()
    );
    for split in [Split::Train, Split::Test] {
        println!(
            "  {:<5} normal {:>4}  anomalous {:>4}",
            format!("{split:?}").to_lowercase(),
            manifest.count(split, false),
            manifest.count(split, true)
        );
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = RunFile::load(a.config.as_deref())?;
    let data = load_dataset(&a.data)?;
    let dim = data.manifest.feature_dim;
    if let Some(d) = a.feature_dim {
        ensure!(d == dim, "--feature-dim {d} does not match the dataset's {dim}");
    }

    let mut train = file.train;
    if let Some(v) = a.epochs {
        train.epochs = v;
    }
    if let Some(v) = a.lr {
        train.learning_rate = v;
    }
    if let Some(v) = a.batch {
        train.batch_size = v;
    }
    if let Some(v) = a.contrastive_weight {
        train.contrastive_weight = v;
    }
    if let Some(v) = a.seed {
        train.seed = v;
    }

    let mut params = match &a.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let cfg = &ckpt.params.config;
            ensure!(
                cfg.feature_dim == dim,
                "checkpoint expects feature dim {} but the dataset has {dim}",
                cfg.feature_dim
            );
            if let Some(d) = a.d_model {
                ensure!(d == cfg.d_model, "--d-model {d} does not match the checkpoint's {}", cfg.d_model);
            }
            log::info!("resuming from {}", path.display());
            ckpt.params
        }
        None => {
            let mut model = file.model;
            model.feature_dim = dim;
            if let Some(d) = a.d_model {
                model.d_model = d;
            }
            if let Some(s) = a.seed {
                model.init_seed = s;
            }
            if let Some(t) = a.temporal {
                model.temporal = match t {
                    Temporal::Dual => TemporalMode::Dual,
                    Temporal::GlobalOnly => TemporalMode::GlobalOnly,
                };
            }
            ModelParams::init(model)?
        }
    };
    let prompts = &data.manifest.prompts;
    let prompt = params.embed(&prompts.task_prompt, &prompts.mistake_prompt)?;
    let episodes = data.split(Split::Train);
    ensure!(!episodes.is_empty(), "dataset {} has no training episodes", a.data.display());

    let report = train_loop(&mut params, &prompt, &episodes, &train, Some(&a.out))?;
    let ckpt = a.out.join(FINAL_CHECKPOINT);
    println!(
        "final loss {:.6} after {} epochs",
        report.final_loss().unwrap_or(f64::NAN),
        train.epochs
    );
    println!("checkpoint {}", ckpt.display());
    println!("loss log {}", a.out.join(LOSS_LOG_FILE).display());
    Ok(())
}

fn read_scores_file(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes)
        .with_context(|| format!("{} must map episode ids to probability lists", path.display()))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let episodes = data.split(a.split.into());
    ensure!(!episodes.is_empty(), "the requested split is empty");
    let mut prov = Provenance {
        dataset_manifest_sha256: Some(sha256_file(&a.data.join(MANIFEST_FILE))?),
        generator_config_sha256: Some(sha256_hex(&serde_json::to_vec(&data.manifest.generator)?)),
        ..Provenance::default()
    };

    let scores = match (&a.scores_file, &a.checkpoint) {
        (Some(path), _) => {
            prov.scores_file_sha256 = Some(sha256_file(path)?);
            scores_from_map(&read_scores_file(path)?, &episodes)?
        }
        (None, Some(path)) => {
            let ckpt = load_checkpoint(path)?;
            let dim = data.manifest.feature_dim;
            ensure!(
                ckpt.params.config.feature_dim == dim,
                "checkpoint expects feature dim {} but the dataset has {dim}",
                ckpt.params.config.feature_dim
            );
            prov.checkpoint_sha256 = Some(sha256_file(path)?);
            prov.run_config_sha256 = Some(sha256_hex(&serde_json::to_vec(&ckpt.metadata)?));
            let prompts = &data.manifest.prompts;
            let prompt = ckpt.params.embed(&prompts.task_prompt, &prompts.mistake_prompt)?;
            score_episodes(&ckpt.params, &prompt, &episodes)?
        }
        (None, None) => bail!("either --checkpoint or --scores-file is required"),
    };

    let report = ScoreReport::new(scores)?;
    report.write(&a.out, &prov)?;
    let m = &report.metrics;
    println!("AP {} AR {} F1 {}", m.ap, m.ar, m.f1);
    println!(
        "{} episodes, {} steps, {} mistake steps",
        m.counts.episodes, m.counts.steps, m.counts.positive_steps
    );
    println!("metrics {}", a.out.join(METRICS_FILE).display());
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let selected: Vec<_> = if a.episodes.is_empty() {
        data.episodes.iter().collect()
    } else {
        a.episodes
            .iter()
            .map(|id| {
                data.episodes
                    .iter()
                    .find(|e| &e.id == id)
                    .with_context(|| format!("no episode {id} in {}", a.data.display()))
            })
            .collect::<Result<_>>()?
    };
    let ckpt = load_checkpoint(&a.checkpoint)?;
    ensure!(
        ckpt.params.config.feature_dim == data.manifest.feature_dim,
        "checkpoint expects feature dim {} but the dataset has {}",
        ckpt.params.config.feature_dim,
        data.manifest.feature_dim
    );
    let prompts = &data.manifest.prompts;
    let prompt = ckpt.params.embed(&prompts.task_prompt, &prompts.mistake_prompt)?;
    let dir = a.out.join(SCORES_DIR);
    fs::create_dir_all(&dir)?;
    for ep in score_episodes(&ckpt.params, &prompt, &selected)? {
        let peak = ep.probabilities.iter().copied().fold(0.0, f64::max);
        let record = ScoreRecord {
            id: ep.id.clone(),
            probabilities: ep.probabilities,
        };
        fs::write(dir.join(format!("{}.json", ep.id)), serde_json::to_vec(&record)?)?;
        println!("{}\tpeak {peak:.4}", ep.id);
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let record = read_score_record(&a.scores)?;
    let manifest_path = a.data.join(MANIFEST_FILE);
    let manifest: timid_core::simgen::DatasetManifest =
        serde_json::from_slice(&fs::read(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?)?;
    let entry = manifest
        .episodes
        .iter()
        .find(|e| e.id == record.id)
        .with_context(|| format!("episode {} is not in {}", record.id, a.data.display()))?;
    let labels: LabelRecord = serde_json::from_slice(&fs::read(a.data.join(&entry.labels))?)?;
    let svg = render_score_plot(&record.id, &record.probabilities, &labels.step_labels)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, svg)?;
    println!("{} steps plotted to {}", record.probabilities.len(), a.out.display());
    Ok(())
}
