mod manifest;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgsym::data::{
    classify_symmetric, complete_symmetric, dataset_stats, generate_circle_set, load_dataset_dir,
    load_named_triples, write_dataset_dir, write_named_triples, CompletionOptions,
    CompletionScope, RelationId, TripleFormat, DEFAULT_THRESHOLD,
};
use kgsym::evaluation::{circle_eval, link_prediction, CircleReport, EvalReport};
use kgsym::models::Checkpoint;
use kgsym::training::{train_with_observer, TrainConfig};
use kgsym::{EvalMode, ModelKind, Norm, Split, SplitSelector, TripleStore};
use serde::{Deserialize, Serialize};

use crate::manifest::{dataset_files, RunManifest};

#[derive(Parser)]
#[command(name = "kgsym", version, about = "Translational KG embeddings with bi-vector symmetric relations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics and per-relation symmetry ratios.
    Stats(StatsArgs),
    /// Add the missing reverse of every triple of a symmetric relation.
    Complete(CompleteArgs),
    /// Generate reflexive circle triples over the symmetric relations.
    CircleGen(CircleGenArgs),
    /// Train a model and write checkpoint, history and manifest.
    Train(TrainArgs),
    /// Link prediction and circle-triple evaluation of a checkpoint.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Names,
    Ids,
}

impl From<FormatArg> for TripleFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Names => TripleFormat::Names,
            FormatArg::Ids => TripleFormat::Ids,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorArg {
    Train,
    Valid,
    Test,
    All,
}

impl From<SelectorArg> for SplitSelector {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Train => SplitSelector::Train,
            SelectorArg::Valid => SplitSelector::Valid,
            SelectorArg::Test => SplitSelector::Test,
            SelectorArg::All => SplitSelector::All,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Directory with train/valid/test files.
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "names")]
    format: FormatArg,
}

impl DataArgs {
    fn load(&self) -> Result<TripleStore> {
        Ok(load_dataset_dir(&self.data_dir, self.format.into())?)
    }

    fn files(&self) -> Vec<PathBuf> {
        dataset_files(&self.data_dir, self.format.into())
    }
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_negative_numbers = true)]
    threshold: f64,
    /// Splits over which symmetry ratios are computed.
    #[arg(long, value_enum, default_value = "all")]
    selector: SelectorArg,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Train,
    All,
}

#[derive(Args)]
struct CompleteArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory (names format).
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "all")]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value = "all")]
    selector: SelectorArg,
    /// Add reverses even when they already exist in another split.
    #[arg(long)]
    no_leakage_guard: bool,
}

#[derive(Args)]
struct CircleGenArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output file (names format).
    out_path: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_negative_numbers = true)]
    threshold: f64,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModelArg {
    Transe,
    Transh,
    Transd,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Transe => ModelKind::TransE,
            ModelArg::Transh => ModelKind::TransH,
            ModelArg::Transd => ModelKind::TransD,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NormArg {
    L1,
    L2,
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        }
    }
}

/// Training options shared by flags and the JSON config file.
#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOptions {
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Give classified-symmetric relations a pair of translation vectors.
    #[arg(long)]
    #[serde(default)]
    sym: bool,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    margin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
}

impl TrainOptions {
    /// Flags override the file; unset keys fall back to defaults.
    fn resolve(self, file: TrainOptions) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            model_kind: self.model.or(file.model).map_or(d.model_kind, Into::into),
            sym_enabled: self.sym || file.sym,
            dim: self.dim.or(file.dim).unwrap_or(d.dim),
            margin: self.margin.or(file.margin).unwrap_or(d.margin),
            norm: self.norm.or(file.norm).map(Into::into),
            learning_rate: self.lr.or(file.lr).unwrap_or(d.learning_rate),
            epochs: self.epochs.or(file.epochs).unwrap_or(d.epochs),
            batch_size: self.batch.or(file.batch).unwrap_or(d.batch_size),
            negatives_per_positive: self.negatives.or(file.negatives).unwrap_or(d.negatives_per_positive),
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
            threshold: self.threshold.or(file.threshold).unwrap_or(d.threshold),
            ..d
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    out_dir: PathBuf,
    /// JSON file whose keys mirror the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    options: TrainOptions,
    /// Single update stream and no wall-clock fields in written files.
    #[arg(long)]
    deterministic: bool,
    /// Skip the filtered test evaluation after training.
    #[arg(long)]
    no_eval: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Raw,
    Filtered,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "filtered")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Circle triple file (names format).
    #[arg(long)]
    circle: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write eval.json and manifest.json into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_workers(requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn symmetric_set(
    store: &TripleStore,
    threshold: f64,
    selector: SplitSelector,
) -> Result<BTreeSet<RelationId>> {
    Ok(classify_symmetric(store, threshold, selector)?
        .into_iter()
        .map(|m| m.relation)
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let store = args.data.load()?;
    let report = dataset_stats(&store, args.threshold, args.selector.into())?;
    print!("{}", report.to_text());
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_complete(args: CompleteArgs) -> Result<()> {
    let store = args.data.load()?;
    let symmetric = symmetric_set(&store, args.threshold, args.selector.into())?;
    let options = CompletionOptions {
        scope: match args.scope {
            ScopeArg::Train => CompletionScope::TrainOnly,
            ScopeArg::All => CompletionScope::AllSplits,
        },
        leakage_guard: !args.no_leakage_guard,
    };
    let (done, summary) = complete_symmetric(&store, &symmetric, options)?;
    write_dataset_dir(&done, &args.out_dir)?;
    let names: Vec<&str> = symmetric
        .iter()
        .filter_map(|&r| store.relations().name(r))
        .collect();
    println!("symmetric relations: {}", names.join(" "));
    for split in Split::ALL {
        let i = split.index();
        println!(
            "{:<5} added {:>8}  skipped {:>8}  total {:>8}",
            split.name(),
            summary.added[i],
            summary.skipped_by_guard[i],
            done.split(split).len()
        );
    }
    Ok(())
}

fn cmd_circle_gen(args: CircleGenArgs) -> Result<()> {
    let store = args.data.load()?;
    let symmetric = symmetric_set(&store, args.threshold, SplitSelector::All)?;
    let triples = generate_circle_set(&store, &symmetric, args.n, args.seed)?;
    let file = fs::File::create(&args.out_path)
        .with_context(|| format!("creating {}", args.out_path.display()))?;
    write_named_triples(BufWriter::new(file), &triples, &store)
        .with_context(|| format!("writing {}", args.out_path.display()))?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file_options = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainOptions::default(),
    };
    let config = args.options.resolve(file_options);
    config.validate()?;
    let store = args.data.load()?;

    let mut manifest = RunManifest::new(
        serde_json::to_value(&config)?,
        Some(config.seed),
        args.deterministic,
    );
    let mut inputs = args.data.files();
    if let Some(path) = &args.config {
        inputs.push(path.clone());
    }
    manifest.add_inputs(&inputs)?;

    let every = (config.epochs / 10).max(1);
    let (params, history) = train_with_observer(&store, &config, |record, _| {
        if record.epoch % every == 0 || record.epoch == config.epochs {
            log::info!("epoch {} loss {:.6}", record.epoch, record.mean_loss);
        }
    })?;

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let ckpt_path = args.out_dir.join("checkpoint.kge");
    Checkpoint::new(params.clone(), config.norm(), config.seed, config.epochs)
        .save(&ckpt_path)
        .with_context(|| format!("writing {}", ckpt_path.display()))?;
    manifest.add_output(&ckpt_path)?;
    let history_path = args.out_dir.join("history.tsv");
    fs::write(&history_path, history.to_tsv(Some(&store)))
        .with_context(|| format!("writing {}", history_path.display()))?;
    manifest.add_output(&history_path)?;

    if !args.no_eval && !store.test().is_empty() {
        let report = link_prediction(
            &params,
            store.test(),
            &store,
            EvalMode::Filtered,
            config.norm(),
            default_workers(args.workers),
        )?;
        print!("{}", report.to_text());
        let eval_path = args.out_dir.join("eval.json");
        write_json(&eval_path, &EvalOutput { link_prediction: vec![report], circle: None })?;
        manifest.add_output(&eval_path)?;
    }
    if let Some(last) = history.last() {
        println!("final mean loss {:.6} after {} epochs", last.mean_loss, last.epoch);
    }
    manifest.write(&args.out_dir)
}

#[derive(Serialize)]
struct EvalOutput {
    link_prediction: Vec<EvalReport>,
    circle: Option<CircleReport>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let store = args.data.load()?;
    let m = &ckpt.manifest;
    if m.entity_count != store.entity_count() || m.relation_count != store.relation_count() {
        bail!(
            "checkpoint vocabulary ({} entities, {} relations) does not match dataset ({} entities, {} relations)",
            m.entity_count,
            m.relation_count,
            store.entity_count(),
            store.relation_count()
        );
    }
    let norm = m.norm;
    let workers = default_workers(args.workers);
    let triples = match args.split {
        SplitArg::Valid => store.valid(),
        SplitArg::Test => store.test(),
    };
    let modes: &[EvalMode] = match args.mode {
        ModeArg::Raw => &[EvalMode::Raw],
        ModeArg::Filtered => &[EvalMode::Filtered],
        ModeArg::Both => &[EvalMode::Raw, EvalMode::Filtered],
    };
    let mut output = EvalOutput {
        link_prediction: Vec::new(),
        circle: None,
    };
    if !triples.is_empty() {
        for &mode in modes {
            let report = link_prediction(&ckpt.params, triples, &store, mode, norm, workers)?;
            print!("{}", report.to_text());
            output.link_prediction.push(report);
        }
    }
    if let Some(path) = &args.circle {
        let circle = load_named_triples(path, &store)?;
        let report = circle_eval(&ckpt.params, &circle, &store, norm)?;
        print!("{}", report.to_text());
        output.circle = Some(report);
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut manifest = RunManifest::new(
            serde_json::json!({
                "mode": modes.iter().map(|m| m.name()).collect::<Vec<_>>(),
                "split": match args.split { SplitArg::Valid => "valid", SplitArg::Test => "test" },
                "norm": norm,
            }),
            Some(m.seed),
            true,
        );
        let mut inputs = vec![args.checkpoint.clone()];
        inputs.extend(args.data.files());
        inputs.extend(args.circle.iter().cloned());
        manifest.add_inputs(&inputs)?;
        let eval_path = dir.join("eval.json");
        write_json(&eval_path, &output)?;
        manifest.add_output(&eval_path)?;
        manifest.write(dir)?;
    }
    std::io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(a) => cmd_stats(a),
        Command::Complete(a) => cmd_complete(a),
        Command::CircleGen(a) => cmd_circle_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
