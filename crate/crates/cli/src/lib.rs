//! Command-line front end for the matchvision pipeline.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use matchvision::curation::{curate_dataset, CurateOptions, HttpLlmClient, Summarizer, DEFAULT_RETRIES};
use matchvision::harness::{
    caption_examples, caption_metrics, evaluate_commentary, evaluate_event, evaluate_foul, evaluate_predictions,
    event_examples, extract_features, foul_examples, gen_synthetic, pretrain_on_dataset, train_commentary_head,
    train_event_head, train_foul_head, write_predictions, CommentaryModel, ConfigFile, Dataset, EventModel,
    ExperimentConfig, FeatureSet, FoulModel, HeadTrainConfig, MetricReport, PredictionLine, Split, SyntheticCorpusSpec,
    Task,
};
use matchvision::numerics::Checkpoint;
use matchvision::{Error, Result};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "matchvision", version, about = "Soccer video-language pipeline at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fill missing event types and anonymize commentary in a directory of match JSON files.
    Curate(CurateArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Pretrain the video encoder.
    Pretrain(PretrainArgs),
    /// Dump frozen encoder features for every segment and foul view.
    Extract(ExtractArgs),
    /// Train a downstream head on extracted features.
    TrainHead(TrainHeadArgs),
    /// Score a trained head, or a predictions file.
    Evaluate(EvaluateArgs),
    /// Write greedy commentary for a split as JSON lines.
    Generate(GenerateArgs),
}

/// Settings shared by the training commands; each overrides the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Key-value config file (TOML syntax).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_new: Option<f64>,
    #[arg(long)]
    lr_pretrained: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// desk or full.
    #[arg(long)]
    profile: Option<String>,
}

impl Overrides {
    fn file(&self) -> ConfigFile {
        ConfigFile {
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_new: self.lr_new,
            lr_pretrained: self.lr_pretrained,
            weight_decay: self.weight_decay,
            profile: self.profile.clone(),
            ..ConfigFile::default()
        }
    }

    /// Defaults for `task`, then the config file, then flags.
    fn resolve(&self, task: Task, extra: ConfigFile) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::for_task(task);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file = ConfigFile::parse(&text)?;
            if file.task.as_deref().is_some_and(|t| t != task.name()) {
                return Err(Error::Schema(format!("config file is for task {:?}", file.task.unwrap())));
            }
            cfg.apply(&file)?;
        }
        cfg.apply(&self.file())?;
        cfg.apply(&extra)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Summarize with the LLM endpoint in MV_LLM_ENDPOINT instead of the rule engine.
    #[arg(long)]
    llm: bool,
    #[arg(long, default_value_t = DEFAULT_RETRIES)]
    retries: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON corpus spec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    matches: Option<usize>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// supervised, contrastive or hybrid.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    hybrid_stage1: Option<usize>,
    #[arg(long)]
    hybrid_stage2: Option<usize>,
    /// Checkpoint path; defaults to <data>/encoder.mvck.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainHeadArgs {
    /// event, foul or commentary.
    #[arg(long)]
    task: String,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Foul view pooling: mean or max.
    #[arg(long)]
    pooling: Option<String>,
    /// Commentary LoRA rank (0 trains the whole decoder).
    #[arg(long)]
    adapter_rank: Option<usize>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// JSON-lines predictions to score instead of a checkpoint.
    #[arg(long, conflicts_with_all = ["checkpoint", "features", "data"])]
    predictions: Option<PathBuf>,
    #[arg(long, requires_all = ["features", "data"])]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if force || !path.exists() {
        return Ok(());
    }
    let empty_dir = path.is_dir() && std::fs::read_dir(path).is_ok_and(|mut d| d.next().is_none());
    if empty_dir {
        return Ok(());
    }
    Err(Error::Schema(format!("{} exists; pass --force to overwrite", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn curate(a: CurateArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let client;
    let summarizer = if a.llm {
        client = HttpLlmClient::from_env()?;
        Summarizer::Llm {
            client: &client,
            retries: a.retries,
        }
    } else {
        Summarizer::Rules
    };
    let report = curate_dataset(&a.input, &a.out, &CurateOptions { summarizer })?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice(&text).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))?
        }
        None => SyntheticCorpusSpec::default(),
    };
    spec.seed = a.seed;
    spec.n_matches = a.matches.unwrap_or(spec.n_matches);
    spec.events_per_match = a.events.unwrap_or(spec.events_per_match);
    spec.class_count = a.classes.unwrap_or(spec.class_count);
    let summary = gen_synthetic(&spec, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.data.join("encoder.mvck"));
    guard(&out, a.force)?;
    let cfg = a.common.resolve(
        Task::Pretrain,
        ConfigFile {
            strategy: a.strategy.clone(),
            hybrid_stage1: a.hybrid_stage1,
            hybrid_stage2: a.hybrid_stage2,
            ..ConfigFile::default()
        },
    )?;
    let ds = Dataset::open(&a.data)?;
    let outcome = pretrain_on_dataset(&ds, &cfg)?;
    outcome.checkpoint.save(&out)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "checkpoint": out,
            "strategy": cfg.strategy,
            "best_epoch": outcome.best_epoch,
            "history": outcome.history,
        }))?
    );
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let n = extract_features(&a.checkpoint, &a.data, &a.out)?;
    println!("{}", json!({ "records": n, "out": a.out }));
    Ok(())
}

fn train_head(a: TrainHeadArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let task: Task = a.task.parse()?;
    if task == Task::Pretrain {
        return Err(Error::Schema("train-head takes event, foul or commentary".into()));
    }
    let cfg = a.common.resolve(
        task,
        ConfigFile {
            pooling: a.pooling.clone(),
            adapter_rank: a.adapter_rank,
            ..ConfigFile::default()
        },
    )?;
    let hc = HeadTrainConfig::from_experiment(&cfg);
    let ds = Dataset::open(&a.data)?;
    let feats = FeatureSet::load(&a.features)?;
    let (ckpt, history, best) = match task {
        Task::Event => {
            let t = train_event_head(
                &event_examples(&ds, &feats, Split::Train)?,
                &event_examples(&ds, &feats, Split::Valid)?,
                &hc,
            )?;
            let meta = json!({ "best_epoch": t.best_epoch, "history": t.history, "seed": hc.seed });
            (t.model.checkpoint(meta), t.history, t.best_epoch)
        }
        Task::Foul => {
            let t = train_foul_head(
                &foul_examples(&ds, &feats, Split::Train)?,
                &foul_examples(&ds, &feats, Split::Valid)?,
                &hc,
            )?;
            let meta = json!({ "best_epoch": t.best_epoch, "history": t.history, "seed": hc.seed });
            (t.model.checkpoint(meta), t.history, t.best_epoch)
        }
        _ => {
            let t = train_commentary_head(
                &caption_examples(&ds, &feats, Split::Train)?,
                &caption_examples(&ds, &feats, Split::Valid)?,
                &hc,
            )?;
            let meta = json!({ "best_epoch": t.best_epoch, "history": t.history, "seed": hc.seed });
            (t.model.checkpoint(meta), t.history, t.best_epoch)
        }
    };
    ckpt.save(&a.out)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "checkpoint": a.out, "best_epoch": best, "history": history }))?
    );
    Ok(())
}

fn seed_of(ckpt: &Checkpoint) -> u64 {
    ckpt.config["meta"]["seed"].as_u64().unwrap_or(0)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let report = if let Some(p) = &a.predictions {
        let r = evaluate_predictions(p)?;
        MetricReport {
            task: "commentary".into(),
            split: "predictions".into(),
            items: r.items,
            seed: 0,
            best_epoch: None,
            metrics: caption_metrics(&r),
        }
    } else {
        let (Some(ck), Some(fp), Some(dp)) = (&a.checkpoint, &a.features, &a.data) else {
            return Err(Error::Schema("evaluate needs --predictions, or --checkpoint with --features and --data".into()));
        };
        let split: Split = a.split.parse()?;
        let ckpt = Checkpoint::load(ck)?;
        let ds = Dataset::open(dp)?;
        let feats = FeatureSet::load(fp)?;
        let kind = ckpt.config["kind"].as_str().unwrap_or_default().to_string();
        let best_epoch = ckpt.config["meta"]["best_epoch"].as_u64().map(|e| e as usize);
        let (task, items, metrics) = match kind.as_str() {
            "event_head" => {
                let ex = event_examples(&ds, &feats, split)?;
                ("event", ex.len(), evaluate_event(&EventModel::from_checkpoint(&ckpt)?, &ex)?)
            }
            "foul_head" => {
                let ex = foul_examples(&ds, &feats, split)?;
                ("foul", ex.len(), evaluate_foul(&FoulModel::from_checkpoint(&ckpt)?, &ex)?)
            }
            "commentary_head" => {
                let ex = caption_examples(&ds, &feats, split)?;
                let (r, _) = evaluate_commentary(&CommentaryModel::from_checkpoint(&ckpt)?, &ex)?;
                ("commentary", ex.len(), caption_metrics(&r))
            }
            other => return Err(Error::ConfigMismatch(format!("cannot evaluate a {other:?} checkpoint"))),
        };
        MetricReport {
            task: task.into(),
            split: split.name().into(),
            items,
            seed: seed_of(&ckpt),
            best_epoch,
            metrics,
        }
    };
    match &a.out {
        Some(out) => {
            guard(out, a.force)?;
            write_text(out, &report.to_json())
        }
        None => {
            print!("{}", report.to_json());
            Ok(())
        }
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let split: Split = a.split.parse()?;
    let model = CommentaryModel::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let ds = Dataset::open(&a.data)?;
    let feats = FeatureSet::load(&a.features)?;
    let ex = caption_examples(&ds, &feats, split)?;
    let preds = ex
        .iter()
        .map(|e| {
            Ok(PredictionLine {
                id: e.id.clone(),
                candidate: model.generate(&e.features)?,
                references: vec![e.caption.clone()],
                label: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_predictions(&a.out, &preds)?;
    println!("{}", json!({ "predictions": preds.len(), "out": a.out }));
    Ok(())
}

/// Runs one command line (`argv[0]` is the program name) and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Curate(a) => curate(a),
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Extract(a) => extract(a),
        Command::TrainHead(a) => train_head(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
