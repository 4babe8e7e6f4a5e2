use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::{Dataset, Split};
use super::downstream::{
    caption_examples, evaluate_commentary, evaluate_event, evaluate_foul, event_examples, foul_examples,
    train_commentary_head, train_event_head, train_foul_head, FeatureSet, HeadTrainConfig, Prediction,
};
use super::extract::extract_features;
use super::synth::{gen_synthetic, SyntheticCorpusSpec};
use crate::error::{Error, Result};
use crate::metrics::{caption_report, CaptionReport, EvalItem};
use crate::objectives::{run_pretraining, PretrainConfig, PretrainOutcome};

/// Metrics of one evaluated model, written as pretty JSON with sorted keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub split: String,
    pub items: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn caption_metrics(r: &CaptionReport) -> BTreeMap<String, f64> {
    [
        ("bleu1", r.bleu1),
        ("bleu4", r.bleu4),
        ("meteor", r.meteor),
        ("rouge_l", r.rouge_l),
        ("cider", r.cider),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// A predictions line: `{id, candidate, references[], label?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl From<Prediction> for PredictionLine {
    fn from(p: Prediction) -> Self {
        Self {
            id: p.id,
            candidate: p.candidate,
            references: p.references,
            label: None,
        }
    }
}

/// Scores a JSON-lines predictions file. Blank lines are skipped.
pub fn evaluate_predictions(path: &Path) -> Result<CaptionReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), n + 1)))?;
        items.push(EvalItem::from_text(&p.candidate, &p.references));
    }
    caption_report(&items)
}

pub fn write_predictions(path: &Path, preds: &[PredictionLine]) -> Result<()> {
    let mut text = String::new();
    for p in preds {
        text += &serde_json::to_string(p)?;
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretrains an encoder on a corpus directory with the settings of `cfg`.
pub fn pretrain_on_dataset(ds: &Dataset, cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    let encoder = cfg.profile.encoder();
    let vocab = ds.caption_vocabulary();
    let data = ds.pretrain_data(&vocab, encoder.text_vocab, encoder.text_max_len)?;
    let pcfg = PretrainConfig {
        encoder,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr_new: cfg.lr_new,
        lr_pretrained: cfg.lr_pretrained,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        ..PretrainConfig::default()
    };
    run_pretraining(cfg.strategy, &data, &pcfg)
}

/// Which heads to train on extracted features, and for how long.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub corpus: SyntheticCorpusSpec,
    pub pretrain: ExperimentConfig,
    pub event: ExperimentConfig,
    pub foul: ExperimentConfig,
    pub commentary: ExperimentConfig,
}

/// Trains the event, foul and commentary heads on `features` and scores
/// each on the test split.
pub fn train_and_evaluate_heads(ds: &Dataset, features: &FeatureSet, cfg: &PipelineConfig) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::new();

    let hc = HeadTrainConfig::from_experiment(&cfg.event);
    let t = train_event_head(
        &event_examples(ds, features, Split::Train)?,
        &event_examples(ds, features, Split::Valid)?,
        &hc,
    )?;
    let test = event_examples(ds, features, Split::Test)?;
    reports.push(MetricReport {
        task: "event".into(),
        split: "test".into(),
        items: test.len(),
        seed: hc.seed,
        best_epoch: Some(t.best_epoch),
        metrics: evaluate_event(&t.model, &test)?,
    });

    let hc = HeadTrainConfig::from_experiment(&cfg.foul);
    let t = train_foul_head(
        &foul_examples(ds, features, Split::Train)?,
        &foul_examples(ds, features, Split::Valid)?,
        &hc,
    )?;
    let test = foul_examples(ds, features, Split::Test)?;
    reports.push(MetricReport {
        task: "foul".into(),
        split: "test".into(),
        items: test.len(),
        seed: hc.seed,
        best_epoch: Some(t.best_epoch),
        metrics: evaluate_foul(&t.model, &test)?,
    });

    let hc = HeadTrainConfig::from_experiment(&cfg.commentary);
    let t = train_commentary_head(
        &caption_examples(ds, features, Split::Train)?,
        &caption_examples(ds, features, Split::Valid)?,
        &hc,
    )?;
    let test = caption_examples(ds, features, Split::Test)?;
    let (report, _) = evaluate_commentary(&t.model, &test)?;
    reports.push(MetricReport {
        task: "commentary".into(),
        split: "test".into(),
        items: test.len(),
        seed: hc.seed,
        best_epoch: Some(t.best_epoch),
        metrics: caption_metrics(&report),
    });
    Ok(reports)
}

/// Synthetic corpus → pretraining → feature extraction → heads → reports.
/// Everything is written under `dir` (`data/`, `encoder.mvck`,
/// `features.mvft`, `reports/<task>.json`).
pub fn run_pipeline(dir: &Path, cfg: &PipelineConfig) -> Result<Vec<MetricReport>> {
    let data = dir.join("data");
    gen_synthetic(&cfg.corpus, &data)?;
    let ds = Dataset::open(&data)?;
    let outcome = pretrain_on_dataset(&ds, &cfg.pretrain)?;
    let ckpt = dir.join("encoder.mvck");
    outcome.checkpoint.save(&ckpt)?;
    let feats = dir.join("features.mvft");
    extract_features(&ckpt, &data, &feats)?;
    let features = FeatureSet::load(&feats)?;
    let reports = train_and_evaluate_heads(&ds, &features, cfg)?;
    let out = dir.join("reports");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for r in &reports {
        r.save(&out.join(format!("{}.json", r.task)))?;
    }
    Ok(reports)
}
