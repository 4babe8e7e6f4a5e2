use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::dataset::{Dataset, Split};
use super::select::{select_best_checkpoint, SelectionTask, ValidationRecord};
use crate::encoder::{batch_of, read_features};
use crate::error::{Error, Result};
use crate::heads::{
    foul_loss_var, CommentaryConfig, CommentaryHead, EventHead, FoulHead, GenerationMode, ViewPooling, Vocabulary, EOS,
};
use crate::metrics::{caption_report, topk_accuracy, CaptionReport, EvalItem};
use crate::numerics::{AdamW, Checkpoint, Graph, ParamStore, Rng, Tensor, Var};
use crate::taxonomy::EventLabel;

/// Cached encoder features by record id.
#[derive(Clone, Debug, Default)]
pub struct FeatureSet {
    records: HashMap<String, Tensor>,
}

impl FeatureSet {
    pub fn load(path: &Path) -> Result<Self> {
        let records = read_features(path)?.into_iter().map(|r| (r.id, r.features)).collect();
        Ok(Self { records })
    }

    pub fn get(&self, id: &str) -> Result<&Tensor> {
        self.records
            .get(id)
            .ok_or_else(|| Error::Schema(format!("no features for {id:?}")))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Feature width `D` (0 when empty).
    pub fn dim(&self) -> usize {
        self.records.values().next().map_or(0, |t| t.shape()[1])
    }
}

/// Optimizer and schedule settings for a downstream head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_new: f64,
    pub lr_pretrained: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub heads: usize,
    pub pooling: ViewPooling,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    /// Caption length cap in tokens, `BOS` and `EOS` included.
    pub max_caption_len: usize,
}

impl HeadTrainConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        Self {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr_new: cfg.lr_new,
            lr_pretrained: cfg.lr_pretrained,
            weight_decay: cfg.weight_decay,
            seed: cfg.seed,
            heads: cfg.profile.encoder().heads,
            pooling: cfg.pooling,
            adapter_rank: cfg.adapter_rank,
            adapter_alpha: cfg.adapter_alpha,
            max_caption_len: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventExample {
    pub id: String,
    pub features: Tensor,
    pub label: EventLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoulExample {
    pub id: String,
    pub views: Vec<Tensor>,
    pub foul_class: usize,
    pub severity: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionExample {
    pub id: String,
    pub features: Tensor,
    pub caption: String,
}

pub fn event_examples(ds: &Dataset, feats: &FeatureSet, split: Split) -> Result<Vec<EventExample>> {
    ds.segments(split)
        .into_iter()
        .map(|s| {
            Ok(EventExample {
                features: feats.get(&s.id)?.clone(),
                label: s.label,
                id: s.id,
            })
        })
        .collect()
}

pub fn caption_examples(ds: &Dataset, feats: &FeatureSet, split: Split) -> Result<Vec<CaptionExample>> {
    ds.segments(split)
        .into_iter()
        .map(|s| {
            Ok(CaptionExample {
                features: feats.get(&s.id)?.clone(),
                caption: s.caption,
                id: s.id,
            })
        })
        .collect()
}

pub fn foul_examples(ds: &Dataset, feats: &FeatureSet, split: Split) -> Result<Vec<FoulExample>> {
    ds.fouls(split)
        .into_iter()
        .map(|f| {
            let views = f.view_ids.iter().map(|v| feats.get(v).cloned()).collect::<Result<Vec<_>>>()?;
            Ok(FoulExample {
                id: f.id,
                views,
                foul_class: f.foul_class,
                severity: f.severity,
            })
        })
        .collect()
}

/// A trained head with its per-epoch validation record.
#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    pub history: Vec<ValidationRecord>,
    pub best_epoch: usize,
}

/// Shared loop: shuffled mini-batches, AdamW, validation after each epoch,
/// and a final reload of the best epoch's parameters.
fn fit(
    store: &mut ParamStore,
    cfg: &HeadTrainConfig,
    n_train: usize,
    task: SelectionTask,
    mut loss: impl FnMut(&mut Graph, &ParamStore, &[usize]) -> Result<Var>,
    mut validate: impl FnMut(&ParamStore) -> Result<ValidationRecord>,
) -> Result<(Vec<ValidationRecord>, usize)> {
    if n_train == 0 {
        return Err(Error::DataEmpty);
    }
    let mut opt = AdamW::new(cfg.lr_new, cfg.lr_pretrained).with_weight_decay(cfg.weight_decay);
    let shuffle = Rng::new(cfg.seed).fork(2);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        shuffle.fork(epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let mut g = Graph::new();
            let l = loss(&mut g, store, chunk)?;
            let value = g.value(l).item();
            if !value.is_finite() {
                return Err(Error::DivergedLoss { epoch, step });
            }
            let grads = g.backward(l);
            store.zero_grad();
            store.accumulate(&g, &grads);
            opt.step(store);
            total += value;
            steps += 1;
        }
        let mut record = validate(store)?;
        record.epoch = epoch;
        record.train_loss = Some(total / steps as f64);
        history.push(record);
        snapshots.push(store.snapshot());
    }
    let best = select_best_checkpoint(&history, task)?;
    store.load(&snapshots[best - 1])?;
    Ok((history, best))
}

fn check_kind(ckpt: &Checkpoint, kind: &str) -> Result<()> {
    match ckpt.config.get("kind").and_then(Value::as_str) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::ConfigMismatch(format!("expected a {kind} checkpoint, found {other:?}"))),
    }
}

fn config_field<T: serde::de::DeserializeOwned>(ckpt: &Checkpoint, key: &str) -> Result<T> {
    serde_json::from_value(ckpt.config.get(key).cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::ConfigMismatch(format!("checkpoint field {key}: {e}")))
}

const EVAL_CHUNK: usize = 256;

/// Event classifier over frozen features.
#[derive(Clone, Debug)]
pub struct EventModel {
    pub store: ParamStore,
    pub head: EventHead,
}

impl EventModel {
    pub fn new(dim: usize, heads: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let head = EventHead::new(&mut store, &mut Rng::new(seed).fork(3), "event", dim, heads);
        Self { store, head }
    }

    pub fn logits(&self, examples: &[EventExample]) -> Result<Tensor> {
        let parts = examples
            .chunks(EVAL_CHUNK)
            .map(|c| {
                let refs: Vec<&Tensor> = c.iter().map(|e| &e.features).collect();
                self.head.classify_batch(&self.store, &refs)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        concat_rows(&refs)
    }

    pub fn checkpoint(&self, meta: Value) -> Checkpoint {
        Checkpoint {
            config: json!({ "kind": "event_head", "dim": self.head.dim, "heads": self.head.attn.heads, "meta": meta }),
            params: self.store.snapshot(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        check_kind(ckpt, "event_head")?;
        let mut m = Self::new(config_field(ckpt, "dim")?, config_field(ckpt, "heads")?, 0);
        m.store.load(&ckpt.params)?;
        Ok(m)
    }
}

fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(Error::DataEmpty)?;
    let cols = first.shape()[1];
    let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(vec![data.len() / cols, cols], data)
}

pub fn train_event_head(train: &[EventExample], val: &[EventExample], cfg: &HeadTrainConfig) -> Result<Trained<EventModel>> {
    let dim = train.first().ok_or(Error::DataEmpty)?.features.shape()[1];
    let mut model = EventModel::new(dim, cfg.heads, cfg.seed);
    let head = model.head.clone();
    let (history, best_epoch) = fit(
        &mut model.store,
        cfg,
        train.len(),
        SelectionTask::Event,
        |g, store, idx| {
            let refs: Vec<&Tensor> = idx.iter().map(|&i| &train[i].features).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label.id()).collect();
            let x = g.constant(batch_of(&refs));
            let logits = head.forward(g, store, x);
            Ok(g.cross_entropy(logits, &labels))
        },
        |store| {
            let m = EventModel {
                store: store.clone(),
                head: head.clone(),
            };
            Ok(ValidationRecord {
                top1: Some(evaluate_event(&m, val)?["top1"]),
                ..Default::default()
            })
        },
    )?;
    Ok(Trained {
        model,
        history,
        best_epoch,
    })
}

/// Top-1, top-3 and top-5 accuracy.
pub fn evaluate_event(model: &EventModel, examples: &[EventExample]) -> Result<BTreeMap<String, f64>> {
    let logits = model.logits(examples)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label.id()).collect();
    let mut out = BTreeMap::new();
    for k in [1, 3, 5] {
        out.insert(format!("top{k}"), topk_accuracy(&logits, &labels, k)?);
    }
    Ok(out)
}

/// Multi-view foul classifier over frozen features.
#[derive(Clone, Debug)]
pub struct FoulModel {
    pub store: ParamStore,
    pub head: FoulHead,
}

impl FoulModel {
    pub fn new(dim: usize, pooling: ViewPooling, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let head = FoulHead::new(&mut store, &mut Rng::new(seed).fork(4), "foul", dim, pooling);
        Self { store, head }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, incidents: &[&FoulExample]) -> Result<(Var, Var)> {
        let pooled = incidents
            .iter()
            .map(|f| {
                self.head.check_views(&f.views)?;
                let refs: Vec<&Tensor> = f.views.iter().collect();
                let v = g.constant(batch_of(&refs));
                Ok(self.head.pool_views(g, v))
            })
            .collect::<Result<Vec<Var>>>()?;
        let x = g.concat(&pooled, 0);
        Ok(self.head.forward_pooled(g, store, x))
    }

    /// Foul logits `[N, 8]` and severity logits `[N, 4]`.
    pub fn logits(&self, examples: &[FoulExample]) -> Result<(Tensor, Tensor)> {
        let mut fouls = Vec::new();
        let mut sevs = Vec::new();
        for c in examples.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let refs: Vec<&FoulExample> = c.iter().collect();
            let (f, s) = self.forward(&mut g, &self.store, &refs)?;
            fouls.push(g.value(f).clone());
            sevs.push(g.value(s).clone());
        }
        Ok((
            concat_rows(&fouls.iter().collect::<Vec<_>>())?,
            concat_rows(&sevs.iter().collect::<Vec<_>>())?,
        ))
    }

    pub fn checkpoint(&self, meta: Value) -> Checkpoint {
        Checkpoint {
            config: json!({ "kind": "foul_head", "dim": self.head.dim, "pooling": self.head.pooling, "meta": meta }),
            params: self.store.snapshot(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        check_kind(ckpt, "foul_head")?;
        let mut m = Self::new(config_field(ckpt, "dim")?, config_field(ckpt, "pooling")?, 0);
        m.store.load(&ckpt.params)?;
        Ok(m)
    }
}

pub fn train_foul_head(train: &[FoulExample], val: &[FoulExample], cfg: &HeadTrainConfig) -> Result<Trained<FoulModel>> {
    let first = train.first().ok_or(Error::DataEmpty)?;
    let dim = first.views.first().ok_or(Error::EmptyViews)?.shape()[1];
    let mut model = FoulModel::new(dim, cfg.pooling, cfg.seed);
    let shell = FoulModel {
        store: ParamStore::new(),
        head: model.head.clone(),
    };
    let (history, best_epoch) = fit(
        &mut model.store,
        cfg,
        train.len(),
        SelectionTask::Foul,
        |g, store, idx| {
            let batch: Vec<&FoulExample> = idx.iter().map(|&i| &train[i]).collect();
            let (f, s) = shell.forward(g, store, &batch)?;
            let fouls: Vec<usize> = batch.iter().map(|e| e.foul_class).collect();
            let sevs: Vec<usize> = batch.iter().map(|e| e.severity).collect();
            foul_loss_var(g, f, s, &fouls, &sevs)
        },
        |store| {
            let m = FoulModel {
                store: store.clone(),
                head: shell.head.clone(),
            };
            Ok(ValidationRecord {
                top1: Some(evaluate_foul(&m, val)?["foul_top1"]),
                ..Default::default()
            })
        },
    )?;
    Ok(Trained {
        model,
        history,
        best_epoch,
    })
}

/// Foul-type top-1/top-2, severity top-1, and the fraction with both right.
pub fn evaluate_foul(model: &FoulModel, examples: &[FoulExample]) -> Result<BTreeMap<String, f64>> {
    let (f, s) = model.logits(examples)?;
    let fouls: Vec<usize> = examples.iter().map(|e| e.foul_class).collect();
    let sevs: Vec<usize> = examples.iter().map(|e| e.severity).collect();
    let argmax = |t: &Tensor, i: usize| {
        let c = t.shape()[1];
        crate::heads::argmax(&t.data()[i * c..(i + 1) * c])
    };
    let both = (0..examples.len())
        .filter(|&i| argmax(&f, i) == fouls[i] && argmax(&s, i) == sevs[i])
        .count();
    let mut out = BTreeMap::new();
    out.insert("foul_top1".into(), topk_accuracy(&f, &fouls, 1)?);
    out.insert("foul_top2".into(), topk_accuracy(&f, &fouls, 2)?);
    out.insert("severity_top1".into(), topk_accuracy(&s, &sevs, 1)?);
    out.insert("joint_top1".into(), both as f64 / examples.len() as f64);
    Ok(out)
}

/// Commentary generator over frozen features, with its word vocabulary.
#[derive(Clone, Debug)]
pub struct CommentaryModel {
    pub store: ParamStore,
    pub head: CommentaryHead,
    pub vocab: Vocabulary,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
}

impl CommentaryModel {
    pub fn new(cfg: &CommentaryConfig, vocab: Vocabulary, adapter_rank: usize, adapter_alpha: f64, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed).fork(5);
        let mut head = CommentaryHead::new(&mut store, &mut rng, "commentary", cfg);
        if adapter_rank > 0 {
            head.enable_adapters(&mut store, &mut rng, adapter_rank, adapter_alpha);
        }
        Self {
            store,
            head,
            vocab,
            adapter_rank,
            adapter_alpha,
        }
    }

    /// Caption token ids, truncated to the decoder's length limit (the
    /// final `EOS` is kept).
    pub fn encode(&self, caption: &str) -> Vec<usize> {
        let mut ids = self.vocab.encode(caption);
        let max = self.head.cfg.max_len;
        if ids.len() > max {
            ids.truncate(max - 1);
            ids.push(EOS);
        }
        ids
    }

    pub fn generate(&self, features: &Tensor) -> Result<String> {
        let max = self.head.cfg.max_len - 1;
        let ids = self.head.generate(&self.store, features, max, GenerationMode::Greedy)?;
        Ok(self.vocab.decode(&ids))
    }

    pub fn checkpoint(&self, meta: Value) -> Checkpoint {
        Checkpoint {
            config: json!({
                "kind": "commentary_head",
                "commentary": self.head.cfg,
                "adapter_rank": self.adapter_rank,
                "adapter_alpha": self.adapter_alpha,
                "vocabulary": self.vocab.to_text(),
                "meta": meta,
            }),
            params: self.store.snapshot(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        check_kind(ckpt, "commentary_head")?;
        let cfg: CommentaryConfig = config_field(ckpt, "commentary")?;
        let vocab = Vocabulary::parse(&config_field::<String>(ckpt, "vocabulary")?)?;
        let mut m = Self::new(&cfg, vocab, config_field(ckpt, "adapter_rank")?, config_field(ckpt, "adapter_alpha")?, 0);
        m.store.load(&ckpt.params)?;
        Ok(m)
    }
}

/// Trains the commentary head on anonymized captions. The vocabulary is
/// taken from the training captions. Every epoch is scored by CIDEr-D of
/// greedy captions on `val` (which needs at least two items).
pub fn train_commentary_head(
    train: &[CaptionExample],
    val: &[CaptionExample],
    cfg: &HeadTrainConfig,
) -> Result<Trained<CommentaryModel>> {
    let dim = train.first().ok_or(Error::DataEmpty)?.features.shape()[1];
    let vocab = Vocabulary::build(train.iter().map(|e| e.caption.as_str()));
    let mut ccfg = CommentaryConfig::new(dim, vocab.len());
    ccfg.heads = cfg.heads;
    ccfg.max_len = cfg.max_caption_len;
    let mut model = CommentaryModel::new(&ccfg, vocab, cfg.adapter_rank, cfg.adapter_alpha, cfg.seed);
    let shell = CommentaryModel {
        store: ParamStore::new(),
        ..model.clone()
    };
    let targets: Vec<Vec<usize>> = train.iter().map(|e| shell.encode(&e.caption)).collect();
    let val_targets: Vec<Vec<usize>> = val.iter().map(|e| shell.encode(&e.caption)).collect();
    let (history, best_epoch) = fit(
        &mut model.store,
        cfg,
        train.len(),
        SelectionTask::Commentary,
        |g, store, idx| {
            let refs: Vec<&Tensor> = idx.iter().map(|&i| &train[i].features).collect();
            let seqs: Vec<Vec<usize>> = idx.iter().map(|&i| targets[i].clone()).collect();
            let x = g.constant(batch_of(&refs));
            Ok(shell.head.nll(g, store, x, &seqs))
        },
        |store| {
            let m = CommentaryModel {
                store: store.clone(),
                ..shell.clone()
            };
            let report = evaluate_commentary(&m, val)?.0;
            let mut nll = 0.0;
            for (e, t) in val.iter().zip(&val_targets) {
                nll += m.head.commentary_nll(&m.store, &e.features, t)?;
            }
            Ok(ValidationRecord {
                cider: Some(report.cider),
                nll: Some(nll / val.len().max(1) as f64),
                ..Default::default()
            })
        },
    )?;
    Ok(Trained {
        model,
        history,
        best_epoch,
    })
}

/// One generated caption next to its reference.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Prediction {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

/// Greedy captions for `examples` and their corpus scores.
pub fn evaluate_commentary(model: &CommentaryModel, examples: &[CaptionExample]) -> Result<(CaptionReport, Vec<Prediction>)> {
    use rayon::prelude::*;
    let preds = examples
        .par_iter()
        .map(|e| {
            Ok(Prediction {
                id: e.id.clone(),
                candidate: model.generate(&e.features)?,
                references: vec![e.caption.clone()],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<EvalItem> = preds.iter().map(|p| EvalItem::from_text(&p.candidate, &p.references)).collect();
    Ok((caption_report(&items)?, preds))
}

/// Teacher-forced next-token accuracy over `examples`.
pub fn teacher_forced_accuracy(model: &CommentaryModel, examples: &[CaptionExample]) -> Result<f64> {
    let (mut hits, mut total) = (0, 0);
    for e in examples {
        let (h, t) = model.head.teacher_forced_hits(&model.store, &e.features, &model.encode(&e.caption))?;
        hits += h;
        total += t;
    }
    Ok(hits as f64 / total.max(1) as f64)
}
