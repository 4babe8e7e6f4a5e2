use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{contrastive_loss, supervised_loss, video_embedding, PretrainStrategy, INIT_BIAS, INIT_TEMPERATURE};
use crate::encoder::{batch_of, EncoderConfig, TextEncoder, VideoEncoder};
use crate::error::{Error, Result};
use crate::heads::EventHead;
use crate::metrics::{retrieval_topk, topk_accuracy};
use crate::numerics::{AdamW, Checkpoint, Graph, ParamGroup, ParamId, ParamStore, Rng, Tensor};
use crate::taxonomy::{EventLabel, RelatedGroups};

/// One (segment, event label, commentary) triplet. `frames` is
/// `[T, 3, H, W]`; `text` holds text-encoder token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSample {
    pub frames: Tensor,
    pub label: EventLabel,
    pub text: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainData {
    pub train: Vec<PretrainSample>,
    pub val: Vec<PretrainSample>,
}

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    /// Epochs for the single-stage strategies; hybrid carries its own.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_new: f64,
    pub lr_pretrained: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub related: RelatedGroups,
    /// Cosine threshold for extra text-similarity positives (off when `None`).
    pub text_threshold: Option<f64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            epochs: 15,
            batch_size: 40,
            lr_new: 1e-4,
            lr_pretrained: 5e-5,
            weight_decay: 0.01,
            seed: 0,
            related: RelatedGroups::default(),
            text_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counted across stages.
    pub epoch: usize,
    pub stage: String,
    pub train_loss: f64,
    /// Validation top-1 (supervised) or retrieval top-1 (contrastive).
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub strategy: String,
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub best_epoch: usize,
}

/// Video encoder plus the pieces only pretraining needs: the supervised
/// event head, the text encoder, and the learned temperature and bias.
#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub store: ParamStore,
    pub encoder: VideoEncoder,
    pub head: EventHead,
    pub text: TextEncoder,
    pub log_t: ParamId,
    pub bias: ParamId,
}

pub const ENCODER_PREFIX: &str = "encoder";
const HEAD_PREFIX: &str = "pretrain_head";
const TEXT_PREFIX: &str = "text_encoder";
const CONTRASTIVE_PREFIX: &str = "contrastive";

impl PretrainModel {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let encoder = VideoEncoder::new(&mut store, &mut rng, ENCODER_PREFIX, cfg)?;
        let head = EventHead::new(&mut store, &mut rng, HEAD_PREFIX, cfg.dim, cfg.heads);
        let text = TextEncoder::new(&mut store, &mut rng, TEXT_PREFIX, cfg);
        let log_t = store.add(
            format!("{CONTRASTIVE_PREFIX}.log_t"),
            Tensor::scalar(INIT_TEMPERATURE.ln()),
            ParamGroup::NewInit,
        );
        let bias = store.add(
            format!("{CONTRASTIVE_PREFIX}.bias"),
            Tensor::scalar(INIT_BIAS),
            ParamGroup::NewInit,
        );
        Ok(Self {
            store,
            encoder,
            head,
            text,
            log_t,
            bias,
        })
    }

    /// Rebuilds the model described by a pretraining checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: EncoderConfig = serde_json::from_value(ckpt.config["encoder"].clone())
            .map_err(|e| Error::ConfigMismatch(format!("checkpoint encoder config: {e}")))?;
        let mut model = Self::new(&cfg, 0)?;
        model.store.load(&ckpt.params)?;
        Ok(model)
    }

    /// `F_V` for each segment, computed in parallel chunks.
    pub fn encode_videos(&self, frames: &[&Tensor]) -> Result<Vec<Tensor>> {
        let chunks: Vec<Result<Vec<Tensor>>> = frames
            .par_chunks(16)
            .map(|c| self.encoder.encode_batch(&self.store, c))
            .collect();
        Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.concat())
    }

    /// Unit video embeddings `[N, D]` (frame-averaged `F_V`).
    pub fn video_embeddings(&self, fvs: &[Tensor]) -> Tensor {
        let refs: Vec<&Tensor> = fvs.iter().collect();
        let mut g = Graph::new();
        let x = g.constant(batch_of(&refs));
        let v = video_embedding(&mut g, x);
        g.value(v).clone()
    }

    pub fn text_embeddings(&self, texts: &[Vec<usize>]) -> Result<Tensor> {
        let rows: Vec<Result<Tensor>> = texts.par_iter().map(|t| self.text.encode_text(&self.store, t)).collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = rows.iter().collect();
        Ok(batch_of(&refs))
    }

    pub fn eval_top1(&self, samples: &[PretrainSample]) -> Result<f64> {
        let frames: Vec<&Tensor> = samples.iter().map(|s| &s.frames).collect();
        let fvs = self.encode_videos(&frames)?;
        let refs: Vec<&Tensor> = fvs.iter().collect();
        let logits = self.head.classify_batch(&self.store, &refs)?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label.id()).collect();
        topk_accuracy(&logits, &labels, 1)
    }

    pub fn eval_retrieval(&self, samples: &[PretrainSample], k: usize) -> Result<f64> {
        let frames: Vec<&Tensor> = samples.iter().map(|s| &s.frames).collect();
        let fvs = self.encode_videos(&frames)?;
        let video = self.video_embeddings(&fvs);
        let texts: Vec<Vec<usize>> = samples.iter().map(|s| s.text.clone()).collect();
        let text = self.text_embeddings(&texts)?;
        let labels: Vec<EventLabel> = samples.iter().map(|s| s.label).collect();
        retrieval_topk(&video, &text, &labels, k)
    }

    fn freeze_for(&mut self, stage: PretrainStrategy) {
        for p in [HEAD_PREFIX, TEXT_PREFIX, CONTRASTIVE_PREFIX] {
            self.store.set_frozen(p, false);
        }
        match stage {
            PretrainStrategy::Supervised => {
                self.store.set_frozen(TEXT_PREFIX, true);
                self.store.set_frozen(CONTRASTIVE_PREFIX, true);
            }
            _ => self.store.set_frozen(HEAD_PREFIX, true),
        }
    }

    fn step(&mut self, stage: PretrainStrategy, batch: &[&PretrainSample], cfg: &PretrainConfig) -> Result<f64> {
        let frames: Vec<&Tensor> = batch.iter().map(|s| &s.frames).collect();
        let mut g = Graph::new();
        let x = g.constant(batch_of(&frames));
        let fv = self.encoder.forward(&mut g, &self.store, x);
        let loss = match stage {
            PretrainStrategy::Supervised => {
                let labels: Vec<usize> = batch.iter().map(|s| s.label.id()).collect();
                supervised_loss(&mut g, &self.store, &self.head, fv, &labels)
            }
            _ => {
                let v = video_embedding(&mut g, fv);
                let texts: Vec<Vec<usize>> = batch.iter().map(|s| s.text.clone()).collect();
                let t = self.text.forward(&mut g, &self.store, &texts);
                let labels: Vec<EventLabel> = batch.iter().map(|s| s.label).collect();
                let mask = match cfg.text_threshold {
                    Some(th) => super::build_positive_mask_with_text(&labels, &cfg.related, g.value(t), th)?,
                    None => super::build_positive_mask(&labels, &cfg.related),
                };
                let lt = g.param(&self.store, self.log_t);
                let b = g.param(&self.store, self.bias);
                contrastive_loss(&mut g, v, t, lt, b, &mask)
            }
        };
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = g.backward(loss);
        self.store.zero_grad();
        self.store.accumulate(&g, &grads);
        Ok(value)
    }
}

/// Outcome of [`run_pretraining`]: the model holding the selected
/// parameters, its checkpoint, and the per-epoch record.
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: PretrainModel,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stages: Vec<StageRecord>,
    pub best_epoch: usize,
}

fn check_data(data: &PretrainData, cfg: &EncoderConfig) -> Result<()> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::DataEmpty);
    }
    let want = [cfg.frames, 3, cfg.height, cfg.width];
    for s in data.train.iter().chain(&data.val) {
        if s.frames.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "sample frames {:?}, encoder expects {want:?}",
                s.frames.shape()
            )));
        }
        if s.text.is_empty() || s.text.len() > cfg.text_max_len {
            return Err(Error::TooLong {
                len: s.text.len(),
                max: cfg.text_max_len,
            });
        }
        if let Some(&id) = s.text.iter().find(|&&t| t >= cfg.text_vocab) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: cfg.text_vocab,
            });
        }
    }
    Ok(())
}

/// Trains the encoder with the chosen strategy. Each stage keeps the
/// parameters of its best validation epoch (top-1 accuracy for supervised,
/// retrieval top-1 for contrastive; ties keep the earlier epoch); a hybrid
/// run starts its contrastive stage from the best supervised state.
pub fn run_pretraining(strategy: PretrainStrategy, data: &PretrainData, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    check_data(data, &cfg.encoder)?;
    let mut model = PretrainModel::new(&cfg.encoder, cfg.seed)?;
    let stages: Vec<(PretrainStrategy, usize)> = match strategy {
        PretrainStrategy::Hybrid { stage1, stage2 } => vec![
            (PretrainStrategy::Supervised, stage1),
            (PretrainStrategy::Contrastive, stage2),
        ],
        s => vec![(s, cfg.epochs)],
    };
    let shuffle_rng = Rng::new(cfg.seed).fork(1);
    let batch_size = cfg.batch_size.max(1);
    let mut history = Vec::new();
    let mut stage_records = Vec::new();
    let mut epoch = 0;
    for (stage, epochs) in stages {
        if epochs == 0 {
            continue;
        }
        model.freeze_for(stage);
        let mut opt = AdamW::new(cfg.lr_new, cfg.lr_pretrained).with_weight_decay(cfg.weight_decay);
        let first_epoch = epoch + 1;
        let mut best: Option<(f64, usize, Vec<(String, Tensor)>)> = None;
        for _ in 0..epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            shuffle_rng.fork(epoch as u64).shuffle(&mut order);
            let mut losses = Vec::new();
            for (step, chunk) in order.chunks(batch_size).enumerate() {
                let batch: Vec<&PretrainSample> = chunk.iter().map(|&i| &data.train[i]).collect();
                let loss = model.step(stage, &batch, cfg)?;
                if !loss.is_finite() {
                    return Err(Error::DivergedLoss { epoch, step });
                }
                opt.step(&mut model.store);
                losses.push(loss);
            }
            let val_metric = match stage {
                PretrainStrategy::Supervised => model.eval_top1(&data.val)?,
                _ => model.eval_retrieval(&data.val, 1)?,
            };
            history.push(EpochRecord {
                epoch,
                stage: stage.name().to_string(),
                train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                val_metric,
            });
            if best.as_ref().is_none_or(|b| val_metric > b.0) {
                best = Some((val_metric, epoch, model.store.snapshot()));
            }
        }
        let (_, best_epoch, params) = best.expect("at least one epoch ran");
        model.store.load(&params)?;
        stage_records.push(StageRecord {
            strategy: stage.name().to_string(),
            first_epoch,
            last_epoch: epoch,
            best_epoch,
        });
    }
    for p in [HEAD_PREFIX, TEXT_PREFIX, CONTRASTIVE_PREFIX] {
        model.store.set_frozen(p, false);
    }
    let best_epoch = stage_records.last().map(|s| s.best_epoch).ok_or(Error::DataEmpty)?;
    let config = json!({
        "kind": "pretrain",
        "encoder": cfg.encoder,
        "strategy": strategy,
        "seed": cfg.seed,
        "batch_size": batch_size,
        "lr_new": cfg.lr_new,
        "lr_pretrained": cfg.lr_pretrained,
        "related_groups": cfg.related.to_text(),
        "best_epoch": best_epoch,
        "stages": stage_records,
        "history": history,
    });
    let checkpoint = Checkpoint {
        config,
        params: model.store.snapshot(),
    };
    Ok(PretrainOutcome {
        model,
        checkpoint,
        history,
        stages: stage_records,
        best_epoch,
    })
}
