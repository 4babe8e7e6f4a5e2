//! Pretraining objectives: supervised event classification, multi-positive
//! sigmoid contrastive alignment, and the supervised→contrastive schedule.

mod train;

pub use train::{
    run_pretraining, EpochRecord, PretrainConfig, PretrainData, PretrainModel, PretrainOutcome, PretrainSample,
    StageRecord, ENCODER_PREFIX,
};

use serde::{Deserialize, Serialize};

use crate::encoder::batch_of;
use crate::error::{Error, Result};
use crate::heads::EventHead;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::taxonomy::{EventLabel, RelatedGroups};

/// Initial temperature `t` (stored as `ln t`) and bias `b`.
pub const INIT_TEMPERATURE: f64 = 10.0;
pub const INIT_BIAS: f64 = -10.0;
/// Cosine threshold used when text-similarity positives are enabled.
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PretrainStrategy {
    Supervised,
    Contrastive,
    /// Supervised classification for `stage1` epochs, then contrastive
    /// alignment for `stage2` epochs.
    Hybrid { stage1: usize, stage2: usize },
}

impl PretrainStrategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Supervised => "supervised",
            Self::Contrastive => "contrastive",
            Self::Hybrid { .. } => "hybrid",
        }
    }
}

/// Cross-entropy of the event head's logits on `fv [B, T, D]`.
pub fn supervised_loss(g: &mut Graph, store: &ParamStore, head: &EventHead, fv: Var, labels: &[usize]) -> Var {
    let logits = head.forward(g, store, fv);
    g.cross_entropy(logits, labels)
}

pub fn supervised_pretrain_loss(store: &ParamStore, head: &EventHead, fv: &Tensor, label: EventLabel) -> Result<f64> {
    crate::heads::check_features(fv, head.dim)?;
    if label.id() >= head.classes {
        return Err(Error::LabelOutOfRange {
            label: label.id(),
            classes: head.classes,
        });
    }
    let mut g = Graph::new();
    let x = g.constant(batch_of(&[fv]));
    let loss = supervised_loss(&mut g, store, head, x, &[label.id()]);
    Ok(g.value(loss).item())
}

/// `mask[i][j] = related(labels[i], labels[j])`.
pub fn build_positive_mask(labels: &[EventLabel], related: &RelatedGroups) -> Vec<Vec<bool>> {
    labels
        .iter()
        .map(|&a| labels.iter().map(|&b| related.related(a, b)).collect())
        .collect()
}

/// Label-relatedness mask, additionally marking pairs whose (unit) text
/// embeddings have cosine similarity at least `threshold`.
pub fn build_positive_mask_with_text(
    labels: &[EventLabel],
    related: &RelatedGroups,
    text_emb: &Tensor,
    threshold: f64,
) -> Result<Vec<Vec<bool>>> {
    if text_emb.ndim() != 2 || text_emb.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "text embeddings {:?} for {} labels",
            text_emb.shape(),
            labels.len()
        )));
    }
    let mut mask = build_positive_mask(labels, related);
    for (i, row) in mask.iter_mut().enumerate() {
        for (j, m) in row.iter_mut().enumerate() {
            let cos: f64 = text_emb.row(i).iter().zip(text_emb.row(j)).map(|(a, b)| a * b).sum();
            *m |= cos >= threshold;
        }
    }
    Ok(mask)
}

/// Everything the sigmoid loss reads, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub video_emb: Tensor,
    pub text_emb: Tensor,
    pub positive_mask: Vec<Vec<bool>>,
    pub log_t: f64,
    pub bias: f64,
}

impl ContrastiveBatch {
    pub fn new(video_emb: Tensor, text_emb: Tensor, positive_mask: Vec<Vec<bool>>) -> Self {
        Self {
            video_emb,
            text_emb,
            positive_mask,
            log_t: INIT_TEMPERATURE.ln(),
            bias: INIT_BIAS,
        }
    }

    fn check(&self) -> Result<()> {
        let v = self.video_emb.shape();
        let b = v.first().copied().unwrap_or(0);
        let bad = v.len() != 2
            || self.text_emb.shape() != v
            || self.positive_mask.len() != b
            || self.positive_mask.iter().any(|r| r.len() != b);
        if bad || b == 0 {
            return Err(Error::ShapeMismatch(format!(
                "contrastive batch: video {:?}, text {:?}, mask {}",
                v,
                self.text_emb.shape(),
                self.positive_mask.len()
            )));
        }
        Ok(())
    }
}

/// `(1/B) Σ_ij log(1 + exp(−z_ij (t·⟨v_i, x_j⟩ + b)))`, `t = exp(log_t)`,
/// `z_ij = ±1` from the mask. `log_t` and `bias` are scalars.
pub fn contrastive_loss(g: &mut Graph, video: Var, text: Var, log_t: Var, bias: Var, mask: &[Vec<bool>]) -> Var {
    let b = mask.len();
    let xt = g.transpose(text);
    let sims = g.matmul(video, xt);
    let t = g.exp(log_t);
    let logits = g.mul(sims, t);
    let logits = g.add(logits, bias);
    let signs: Vec<f64> = mask
        .iter()
        .flatten()
        .map(|&m| if m { 1.0 } else { -1.0 })
        .collect();
    let total = g.sigmoid_bce(logits, &signs);
    g.scale(total, 1.0 / b as f64)
}

pub fn sigmoid_contrastive_loss(batch: &ContrastiveBatch) -> Result<f64> {
    batch.check()?;
    let mut g = Graph::new();
    let v = g.constant(batch.video_emb.clone());
    let x = g.constant(batch.text_emb.clone());
    let lt = g.constant(Tensor::scalar(batch.log_t));
    let b = g.constant(Tensor::scalar(batch.bias));
    let loss = contrastive_loss(&mut g, v, x, lt, b, &batch.positive_mask);
    Ok(g.value(loss).item())
}

/// Video embedding for contrastive alignment: frame-average of `F_V`,
/// L2-normalized. `fv [B, T, D]` → `[B, D]`.
pub fn video_embedding(g: &mut Graph, fv: Var) -> Var {
    let pooled = g.mean_pool(fv, 1);
    g.l2_normalize(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn uniform_and_hand_cross_entropy() {
        let mut store = ParamStore::new();
        let head = EventHead::new(&mut store, &mut Rng::new(0), "h", 8, 2);
        store.set_value(head.classifier.weight, Tensor::zeros(&[8, 24]));
        let fv = Tensor::from_fn(&[3, 8], |i| (i as f64).sin());
        let l = supervised_pretrain_loss(&store, &head, &fv, EventLabel::GOAL).unwrap();
        assert!((l - 24f64.ln()).abs() < 1e-12);

        let mut g = Graph::new();
        let logits = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let ce = g.cross_entropy(logits, &[0]);
        assert!((g.value(ce).item() - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((g.value(ce).item() - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn mask_examples() {
        let r = RelatedGroups::default();
        let m = build_positive_mask(&[EventLabel::GOAL, EventLabel::CORNER, EventLabel::VAR], &r);
        assert_eq!(m, vec![vec![true, false, false], vec![false, true, false], vec![false, false, true]]);
        assert_eq!(build_positive_mask(&[EventLabel::GOAL; 2], &r), vec![vec![true; 2]; 2]);
        let m = build_positive_mask(&[EventLabel::START_OF_GAME, EventLabel::OFF_SIDE], &r);
        assert_eq!(m, vec![vec![true; 2]; 2]);
    }

    #[test]
    fn text_threshold_adds_positives() {
        let r = RelatedGroups::default();
        let labels = [EventLabel::GOAL, EventLabel::VAR];
        let same = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let m = build_positive_mask_with_text(&labels, &r, &same, DEFAULT_TEXT_THRESHOLD).unwrap();
        assert_eq!(m, vec![vec![true; 2]; 2]);
        let apart = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = build_positive_mask_with_text(&labels, &r, &apart, DEFAULT_TEXT_THRESHOLD).unwrap();
        assert_eq!(m, build_positive_mask(&labels, &r));
    }

    #[test]
    fn sigmoid_loss_examples() {
        let e = |v: Vec<f64>| Tensor::new(vec![1, v.len()], v).unwrap();
        // t·<v,x> + b = 0.
        let mut b = ContrastiveBatch::new(e(vec![1.0, 0.0]), e(vec![1.0, 0.0]), vec![vec![true]]);
        b.log_t = 0.0;
        b.bias = -1.0;
        assert!((sigmoid_contrastive_loss(&b).unwrap() - 2f64.ln()).abs() < 1e-15);
        b.bias = 50.0;
        assert!(sigmoid_contrastive_loss(&b).unwrap() < 1e-20);
        b.positive_mask = vec![vec![false]];
        assert!(sigmoid_contrastive_loss(&b).unwrap() > 50.0);

        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut b = ContrastiveBatch::new(eye.clone(), eye, vec![vec![true, false], vec![false, true]]);
        b.log_t = 0.0;
        b.bias = 0.0;
        let want = 0.5 * (2.0 * (1.0 + (-1f64).exp()).ln() + 2.0 * 2f64.ln());
        assert!((sigmoid_contrastive_loss(&b).unwrap() - want).abs() < 1e-12);
        assert!((want - 1.0065).abs() < 1e-4);
    }

    #[test]
    fn defaults_and_shape_errors() {
        let e = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let b = ContrastiveBatch::new(e.clone(), e.clone(), vec![vec![true]]);
        assert!((b.log_t.exp() - 10.0).abs() < 1e-12);
        assert_eq!(b.bias, -10.0);
        let bad = ContrastiveBatch::new(e.clone(), e, vec![vec![true, false]]);
        assert!(matches!(sigmoid_contrastive_loss(&bad), Err(Error::ShapeMismatch(_))));
    }
}
