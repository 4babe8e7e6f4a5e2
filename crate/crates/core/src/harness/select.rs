use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::EpochRecord;

/// Which validation number picks the checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionTask {
    Supervised,
    Contrastive,
    Event,
    Foul,
    Commentary,
}

impl SelectionTask {
    pub fn metric_name(self) -> &'static str {
        match self {
            Self::Supervised | Self::Event | Self::Foul => "top1",
            Self::Contrastive => "retrieval_top1",
            Self::Commentary => "cider",
        }
    }
}

/// Validation numbers recorded after one epoch (1-based).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
}

impl ValidationRecord {
    pub fn metric(&self, task: SelectionTask) -> Option<f64> {
        match task {
            SelectionTask::Supervised | SelectionTask::Event | SelectionTask::Foul => self.top1,
            SelectionTask::Contrastive => self.retrieval_top1,
            SelectionTask::Commentary => self.cider,
        }
    }

    /// Pretraining records carry one number whose meaning follows the stage.
    pub fn from_pretrain(r: &EpochRecord) -> Self {
        let mut v = Self {
            epoch: r.epoch,
            train_loss: Some(r.train_loss),
            ..Self::default()
        };
        if r.stage == "supervised" {
            v.top1 = Some(r.val_metric);
        } else {
            v.retrieval_top1 = Some(r.val_metric);
        }
        v
    }
}

/// Epoch whose record maximizes the task's validation metric: top-1 for
/// supervised, event and foul; retrieval top-1 for contrastive; CIDEr-D for
/// commentary. Ties keep the earlier epoch; records without the metric are
/// skipped.
pub fn select_best_checkpoint(history: &[ValidationRecord], task: SelectionTask) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for r in history {
        if let Some(m) = r.metric(task).filter(|m| !m.is_nan()) {
            if best.is_none_or(|(b, _)| m > b) {
                best = Some((m, r.epoch));
            }
        }
    }
    best.map(|(_, e)| e).ok_or(Error::EmptyHistory)
}
