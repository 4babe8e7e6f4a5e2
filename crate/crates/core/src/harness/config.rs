use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::ViewPooling;
use crate::objectives::PretrainStrategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pretrain,
    Event,
    Commentary,
    Foul,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Event => "event",
            Self::Commentary => "commentary",
            Self::Foul => "foul",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Self::Pretrain),
            "event" => Ok(Self::Event),
            "commentary" => Ok(Self::Commentary),
            "foul" => Ok(Self::Foul),
            _ => Err(Error::Schema(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderProfile {
    #[default]
    Desk,
    Full,
}

impl EncoderProfile {
    pub fn encoder(self) -> EncoderConfig {
        match self {
            Self::Desk => EncoderConfig::desk(),
            Self::Full => EncoderConfig::full(),
        }
    }
}

/// Default epochs of each stage of a hybrid run.
pub const HYBRID_STAGES: (usize, usize) = (8, 7);

/// Settings of one experiment. Defaults depend on the task: pretraining
/// runs 15 epochs at batch 40; downstream heads run 30 epochs at batch 40
/// (event), 32 (commentary) or 8 (foul). Learning rates are 1e-4 for
/// freshly initialized parameters and 5e-5 for pretrained-initialized ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub strategy: PretrainStrategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_new: f64,
    pub lr_pretrained: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub profile: EncoderProfile,
    pub pooling: ViewPooling,
    /// LoRA rank for the commentary decoder; 0 trains the whole decoder.
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    pub data: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        let (epochs, batch_size) = match task {
            Task::Pretrain => (15, 40),
            Task::Event => (30, 40),
            Task::Commentary => (30, 32),
            Task::Foul => (30, 8),
        };
        Self {
            task,
            strategy: PretrainStrategy::Supervised,
            epochs,
            batch_size,
            lr_new: 1e-4,
            lr_pretrained: 5e-5,
            weight_decay: 0.01,
            seed: 0,
            profile: EncoderProfile::Desk,
            pooling: ViewPooling::Mean,
            adapter_rank: 0,
            adapter_alpha: 32.0,
            data: None,
            features: None,
            checkpoint: None,
            out: None,
        }
    }

    /// Reads a flat `key = value` file (TOML syntax) over the defaults of
    /// its `task` key (pretrain when absent). Unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let file = ConfigFile::parse(text)?;
        let task = match &file.task {
            Some(t) => t.parse()?,
            None => Task::Pretrain,
        };
        let mut cfg = Self::for_task(task);
        cfg.apply(&file)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    /// Overrides every key present in `file`.
    pub fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        if let Some(t) = &file.task {
            let task: Task = t.parse()?;
            if task != self.task {
                let keep = self.clone();
                *self = Self::for_task(task);
                self.seed = keep.seed;
                self.data = keep.data;
                self.features = keep.features;
                self.checkpoint = keep.checkpoint;
                self.out = keep.out;
            }
        }
        if let Some(s) = &file.strategy {
            let (a, b) = match self.strategy {
                PretrainStrategy::Hybrid { stage1, stage2 } => (stage1, stage2),
                _ => HYBRID_STAGES,
            };
            self.strategy = match s.as_str() {
                "supervised" => PretrainStrategy::Supervised,
                "contrastive" => PretrainStrategy::Contrastive,
                "hybrid" => PretrainStrategy::Hybrid { stage1: a, stage2: b },
                other => return Err(Error::Schema(format!("unknown strategy {other:?}"))),
            };
        }
        if let PretrainStrategy::Hybrid { stage1, stage2 } = &mut self.strategy {
            *stage1 = file.hybrid_stage1.unwrap_or(*stage1);
            *stage2 = file.hybrid_stage2.unwrap_or(*stage2);
        }
        if let Some(p) = &file.profile {
            self.profile = match p.as_str() {
                "desk" => EncoderProfile::Desk,
                "full" => EncoderProfile::Full,
                other => return Err(Error::Schema(format!("unknown profile {other:?}"))),
            };
        }
        if let Some(p) = &file.pooling {
            self.pooling = match p.as_str() {
                "mean" => ViewPooling::Mean,
                "max" => ViewPooling::Max,
                other => return Err(Error::Schema(format!("unknown pooling {other:?}"))),
            };
        }
        macro_rules! take {
            ($($f:ident),*) => {$( if let Some(v) = &file.$f { self.$f = v.clone(); } )*};
        }
        take!(epochs, batch_size, lr_new, lr_pretrained, weight_decay, seed, adapter_rank, adapter_alpha);
        macro_rules! take_path {
            ($($f:ident),*) => {$( if let Some(v) = &file.$f { self.$f = Some(v.clone()); } )*};
        }
        take_path!(data, features, checkpoint, out);
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Schema("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_new > 0.0 && self.lr_pretrained > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Schema("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// The optional keys of a configuration file; also the shape of
/// command-line overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: Option<String>,
    pub strategy: Option<String>,
    pub hybrid_stage1: Option<usize>,
    pub hybrid_stage2: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_new: Option<f64>,
    pub lr_pretrained: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub profile: Option<String>,
    pub pooling: Option<String>,
    pub adapter_rank: Option<usize>,
    pub adapter_alpha: Option<f64>,
    pub data: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        let p = ExperimentConfig::for_task(Task::Pretrain);
        assert_eq!((p.epochs, p.batch_size, p.lr_new, p.lr_pretrained), (15, 40, 1e-4, 5e-5));
        let sizes: Vec<(usize, usize)> = [Task::Event, Task::Commentary, Task::Foul]
            .iter()
            .map(|&t| {
                let c = ExperimentConfig::for_task(t);
                (c.epochs, c.batch_size)
            })
            .collect();
        assert_eq!(sizes, vec![(30, 40), (30, 32), (30, 8)]);
    }

    #[test]
    fn parses_key_values() {
        let c = ExperimentConfig::from_kv("task = \"foul\"\npooling = \"max\"\nseed = 7\nepochs = 3\n").unwrap();
        assert_eq!((c.task, c.pooling, c.seed, c.epochs, c.batch_size), (Task::Foul, ViewPooling::Max, 7, 3, 8));
        let c = ExperimentConfig::from_kv("strategy = \"hybrid\"\nhybrid_stage2 = 4").unwrap();
        assert_eq!(c.strategy, PretrainStrategy::Hybrid { stage1: 8, stage2: 4 });
        assert!(ExperimentConfig::from_kv("colour = 3").is_err());
        assert!(ExperimentConfig::from_kv("strategy = \"magic\"").is_err());
        assert!(ExperimentConfig::from_kv("batch_size = 0").is_err());
    }
}
