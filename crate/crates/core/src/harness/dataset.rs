use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frames::read_frames;
use super::synth::FoulIndexEntry;
use crate::curation::{anonymize, build_entity_dictionary, parse_match, MatchRecord, Splits};
use crate::error::{Error, Result};
use crate::heads::{Vocabulary, UNK};
use crate::numerics::Tensor;
use crate::objectives::{PretrainData, PretrainSample};
use crate::taxonomy::EventLabel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "valid" | "val" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            _ => Err(Error::BadSplitSpec(format!("unknown split {s:?}"))),
        }
    }
}

/// A labelled clip: its event type, anonymized commentary and frame file.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// `<match id>/<event index>`.
    pub id: String,
    pub match_id: String,
    pub label: EventLabel,
    pub caption: String,
    pub frames: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoulIncident {
    pub id: String,
    pub match_id: String,
    pub foul_class: usize,
    pub severity: usize,
    pub views: Vec<PathBuf>,
    /// Feature-record id of each view, `<incident>/v<n>`.
    pub view_ids: Vec<String>,
}

/// A corpus directory: match documents, segment frames, foul incidents and
/// the match-level split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub matches: Vec<(String, MatchRecord)>,
    pub splits: Splits<String>,
    pub fouls: Vec<FoulIndexEntry>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let dir = root.join("matches");
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let matches = files
            .iter()
            .map(|p| {
                let id = p.file_stem().expect("json file").to_string_lossy().into_owned();
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok((id, parse_match(&bytes)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let splits = read_json(&root.join("splits.json"))?;
        let fouls_path = root.join("fouls.json");
        let fouls = if fouls_path.exists() { read_json(&fouls_path)? } else { Vec::new() };
        Ok(Self {
            root: root.to_path_buf(),
            matches,
            splits,
            fouls,
        })
    }

    fn split_ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Valid => &self.splits.valid,
            Split::Test => &self.splits.test,
        }
    }

    /// Every labelled event with a frame file, in match then event order.
    pub fn all_segments(&self) -> Vec<Segment> {
        self.matches.iter().flat_map(|(id, m)| self.match_segments(id, m)).collect()
    }

    fn match_segments(&self, id: &str, m: &MatchRecord) -> Vec<Segment> {
        let dict = build_entity_dictionary(m);
        m.events
            .iter()
            .enumerate()
            .filter_map(|(k, e)| {
                let label = e.comments_type?;
                let rel = e.extras.get("segment")?.as_str()?;
                let caption = e
                    .comments_text_anonymized
                    .clone()
                    .unwrap_or_else(|| anonymize(&e.comments_text, &dict));
                Some(Segment {
                    id: format!("{id}/{k}"),
                    match_id: id.to_string(),
                    label,
                    caption,
                    frames: self.root.join(rel),
                })
            })
            .collect()
    }

    pub fn segments(&self, split: Split) -> Vec<Segment> {
        let ids = self.split_ids(split);
        self.matches
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .flat_map(|(id, m)| self.match_segments(id, m))
            .collect()
    }

    fn incident(&self, f: &FoulIndexEntry) -> FoulIncident {
        FoulIncident {
            id: f.id.clone(),
            match_id: f.match_id.clone(),
            foul_class: f.foul_class,
            severity: f.severity,
            views: f.views.iter().map(|v| self.root.join(v)).collect(),
            view_ids: (0..f.views.len()).map(|v| format!("{}/v{v}", f.id)).collect(),
        }
    }

    pub fn all_fouls(&self) -> Vec<FoulIncident> {
        self.fouls.iter().map(|f| self.incident(f)).collect()
    }

    pub fn fouls(&self, split: Split) -> Vec<FoulIncident> {
        let ids = self.split_ids(split);
        self.fouls
            .iter()
            .filter(|f| ids.contains(&f.match_id))
            .map(|f| self.incident(f))
            .collect()
    }

    /// Word vocabulary of the training captions.
    pub fn caption_vocabulary(&self) -> Vocabulary {
        let segs = self.segments(Split::Train);
        Vocabulary::build(segs.iter().map(|s| s.caption.as_str()))
    }

    /// Frames, label and caption ids for pretraining; caption ids at or
    /// above `text_vocab` become `UNK`.
    pub fn pretrain_data(&self, vocab: &Vocabulary, text_vocab: usize, max_len: usize) -> Result<PretrainData> {
        let load = |split| -> Result<Vec<PretrainSample>> {
            self.segments(split)
                .iter()
                .map(|s| {
                    let mut text: Vec<usize> = vocab
                        .encode(&s.caption)
                        .into_iter()
                        .map(|t| if t < text_vocab { t } else { UNK })
                        .collect();
                    text.truncate(max_len);
                    Ok(PretrainSample {
                        frames: read_frames(&s.frames)?,
                        label: s.label,
                        text,
                    })
                })
                .collect()
        };
        Ok(PretrainData {
            train: load(Split::Train)?,
            val: load(Split::Valid)?,
        })
    }
}

pub fn load_frames(segment: &Segment) -> Result<Tensor> {
    read_frames(&segment.frames)
}
