//! Data curation: match-file schema, entity anonymization, event
//! summarization (rule cascade or LLM) and train/valid/test splits.

mod anonymize;
mod llm;
mod rules;
mod schema;

pub use anonymize::{anonymize, build_entity_dictionary, EntityDictionary, Placeholder};
pub use llm::{
    build_prompt, summarize_event_llm, summarize_event_llm_with, HttpLlmClient, LlmClient, DEFAULT_RETRIES,
    ENDPOINT_VAR, PROMPT_SLOT, PROMPT_TEMPLATE, TOKEN_VAR,
};
pub use rules::{explain_rules, summarize_event_rules, RuleRow, FALLBACK_LABEL, RULES};
pub use schema::{parse_match, EventAnnotation, MatchRecord, PlayerEntry, Referee};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// How unlabeled events get their type.
#[derive(Clone, Copy, Default)]
pub enum Summarizer<'a> {
    #[default]
    Rules,
    Llm { client: &'a dyn LlmClient, retries: usize },
}

#[derive(Clone, Copy, Default)]
pub struct CurateOptions<'a> {
    pub summarizer: Summarizer<'a>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFailure {
    pub file: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub curated: usize,
    pub failed: usize,
    pub events: usize,
    /// Events whose type was filled in by the summarizer.
    pub summarized: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub failures: Vec<FileFailure>,
}

impl CurationReport {
    /// Combines two reports; associative, with failures kept in file order.
    pub fn merge(mut self, other: Self) -> Self {
        self.curated += other.curated;
        self.failed += other.failed;
        self.events += other.events;
        self.summarized += other.summarized;
        for (k, v) in other.label_counts {
            *self.label_counts.entry(k).or_insert(0) += v;
        }
        self.failures.extend(other.failures);
        self.failures.sort_by(|a, b| a.file.cmp(&b.file));
        self
    }
}

/// Fills missing event types and anonymized text for one match.
/// Returns how many types were filled.
pub fn curate_match(record: &mut MatchRecord, options: &CurateOptions) -> Result<usize> {
    let dict = build_entity_dictionary(record);
    let mut filled = 0;
    for e in &mut record.events {
        if e.comments_type.is_none() {
            e.comments_type = Some(match options.summarizer {
                Summarizer::Rules => summarize_event_rules(&e.comments_text),
                Summarizer::Llm { client, retries } => summarize_event_llm_with(&e.comments_text, client, retries)?,
            });
            filled += 1;
        }
        e.comments_text_anonymized = Some(anonymize(&e.comments_text, &dict));
    }
    Ok(filled)
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn curate_file(path: &Path, out_dir: &Path, options: &CurateOptions) -> Result<CurationReport> {
    let name = path.file_name().expect("listed files have names").to_string_lossy().into_owned();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let outcome = parse_match(&bytes).and_then(|mut m| curate_match(&mut m, options).map(|n| (m, n)));
    let mut report = CurationReport::default();
    match outcome {
        Ok((record, filled)) => {
            let out = out_dir.join(&name);
            std::fs::write(&out, record.to_json()).map_err(|e| Error::io(&out, e))?;
            report.curated = 1;
            report.events = record.events.len();
            report.summarized = filled;
            for e in &record.events {
                let label = e.comments_type.expect("curation fills every type");
                *report.label_counts.entry(label.name().to_string()).or_insert(0) += 1;
            }
        }
        Err(e @ (Error::Schema(_) | Error::Json(_) | Error::UnknownLabel(_))) => {
            report.failed = 1;
            report.failures.push(FileFailure {
                file: name,
                error: e.to_string(),
            });
        }
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Curates every `*.json` match file in `in_dir` into `out_dir` (same file
/// names). Files that fail to parse or validate are listed in the report;
/// I/O and summarizer transport failures abort.
pub fn curate_dataset(in_dir: &Path, out_dir: &Path, options: &CurateOptions) -> Result<CurationReport> {
    let files = json_files(in_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    files
        .par_iter()
        .map(|p| curate_file(p, out_dir, options))
        .try_reduce(CurationReport::default, |a, b| Ok(a.merge(b)))
}

/// Partition sizes for [`make_splits`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitSpec {
    /// Valid and test each get `round(n · 250 / 1988)`; train the rest.
    #[default]
    Default,
    Counts { train: usize, valid: usize, test: usize },
    Ratios { train: f64, valid: f64, test: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

impl SplitSpec {
    pub fn counts(self, n: usize) -> Result<(usize, usize, usize)> {
        let (train, valid, test) = match self {
            Self::Default => {
                let held = ((n * 250) as f64 / 1988.0).round() as usize;
                (n.saturating_sub(2 * held), held, held)
            }
            Self::Counts { train, valid, test } => (train, valid, test),
            Self::Ratios { train, valid, test } => {
                let ok = [train, valid, test].iter().all(|r| r.is_finite() && *r >= 0.0);
                if !ok || train + valid + test > 1.0 + 1e-9 {
                    return Err(Error::BadSplitSpec(format!("ratios {train}/{valid}/{test}")));
                }
                let c = |r: f64| (r * n as f64).round() as usize;
                (c(train), c(valid), c(test))
            }
        };
        if train + valid + test > n {
            return Err(Error::BadSplitSpec(format!(
                "{train}+{valid}+{test} exceeds {n} matches"
            )));
        }
        Ok((train, valid, test))
    }
}

/// Seeded, disjoint train/valid/test partition of `items`.
pub fn make_splits<T: Clone>(items: &[T], spec: SplitSpec, seed: u64) -> Result<Splits<T>> {
    let (train, valid, test) = spec.counts(items.len())?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect();
    Ok(Splits {
        train: take(0..train),
        valid: take(train..train + valid),
        test: take(train + valid..train + valid + test),
    })
}
