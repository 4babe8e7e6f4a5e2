//! Classification, retrieval and captioning metrics.

mod cider;
mod text;

pub use cider::{cider_d, CiderScores, CIDER_SIGMA};
pub use text::{bleu, meteor_lite, rouge_l, stem, ROUGE_BETA};

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

static CHUNK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[[A-Za-z_]+\]|[^\s\[\]]+").unwrap());

/// Lowercases and strips punctuation. Placeholders such as `[PLAYER]` stay
/// whole (upper-cased); apostrophes are dropped and other punctuation
/// splits words.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for m in CHUNK.find_iter(text) {
        let s = m.as_str();
        if s.starts_with('[') {
            out.push(s.to_uppercase());
            continue;
        }
        let mut word = String::new();
        for ch in s.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else if ch == '\'' || ch == '’' {
                continue;
            } else if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Fraction of rows of `logits [N, C]` whose label ranks among the `k`
/// largest entries; equal logits rank the lower class index first.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let c = logits.shape()[1];
    if k == 0 || k > c {
        return Err(Error::ShapeMismatch(format!("k={k} outside 1..={c}")));
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| y < c && rank_of(logits.row(i), y) < k)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn rank_of(scores: &[f64], idx: usize) -> usize {
    let s = scores[idx];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < idx))
        .count()
}

/// Video→text retrieval: video `i` is a hit when one of its `k` most
/// cosine-similar texts carries `labels[i]`.
pub fn retrieval_topk<L: PartialEq>(video: &Tensor, text: &Tensor, labels: &[L], k: usize) -> Result<f64> {
    let n = labels.len();
    if video.ndim() != 2 || video.shape() != text.shape() || video.shape()[0] != n {
        return Err(Error::ShapeMismatch(format!(
            "video {:?}, text {:?}, {} labels",
            video.shape(),
            text.shape(),
            n
        )));
    }
    if k == 0 || k > n {
        return Err(Error::ShapeMismatch(format!("k={k} outside 1..={n}")));
    }
    let mut hits = 0;
    for i in 0..n {
        let v = video.row(i);
        let sims: Vec<f64> = (0..n)
            .map(|j| v.iter().zip(text.row(j)).map(|(a, b)| a * b).sum())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        if order[..k].iter().any(|&j| labels[j] == labels[i]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// One scored caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalItem {
    pub fn from_text(candidate: &str, references: &[String]) -> Self {
        Self {
            candidate: tokenize(candidate),
            references: references.iter().map(|r| tokenize(r)).collect(),
        }
    }
}

/// Corpus-level caption scores (per-item means; CIDEr-D on `[0, 10]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub items: usize,
    pub bleu1: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

pub fn caption_report(items: &[EvalItem]) -> Result<CaptionReport> {
    let cider = cider_d(items)?;
    for (i, it) in items.iter().enumerate() {
        if it.references.is_empty() {
            return Err(Error::Schema(format!("item {i} has no references")));
        }
    }
    let n = items.len() as f64;
    let mean = |f: &dyn Fn(&EvalItem) -> f64| items.iter().map(f).sum::<f64>() / n;
    Ok(CaptionReport {
        items: items.len(),
        bleu1: mean(&|it| bleu(&it.candidate, &it.references, 1)),
        bleu4: mean(&|it| bleu(&it.candidate, &it.references, 4)),
        meteor: mean(&|it| meteor_lite(&it.candidate, &it.references)),
        rouge_l: mean(&|it| rouge_l(&it.candidate, &it.references)),
        cider: cider.mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("  A mistake by [PLAYER]([TEAM]). Don't!"),
            ["a", "mistake", "by", "[PLAYER]", "[TEAM]", "dont"]
        );
        assert_eq!(tokenize("goal-line CLEARANCE"), ["goal", "line", "clearance"]);
        assert_eq!(tokenize("[player]"), ["[PLAYER]"]);
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn topk_examples() {
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(topk_accuracy(&eye, &[0, 1, 2], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&eye, &[2, 0, 1], 3).unwrap(), 1.0);
        let l = Tensor::new(vec![2, 2], vec![0.1, 0.9, 0.8, 0.2]).unwrap();
        assert_eq!(topk_accuracy(&l, &[0, 0], 1).unwrap(), 0.5);
        let tie = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(topk_accuracy(&tie, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&tie, &[1], 1).unwrap(), 0.0);
        assert!(topk_accuracy(&l, &[0, 0], 3).is_err());
        assert!(topk_accuracy(&l, &[0], 1).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let e = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(retrieval_topk(&e, &e, &[0, 1, 2], 1).unwrap(), 1.0);
        let v = Tensor::new(vec![3, 2], vec![1., 0., 0., 1., 0.6, 0.8]).unwrap();
        let t = Tensor::new(vec![3, 2], vec![0., 1., 1., 0., 0.8, 0.6]).unwrap();
        assert_eq!(retrieval_topk(&v, &t, &[5, 7, 9], 3).unwrap(), 1.0);
        // Video 0's nearest text is text 1, video 1's is text 0: wrong by
        // index, right by label.
        assert_eq!(retrieval_topk(&v, &t, &[4, 4, 9], 1).unwrap(), 1.0);
        assert!((retrieval_topk(&v, &t, &[4, 5, 9], 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
}
