use std::collections::{HashMap, HashSet};

use super::text::ngram_counts;
use super::EvalItem;
use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CiderScores {
    pub per_item: Vec<f64>,
    pub mean: f64,
}

type Vector<'a> = HashMap<&'a [String], f64>;

/// CIDEr-D over a corpus, on the `[0, 10]` scale. Document frequencies are
/// counted over each item's reference set; n-gram vectors are TF-IDF with
/// `idf = ln N − ln max(1, df)`; similarity is the clipped cosine
/// `Σ min(h, r)·r / (|h||r|)` times `exp(−Δlen² / 2σ²)`, averaged over
/// n = 1..4 and over references.
pub fn cider_d(items: &[EvalItem]) -> Result<CiderScores> {
    let n_docs = items.len();
    if n_docs < 2 {
        return Err(Error::CorpusTooSmall(n_docs));
    }
    let mut df: Vec<HashMap<&[String], usize>> = vec![HashMap::new(); MAX_N];
    for it in items {
        for (n, table) in df.iter_mut().enumerate() {
            let mut seen: HashSet<&[String]> = HashSet::new();
            for r in &it.references {
                seen.extend(ngram_counts(r, n + 1).into_keys());
            }
            for g in seen {
                *table.entry(g).or_insert(0) += 1;
            }
        }
    }
    let log_n = (n_docs as f64).ln();
    let vectorize = |tokens, n| tfidf(tokens, n, &df[n], log_n);

    let per_item: Vec<f64> = items
        .iter()
        .map(|it| {
            if it.references.is_empty() {
                return 0.0;
            }
            let cand: Vec<_> = (0..MAX_N).map(|n| vectorize(&it.candidate, n)).collect();
            let mut total = 0.0;
            for r in &it.references {
                let delta = it.candidate.len() as f64 - r.len() as f64;
                let penalty = (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
                for (n, (hv, hn)) in cand.iter().enumerate() {
                    let (rv, rn) = vectorize(r, n);
                    if *hn == 0.0 || rn == 0.0 {
                        continue;
                    }
                    let mut terms: Vec<f64> = hv
                        .iter()
                        .filter_map(|(g, &h)| rv.get(g).map(|&rr| h.min(rr) * rr))
                        .collect();
                    terms.sort_by(f64::total_cmp);
                    let dot: f64 = terms.iter().sum();
                    total += (dot / (hn * rn)).clamp(0.0, 1.0) * penalty;
                }
            }
            10.0 * total / (MAX_N * it.references.len()) as f64
        })
        .collect();
    let mean = per_item.iter().sum::<f64>() / n_docs as f64;
    Ok(CiderScores { per_item, mean })
}

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &HashMap<&[String], usize>, log_n: f64) -> (Vector<'a>, f64) {
    let v: Vector = ngram_counts(tokens, n + 1)
        .into_iter()
        .map(|(g, tf)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, tf as f64 * (log_n - d.ln()))
        })
        .collect();
    let mut sq: Vec<f64> = v.values().map(|x| x * x).collect();
    sq.sort_by(f64::total_cmp);
    (v, sq.iter().sum::<f64>().sqrt())
}
