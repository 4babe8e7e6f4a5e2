use std::collections::HashMap;

pub const ROUGE_BETA: f64 = 1.2;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU up to order `n` (1..=4): geometric mean of clipped n-gram
/// precisions times the brevity penalty against the closest reference
/// length (shorter wins ties). Zero when any precision is zero.
pub fn bleu(candidate: &[String], references: &[Vec<String>], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be 1..=4, got {n}");
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let cand = ngram_counts(candidate, order);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, order) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / n as f64).exp()
}

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with recall weighted by β = 1.2, best reference.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    let b2 = ROUGE_BETA * ROUGE_BETA;
    references
        .iter()
        .map(|r| {
            let l = lcs_len(candidate, r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / candidate.len() as f64;
            let rec = l as f64 / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Light suffix stripper used for METEOR's second matching stage.
pub fn stem(word: &str) -> String {
    const RULES: [(&str, &str); 8] = [
        ("ies", "y"),
        ("ing", ""),
        ("edly", ""),
        ("ed", ""),
        ("ly", ""),
        ("es", ""),
        ("'s", ""),
        ("s", ""),
    ];
    for (suffix, repl) in RULES {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= 3 && (suffix != "s" || !base.ends_with('s')) {
                return format!("{base}{repl}");
            }
        }
    }
    word.to_string()
}

/// Unigram alignment as (candidate index, reference index) pairs: exact
/// matches first, then stem matches. Each stage prefers the reference
/// position right after the previous alignment so runs stay contiguous.
fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let cand_stems: Vec<String> = candidate.iter().map(|w| stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let stages: [(&[String], &[String]); 2] = [(candidate, reference), (&cand_stems, &ref_stems)];
    for (cs, rs) in stages {
        let mut last: Option<usize> = None;
        for i in 0..cs.len() {
            if cand_used[i] {
                last = pairs.iter().find(|p| p.0 == i).map(|p| p.1);
                continue;
            }
            let free = |j: usize| !ref_used[j] && rs[j] == cs[i];
            let pick = last
                .map(|l| l + 1)
                .filter(|&j| j < rs.len() && free(j))
                .or_else(|| (0..rs.len()).find(|&j| free(j)));
            if let Some(j) = pick {
                cand_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
                last = Some(j);
            } else {
                last = None;
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// METEOR without synonym tables: Fmean = 10PR/(R+9P) over aligned
/// unigrams, times 1 − 0.5·(chunks/m)³; best reference.
pub fn meteor_lite(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|r| {
            let pairs = align(candidate, r);
            let m = pairs.len();
            if m == 0 {
                return 0.0;
            }
            let chunks = 1 + pairs
                .windows(2)
                .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
                .count();
            let p = m as f64 / candidate.len() as f64;
            let rec = m as f64 / r.len() as f64;
            let fmean = 10.0 * p * rec / (rec + 9.0 * p);
            let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
            fmean * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}
