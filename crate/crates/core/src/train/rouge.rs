//! ROUGE-N and ROUGE-L on token sequences (no stemming, no stopword removal).

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// The reference had no n-gram (or no token) to match.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_reference: bool,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let recall = ratio(overlap, reference_total);
        let precision = ratio(overlap, candidate_total);
        Self {
            recall,
            precision,
            f1: f1(precision, recall),
            empty_reference: reference_total == 0,
        }
    }

    pub fn mean(scores: &[RougeScore]) -> RougeScore {
        if scores.is_empty() {
            return RougeScore::default();
        }
        let n = scores.len() as f64;
        RougeScore {
            recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
            precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
            f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
            empty_reference: false,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = refs
        .iter()
        .map(|(gram, &r)| cand.get(gram).map_or(0, |&c| c.min(r)))
        .sum();
    RougeScore::from_counts(overlap, cand.values().sum(), refs.values().sum())
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
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

/// Longest-common-subsequence recall and precision.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

impl RougeTriple {
    pub fn score<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Self {
        Self {
            r1: rouge_n(candidate, reference, 1),
            r2: rouge_n(candidate, reference, 2),
            rl: rouge_l(candidate, reference),
        }
    }

    pub fn mean(all: &[RougeTriple]) -> Self {
        let pick = |f: fn(&RougeTriple) -> RougeScore| RougeScore::mean(&all.iter().map(f).collect::<Vec<_>>());
        Self {
            r1: pick(|t| t.r1),
            r2: pick(|t| t.r2),
            rl: pick(|t| t.rl),
        }
    }
}
