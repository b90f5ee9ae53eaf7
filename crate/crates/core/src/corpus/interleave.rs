//! The interleaving algorithm.
//!
//! For each window of `b` consecutive documents: draw `r ~ U(a, b)`, take the
//! first `r` documents of the window, draw `q_j ~ U(m, n)` for each and keep
//! its first `q_j` sentences, and put `q_j` copies of `j` into a multiset.
//! Then repeatedly remove a uniformly chosen element `k` from the multiset and
//! emit document `k`'s earliest unused sentence, adding `k`'s title to the
//! summaries the first time `k` is drawn.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{density_order, CorpusInstance, InstanceMeta, SourceDoc};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryOrdering {
    /// Summaries follow the order of each thread's first post.
    #[default]
    FirstOccurrence,
    /// Summaries follow the end of each thread's densest post window.
    Density,
}

/// Interleaving ranges: `a..=b` documents, `m..=n` sentences per document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavePreset {
    pub a: usize,
    pub b: usize,
    pub m: usize,
    pub n: usize,
    #[serde(default)]
    pub ordering: SummaryOrdering,
}

impl InterleavePreset {
    pub const EASY: Self = Self::new(2, 2, 5, 5);
    pub const MEDIUM: Self = Self::new(2, 3, 2, 5);
    pub const HARD: Self = Self::new(2, 5, 2, 5);

    pub const fn new(a: usize, b: usize, m: usize, n: usize) -> Self {
        Self {
            a,
            b,
            m,
            n,
            ordering: SummaryOrdering::FirstOccurrence,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "easy" => Ok(Self::EASY),
            "medium" => Ok(Self::MEDIUM),
            "hard" => Ok(Self::HARD),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected easy, medium or hard)"
            ))),
        }
    }

    pub fn with_ordering(mut self, ordering: SummaryOrdering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2 <= self.a && self.a <= self.b) {
            return Err(Error::Config(format!("need 2 <= a <= b, got a={} b={}", self.a, self.b)));
        }
        if !(1 <= self.m && self.m <= self.n) {
            return Err(Error::Config(format!("need 1 <= m <= n, got m={} n={}", self.m, self.n)));
        }
        Ok(())
    }

    /// Largest number of posts an instance can have.
    pub fn max_posts(&self) -> usize {
        self.b * self.n
    }

    /// Largest number of threads an instance can have.
    pub fn max_threads(&self) -> usize {
        self.b
    }
}

/// Sliding windows of length `w` advancing by `t`:
/// `floor((len - w) / t) + 1` windows, none when `len < w`.
pub fn window<T>(docs: &[T], w: usize, t: usize) -> impl Iterator<Item = &[T]> {
    assert!(w >= 1 && t >= 1, "window size and step must be positive");
    docs.windows(w).step_by(t)
}

/// Source of the random draws made by [`interleave_window`].
pub trait InterleaveRng {
    /// Number of documents, uniform on `a..=b`.
    fn doc_count(&mut self, a: usize, b: usize) -> usize;
    /// Sentences for one document, uniform on `m..=n`.
    fn sentence_count(&mut self, m: usize, n: usize) -> usize;
    /// Index of the element to remove from the multiset `pool`.
    fn pick(&mut self, pool: &[usize]) -> usize;
}

/// Seeded draws from ChaCha8 (`rand_chacha`), using `rand`'s uniform
/// integer sampling for every draw.
pub struct SeededDraws {
    rng: ChaCha8Rng,
}

impl SeededDraws {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }
}

impl InterleaveRng for SeededDraws {
    fn doc_count(&mut self, a: usize, b: usize) -> usize {
        self.rng.random_range(a..=b)
    }

    fn sentence_count(&mut self, m: usize, n: usize) -> usize {
        self.rng.random_range(m..=n)
    }

    fn pick(&mut self, pool: &[usize]) -> usize {
        self.rng.random_range(0..pool.len())
    }
}

/// Replays a fixed script of draws. `picks` are document labels (0-based
/// positions in the window); each resolves to the first matching copy in
/// the multiset. Panics when the script runs out or names an absent label.
#[derive(Clone, Debug, Default)]
pub struct ScriptedDraws {
    pub doc_counts: VecDeque<usize>,
    pub sentence_counts: VecDeque<usize>,
    pub picks: VecDeque<usize>,
}

impl ScriptedDraws {
    pub fn new(doc_count: usize, sentence_counts: &[usize], picks: &[usize]) -> Self {
        Self {
            doc_counts: VecDeque::from([doc_count]),
            sentence_counts: sentence_counts.iter().copied().collect(),
            picks: picks.iter().copied().collect(),
        }
    }
}

impl InterleaveRng for ScriptedDraws {
    fn doc_count(&mut self, _a: usize, _b: usize) -> usize {
        self.doc_counts.pop_front().expect("scripted doc count exhausted")
    }

    fn sentence_count(&mut self, _m: usize, _n: usize) -> usize {
        self.sentence_counts.pop_front().expect("scripted sentence count exhausted")
    }

    fn pick(&mut self, pool: &[usize]) -> usize {
        let label = self.picks.pop_front().expect("scripted pick exhausted");
        pool.iter()
            .position(|&k| k == label)
            .unwrap_or_else(|| panic!("scripted pick {label} not in multiset {pool:?}"))
    }
}

/// Interleaves one window of documents into a corpus instance.
///
/// `source_ids[j]` is recorded as the id of `window[j]`.
pub fn interleave_window<R: InterleaveRng + ?Sized>(
    window: &[SourceDoc],
    source_ids: &[usize],
    preset: &InterleavePreset,
    rng: &mut R,
) -> Result<CorpusInstance> {
    preset.validate()?;
    if window.len() < preset.b {
        return Err(Error::InvalidInput(format!(
            "window of {} documents is smaller than b={}",
            window.len(),
            preset.b
        )));
    }
    if source_ids.len() != window.len() {
        return Err(Error::InvalidInput("one source id per window document is required".into()));
    }

    let r = rng.doc_count(preset.a, preset.b);
    let mut queues: Vec<VecDeque<&str>> = Vec::with_capacity(r);
    let mut multiset: Vec<usize> = Vec::new();
    for (j, doc) in window.iter().take(r).enumerate() {
        let q = rng.sentence_count(preset.m, preset.n);
        if doc.sentences.len() < q {
            return Err(Error::InvalidInput(format!(
                "document {} has {} sentences, fewer than the {q} drawn",
                source_ids[j],
                doc.sentences.len()
            )));
        }
        queues.push(doc.sentences[..q].iter().map(String::as_str).collect());
        multiset.extend(std::iter::repeat_n(j, q));
    }

    let total = multiset.len();
    let mut posts = Vec::with_capacity(total);
    let mut thread_ids = Vec::with_capacity(total);
    let mut summaries: Vec<String> = Vec::new();
    let mut summary_threads = Vec::new();
    for _ in 0..total {
        let k = multiset.remove(rng.pick(&multiset));
        let sentence = queues[k].pop_front().expect("multiset copies track remaining sentences");
        posts.push(sentence.to_string());
        thread_ids.push(k);
        let title = &window[k].title;
        if !summaries.iter().any(|s| s == title) {
            summaries.push(title.clone());
            summary_threads.push(k);
        }
    }

    let inst = CorpusInstance {
        posts,
        thread_ids,
        summaries,
        meta: InstanceMeta {
            source_ids: source_ids[..r].to_vec(),
            seed: 0,
            window: None,
            summary_threads: Some(summary_threads),
        },
    };
    Ok(match preset.ordering {
        SummaryOrdering::FirstOccurrence => inst,
        SummaryOrdering::Density => density_order(&inst),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(label: &str, sentences: usize) -> SourceDoc {
        SourceDoc {
            sentences: (1..=sentences).map(|i| format!("{label}s{i}")).collect(),
            title: format!("T{}", &label[1..]),
        }
    }

    #[test]
    fn window_counts() {
        let docs: Vec<u32> = (1..=5).collect();
        let w: Vec<&[u32]> = window(&docs, 3, 1).collect();
        assert_eq!(w, vec![&[1, 2, 3][..], &[2, 3, 4], &[3, 4, 5]]);
        assert_eq!(window(&docs, 5, 1).count(), 1);
        let six: Vec<u32> = (1..=6).collect();
        let w: Vec<&[u32]> = window(&six, 2, 2).collect();
        assert_eq!(w, vec![&[1, 2][..], &[3, 4], &[5, 6]]);
        assert_eq!(window(&docs, 6, 1).count(), 0);
    }

    proptest! {
        #[test]
        fn window_count_formula(len in 0usize..40, w in 1usize..8, t in 1usize..5) {
            let docs: Vec<usize> = (0..len).collect();
            let expect = if len < w { 0 } else { (len - w) / t + 1 };
            prop_assert_eq!(window(&docs, w, t).count(), expect);
        }
    }

    #[test]
    fn scripted_trace_reproduces_hand_example() {
        let docs = [doc("D1", 3), doc("D2", 3), doc("D3", 3)];
        let preset = InterleavePreset::new(2, 3, 2, 2);
        let mut rng = ScriptedDraws::new(3, &[2, 2, 2], &[0, 1, 2, 0, 1, 2]);
        let inst = interleave_window(&docs, &[10, 11, 12], &preset, &mut rng).unwrap();
        assert_eq!(inst.posts, ["D1s1", "D2s1", "D3s1", "D1s2", "D2s2", "D3s2"]);
        assert_eq!(inst.summaries, ["T1", "T2", "T3"]);
        assert_eq!(inst.thread_ids, [0, 1, 2, 0, 1, 2]);
        assert_eq!(inst.meta.source_ids, [10, 11, 12]);
    }

    #[test]
    fn easy_always_has_ten_posts_two_summaries() {
        let docs: Vec<SourceDoc> = (1..=4).map(|i| doc(&format!("D{i}"), 6)).collect();
        for seed in 0..50 {
            let mut rng = SeededDraws::new(seed);
            let inst = interleave_window(&docs[..2], &[0, 1], &InterleavePreset::EASY, &mut rng).unwrap();
            assert_eq!(inst.posts.len(), 10);
            assert_eq!(inst.summaries.len(), 2);
        }
    }

    #[test]
    fn window_smaller_than_b_is_rejected() {
        let docs = [doc("D1", 5), doc("D2", 5)];
        let mut rng = SeededDraws::new(0);
        let err = interleave_window(&docs, &[0, 1], &InterleavePreset::HARD, &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn short_document_is_rejected() {
        let docs = [doc("D1", 1), doc("D2", 5)];
        let mut rng = ScriptedDraws::new(2, &[2, 2], &[]);
        let preset = InterleavePreset::new(2, 2, 2, 2);
        assert!(interleave_window(&docs, &[0, 1], &preset, &mut rng).is_err());
    }

    /// Wraps a real RNG and checks the multiset bookkeeping at every draw.
    struct Auditing<'a> {
        inner: SeededDraws,
        remaining: &'a std::cell::RefCell<Vec<usize>>,
    }

    impl InterleaveRng for Auditing<'_> {
        fn doc_count(&mut self, a: usize, b: usize) -> usize {
            self.inner.doc_count(a, b)
        }
        fn sentence_count(&mut self, m: usize, n: usize) -> usize {
            let q = self.inner.sentence_count(m, n);
            self.remaining.borrow_mut().push(q);
            q
        }
        fn pick(&mut self, pool: &[usize]) -> usize {
            let rem = self.remaining.borrow();
            for (k, &left) in rem.iter().enumerate() {
                assert_eq!(pool.iter().filter(|&&x| x == k).count(), left);
            }
            drop(rem);
            let i = self.inner.pick(pool);
            self.remaining.borrow_mut()[pool[i]] -= 1;
            i
        }
    }

    #[test]
    fn multiset_copies_equal_remaining_sentences() {
        let docs: Vec<SourceDoc> = (1..=5).map(|i| doc(&format!("D{i}"), 5)).collect();
        let ids: Vec<usize> = (0..5).collect();
        for seed in 0..100 {
            let remaining = std::cell::RefCell::new(Vec::new());
            let mut rng = Auditing {
                inner: SeededDraws::new(seed),
                remaining: &remaining,
            };
            interleave_window(&docs, &ids, &InterleavePreset::HARD, &mut rng).unwrap();
            assert!(remaining.borrow().iter().all(|&r| r == 0));
        }
    }
}
