//! Corpus synthesis over a document collection with train/eval/test splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::interleave::{interleave_window, window, InterleavePreset, SeededDraws};
use crate::corpus::{read_source_docs, write_instances, CorpusInstance, SourceDoc};
use crate::error::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "eval", "test"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub eval: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            eval: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.eval, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be non-negative and sum to 1, got {}/{}/{}",
                self.train, self.eval, self.test
            )));
        }
        Ok(())
    }

    /// Parses `"0.8/0.1/0.1"` or `"0.8,0.1,0.1"`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<f64> = text
            .split(['/', ','])
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad split ratios {text:?}: {e}")))?;
        let [train, eval, test] = parts[..] else {
            return Err(Error::Config(format!("expected three split ratios, got {text:?}")));
        };
        let r = Self { train, eval, test };
        r.validate()?;
        Ok(r)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.eval, self.test]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub instances: usize,
    pub documents: usize,
    pub skipped_windows: usize,
    pub post_count_histogram: BTreeMap<usize, usize>,
    pub thread_count_histogram: BTreeMap<usize, usize>,
    pub mean_threads: f64,
    pub mean_posts: f64,
}

impl SplitStats {
    fn from_instances(instances: &[CorpusInstance], documents: usize, skipped_windows: usize) -> Self {
        let mut s = SplitStats {
            instances: instances.len(),
            documents,
            skipped_windows,
            ..Default::default()
        };
        for inst in instances {
            *s.post_count_histogram.entry(inst.posts.len()).or_default() += 1;
            *s.thread_count_histogram.entry(inst.thread_count()).or_default() += 1;
        }
        if !instances.is_empty() {
            let n = instances.len() as f64;
            s.mean_threads = instances.iter().map(|i| i.thread_count() as f64).sum::<f64>() / n;
            s.mean_posts = instances.iter().map(|i| i.posts.len() as f64).sum::<f64>() / n;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub preset: InterleavePreset,
    pub seed: u64,
    pub skipped_records: usize,
    pub filtered_short_docs: usize,
    pub splits: BTreeMap<String, SplitStats>,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train: Vec<CorpusInstance>,
    pub eval: Vec<CorpusInstance>,
    pub test: Vec<CorpusInstance>,
    pub stats: CorpusStats,
}

impl SynthOutput {
    pub fn split(&self, name: &str) -> Option<&[CorpusInstance]> {
        match name {
            "train" => Some(&self.train),
            "eval" => Some(&self.eval),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Interleaves `docs` (with their source ids) into three group-disjoint splits.
///
/// Documents with fewer than `preset.n` sentences are dropped first. The
/// remaining sequence is cut into contiguous train/eval/test blocks by ratio,
/// and windows of `b` documents advancing by one are taken inside each block.
/// Each split draws from its own ChaCha8 stream of `seed`. `max_instances`
/// caps the total, shared out by ratio.
pub fn synthesize_corpus(
    docs: &[(usize, SourceDoc)],
    preset: &InterleavePreset,
    seed: u64,
    ratios: SplitRatios,
    max_instances: Option<usize>,
) -> Result<SynthOutput> {
    preset.validate()?;
    ratios.validate()?;
    let usable: Vec<&(usize, SourceDoc)> = docs.iter().filter(|(_, d)| d.sentences.len() >= preset.n).collect();
    let filtered = docs.len() - usable.len();
    if filtered > 0 {
        log::info!("dropped {filtered} documents with fewer than {} sentences", preset.n);
    }

    let total = usable.len();
    let r = ratios.as_array();
    let n_train = (total as f64 * r[0]).floor() as usize;
    let n_eval = (total as f64 * r[1]).floor() as usize;
    let bounds = [0, n_train, n_train + n_eval, total];
    let caps: Option<[usize; 3]> = max_instances.map(|max| {
        let train = (max as f64 * r[0]).floor() as usize;
        let eval = (max as f64 * r[1]).floor() as usize;
        [train, eval, max - train - eval]
    });

    let mut splits: Vec<Vec<CorpusInstance>> = Vec::new();
    let mut split_stats = BTreeMap::new();
    for (s, name) in SPLIT_NAMES.iter().enumerate() {
        let block = &usable[bounds[s]..bounds[s + 1]];
        let docs_only: Vec<SourceDoc> = block.iter().map(|(_, d)| d.clone()).collect();
        let ids: Vec<usize> = block.iter().map(|(id, _)| *id).collect();
        let cap = caps.map_or(usize::MAX, |c| c[s]);
        let mut rng = SeededDraws::with_stream(seed, s as u64);
        let mut out = Vec::new();
        let mut skipped = 0;
        for (w, win) in window(&docs_only, preset.b, 1).enumerate() {
            if out.len() >= cap {
                break;
            }
            let mut inst = interleave_window(win, &ids[w..w + preset.b], preset, &mut rng)?;
            if inst.validate().is_err() {
                // two selected documents share a title
                skipped += 1;
                continue;
            }
            inst.meta.seed = seed;
            inst.meta.window = Some(w);
            out.push(inst);
        }
        if skipped > 0 {
            log::warn!("{name}: skipped {skipped} windows with duplicate titles");
        }
        split_stats.insert(name.to_string(), SplitStats::from_instances(&out, block.len(), skipped));
        splits.push(out);
    }
    let test = splits.pop().unwrap();
    let eval = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(SynthOutput {
        train,
        eval,
        test,
        stats: CorpusStats {
            preset: *preset,
            seed,
            skipped_records: 0,
            filtered_short_docs: filtered,
            splits: split_stats,
        },
    })
}

/// Reads source documents from `input`, synthesizes, and writes
/// `train.jsonl`, `eval.jsonl`, `test.jsonl` and `stats.json` under `out_dir`.
pub fn synthesize_files(
    input: &Path,
    out_dir: &Path,
    preset: &InterleavePreset,
    seed: u64,
    ratios: SplitRatios,
    max_instances: Option<usize>,
) -> Result<CorpusStats> {
    let (docs, skipped) = read_source_docs(input)?;
    if docs.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no usable documents", input.display())));
    }
    let mut out = synthesize_corpus(&docs, preset, seed, ratios, max_instances)?;
    out.stats.skipped_records = skipped;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for name in SPLIT_NAMES {
        write_instances(&out_dir.join(format!("{name}.jsonl")), out.split(name).unwrap())?;
    }
    let stats_path = out_dir.join("stats.json");
    let mut json = serde_json::to_string_pretty(&out.stats)?;
    json.push('\n');
    fs::write(&stats_path, json).map_err(|e| Error::io(&stats_path, e))?;
    Ok(out.stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toy::{toy_documents, ToyDocSpec};
    use crate::corpus::write_source_docs;
    use std::collections::HashSet;

    fn docs(count: usize, seed: u64) -> Vec<(usize, SourceDoc)> {
        toy_documents(count, &ToyDocSpec::default(), seed).into_iter().enumerate().collect()
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("docs.jsonl");
        let plain: Vec<SourceDoc> = docs(100, 1).into_iter().map(|(_, d)| d).collect();
        write_source_docs(&input, &plain).unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for out in [&a, &b] {
            synthesize_files(&input, out, &InterleavePreset::EASY, 7, SplitRatios::default(), None).unwrap();
        }
        for f in ["train.jsonl", "eval.jsonl", "test.jsonl", "stats.json"] {
            let x = fs::read(a.join(f)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn splits_are_group_disjoint() {
        let out = synthesize_corpus(&docs(100, 2), &InterleavePreset::HARD, 3, SplitRatios::default(), None).unwrap();
        let ids = |split: &[CorpusInstance]| -> HashSet<usize> {
            split.iter().flat_map(|i| i.meta.source_ids.iter().copied()).collect()
        };
        let (tr, ev, te) = (ids(&out.train), ids(&out.eval), ids(&out.test));
        assert!(!tr.is_empty() && !ev.is_empty() && !te.is_empty());
        assert!(tr.is_disjoint(&ev) && tr.is_disjoint(&te) && ev.is_disjoint(&te));
    }

    #[test]
    fn medium_mean_thread_count_is_two_and_a_half() {
        let out = synthesize_corpus(
            &docs(12_000, 4),
            &InterleavePreset::MEDIUM,
            5,
            SplitRatios {
                train: 1.0,
                eval: 0.0,
                test: 0.0,
            },
            None,
        )
        .unwrap();
        let stats = &out.stats.splits["train"];
        assert!(stats.instances >= 10_000, "{}", stats.instances);
        assert!((2.4..=2.6).contains(&stats.mean_threads), "{}", stats.mean_threads);
    }

    #[test]
    fn hard_instances_respect_preset_ranges() {
        let out = synthesize_corpus(
            &docs(1100, 6),
            &InterleavePreset::HARD,
            8,
            SplitRatios {
                train: 1.0,
                eval: 0.0,
                test: 0.0,
            },
            Some(1000),
        )
        .unwrap();
        assert_eq!(out.train.len(), 1000);
        let source = docs(1100, 6);
        for inst in &out.train {
            let threads = inst.thread_positions();
            assert!((2..=5).contains(&threads.len()));
            assert_eq!(inst.summaries.len(), threads.len());
            let first_order: Vec<usize> = threads.iter().map(|(t, _)| *t).collect();
            assert_eq!(inst.meta.summary_threads.as_ref().unwrap(), &first_order);
            for (t, pos) in threads {
                assert!((2..=5).contains(&pos.len()));
                let doc = &source[inst.meta.source_ids[t]].1;
                let got: Vec<&String> = pos.iter().map(|&p| &inst.posts[p]).collect();
                let want: Vec<&String> = doc.sentences[..pos.len()].iter().collect();
                assert_eq!(got, want);
                assert_eq!(inst.summaries.iter().filter(|s| **s == doc.title).count(), 1);
            }
        }
    }

    #[test]
    fn ratios_parse() {
        assert_eq!(SplitRatios::parse("0.8/0.1/0.1").unwrap(), SplitRatios::default());
        assert!(SplitRatios::parse("0.8/0.1").is_err());
        assert!(SplitRatios::parse("0.8/0.3/0.1").is_err());
    }
}
