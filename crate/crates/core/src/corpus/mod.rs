//! Interleaved post/summary corpora.
//!
//! Input documents are JSONL records `{"sentences": [...], "title": "..."}`.
//! Output instances are JSONL records
//! `{"posts": [...], "thread_ids": [...], "summaries": [...], "meta": {...}}`,
//! one per line, UTF-8, LF line endings.

pub mod density;
pub mod interleave;
pub mod synth;
pub mod toy;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use density::density_order;
pub use interleave::{
    interleave_window, window, InterleavePreset, InterleaveRng, ScriptedDraws, SeededDraws, SummaryOrdering,
};
pub use synth::{synthesize_corpus, synthesize_files, CorpusStats, SplitRatios, SynthOutput};

/// A source document: its sentences (the abstract) and its title (the summary).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub sentences: Vec<String>,
    pub title: String,
}

impl SourceDoc {
    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::InvalidInput("document has no sentences".into()));
        }
        if self.title.trim().is_empty() {
            return Err(Error::InvalidInput("document has an empty title".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    /// Source document id for each thread label.
    #[serde(default)]
    pub source_ids: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Index of the window the instance was drawn from, within its split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Thread label that each summary belongs to, in summary order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_threads: Option<Vec<usize>>,
}

/// One interleaved channel with its ordered thread summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusInstance {
    pub posts: Vec<String>,
    /// Thread label per post. Diagnostic only; never fed to a model.
    pub thread_ids: Vec<usize>,
    pub summaries: Vec<String>,
    pub meta: InstanceMeta,
}

impl CorpusInstance {
    pub fn thread_count(&self) -> usize {
        self.thread_ids.iter().collect::<BTreeSet<_>>().len()
    }

    /// Checks the structural invariants of an instance.
    pub fn validate(&self) -> Result<()> {
        if self.posts.len() != self.thread_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} posts but {} thread ids",
                self.posts.len(),
                self.thread_ids.len()
            )));
        }
        let threads = self.thread_count();
        if threads != self.summaries.len() {
            return Err(Error::InvalidInput(format!(
                "{threads} distinct threads but {} summaries",
                self.summaries.len()
            )));
        }
        if let Some(order) = &self.meta.summary_threads {
            if order.len() != self.summaries.len() {
                return Err(Error::InvalidInput("summary_threads length differs from summaries".into()));
            }
        }
        Ok(())
    }

    /// Positions of each thread's posts, keyed by thread label in order of first appearance.
    pub fn thread_positions(&self) -> Vec<(usize, Vec<usize>)> {
        let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
        for (pos, &t) in self.thread_ids.iter().enumerate() {
            match out.iter_mut().find(|(label, _)| *label == t) {
                Some((_, v)) => v.push(pos),
                None => out.push((t, vec![pos])),
            }
        }
        out
    }
}

/// Parses one JSONL record. `line` is 1-based and only used for error messages.
pub fn parse_instance(record: &str, line: usize) -> Result<CorpusInstance> {
    let inst: CorpusInstance = serde_json::from_str(record).map_err(|e| Error::Schema {
        line,
        message: e.to_string(),
    })?;
    inst.validate().map_err(|e| Error::Schema {
        line,
        message: e.to_string(),
    })?;
    Ok(inst)
}

/// One JSON line, without the trailing newline.
pub fn serialize_instance(inst: &CorpusInstance) -> Result<String> {
    Ok(serde_json::to_string(inst)?)
}

pub fn read_instances(path: &Path) -> Result<Vec<CorpusInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_instance(l, i + 1))
        .collect()
}

pub fn write_instances(path: &Path, instances: &[CorpusInstance]) -> Result<()> {
    let mut buf = Vec::new();
    for inst in instances {
        buf.extend_from_slice(serialize_instance(inst)?.as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads source documents, skipping malformed records. Returns the documents
/// with their record index, and the number of skipped records.
pub fn read_source_docs(path: &Path) -> Result<(Vec<(usize, SourceDoc)>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut skipped = 0;
    for (idx, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        match serde_json::from_str::<SourceDoc>(line)
            .map_err(Error::from)
            .and_then(|d| d.validate().map(|_| d))
        {
            Ok(d) => docs.push((idx, d)),
            Err(e) => {
                log::warn!("skipping source record {}: {e}", idx + 1);
                skipped += 1;
            }
        }
    }
    let total = docs.len() + skipped;
    if total > 0 && skipped * 10 > total {
        return Err(Error::InvalidInput(format!(
            "{skipped} of {total} source records are malformed (more than 10%)"
        )));
    }
    Ok((docs, skipped))
}

pub fn write_source_docs(path: &Path, docs: &[SourceDoc]) -> Result<()> {
    let mut buf = Vec::new();
    for d in docs {
        buf.extend_from_slice(serde_json::to_string(d)?.as_bytes());
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
