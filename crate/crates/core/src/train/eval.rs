//! Corpus-level evaluation: generation, ROUGE aggregation, and teacher-forced
//! diagnostics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusInstance;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::graph::Graph;
use crate::textproc::{encode_instance, tokenize, EncodedInstance, Vocab};
use crate::train::loss::compute_loss;
use crate::train::rouge::{RougeScore, RougeTriple};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    #[default]
    Recall,
    F1,
}

impl FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recall" => Ok(Self::Recall),
            "f1" => Ok(Self::F1),
            _ => Err(Error::Config(format!("unknown metric mode {s:?} (expected recall or f1)"))),
        }
    }
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Recall => "recall",
            Self::F1 => "f1",
        })
    }
}

/// How generated summaries meet reference summaries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Score the concatenation of all generated against all reference summaries.
    #[default]
    Concat,
    /// Score generated summary k against reference k and average; a missing
    /// side counts as empty.
    Ordered,
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" => Ok(Self::Concat),
            "ordered" => Ok(Self::Ordered),
            _ => Err(Error::Config(format!("unknown pairing {s:?} (expected concat or ordered)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: MetricMode,
    pub pairing: Pairing,
    /// Cap on generated tokens per instance.
    pub budget: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceEval {
    pub index: usize,
    pub generated: usize,
    pub references: usize,
    pub scores: RougeTriple,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Headline {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: MetricMode,
    pub pairing: Pairing,
    pub budget: Option<usize>,
    pub instances: usize,
    /// Instances whose generated and reference summary counts differ.
    pub count_mismatches: usize,
    /// The selected measure of each metric.
    pub headline: Headline,
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

fn joined_tokens(summaries: &[String]) -> Vec<String> {
    summaries.iter().flat_map(|s| tokenize(s)).collect()
}

pub fn score_instance(generated: &[String], references: &[String], opts: &EvalOptions) -> RougeTriple {
    let cap = |mut t: Vec<String>| {
        if let Some(b) = opts.budget {
            t.truncate(b);
        }
        t
    };
    match opts.pairing {
        Pairing::Concat => RougeTriple::score(&cap(joined_tokens(generated)), &joined_tokens(references)),
        Pairing::Ordered => {
            let n = generated.len().max(references.len());
            let mut remaining = opts.budget.unwrap_or(usize::MAX);
            let scores: Vec<RougeTriple> = (0..n)
                .map(|k| {
                    let mut cand = generated.get(k).map(|s| tokenize(s)).unwrap_or_default();
                    cand.truncate(remaining);
                    remaining -= cand.len();
                    let refs = references.get(k).map(|s| tokenize(s)).unwrap_or_default();
                    RougeTriple::score(&cand, &refs)
                })
                .collect();
            RougeTriple::mean(&scores)
        }
    }
}

/// Mean of per-instance scores.
pub fn evaluate_corpus(
    generated: &[Vec<String>],
    references: &[Vec<String>],
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<InstanceEval>)> {
    if generated.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} generated instances but {} references",
            generated.len(),
            references.len()
        )));
    }
    let per: Vec<InstanceEval> = generated
        .iter()
        .zip(references)
        .enumerate()
        .map(|(index, (g, r))| InstanceEval {
            index,
            generated: g.len(),
            references: r.len(),
            scores: score_instance(g, r, opts),
        })
        .collect();
    let mismatches = per.iter().filter(|p| p.generated != p.references).count();
    if mismatches > 0 {
        log::info!("{mismatches} instances have a different number of generated and reference summaries");
    }
    let mean = RougeTriple::mean(&per.iter().map(|p| p.scores).collect::<Vec<_>>());
    let pick = |s: RougeScore| match opts.mode {
        MetricMode::Recall => s.recall,
        MetricMode::F1 => s.f1,
    };
    Ok((
        EvalReport {
            mode: opts.mode,
            pairing: opts.pairing,
            budget: opts.budget,
            instances: per.len(),
            count_mismatches: mismatches,
            headline: Headline {
                r1: pick(mean.r1),
                r2: pick(mean.r2),
                rl: pick(mean.rl),
            },
            r1: mean.r1,
            r2: mean.r2,
            rl: mean.rl,
        },
        per,
    ))
}

/// Greedy summaries for each instance, encoded under the model's limits.
pub fn generate_summaries(model: &Model, vocab: &Vocab, instances: &[CorpusInstance]) -> Result<Vec<Vec<String>>> {
    instances
        .iter()
        .map(|inst| {
            let enc = encode_instance(inst, vocab, &model.config.limits)?;
            model.generate(&enc)?.summaries(vocab)
        })
        .collect()
}

/// Teacher-forced diagnostics over a data set, without dropout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Cross-entropy per target token.
    pub token_nll: f64,
    /// Fraction of thread steps where `p_stop > 0.5` agrees with the label.
    /// `None` for flat decoders.
    pub stop_accuracy: Option<f64>,
}

pub fn diagnostics(model: &Model, data: &[EncodedInstance]) -> Result<Diagnostics> {
    let (mut nll, mut tokens, mut right, mut steps) = (0.0, 0usize, 0usize, 0usize);
    for inst in data {
        let mut g = Graph::new(&model.params);
        let tf = model.forward().teacher_forced(&mut g, inst, None, false)?;
        let (_, parts) = compute_loss(&mut g, &tf, model.config.lambda)?;
        nll += parts.nll_sum;
        tokens += parts.token_count;
        for (p, label) in tf.stop_probs.iter().zip(&inst.stop_labels) {
            steps += 1;
            if (*p > 0.5) == (*label > 0.5) {
                right += 1;
            }
        }
    }
    Ok(Diagnostics {
        token_nll: nll / tokens.max(1) as f64,
        stop_accuracy: (steps > 0).then(|| right as f64 / steps as f64),
    })
}
