//! A small generator of template-based source documents, for smoke runs and
//! tests. Titles name a topic, an outcome and a subject, and the sentences
//! mention the same words, so a model can learn to summarize them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SourceDoc;

const TOPICS: [(&str, &str, &str); 8] = [
    ("caffeine", "coffee", "alertness"),
    ("exercise", "running", "fitness"),
    ("sleep", "insomnia", "rest"),
    ("diet", "sugar", "weight"),
    ("insulin", "glucose", "dose"),
    ("asthma", "inhaler", "airway"),
    ("smoking", "nicotine", "lungs"),
    ("vitamin", "supplement", "intake"),
];
const SUBJECTS: [&str; 6] = ["athletes", "children", "patients", "adults", "mice", "nurses"];
const OUTCOMES: [&str; 5] = ["performance", "memory", "recovery", "mortality", "growth"];

const TEMPLATES: [&str; 8] = [
    "we studied {t} in {s} .",
    "{w1} was measured in the {s} trial .",
    "{t} improved {o} in most {s} .",
    "the {w2} of the {s} was stable .",
    "{o} and {w1} were linked .",
    "a study of {t} with {s} .",
    "{t} reduced {o} .",
    "we report {w2} and {o} for {s} .",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDocSpec {
    /// How many of the built-in topics to use (1..=8).
    pub topics: usize,
    /// How many subjects (1..=6).
    pub subjects: usize,
    /// How many outcomes (1..=5).
    pub outcomes: usize,
    /// Sentences per document (1..=8).
    pub sentences: usize,
}

impl Default for ToyDocSpec {
    fn default() -> Self {
        Self {
            topics: TOPICS.len(),
            subjects: SUBJECTS.len(),
            outcomes: OUTCOMES.len(),
            sentences: 5,
        }
    }
}

/// `count` documents drawn from a ChaCha8 stream seeded with `seed`.
pub fn toy_documents(count: usize, spec: &ToyDocSpec, seed: u64) -> Vec<SourceDoc> {
    let topics = spec.topics.clamp(1, TOPICS.len());
    let subjects = spec.subjects.clamp(1, SUBJECTS.len());
    let outcomes = spec.outcomes.clamp(1, OUTCOMES.len());
    let sentences = spec.sentences.clamp(1, TEMPLATES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (t, w1, w2) = TOPICS[rng.random_range(0..topics)];
            let s = SUBJECTS[rng.random_range(0..subjects)];
            let o = OUTCOMES[rng.random_range(0..outcomes)];
            let mut order: Vec<usize> = (0..TEMPLATES.len()).collect();
            order.shuffle(&mut rng);
            let sentences = order[..sentences]
                .iter()
                .map(|&k| {
                    TEMPLATES[k]
                        .replace("{t}", t)
                        .replace("{w1}", w1)
                        .replace("{w2}", w2)
                        .replace("{s}", s)
                        .replace("{o}", o)
                })
                .collect();
            SourceDoc {
                sentences,
                title: format!("effect of {t} on {o} in {s} ."),
            }
        })
        .collect()
}
