//! Tokenization, vocabulary and numericalization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusInstance, InterleavePreset};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
/// Separates posts in a flattened source and summaries in a flat target.
pub const SEP: usize = 4;
pub const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<sos>", "<eos>", "<sep>"];

const PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')', '"', '\''];

/// Lowercases and splits on whitespace, with each of `.,;:!?()"'` as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_whitespace() || PUNCT.contains(&ch) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds from a full id-ordered token list whose first entries are [`SPECIALS`].
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::InvalidInput(format!(
                "vocabulary must start with the special tokens {SPECIALS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keeps the `max_size - 5` most frequent tokens of the posts and
    /// summaries, ties broken lexicographically.
    pub fn build(instances: &[CorpusInstance], max_size: usize) -> Result<Self> {
        if max_size <= SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocabulary max size must exceed {}, got {max_size}",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for inst in instances {
            for text in inst.posts.iter().chain(&inst.summaries) {
                for tok in tokenize(text) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidInput("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// One token per line; line `i` (0-based) holds id `i`, specials first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Renders ids as space-joined tokens, stopping at the first EOS and
/// dropping PAD. UNK renders as `[UNK]`.
pub fn decode_ids(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut words = Vec::new();
    for &id in ids {
        match id {
            EOS => break,
            PAD | SOS => {}
            UNK => words.push("[UNK]"),
            _ => words.push(
                vocab
                    .token(id)
                    .ok_or_else(|| Error::InvalidInput(format!("token id {id} outside vocabulary of {}", vocab.len())))?,
            ),
        }
    }
    Ok(words.join(" "))
}

/// Truncation limits for encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    /// Posts kept per channel.
    pub max_posts: usize,
    /// Tokens kept per post.
    pub post_len: usize,
    /// Tokens kept per summary, before EOS.
    pub summary_len: usize,
    /// Thread decoder steps.
    pub max_threads: usize,
    /// Tokens of the flattened source, separators included.
    pub flat_len: usize,
}

impl Limits {
    pub const POST_LEN: usize = 20;
    pub const SUMMARY_LEN: usize = 15;
    pub const FLAT_LEN: usize = 300;

    pub fn for_preset(preset: &InterleavePreset) -> Self {
        Self {
            max_posts: preset.max_posts(),
            post_len: Self::POST_LEN,
            summary_len: Self::SUMMARY_LEN,
            max_threads: preset.max_threads(),
            flat_len: Self::FLAT_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_posts == 0 || self.post_len == 0 || self.summary_len == 0 || self.max_threads == 0 || self.flat_len == 0
        {
            return Err(Error::Config(format!("all limits must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Numericalized instance. Rows of `post_ids` are real posts, right-padded to
/// `post_len`; rows of `summary_ids` end with EOS and are padded to
/// `summary_len + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub post_ids: Vec<Vec<usize>>,
    /// False for posts with no tokens.
    pub post_mask: Vec<bool>,
    /// False exactly at PAD positions.
    pub word_mask: Vec<Vec<bool>>,
    pub summary_ids: Vec<Vec<usize>>,
    pub stop_labels: Vec<f64>,
    /// Posts joined by SEP, at most `flat_len` ids.
    pub flat_ids: Vec<usize>,
    /// Summaries joined by SEP and closed by EOS.
    pub flat_target: Vec<usize>,
}

impl EncodedInstance {
    pub fn real_tokens(&self) -> usize {
        self.word_mask.iter().flatten().filter(|&&m| m).count()
    }

    /// Summary tokens of thread `k` up to and including EOS.
    pub fn summary_target(&self, k: usize) -> &[usize] {
        let row = &self.summary_ids[k];
        let end = row.iter().position(|&t| t == EOS).map_or(row.len(), |p| p + 1);
        &row[..end]
    }
}

pub fn encode_instance(inst: &CorpusInstance, vocab: &Vocab, limits: &Limits) -> Result<EncodedInstance> {
    limits.validate()?;
    if inst.posts.is_empty() {
        return Err(Error::InvalidInput("instance has no posts".into()));
    }
    if inst.summaries.is_empty() {
        return Err(Error::InvalidInput("instance has no summaries".into()));
    }
    if inst.posts.len() > limits.max_posts {
        log::debug!("truncating {} posts to {}", inst.posts.len(), limits.max_posts);
    }
    let mut post_ids = Vec::new();
    let mut post_mask = Vec::new();
    let mut word_mask = Vec::new();
    let mut flat_ids = Vec::new();
    for (i, post) in inst.posts.iter().take(limits.max_posts).enumerate() {
        let mut ids = vocab.encode_text(post);
        ids.truncate(limits.post_len);
        if i > 0 {
            flat_ids.push(SEP);
        }
        flat_ids.extend_from_slice(&ids);
        let real = ids.len();
        ids.resize(limits.post_len, PAD);
        post_mask.push(real > 0);
        word_mask.push((0..limits.post_len).map(|j| j < real).collect());
        post_ids.push(ids);
    }
    if !post_mask.iter().any(|&m| m) {
        return Err(Error::InvalidInput("every post is empty".into()));
    }
    flat_ids.truncate(limits.flat_len);

    let m = inst.summaries.len().min(limits.max_threads);
    let mut summary_ids = Vec::with_capacity(m);
    let mut flat_target = Vec::new();
    for (k, s) in inst.summaries.iter().take(m).enumerate() {
        let mut ids = vocab.encode_text(s);
        ids.truncate(limits.summary_len);
        if k > 0 {
            flat_target.push(SEP);
        }
        flat_target.extend_from_slice(&ids);
        ids.push(EOS);
        ids.resize(limits.summary_len + 1, PAD);
        summary_ids.push(ids);
    }
    flat_target.push(EOS);
    let mut stop_labels = vec![0.0; m];
    stop_labels[m - 1] = 1.0;
    Ok(EncodedInstance {
        post_ids,
        post_mask,
        word_mask,
        summary_ids,
        stop_labels,
        flat_ids,
        flat_target,
    })
}

/// A random instance with `limits.max_posts` posts of 1..=`post_len` tokens
/// and `threads` summaries of 1..=`summary_len` tokens, ids drawn from the
/// non-special range of a vocabulary of `vocab_size`.
pub fn random_encoded<R: rand::Rng + ?Sized>(
    rng: &mut R,
    vocab_size: usize,
    limits: &Limits,
    threads: usize,
) -> EncodedInstance {
    assert!(vocab_size > SPECIALS.len() && threads >= 1);
    let word = |rng: &mut R| rng.random_range(SPECIALS.len()..vocab_size);
    let mut post_ids = Vec::new();
    let mut word_mask = Vec::new();
    let mut flat_ids = Vec::new();
    for i in 0..limits.max_posts {
        let len = rng.random_range(1..=limits.post_len);
        let mut ids: Vec<usize> = (0..len).map(|_| word(rng)).collect();
        if i > 0 {
            flat_ids.push(SEP);
        }
        flat_ids.extend_from_slice(&ids);
        ids.resize(limits.post_len, PAD);
        word_mask.push((0..limits.post_len).map(|j| j < len).collect());
        post_ids.push(ids);
    }
    flat_ids.truncate(limits.flat_len);
    let m = threads.min(limits.max_threads);
    let mut summary_ids = Vec::new();
    let mut flat_target = Vec::new();
    for k in 0..m {
        let len = rng.random_range(1..=limits.summary_len);
        let mut ids: Vec<usize> = (0..len).map(|_| word(rng)).collect();
        if k > 0 {
            flat_target.push(SEP);
        }
        flat_target.extend_from_slice(&ids);
        ids.push(EOS);
        ids.resize(limits.summary_len + 1, PAD);
        summary_ids.push(ids);
    }
    flat_target.push(EOS);
    let mut stop_labels = vec![0.0; m];
    stop_labels[m - 1] = 1.0;
    EncodedInstance {
        post_mask: vec![true; post_ids.len()],
        post_ids,
        word_mask,
        summary_ids,
        stop_labels,
        flat_ids,
        flat_target,
    }
}
