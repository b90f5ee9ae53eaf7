//! Hierarchical encoder-decoder with post, phrase and word attention, and
//! its flat ablations.
//!
//! Encoder: a word-level BiLSTM per post gives word states `W`; their mean
//! per post feeds a post-level BiLSTM giving post states `P`; the mean of `P`
//! is the channel vector `c'`.
//!
//! Thread decoder step `k` from state `h`:
//! `gamma = sigma(attn_gamma(h, P))`, `beta = sigma(attn_beta(h, W + P))`,
//! `beta_hat = beta * gamma`, then the thread LSTM reads
//! `[sum beta_hat W; last word state]`, the stop head reads its output, and
//! `s_k = dropout(r([h_k; last word state; sum beta_hat W]))` seeds the word decoder.
//!
//! Word decoder step: `alpha = softmax(attn_alpha(h, W + P))`,
//! `alpha_hat = beta_hat * alpha` (not renormalized), context
//! `sum alpha_hat W`, LSTM input `[embedding; context]`, logits from
//! `[h; context]`.

pub mod config;
pub mod forward;
pub mod net;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::numcore::graph::Graph;
use crate::numcore::tensor::ParamStore;
use crate::textproc::{EncodedInstance, Vocab};

pub use config::{GammaMode, ModelConfig, Variant};
pub use forward::{argmax, Channel, Forward, Generation, GeneratedThread, TeacherForced, ThreadAttention, TokenPos};
pub use net::{hierarchy_extra_scalars, Net};

/// Parameters plus the handles that address them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub net: Net,
}

impl Model {
    /// Fresh parameters drawn from ChaCha8 seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Net::register(&mut params, &config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { config, params, net })
    }

    /// Adopts `params`, which must match the layout `config` produces.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(config, 0)?;
        net::check_layout(&fresh.params, &params)?;
        Ok(Self { params, ..fresh })
    }

    pub fn forward(&self) -> Forward<'_> {
        Forward {
            cfg: &self.config,
            net: &self.net,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Greedy decoding under the configured limits.
    pub fn generate(&self, inst: &EncodedInstance) -> Result<Generation> {
        let mut g = Graph::new(&self.params);
        let limits = &self.config.limits;
        let gen = self
            .forward()
            .generate(&mut g, inst, limits.max_threads, limits.summary_len)?;
        if gen.forced_stop {
            log::warn!("thread cap of {} reached before the stop head fired", limits.max_threads);
        }
        Ok(gen)
    }
}

/// Lays compact per-token values onto the `posts x post_len` grid; PAD and
/// separator positions hold 0.
pub fn to_grid(values: &[f64], tokens: &[TokenPos], posts: usize, post_len: usize) -> Vec<Vec<f64>> {
    let mut grid = vec![vec![0.0; post_len]; posts];
    for (v, t) in values.iter().zip(tokens) {
        if let Some(w) = t.word {
            if t.post < posts && w < post_len {
                grid[t.post][w] = *v;
            }
        }
    }
    grid
}

#[derive(Clone, Debug, Serialize)]
pub struct AttendedToken {
    pub post: usize,
    pub word: Option<usize>,
    pub token: String,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThreadTrace {
    pub thread: usize,
    pub summary: String,
    pub p_stop: Option<f64>,
    /// Post attention per instance post (0 for empty posts); for flat
    /// encoders, per source token.
    pub gamma: Option<Vec<f64>>,
    pub top_posts: Vec<usize>,
    pub top_beta_hat: Vec<AttendedToken>,
    pub tokens: Vec<String>,
}

fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

impl Generation {
    /// Generated summaries as text.
    pub fn summaries(&self, vocab: &Vocab) -> Result<Vec<String>> {
        self.threads
            .iter()
            .map(|t| crate::textproc::decode_ids(&t.ids, vocab))
            .collect()
    }

    /// Diagnostic view: post attention with its top-2 posts, the top-10
    /// phrase attention positions, and the generated tokens per thread.
    pub fn trace(&self, vocab: &Vocab, posts: usize) -> Result<Vec<ThreadTrace>> {
        let mut out = Vec::new();
        for (k, t) in self.threads.iter().enumerate() {
            let gamma = t.attention.gamma.as_ref().map(|gm| {
                if self.item_posts.is_empty() {
                    gm.clone()
                } else {
                    let mut by_post = vec![0.0; posts];
                    for (v, &p) in gm.iter().zip(&self.item_posts) {
                        by_post[p] = *v;
                    }
                    by_post
                }
            });
            let top_posts = match (&gamma, self.item_posts.is_empty()) {
                (Some(gm), false) => top_k(gm, 2),
                (Some(gm), true) => {
                    let mut seen = Vec::new();
                    for i in top_k(gm, gm.len()) {
                        let p = self.tokens[i].post;
                        if !seen.contains(&p) {
                            seen.push(p);
                        }
                        if seen.len() == 2 {
                            break;
                        }
                    }
                    seen
                }
                (None, _) => Vec::new(),
            };
            let top_beta_hat = t
                .attention
                .beta_hat
                .as_ref()
                .map(|bh| {
                    top_k(bh, 10)
                        .into_iter()
                        .map(|i| AttendedToken {
                            post: self.tokens[i].post,
                            word: self.tokens[i].word,
                            token: vocab.token(self.tokens[i].id).unwrap_or("[UNK]").to_string(),
                            weight: bh[i],
                        })
                        .collect()
                })
                .unwrap_or_default();
            out.push(ThreadTrace {
                thread: k,
                summary: crate::textproc::decode_ids(&t.ids, vocab)?,
                p_stop: t.attention.p_stop,
                gamma,
                top_posts,
                top_beta_hat,
                tokens: t
                    .ids
                    .iter()
                    .map(|&id| vocab.token(id).unwrap_or("[UNK]").to_string())
                    .collect(),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
