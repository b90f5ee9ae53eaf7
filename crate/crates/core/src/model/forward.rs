//! Encoder, attention and decoders on a [`Graph`].
//!
//! Source tokens are kept compact: only real (non-PAD) tokens are encoded,
//! stacked into a `[N, 2d]` matrix with a map from each token to its post.
//! PAD positions never enter the computation, so their attention is zero by
//! construction when the maps are laid back onto the padded grid.

use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::config::{GammaMode, ModelConfig};
use crate::model::net::{Encoder, Net};
use crate::numcore::graph::{sigmoid_value, Graph, Var};
use crate::numcore::layers::{bilstm_encode, dropout, lstm_step, mean_pool};
use crate::textproc::{EncodedInstance, EOS, SEP, SOS};

/// Where a compact source token sits in the instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TokenPos {
    /// Post index in the instance.
    pub post: usize,
    /// Word index within the post; `None` for separators of a flat source.
    pub word: Option<usize>,
    pub id: usize,
}

/// The encoded source on a graph.
pub struct Channel {
    /// `[N, 2d]` word representations of real tokens.
    pub words: Var,
    /// Items scored by post attention: post rows `[n, 2d]` for a hierarchical
    /// encoder, the word rows themselves for a flat one.
    pub gamma_items: Var,
    /// Post attention item of each token.
    pub token_item: Vec<usize>,
    /// `[N, 2d]` fused word and post representations.
    pub fused: Var,
    pub c_prime: Var,
    pub tokens: Vec<TokenPos>,
    /// Instance post index of each post attention item (hierarchical only).
    pub item_posts: Vec<usize>,
    /// Post rows before stacking (hierarchical only).
    pub post_rows: Vec<Var>,
}

impl Channel {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Attention of one thread step; vectors are over compact tokens, except
/// `gamma` which is over post attention items.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ThreadAttention {
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub beta_hat: Option<Vec<f64>>,
    pub p_stop: Option<f64>,
    pub words: Vec<WordAttention>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WordAttention {
    pub alpha: Vec<f64>,
    pub alpha_hat: Vec<f64>,
}

/// Per-step outputs of a teacher-forced pass.
pub struct TeacherForced {
    /// Cross-entropy of every target token.
    pub word_losses: Vec<Var>,
    /// Stop binary cross-entropy per thread step (hierarchical decoders).
    pub stop_losses: Vec<Var>,
    pub stop_probs: Vec<f64>,
    pub trace: Vec<ThreadAttention>,
}

/// Post and phrase attention for one query state.
pub(crate) struct PhraseAttention {
    pub gamma: Option<Var>,
    pub beta: Option<Var>,
    pub beta_hat: Option<Var>,
}

pub struct Projections {
    gamma: Option<Var>,
    beta: Option<Var>,
    alpha: Var,
}

pub struct Forward<'a> {
    pub cfg: &'a ModelConfig,
    pub net: &'a Net,
}

impl Forward<'_> {
    pub fn encode(&self, g: &mut Graph<'_>, inst: &EncodedInstance) -> Result<Channel> {
        if inst.post_ids.len() != inst.word_mask.len() || inst.post_ids.len() != inst.post_mask.len() {
            return Err(Error::dim("encode_channel", "post ids and masks differ in length"));
        }
        let emb = g.param(self.net.embedding);
        match &self.net.encoder {
            Encoder::Hier {
                w2w_fwd,
                w2w_bwd,
                p2p_fwd,
                p2p_bwd,
            } => {
                let mut word_rows = Vec::new();
                let mut tokens = Vec::new();
                let mut token_item = Vec::new();
                let mut pooled = Vec::new();
                let mut item_posts = Vec::new();
                for (i, (ids, mask)) in inst.post_ids.iter().zip(&inst.word_mask).enumerate() {
                    let real: Vec<usize> = (0..ids.len()).filter(|&j| mask[j]).collect();
                    if real.is_empty() {
                        continue;
                    }
                    let xs = real.iter().map(|&j| g.row(emb, ids[j])).collect::<Result<Vec<_>>>()?;
                    let hs = bilstm_encode(g, w2w_fwd, w2w_bwd, &xs, &vec![true; xs.len()])?;
                    pooled.push(g.mean_of(&hs)?);
                    for (&j, h) in real.iter().zip(hs) {
                        word_rows.push(h);
                        token_item.push(item_posts.len());
                        tokens.push(TokenPos {
                            post: i,
                            word: Some(j),
                            id: ids[j],
                        });
                    }
                    item_posts.push(i);
                }
                if word_rows.is_empty() {
                    return Err(Error::InvalidInput("channel has no real tokens".into()));
                }
                let post_rows = bilstm_encode(g, p2p_fwd, p2p_bwd, &pooled, &vec![true; pooled.len()])?;
                let c_prime = g.mean_of(&post_rows)?;
                let words = g.stack(&word_rows)?;
                let posts = g.stack(&post_rows)?;
                let spread = g.gather(posts, &token_item)?;
                let fused = g.add(words, spread)?;
                Ok(Channel {
                    words,
                    gamma_items: posts,
                    token_item,
                    fused,
                    c_prime,
                    tokens,
                    item_posts,
                    post_rows,
                })
            }
            Encoder::Flat { fwd, bwd } => {
                if inst.flat_ids.is_empty() {
                    return Err(Error::InvalidInput("channel has no real tokens".into()));
                }
                let mut tokens = Vec::with_capacity(inst.flat_ids.len());
                let (mut post, mut word) = (0, 0);
                for &id in &inst.flat_ids {
                    if id == SEP {
                        tokens.push(TokenPos { post, word: None, id });
                        post += 1;
                        word = 0;
                    } else {
                        tokens.push(TokenPos {
                            post,
                            word: Some(word),
                            id,
                        });
                        word += 1;
                    }
                }
                // empty posts leave no ids between separators; map onto real post indices
                let real_posts: Vec<usize> = (0..inst.post_mask.len()).filter(|&i| inst.post_mask[i]).collect();
                for t in &mut tokens {
                    t.post = real_posts.get(t.post).copied().unwrap_or(t.post);
                }
                let xs = inst.flat_ids.iter().map(|&id| g.row(emb, id)).collect::<Result<Vec<_>>>()?;
                let hs = bilstm_encode(g, fwd, bwd, &xs, &vec![true; xs.len()])?;
                let c_prime = mean_pool(g, &hs, &vec![true; hs.len()])?;
                let words = g.stack(&hs)?;
                Ok(Channel {
                    words,
                    gamma_items: words,
                    token_item: (0..hs.len()).collect(),
                    fused: words,
                    c_prime,
                    tokens,
                    item_posts: Vec::new(),
                    post_rows: Vec::new(),
                })
            }
        }
    }

    pub fn project(&self, g: &mut Graph<'_>, ch: &Channel) -> Result<Projections> {
        let gamma = match &self.net.gamma {
            Some(net) => Some(net.project(g, ch.gamma_items)?),
            None => None,
        };
        let beta = match &self.net.beta {
            Some(net) => Some(net.project(g, ch.fused)?),
            None => None,
        };
        Ok(Projections {
            gamma,
            beta,
            alpha: self.net.alpha.project(g, ch.fused)?,
        })
    }

    pub(crate) fn phrase_attention(&self, g: &mut Graph<'_>, ch: &Channel, proj: &Projections, h: Var) -> Result<PhraseAttention> {
        let gamma = match (&self.net.gamma, proj.gamma) {
            (Some(net), Some(p)) => {
                let e = net.scores(g, p, h)?;
                Some(match self.cfg.gamma_mode {
                    GammaMode::Sigmoid => g.sigmoid(e),
                    GammaMode::Softmax => g.softmax(e)?,
                })
            }
            _ => None,
        };
        let beta = match (&self.net.beta, proj.beta) {
            (Some(net), Some(p)) => {
                let e = net.scores(g, p, h)?;
                Some(g.sigmoid(e))
            }
            _ => None,
        };
        let beta_hat = match (gamma, beta) {
            (None, None) => None,
            (None, Some(b)) => Some(b),
            (Some(gm), b) => {
                let spread = g.gather(gm, &ch.token_item)?;
                Some(match b {
                    Some(b) => g.mul(b, spread)?,
                    None => spread,
                })
            }
        };
        Ok(PhraseAttention { gamma, beta, beta_hat })
    }

    /// One word decoder step. Returns the new state, logits and attention.
    #[allow(clippy::too_many_arguments)]
    fn word_step(
        &self,
        g: &mut Graph<'_>,
        ch: &Channel,
        proj: &Projections,
        beta_hat: Option<Var>,
        h: Var,
        c: Var,
        prev: usize,
    ) -> Result<(Var, Var, Var, Var, Var)> {
        let e = self.net.alpha.scores(g, proj.alpha, h)?;
        let alpha = g.softmax(e)?;
        let alpha_hat = match beta_hat {
            Some(bh) => g.mul(bh, alpha)?,
            None => alpha,
        };
        let ctx = g.weighted_sum(alpha_hat, ch.words)?;
        let emb = g.param(self.net.decoder_embedding());
        let x_emb = g.row(emb, prev)?;
        let x = g.concat(&[x_emb, ctx])?;
        let (h, c) = lstm_step(g, &self.net.w2w, x, h, c)?;
        let hc = g.concat(&[h, ctx])?;
        let logits = self.net.out.forward(g, hc)?;
        Ok((h, c, logits, alpha, alpha_hat))
    }

    pub(crate) fn sum_weighted_words(&self, g: &mut Graph<'_>, ch: &Channel, beta_hat: Option<Var>) -> Result<Var> {
        let w = match beta_hat {
            Some(bh) => bh,
            None => g.ones(&[ch.len()]),
        };
        g.weighted_sum(w, ch.words)
    }

    fn record(g: &Graph<'_>, v: Option<Var>) -> Option<Vec<f64>> {
        v.map(|v| g.value(v).to_vec())
    }

    /// Teacher-forced pass over the ground-truth summaries. Dropout is
    /// applied to the thread representation when `rng` is given.
    pub fn teacher_forced(
        &self,
        g: &mut Graph<'_>,
        inst: &EncodedInstance,
        mut rng: Option<&mut dyn RngCore>,
        record: bool,
    ) -> Result<TeacherForced> {
        let ch = self.encode(g, inst)?;
        let proj = self.project(g, &ch)?;
        let d = self.cfg.d;
        let h0 = self.net.init_h.forward(g, ch.c_prime)?;
        let c0 = self.net.init_c.forward(g, ch.c_prime)?;
        let mut out = TeacherForced {
            word_losses: Vec::new(),
            stop_losses: Vec::new(),
            stop_probs: Vec::new(),
            trace: Vec::new(),
        };

        let Some(thread) = &self.net.thread else {
            let pa = self.phrase_attention(g, &ch, &proj, h0)?;
            let mut step = ThreadAttention {
                gamma: Self::record(g, pa.gamma).filter(|_| record),
                beta: Self::record(g, pa.beta).filter(|_| record),
                beta_hat: Self::record(g, pa.beta_hat).filter(|_| record),
                ..Default::default()
            };
            let (mut h, mut c, mut prev) = (h0, c0, SOS);
            for &target in &inst.flat_target {
                let (h1, c1, logits, a, ah) = self.word_step(g, &ch, &proj, pa.beta_hat, h, c, prev)?;
                out.word_losses.push(g.cross_entropy(logits, target)?);
                if record {
                    step.words.push(WordAttention {
                        alpha: g.value(a).to_vec(),
                        alpha_hat: g.value(ah).to_vec(),
                    });
                }
                (h, c, prev) = (h1, c1, target);
            }
            if record {
                out.trace.push(step);
            }
            return Ok(out);
        };

        let (mut th, mut tc) = (h0, c0);
        let mut last_word = g.zeros(&[d]);
        for k in 0..inst.summary_ids.len() {
            let pa = self.phrase_attention(g, &ch, &proj, th)?;
            let sum_bw = self.sum_weighted_words(g, &ch, pa.beta_hat)?;
            let x = g.concat(&[sum_bw, last_word])?;
            (th, tc) = lstm_step(g, &thread.t2t, x, th, tc)?;
            let stop_logit = thread.stop.forward(g, th)?;
            out.stop_losses.push(g.bce_with_logits(stop_logit, inst.stop_labels[k])?);
            let p_stop = sigmoid_value(g.scalar(stop_logit));
            out.stop_probs.push(p_stop);
            let rin = g.concat(&[th, last_word, sum_bw])?;
            let mut s = thread.rep.forward(g, rin)?;
            if let Some(r) = rng.as_deref_mut() {
                s = dropout(g, s, self.cfg.dropout_rate, r)?;
            }
            let mut h = thread.w2w_init_h.forward(g, s)?;
            let mut c = thread.w2w_init_c.forward(g, s)?;
            let mut step = ThreadAttention {
                p_stop: Some(p_stop),
                ..Default::default()
            };
            if record {
                step.gamma = Self::record(g, pa.gamma);
                step.beta = Self::record(g, pa.beta);
                step.beta_hat = Self::record(g, pa.beta_hat);
            }
            let mut prev = SOS;
            for &target in inst.summary_target(k) {
                let (h1, c1, logits, a, ah) = self.word_step(g, &ch, &proj, pa.beta_hat, h, c, prev)?;
                out.word_losses.push(g.cross_entropy(logits, target)?);
                if record {
                    step.words.push(WordAttention {
                        alpha: g.value(a).to_vec(),
                        alpha_hat: g.value(ah).to_vec(),
                    });
                }
                (h, c, prev) = (h1, c1, target);
            }
            last_word = h;
            if record {
                out.trace.push(step);
            }
        }
        Ok(out)
    }

    /// Greedy decoding. Words stop at EOS or `max_words`; threads stop when
    /// the stop probability exceeds 0.5 or at `max_threads`.
    pub fn generate(
        &self,
        g: &mut Graph<'_>,
        inst: &EncodedInstance,
        max_threads: usize,
        max_words: usize,
    ) -> Result<Generation> {
        let ch = self.encode(g, inst)?;
        let proj = self.project(g, &ch)?;
        let d = self.cfg.d;
        let h0 = self.net.init_h.forward(g, ch.c_prime)?;
        let c0 = self.net.init_c.forward(g, ch.c_prime)?;
        let mut gen = Generation {
            threads: Vec::new(),
            forced_stop: false,
            tokens: ch.tokens.clone(),
            item_posts: ch.item_posts.clone(),
        };

        let Some(thread) = &self.net.thread else {
            let pa = self.phrase_attention(g, &ch, &proj, h0)?;
            let mut att = ThreadAttention {
                gamma: Self::record(g, pa.gamma),
                beta: Self::record(g, pa.beta),
                beta_hat: Self::record(g, pa.beta_hat),
                ..Default::default()
            };
            let limit = max_threads * (max_words + 1);
            let (ids, _) = self.decode_words(g, &ch, &proj, pa.beta_hat, h0, c0, limit, &mut att)?;
            let mut current = Vec::new();
            let mut summaries = Vec::new();
            for id in ids {
                if id == SEP {
                    summaries.push(std::mem::take(&mut current));
                } else {
                    current.push(id);
                }
            }
            summaries.push(current);
            summaries.truncate(max_threads);
            for (k, ids) in summaries.into_iter().enumerate() {
                gen.threads.push(GeneratedThread {
                    ids,
                    attention: if k == 0 { att.clone() } else { ThreadAttention::default() },
                });
            }
            return Ok(gen);
        };

        let (mut th, mut tc) = (h0, c0);
        let mut last_word = g.zeros(&[d]);
        for k in 0..max_threads {
            let pa = self.phrase_attention(g, &ch, &proj, th)?;
            let sum_bw = self.sum_weighted_words(g, &ch, pa.beta_hat)?;
            let x = g.concat(&[sum_bw, last_word])?;
            (th, tc) = lstm_step(g, &thread.t2t, x, th, tc)?;
            let stop_logit = thread.stop.forward(g, th)?;
            let p_stop = sigmoid_value(g.scalar(stop_logit));
            let rin = g.concat(&[th, last_word, sum_bw])?;
            let s = thread.rep.forward(g, rin)?;
            let h = thread.w2w_init_h.forward(g, s)?;
            let c = thread.w2w_init_c.forward(g, s)?;
            let mut att = ThreadAttention {
                gamma: Self::record(g, pa.gamma),
                beta: Self::record(g, pa.beta),
                beta_hat: Self::record(g, pa.beta_hat),
                p_stop: Some(p_stop),
                words: Vec::new(),
            };
            let (ids, h_last) = self.decode_words(g, &ch, &proj, pa.beta_hat, h, c, max_words, &mut att)?;
            gen.threads.push(GeneratedThread { ids, attention: att });
            last_word = h_last;
            if p_stop > 0.5 {
                break;
            }
            if k + 1 == max_threads {
                gen.forced_stop = true;
            }
        }
        Ok(gen)
    }

    #[allow(clippy::too_many_arguments)]
    fn decode_words(
        &self,
        g: &mut Graph<'_>,
        ch: &Channel,
        proj: &Projections,
        beta_hat: Option<Var>,
        mut h: Var,
        mut c: Var,
        max_words: usize,
        att: &mut ThreadAttention,
    ) -> Result<(Vec<usize>, Var)> {
        let mut ids = Vec::new();
        let mut prev = SOS;
        for _ in 0..max_words {
            let (h1, c1, logits, a, ah) = self.word_step(g, ch, proj, beta_hat, h, c, prev)?;
            att.words.push(WordAttention {
                alpha: g.value(a).to_vec(),
                alpha_hat: g.value(ah).to_vec(),
            });
            (h, c) = (h1, c1);
            let next = argmax(g.value(logits));
            if next == EOS {
                break;
            }
            ids.push(next);
            prev = next;
        }
        Ok((ids, h))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct GeneratedThread {
    /// Generated ids, without EOS.
    pub ids: Vec<usize>,
    pub attention: ThreadAttention,
}

#[derive(Clone, Debug, Serialize)]
pub struct Generation {
    pub threads: Vec<GeneratedThread>,
    /// The thread cap ended decoding before the stop head did.
    pub forced_stop: bool,
    pub tokens: Vec<TokenPos>,
    pub item_posts: Vec<usize>,
}
