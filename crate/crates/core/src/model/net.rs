//! Parameter registration. Only the networks a variant uses are registered.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::numcore::graph::{Activation, Graph, Var};
use crate::numcore::layers::{FeedForward, LstmParams, INIT_STD};
use crate::numcore::tensor::{ParamId, ParamStore, Tensor};

/// `score_i = v . tanh(W_item x_i + W_state h + b) + c`
#[derive(Clone, Debug)]
pub struct AttnNet {
    pub w_state: ParamId,
    pub w_item: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
    pub c: ParamId,
}

impl AttnNet {
    fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        item_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut add = |name: &str, shape: &[usize], rng: &mut R| {
            store.add(format!("{prefix}.{name}"), Tensor::normal(shape, INIT_STD, rng))
        };
        Ok(Self {
            w_state: add("w_state", &[d, d], rng)?,
            w_item: add("w_item", &[d, item_dim], rng)?,
            bias: add("b", &[d], rng)?,
            v: add("v", &[d], rng)?,
            c: add("c", &[1], rng)?,
        })
    }

    /// `X W_item^T` for all items at once, `[N, d]`.
    pub fn project(&self, g: &mut Graph<'_>, items: Var) -> Result<Var> {
        let w = g.param(self.w_item);
        g.matmul_t(items, w)
    }

    /// One unnormalized score per item for query `h`.
    pub fn scores(&self, g: &mut Graph<'_>, projected: Var, h: Var) -> Result<Var> {
        let ws = g.param(self.w_state);
        let b = g.param(self.bias);
        let q = g.linear(&[(ws, h)], Some(b))?;
        let pre = g.add_rows(projected, q)?;
        let t = g.tanh(pre);
        let v = g.param(self.v);
        let c = g.param(self.c);
        g.row_dot(t, v, Some(c))
    }

    pub fn scalar_count(&self, store: &ParamStore) -> usize {
        [self.w_state, self.w_item, self.bias, self.v, self.c]
            .iter()
            .map(|&id| store.get(id).numel())
            .sum()
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    /// Word-to-word BiLSTM per post, post-to-post BiLSTM over pooled posts.
    Hier {
        w2w_fwd: LstmParams,
        w2w_bwd: LstmParams,
        p2p_fwd: LstmParams,
        p2p_bwd: LstmParams,
    },
    /// One BiLSTM over the flattened source.
    Flat { fwd: LstmParams, bwd: LstmParams },
}

/// Thread-level decoder pieces.
#[derive(Clone, Debug)]
pub struct ThreadNet {
    pub t2t: LstmParams,
    /// `d -> 1` stop logit.
    pub stop: FeedForward,
    /// `[h; last_word; sum_bw] (4d) -> d -> d`.
    pub rep: FeedForward,
    pub w2w_init_h: FeedForward,
    pub w2w_init_c: FeedForward,
}

#[derive(Clone, Debug)]
pub struct Net {
    pub embedding: ParamId,
    pub dec_embedding: Option<ParamId>,
    pub encoder: Encoder,
    /// Initial decoder state from the pooled channel vector: the thread
    /// decoder for hierarchical decoders, the word decoder otherwise.
    pub init_h: FeedForward,
    pub init_c: FeedForward,
    pub gamma: Option<AttnNet>,
    pub beta: Option<AttnNet>,
    pub alpha: AttnNet,
    pub thread: Option<ThreadNet>,
    pub w2w: LstmParams,
    /// `[h; ctx] (3d) -> vocab`.
    pub out: FeedForward,
}

impl Net {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let v = cfg.vocab_size;
        let embedding = store.add("embedding", Tensor::normal(&[v, d], INIT_STD, rng))?;
        let dec_embedding = if cfg.share_embeddings {
            None
        } else {
            Some(store.add("dec_embedding", Tensor::normal(&[v, d], INIT_STD, rng))?)
        };
        let encoder = if cfg.variant.hierarchical_encoder() {
            Encoder::Hier {
                w2w_fwd: LstmParams::register(store, "enc_w2w_fwd", d, d, rng)?,
                w2w_bwd: LstmParams::register(store, "enc_w2w_bwd", d, d, rng)?,
                p2p_fwd: LstmParams::register(store, "enc_p2p_fwd", 2 * d, d, rng)?,
                p2p_bwd: LstmParams::register(store, "enc_p2p_bwd", 2 * d, d, rng)?,
            }
        } else {
            Encoder::Flat {
                fwd: LstmParams::register(store, "enc_flat_fwd", d, d, rng)?,
                bwd: LstmParams::register(store, "enc_flat_bwd", d, d, rng)?,
            }
        };
        let init_prefix = if cfg.variant.hierarchical_decoder() { "t2t_init" } else { "dec_init" };
        let init_h = FeedForward::register(store, &format!("{init_prefix}_h"), &[2 * d, d], &[Activation::Tanh], rng)?;
        let init_c = FeedForward::register(store, &format!("{init_prefix}_c"), &[2 * d, d], &[Activation::Tanh], rng)?;
        let gamma = if cfg.gamma_enabled {
            Some(AttnNet::register(store, "attn_gamma", d, 2 * d, rng)?)
        } else {
            None
        };
        let beta = if cfg.beta_enabled {
            Some(AttnNet::register(store, "attn_beta", d, 2 * d, rng)?)
        } else {
            None
        };
        let alpha = AttnNet::register(store, "attn_alpha", d, 2 * d, rng)?;
        let thread = if cfg.variant.hierarchical_decoder() {
            Some(ThreadNet {
                t2t: LstmParams::register(store, "t2t", 3 * d, d, rng)?,
                stop: FeedForward::register(store, "stop", &[d, 1], &[Activation::Identity], rng)?,
                rep: FeedForward::register(
                    store,
                    "thread_rep",
                    &[4 * d, d, d],
                    &[Activation::Tanh, Activation::Tanh],
                    rng,
                )?,
                w2w_init_h: FeedForward::register(store, "w2w_init_h", &[d, d], &[Activation::Identity], rng)?,
                w2w_init_c: FeedForward::register(store, "w2w_init_c", &[d, d], &[Activation::Identity], rng)?,
            })
        } else {
            None
        };
        let w2w = LstmParams::register(store, "w2w", 3 * d, d, rng)?;
        let out = FeedForward::register(store, "out", &[3 * d, v], &[Activation::Identity], rng)?;
        Ok(Self {
            embedding,
            dec_embedding,
            encoder,
            init_h,
            init_c,
            gamma,
            beta,
            alpha,
            thread,
            w2w,
            out,
        })
    }

    pub fn decoder_embedding(&self) -> ParamId {
        self.dec_embedding.unwrap_or(self.embedding)
    }
}

/// Checks that `loaded` has exactly the names and shapes of `fresh`, in order.
pub fn check_layout(fresh: &ParamStore, loaded: &ParamStore) -> Result<()> {
    if fresh.len() != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            fresh.len(),
            loaded.len()
        )));
    }
    for ((_, a, ta), (_, b, tb)) in fresh.iter().zip(loaded.iter()) {
        if a != b || ta.shape != tb.shape {
            return Err(Error::Checkpoint(format!(
                "parameter mismatch: expected {a} {:?}, found {b} {:?}",
                ta.shape, tb.shape
            )));
        }
    }
    Ok(())
}

/// Scalars in the networks a seq2seq model lacks relative to hier2hier
/// (same `d` and vocabulary): the post encoder, post and phrase attention,
/// and the thread decoder with its stop, representation and word-init nets.
pub fn hierarchy_extra_scalars(d: usize) -> usize {
    let lstm = |input: usize| 4 * d * input + 4 * d * d + 4 * d;
    let attn = d * d + d * 2 * d + d + d + 1;
    let p2p = 2 * lstm(2 * d);
    let t2t = lstm(3 * d);
    let stop = d + 1;
    let rep = (4 * d * d + d) + (d * d + d);
    let w2w_init = 2 * (d * d + d);
    p2p + 2 * attn + t2t + stop + rep + w2w_init
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Variant;
    use crate::textproc::Limits;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_for(variant: Variant, d: usize) -> ParamStore {
        let cfg = ModelConfig::new(variant, d, 30, Limits::for_preset(&crate::corpus::InterleavePreset::MEDIUM));
        let mut store = ParamStore::new();
        Net::register(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store
    }

    #[test]
    fn seq2seq_is_smaller_by_the_hierarchy_networks() {
        for d in [4, 8, 13] {
            let full = store_for(Variant::Hier2hier, d).scalar_count();
            let flat = store_for(Variant::Seq2seq, d).scalar_count();
            assert_eq!(full - flat, hierarchy_extra_scalars(d));
        }
    }

    #[test]
    fn ablations_drop_their_networks() {
        let cfg = ModelConfig {
            gamma_enabled: false,
            beta_enabled: false,
            ..ModelConfig::new(Variant::Hier2hier, 4, 30, Limits::for_preset(&crate::corpus::InterleavePreset::EASY))
        };
        let mut store = ParamStore::new();
        Net::register(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(store.id("attn_gamma.v").is_none());
        assert!(store.id("attn_beta.v").is_none());
        assert!(store.id("attn_alpha.v").is_some());
    }

    #[test]
    fn contradictory_flags_are_rejected() {
        let limits = Limits::for_preset(&crate::corpus::InterleavePreset::EASY);
        let mut cfg = ModelConfig::new(Variant::Seq2seq, 4, 30, limits);
        cfg.gamma_enabled = true;
        let mut store = ParamStore::new();
        assert!(matches!(
            Net::register(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }
}
