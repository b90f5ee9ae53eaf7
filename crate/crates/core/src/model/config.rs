use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::Limits;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Flat encoder, flat decoder, word attention only.
    Seq2seq,
    /// Flat encoder, hierarchical decoder.
    Seq2hier,
    /// Hierarchical encoder, flat decoder with a static phrase attention.
    Hier2seq,
    /// The full model.
    Hier2hier,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Seq2seq, Variant::Seq2hier, Variant::Hier2seq, Variant::Hier2hier];

    pub fn hierarchical_encoder(self) -> bool {
        matches!(self, Variant::Hier2seq | Variant::Hier2hier)
    }

    pub fn hierarchical_decoder(self) -> bool {
        matches!(self, Variant::Seq2hier | Variant::Hier2hier)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Seq2seq => "seq2seq",
            Variant::Seq2hier => "seq2hier",
            Variant::Hier2seq => "hier2seq",
            Variant::Hier2hier => "hier2hier",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// Independent sigmoid per post.
    #[default]
    Sigmoid,
    /// Softmax across posts.
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and LSTM width; bidirectional states are `2d`.
    pub d: usize,
    pub vocab_size: usize,
    pub limits: Limits,
    pub variant: Variant,
    pub gamma_enabled: bool,
    pub beta_enabled: bool,
    pub gamma_mode: GammaMode,
    /// Dropout on the thread representation during training.
    pub dropout_rate: f64,
    /// Weight of the stop loss.
    pub lambda: f64,
    /// Encoder and decoder use one embedding table.
    pub share_embeddings: bool,
}

impl ModelConfig {
    pub const DEFAULT_DIM: usize = 100;
    pub const DEFAULT_DROPOUT: f64 = 0.1;
    pub const DEFAULT_LAMBDA: f64 = 1.0;

    /// Defaults for `variant`: post and phrase attention on except for seq2seq.
    pub fn new(variant: Variant, d: usize, vocab_size: usize, limits: Limits) -> Self {
        let attn = variant != Variant::Seq2seq;
        Self {
            d,
            vocab_size,
            limits,
            variant,
            gamma_enabled: attn,
            beta_enabled: attn,
            gamma_mode: GammaMode::Sigmoid,
            dropout_rate: Self::DEFAULT_DROPOUT,
            lambda: Self::DEFAULT_LAMBDA,
            share_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.vocab_size <= crate::textproc::SPECIALS.len() {
            return Err(Error::Config(format!("vocabulary of {} holds only special tokens", self.vocab_size)));
        }
        self.limits.validate()?;
        if self.variant == Variant::Seq2seq && (self.gamma_enabled || self.beta_enabled) {
            return Err(Error::Config(
                "seq2seq has no post or phrase attention; disable gamma and beta".into(),
            ));
        }
        if self.gamma_mode == GammaMode::Softmax && !self.gamma_enabled {
            return Err(Error::Config("softmax gamma requires gamma to be enabled".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        Ok(())
    }

    /// Word steps allowed for a flat decoder: every thread's words plus separators.
    pub fn flat_max_words(&self) -> usize {
        self.limits.max_threads * (self.limits.summary_len + 1)
    }
}
