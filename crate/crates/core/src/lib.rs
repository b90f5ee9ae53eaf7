//! Summarization of interleaved texts with a hierarchical encoder-decoder.
//!
//! The crate is organized bottom-up:
//!
//! * [`numcore`]: a small reverse-mode autodiff engine with LSTM and
//!   feed-forward primitives, Adam, finite-difference gradient checking and
//!   checkpoint files.
//! * [`corpus`]: synthesis of interleaved post/summary corpora from any
//!   document-summary collection, with Easy/Medium/Hard presets and
//!   density-ordered summaries.
//! * [`textproc`]: tokenization, vocabulary and numericalization.
//! * [`model`]: the hierarchical encoder, post/phrase/word attention,
//!   thread and word decoders, and the flat ablation variants.
//! * [`train`]: the training objective, the teacher-forced training loop,
//!   and ROUGE evaluation.

pub mod corpus;
pub mod error;
pub mod model;
pub mod numcore;
pub mod textproc;
pub mod train;

pub use error::{Error, Result};
