use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::TeacherForced;
use crate::numcore::graph::{Graph, Var};

/// Loss of one instance: summed word cross-entropy plus `lambda` times
/// the summed stop binary cross-entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Mean cross-entropy per target token.
    pub nll_word: f64,
    pub nll_sum: f64,
    pub stop_bce: f64,
    pub total: f64,
    pub token_count: usize,
}

/// Builds the differentiable total on `g` and reports its parts.
pub fn compute_loss(g: &mut Graph<'_>, tf: &TeacherForced, lambda: f64) -> Result<(Var, LossBreakdown)> {
    let nll = g.sum_all(&tf.word_losses);
    let stop = g.sum_all(&tf.stop_losses);
    let total = if lambda == 0.0 || tf.stop_losses.is_empty() {
        nll
    } else {
        let weighted = g.scale(stop, lambda);
        g.add(nll, weighted)?
    };
    let token_count = tf.word_losses.len();
    let parts = LossBreakdown {
        nll_word: g.scalar(nll) / token_count.max(1) as f64,
        nll_sum: g.scalar(nll),
        stop_bce: g.scalar(stop),
        total: g.scalar(total),
        token_count,
    };
    if !parts.total.is_finite() {
        let bad = tf
            .word_losses
            .iter()
            .position(|&v| !g.scalar(v).is_finite())
            .map(|i| format!("word step {i}"))
            .or_else(|| {
                tf.stop_losses
                    .iter()
                    .position(|&v| !g.scalar(v).is_finite())
                    .map(|k| format!("stop step {k}"))
            })
            .unwrap_or_else(|| "loss total".into());
        return Err(Error::NonFinite(bad));
    }
    Ok((total, parts))
}
