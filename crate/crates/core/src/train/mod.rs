//! Training objective, training loop, and ROUGE evaluation.

pub mod eval;
pub mod loss;
pub mod rouge;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Model;
use crate::numcore::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::numcore::graph::{BackwardFault, Graph};
use crate::textproc::EncodedInstance;

pub use eval::{diagnostics, evaluate_corpus, generate_summaries, Diagnostics, EvalOptions, EvalReport, MetricMode, Pairing};
pub use loss::{compute_loss, LossBreakdown};
pub use rouge::{lcs_len, rouge_l, rouge_n, RougeScore, RougeTriple};
pub use trainer::{load_trained, train, train_step, train_with, LogRow, Schedule, TrainArtifacts, TrainReport};

/// Finite-difference check of the full training loss of `inst`, dropout
/// included (its mask is re-drawn from the same seed on every evaluation).
pub fn gradcheck_model(model: &mut Model, inst: &EncodedInstance, opts: GradcheckOptions) -> Result<GradcheckReport> {
    gradcheck_model_with_fault(model, inst, opts, None)
}

/// [`gradcheck_model`] with a corrupted backward rule, to show the check
/// notices broken derivatives at full-model scale.
pub fn gradcheck_model_with_fault(
    model: &mut Model,
    inst: &EncodedInstance,
    opts: GradcheckOptions,
    fault: Option<BackwardFault>,
) -> Result<GradcheckReport> {
    let Model { config, params, net } = model;
    let fwd = crate::model::Forward { cfg: config, net };
    gradcheck(params, opts, |p, want| {
        let mut g = Graph::new(p);
        if let Some(f) = fault {
            g.inject_fault(f);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tf = fwd.teacher_forced(&mut g, inst, Some(&mut rng), false)?;
        let (loss, parts) = compute_loss(&mut g, &tf, fwd.cfg.lambda)?;
        let grads = if want { Some(g.backward(loss)?) } else { None };
        Ok((parts.total, grads))
    })
}
