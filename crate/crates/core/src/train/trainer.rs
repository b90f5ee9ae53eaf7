//! Teacher-forced minibatch training with Adam.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numcore::adam::{AdamState, DEFAULT_LR};
use crate::numcore::checkpoint::{read_checkpoint, write_checkpoint};
use crate::numcore::graph::Graph;
use crate::numcore::tensor::Gradients;
use crate::textproc::{EncodedInstance, Vocab};
use crate::train::loss::compute_loss;

/// Steps the running average spans.
pub const RUNNING_WINDOW: usize = 100;
/// A step counts toward divergence when its loss exceeds this multiple of the first.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive diverging steps before training aborts.
pub const DIVERGENCE_PATIENCE: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Global gradient norm cap; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: DEFAULT_LR,
            epochs: 10,
            max_steps: None,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub running_avg_loss: f64,
    /// Mean cross-entropy per target token over the batch.
    pub nll: f64,
    /// Mean stop cross-entropy per instance over the batch.
    pub stop_bce: f64,
    /// Batch loss: summed instance totals over the batch size.
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub nll: f64,
    pub stop_bce: f64,
    pub grad_norm: f64,
}

/// One optimizer step on `batch`. Gradients are averaged over the batch and
/// clipped to `clip_norm`.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &[&EncodedInstance],
    dropout_rng: &mut ChaCha8Rng,
    clip_norm: f64,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(&model.params);
    let (mut total, mut nll_sum, mut tokens, mut stop) = (0.0, 0.0, 0usize, 0.0);
    for inst in batch {
        let mut g = Graph::new(&model.params);
        let rng = if model.config.dropout_rate > 0.0 {
            Some(&mut *dropout_rng as &mut dyn rand::RngCore)
        } else {
            None
        };
        let tf = model.forward().teacher_forced(&mut g, inst, rng, false)?;
        let (loss, parts) = compute_loss(&mut g, &tf, model.config.lambda)?;
        grads.add_assign(&g.backward(loss)?)?;
        total += parts.total;
        nll_sum += parts.nll_sum;
        tokens += parts.token_count;
        stop += parts.stop_bce;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let grad_norm = if clip_norm > 0.0 {
        grads.clip_global_norm(clip_norm)
    } else {
        grads.global_norm()
    };
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    adam.step(&mut model.params, &grads)?;
    Ok(StepStats {
        loss: total / n,
        nll: nll_sum / tokens.max(1) as f64,
        stop_bce: stop / n,
        grad_norm,
    })
}

/// Where training writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    /// Stored in checkpoint metadata so generation can decode.
    pub vocab: Vocab,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub steps: usize,
    pub epochs_completed: usize,
    pub adam: AdamState,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn final_running_avg(&self) -> Option<f64> {
        self.log.last().map(|r| r.running_avg_loss)
    }
}

pub fn checkpoint_meta(model: &Model, vocab: &Vocab, epoch: usize, step: usize) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "config": serde_json::to_value(&model.config)?,
        "vocab": serde_json::to_value(vocab)?,
        "epoch": epoch,
        "step": step,
    }))
}

/// Restores the model and vocabulary saved by [`train`].
pub fn load_trained(path: &Path) -> Result<(Model, Vocab)> {
    let ck = read_checkpoint(path)?;
    let bad = |what: &str| Error::Checkpoint(format!("{}: metadata has no usable {what}", path.display()));
    let config: ModelConfig = serde_json::from_value(ck.meta.get("config").cloned().ok_or_else(|| bad("config"))?)
        .map_err(|_| bad("config"))?;
    let vocab: Vocab =
        serde_json::from_value(ck.meta.get("vocab").cloned().ok_or_else(|| bad("vocab"))?).map_err(|_| bad("vocab"))?;
    if vocab.len() != config.vocab_size {
        return Err(bad("vocab (size differs from the model)"));
    }
    Ok((Model::from_params(config, ck.params)?, vocab))
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "step,running_avg_loss,nll,stop_bce").expect("write to memory");
    for r in rows {
        writeln!(buf, "{},{:.10},{:.10},{:.10}", r.step, r.running_avg_loss, r.nll, r.stop_bce).expect("write to memory");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Trains `model` on `data`. Every epoch visits the data in a fresh
/// permutation drawn from ChaCha8 seeded by `schedule.seed` (stream = epoch);
/// dropout masks come from a separate stream of the same seed. With
/// artifacts, writes `loss.csv` and a checkpoint per epoch (`epoch-N.ckpt`,
/// plus `model.ckpt` for the latest).
pub fn train(
    model: &mut Model,
    data: &[EncodedInstance],
    schedule: &Schedule,
    artifacts: Option<&TrainArtifacts>,
) -> Result<TrainReport> {
    train_with(model, data, schedule, artifacts, |_, _| Ok(false))
}

/// [`train`] with a hook called after every epoch with the model and the
/// log so far; returning `true` ends training early.
pub fn train_with<F>(
    model: &mut Model,
    data: &[EncodedInstance],
    schedule: &Schedule,
    artifacts: Option<&TrainArtifacts>,
    mut stop_after_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(&Model, &[LogRow]) -> Result<bool>,
{
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no training instances".into()));
    }
    if let Some(a) = artifacts {
        fs::create_dir_all(&a.dir).map_err(|e| Error::io(&a.dir, e))?;
    }
    let mut adam = AdamState::new(&model.params, schedule.lr);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    dropout_rng.set_stream(u64::MAX);
    let mut window: VecDeque<f64> = VecDeque::with_capacity(RUNNING_WINDOW);
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut initial: Option<f64> = None;
    let mut over = 0;
    let mut step = 0;
    let mut epochs_completed = 0;
    'epochs: for epoch in 0..schedule.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch_size) {
            if schedule.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&EncodedInstance> = chunk.iter().map(|&i| &data[i]).collect();
            let stats = train_step(model, &mut adam, &batch, &mut dropout_rng, schedule.clip_norm)?;
            step += 1;
            if window.len() == RUNNING_WINDOW {
                window.pop_front();
            }
            window.push_back(stats.loss);
            let running = window.iter().sum::<f64>() / window.len() as f64;
            log.push(LogRow {
                step,
                running_avg_loss: running,
                nll: stats.nll,
                stop_bce: stats.stop_bce,
                loss: stats.loss,
            });
            log::debug!("step {step} loss {:.5} running {running:.5}", stats.loss);
            let first = *initial.get_or_insert(stats.loss);
            if stats.loss > DIVERGENCE_FACTOR * first {
                over += 1;
                if over >= DIVERGENCE_PATIENCE {
                    return Err(Error::Diverged {
                        step,
                        loss: stats.loss,
                        initial: first,
                    });
                }
            } else {
                over = 0;
            }
        }
        epochs_completed = epoch + 1;
        log::info!(
            "epoch {epochs_completed} done at step {step}, running loss {:.5}",
            log.last().map_or(f64::NAN, |r: &LogRow| r.running_avg_loss)
        );
        if let Some(a) = artifacts {
            let meta = checkpoint_meta(model, &a.vocab, epochs_completed, step)?;
            let path = a.dir.join(format!("epoch-{epochs_completed}.ckpt"));
            write_checkpoint(&path, &model.params, Some(&adam), &meta)?;
            checkpoints.push(path);
            write_log(&a.dir.join("loss.csv"), &log)?;
        }
        if stop_after_epoch(model, &log)? {
            break;
        }
    }
    if let Some(a) = artifacts {
        let meta = checkpoint_meta(model, &a.vocab, epochs_completed, step)?;
        let path = a.dir.join("model.ckpt");
        write_checkpoint(&path, &model.params, Some(&adam), &meta)?;
        checkpoints.push(path);
        write_log(&a.dir.join("loss.csv"), &log)?;
    }
    Ok(TrainReport {
        log,
        steps: step,
        epochs_completed,
        adam,
        checkpoints,
    })
}
