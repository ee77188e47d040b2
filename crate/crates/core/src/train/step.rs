use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Dropout, Graph};
use crate::rng::derive_seed;
use crate::train::batch::{Batch, BatchStream, Example, StreamKind};
use crate::train::config::TrainConfig;
use crate::train::optim::{clip_grad_norm, cosine_lr, Optimizer};

/// Runs forward and backward over one batch, adding `weight ×` the batch
/// loss gradient into the parameter store. Each sample's loss is weighted
/// by its share of the batch's predicted tokens. Returns the batch loss.
pub fn accumulate_gradients(
    model: &mut Model,
    data: &[Example],
    batch: &Batch,
    weight: f64,
    dropout_seed: u64,
) -> Result<f64> {
    let total: usize = batch.indices().iter().map(|&i| data[i].target.payload().len() + 1).sum();
    let mut loss = 0.0;
    for (k, &i) in batch.indices().iter().enumerate() {
        let ex = &data[i];
        let dropout = if model.config.dropout > 0.0 {
            Dropout::train(model.config.dropout, derive_seed(dropout_seed, &format!("sample-{k}")))
        } else {
            Dropout::off()
        };
        let mut g = Graph::new(&model.params, dropout);
        let (l, n) = model.loss(&mut g, &ex.feats, &ex.target)?;
        let share = n as f64 / total as f64;
        let scaled = g.tape.scale(l, weight * share);
        loss += g.tape.scalar(l)? * share;
        let mut tape = g.into_tape();
        tape.backward(scaled, &mut model.params)?;
    }
    Ok(loss)
}

/// One update from one batch: clears gradients, back-propagates, clips and
/// applies the optimizer at `lr`. A non-finite loss aborts before the
/// update.
pub fn train_step(
    model: &mut Model,
    data: &[Example],
    batch: &Batch,
    optimizer: &mut Optimizer,
    lr: f64,
    step: usize,
    seed: u64,
) -> Result<f64> {
    model.params.clear_grads();
    let loss = accumulate_gradients(model, data, batch, 1.0, derive_seed(seed, &format!("dropout-{step}-0")))?;
    check_finite(loss, lr, step, batch)?;
    optimizer.step(&mut model.params, lr)?;
    Ok(loss)
}

fn check_finite(loss: f64, lr: f64, step: usize, batch: &Batch) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "loss {loss} at step {step} (lr {lr}, task {})",
            batch.task()
        )))
    }
}

/// One metrics-log record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub task: char,
    pub lr: f64,
    pub loss: f64,
}

impl LogEntry {
    pub fn line(&self) -> String {
        format!("step={} task={} lr={:.6e} loss={:.9}", self.step, self.task, self.lr, self.loss)
    }
}

/// Trains `model` for `cfg.steps` updates on `kind` batches drawn from
/// `data`, with a cosine-annealed learning rate. Every batch of a logged
/// update produces one entry.
pub fn train(model: &mut Model, data: &[Example], kind: StreamKind, cfg: &TrainConfig) -> Result<Vec<LogEntry>> {
    cfg.validate()?;
    let mut stream = BatchStream::new(data, kind, cfg.batch_size, derive_seed(cfg.seed, "shuffle"))?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.momentum, model.params.len());
    let mut log = Vec::new();
    let weight = 1.0 / cfg.grad_accum as f64;
    for step in 0..cfg.steps {
        let lr = cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_floor)?;
        model.params.clear_grads();
        let mut entries = Vec::with_capacity(cfg.grad_accum);
        for micro in 0..cfg.grad_accum {
            let batch = stream.next_batch()?;
            let seed = derive_seed(cfg.seed, &format!("dropout-{step}-{micro}"));
            let loss = accumulate_gradients(model, data, &batch, weight, seed)?;
            check_finite(loss, lr, step, &batch)?;
            entries.push(LogEntry {
                step,
                task: batch.task().code(),
                lr,
                loss,
            });
        }
        if cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut model.params, cfg.clip_norm);
        }
        optimizer.step(&mut model.params, lr)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            log.extend(entries);
        }
    }
    Ok(log)
}

pub fn format_log(entries: &[LogEntry]) -> String {
    entries.iter().map(|e| e.line() + "\n").collect()
}
