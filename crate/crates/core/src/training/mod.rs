//! Teacher-forced training with Adam, per-epoch learning-rate decay,
//! global-norm clipping, checkpoints and a loss log.

mod gradcheck;

pub use gradcheck::{gradient_check, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Conditioning, Model, ModelError};
use crate::numerics::{adam_step, AdamConfig, AdamState, NumericsError, Scalar, Tensor};
use crate::textdata::{QATriple, Vocabulary, PAD};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            lr0: 5e-4,
            decay: 0.83,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(TrainError::Config(format!("lr0 {} must be non-negative", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(TrainError::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config(format!("clip norm {} must be positive", self.clip_norm)));
        }
        Ok(())
    }

    /// `lr0 · decay^epoch`, constant within an epoch.
    pub fn lr_at(&self, epoch: i64) -> Result<f64, TrainError> {
        if epoch < 0 {
            return Err(TrainError::Config(format!("negative epoch {epoch}")));
        }
        Ok(self.lr0 * self.decay.powi(epoch as i32))
    }
}

/// One training sample ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub cond: Conditioning<T>,
    pub question: Vec<usize>,
}

pub fn prepare<T: Scalar>(triples: &[QATriple], vocab: &Vocabulary) -> Result<Vec<Example<T>>, ModelError> {
    triples
        .iter()
        .map(|t| {
            Ok(Example {
                cond: Conditioning::from_triple(t, vocab)?,
                question: t.question_ids(vocab),
            })
        })
        .collect()
}

fn pairs<'a, T>(batch: &[&'a Example<T>]) -> Vec<(&'a Conditioning<T>, &'a [usize])> {
    batch.iter().map(|e| (&e.cond, e.question.as_slice())).collect()
}

/// Mean negative log-likelihood per scored token (question tokens plus eos).
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &[&Example<T>]) -> Result<f64, TrainError> {
    check_batch(batch)?;
    let lg = model.loss_graph(&pairs(batch))?;
    Ok(lg.graph.value(lg.loss).data()[0].as_f64())
}

fn check_batch<T>(batch: &[&Example<T>]) -> Result<(), TrainError> {
    if batch.is_empty() || batch.iter().all(|e| e.question.iter().all(|&t| t == PAD)) {
        return Err(TrainError::Config("batch has no target tokens".into()));
    }
    Ok(())
}

/// Loss and registry-ordered gradients of one batch.
pub fn batch_gradients<T: Scalar>(model: &Model<T>, batch: &[&Example<T>]) -> Result<(f64, Vec<Tensor<T>>), TrainError> {
    check_batch(batch)?;
    let lg = model.loss_graph(&pairs(batch))?;
    let loss = lg.graph.value(lg.loss).data()[0].as_f64();
    let mut grads = lg.graph.backward(lg.loss)?;
    let out = lg
        .params
        .iter()
        .zip(model.params.values())
        .map(|(&id, p)| match grads.take(id) {
            Some(g) => Ok(g),
            None => Tensor::zeros(p.shape()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((loss, out))
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .map(|g| g.data().iter().map(|x| x.as_f64().powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= k;
            }
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// One record per optimizer step.
    pub curve: Vec<LossRecord>,
    /// Token-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Seeded permutation of `0..n` used as the visiting order of `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}.bin")
}

pub fn write_loss_csv(curve: &[LossRecord], path: &Path) -> Result<(), TrainError> {
    let io = |e| TrainError::Io { path: path.to_path_buf(), source: e };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "epoch,step,lr,loss").map_err(io)?;
    for r in curve {
        writeln!(w, "{},{},{:e},{:.9}", r.epoch, r.step, r.lr, r.loss).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Trains `model` in place. Each epoch visits every example once in a seeded
/// shuffled order. With `out_dir`, a checkpoint is written after every epoch
/// and the loss log to `loss.csv`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &[Example<T>],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.to_path_buf(), source: e })?;
    }
    let mut state = AdamState::new(&model.params);
    let adam = AdamConfig::default();
    let mut report = TrainReport { curve: Vec::new(), epoch_losses: Vec::new(), checkpoints: Vec::new() };
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch as i64)?;
        let order = epoch_order(data.len(), config.seed, epoch);
        let (mut weighted, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = match batch_gradients(model, &batch) {
                Err(TrainError::Model(ModelError::NonFinite(_))) | Err(TrainError::Numerics(NumericsError::NonFinite(_))) => {
                    return Err(TrainError::NonFinite { epoch, step })
                }
                other => other?,
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step });
            }
            clip_global_norm(&mut grads, config.clip_norm);
            adam_step(&mut model.params, &grads, &mut state, lr, adam)?;
            let n: usize = batch.iter().map(|e| e.question.len() + 1).sum();
            weighted += loss * n as f64;
            tokens += n;
            report.curve.push(LossRecord { epoch, step, lr, loss });
            step += 1;
        }
        report.epoch_losses.push(weighted / tokens as f64);
        log::info!("epoch {epoch}: lr {lr:.3e}, loss {:.4}", weighted / tokens as f64);
        if let Some(dir) = out_dir {
            let path = dir.join(checkpoint_name(epoch));
            model.save(&path, config.seed, step as u64)?;
            report.checkpoints.push(path);
        }
    }
    if let Some(dir) = out_dir {
        write_loss_csv(&report.curve, &dir.join("loss.csv"))?;
    }
    Ok(report)
}
