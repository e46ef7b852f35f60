//! Mini-batch Adam training with resumable state.

use std::ops::Range;
use std::path::Path;

use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::data::PreparedData;
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, Model, ModelContext, ModelParameters, ModelSpec};
use crate::objective::{LossWeights, MetricReport};
use crate::storage::write_atomic;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const STATE_CHECKPOINT: &str = "state.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub model: Model,
    pub adam: Adam,
    pub seed: u64,
    pub best_val: Option<f64>,
    pub best_epoch: usize,
    pub config_hash: String,
    pub history: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    kind: String,
    epoch: usize,
    seed: u64,
    adam_t: u64,
    lr: f64,
    best_val: Option<f64>,
    best_epoch: usize,
    history: Vec<EpochLog>,
    spec: ModelSpec,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    epoch: usize,
    spec: ModelSpec,
}

impl TrainState {
    pub fn new(model: Model, learning_rate: f64, seed: u64, config_hash: String) -> Self {
        let adam = Adam::new(learning_rate, &model.params.values);
        TrainState { epoch: 0, model, adam, seed, best_val: None, best_epoch: 0, config_hash, history: Vec::new() }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = StateMeta {
            kind: "train_state".into(),
            epoch: self.epoch,
            seed: self.seed,
            adam_t: self.adam.t,
            lr: self.adam.lr,
            best_val: self.best_val,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
            spec: self.model.spec.clone(),
        };
        let p = &self.model.params;
        let mut tensors: Vec<(String, Mat)> = p.names.iter().cloned().zip(p.values.iter().cloned()).collect();
        for (name, m) in p.names.iter().zip(&self.adam.m) {
            tensors.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in p.names.iter().zip(&self.adam.v) {
            tensors.push((format!("adam.v.{name}"), v.clone()));
        }
        Ok(Checkpoint { config_hash: self.config_hash.clone(), meta: serde_json::to_value(meta)?, tensors })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let meta: StateMeta = serde_json::from_value(ck.meta)?;
        if meta.kind != "train_state" {
            return Err(Error::Format(format!("expected a training state, found {}", meta.kind)));
        }
        let n = ck.tensors.len() / 3;
        if ck.tensors.len() != 3 * n {
            return Err(Error::Format("training state tensor count".into()));
        }
        let mut tensors = ck.tensors.into_iter();
        let (names, values): (Vec<String>, Vec<Mat>) = tensors.by_ref().take(n).unzip();
        let m: Vec<Mat> = tensors.by_ref().take(n).map(|(_, t)| t).collect();
        let v: Vec<Mat> = tensors.map(|(_, t)| t).collect();
        let model = Model::from_parameters(meta.spec, ModelParameters { names, values })?;
        let adam = Adam { lr: meta.lr, t: meta.adam_t, m, v, ..Adam::new(meta.lr, &[]) };
        Ok(TrainState {
            epoch: meta.epoch,
            model,
            adam,
            seed: meta.seed,
            best_val: meta.best_val,
            best_epoch: meta.best_epoch,
            config_hash: ck.config_hash,
            history: meta.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_checkpoint()?)
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path, expected_hash)?)
    }
}

pub fn save_model(path: &Path, model: &Model, epoch: usize, config_hash: &str) -> Result<()> {
    let meta = ModelMeta { kind: "model".into(), epoch, spec: model.spec.clone() };
    let p = &model.params;
    write_checkpoint(
        path,
        &Checkpoint {
            config_hash: config_hash.to_string(),
            meta: serde_json::to_value(meta)?,
            tensors: p.names.iter().cloned().zip(p.values.iter().cloned()).collect(),
        },
    )
}

/// Loads a model checkpoint, refusing one trained under another architecture.
pub fn load_model(path: &Path, expected_hash: &str) -> Result<(Model, usize)> {
    let ck = read_checkpoint(path, Some(expected_hash))?;
    let meta: ModelMeta = serde_json::from_value(ck.meta)?;
    if meta.kind != "model" {
        return Err(Error::Format(format!("expected a model checkpoint, found {}", meta.kind)));
    }
    let (names, values) = ck.tensors.into_iter().unzip();
    Ok((Model::from_parameters(meta.spec, ModelParameters { names, values })?, meta.epoch))
}

/// Shuffle order of the training targets for one epoch; depends only on the
/// seed and the epoch so a resumed run sees the same batches.
pub fn epoch_order(targets: Range<usize>, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = targets.collect();
    order.shuffle(&mut rng);
    order
}

/// Mean loss over `targets` (forward only).
pub fn mean_loss(data: &PreparedData, model: &Model, ctx: &ModelContext, targets: Range<usize>, w: &LossWeights) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptySplit(format!("no targets in {targets:?}")));
    }
    let n = targets.len();
    let losses = targets
        .into_par_iter()
        .map(|t| model.loss(ctx, &data.sample(t)?, w))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / n as f64)
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    epoch: usize,
    batch: usize,
    targets: &'a [usize],
    error: String,
    parameter_norms: Vec<(String, f64)>,
}

fn dump_diagnostic(dir: Option<&Path>, state: &TrainState, batch: usize, targets: &[usize], err: &Error) {
    let Some(dir) = dir else { return };
    let p = &state.model.params;
    let d = Diagnostic {
        epoch: state.epoch + 1,
        batch,
        targets,
        error: err.to_string(),
        parameter_norms: p
            .names
            .iter()
            .zip(&p.values)
            .map(|(n, v)| (n.clone(), v.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect(),
    };
    let path = dir.join("diagnostic.json");
    match serde_json::to_vec_pretty(&d).map_err(Error::from).and_then(|b| write_atomic(&path, &b)) {
        Ok(()) => warn!("wrote {}", path.display()),
        Err(e) => warn!("could not write diagnostic dump: {e}"),
    }
}

/// Runs epochs until `state.epoch == until_epoch`. With a checkpoint
/// directory, the training state is saved after every epoch and the model
/// with the lowest validation loss is kept as the best checkpoint.
pub fn train(
    data: &PreparedData,
    state: &mut TrainState,
    until_epoch: usize,
    w: &LossWeights,
    batch_size: usize,
    ckpt_dir: Option<&Path>,
) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let ctx = data.context(&state.model.spec)?;
    let split = data.split.clone();
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir)?;
        if state.epoch == 0 && state.history.is_empty() {
            save_model(&dir.join(BEST_CHECKPOINT), &state.model, 0, &state.config_hash)?;
            state.save(&dir.join(STATE_CHECKPOINT))?;
        }
    }
    while state.epoch < until_epoch {
        let order = epoch_order(split.train.clone(), state.seed, state.epoch);
        let mut total = 0.0;
        for (b, batch) in order.chunks(batch_size).enumerate() {
            let model = &state.model;
            let results = batch
                .par_iter()
                .map(|&t| model.loss_and_grad(&ctx, &data.sample(t)?, w))
                .collect::<Result<Vec<_>>>();
            let results = match results {
                Ok(r) => r,
                Err(e) => {
                    dump_diagnostic(ckpt_dir, state, b, batch, &e);
                    return Err(e);
                }
            };
            let mut grads: Vec<Mat> = model.params.values.iter().map(|v| Array2::zeros(v.dim())).collect();
            for (loss, g) in &results {
                total += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            state.adam.step(&mut state.model.params.values, &grads)?;
        }
        state.epoch += 1;
        let train_loss = total / order.len() as f64;
        let val_loss = mean_loss(data, &state.model, &ctx, split.val.clone(), w)?;
        if !val_loss.is_finite() {
            let e = Error::NonFinite(format!("validation loss after epoch {}", state.epoch));
            dump_diagnostic(ckpt_dir, state, 0, &[], &e);
            return Err(e);
        }
        info!("epoch {}: train {train_loss:.6} val {val_loss:.6}", state.epoch);
        state.history.push(EpochLog { epoch: state.epoch, train_loss, val_loss });
        let improved = state.best_val.is_none_or(|b| val_loss < b);
        if improved {
            state.best_val = Some(val_loss);
            state.best_epoch = state.epoch;
        }
        if let Some(dir) = ckpt_dir {
            if improved {
                save_model(&dir.join(BEST_CHECKPOINT), &state.model, state.epoch, &state.config_hash)?;
            }
            state.save(&dir.join(STATE_CHECKPOINT))?;
        }
    }
    Ok(())
}

/// Level-1 predictions for `targets`, clamped at zero.
pub fn predict_finest(data: &PreparedData, model: &Model, ctx: &ModelContext, targets: Range<usize>) -> Result<Vec<Vec<f64>>> {
    targets
        .into_par_iter()
        .map(|t| {
            let p = model.predict(ctx, &data.sample(t)?)?;
            Ok(p.risk[0].iter().map(|&v| v.max(0.0)).collect())
        })
        .collect()
}

/// Scores finest-level predictions on `targets`.
pub fn evaluate(data: &PreparedData, model: &Model, targets: Range<usize>) -> Result<MetricReport> {
    if targets.is_empty() {
        return Err(Error::EmptySplit(format!("no targets in {targets:?}")));
    }
    let ctx = data.context(&model.spec)?;
    let preds = predict_finest(data, model, &ctx, targets.clone())?;
    let truths: Vec<Vec<f64>> = targets.clone().map(|t| data.truth(t).swap_remove(0)).collect();
    let hours: Vec<u8> = targets.map(|t| data.dataset.temporal(t).hour).collect();
    MetricReport::compute(&preds, &truths, &hours)
}
