//! Losses with inverse-frequency class weighting, Adam (plain and linear
//! warmup), the staged freeze/unfreeze schedule, the early-stopping
//! training loop and grid sweeps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::blocks::{ChaRng, Mode};
use crate::data::{Dataset, Example, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalMetric};
use crate::model::Model;
use crate::params::{Bindings, FreezeClass, Params};
use crate::tensor::{Graph, Tensor, Var};

/// w_c = total / (C · max(count_c, 1)); zero counts floor to 1.
pub fn class_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let c = counts.len();
    counts
        .iter()
        .map(|&n| total as f64 / (c as f64 * n.max(1) as f64))
        .collect()
}

/// Mean over the batch of w_{t_i}·(−log softmax(logits_i)[t_i]).
pub fn weighted_ce_loss(
    g: &mut Graph<f64>,
    logits: Var,
    targets: &[usize],
    weights: &[f64],
) -> Result<Var> {
    g.weighted_ce(logits, targets, weights)
}

/// Mean over batch and classes of the class-weighted binary cross-entropy,
/// computed in the stabilized softplus form.
pub fn weighted_bce_loss(
    g: &mut Graph<f64>,
    logits: Var,
    targets: &[f64],
    weights: &[f64],
) -> Result<Var> {
    g.weighted_bce(logits, targets, weights)
}

/// Linear ramp 0→1 over the first `warmup_rate` fraction of steps, then
/// linear decay back to 0 at `total_steps`.
pub fn warmup_lr(step: u64, total_steps: u64, warmup_rate: f64) -> f64 {
    let warm = warmup_rate * total_steps as f64;
    let s = step as f64;
    if s <= warm {
        if warm == 0.0 {
            1.0
        } else {
            s / warm
        }
    } else {
        let total = total_steps as f64;
        ((total - s) / (total - warm)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    WarmupLinear,
}

/// Bias-corrected Adam with an optional linear warmup/decay schedule.
pub struct AdamState {
    m: BTreeMap<String, Tensor<f64>>,
    v: BTreeMap<String, Tensor<f64>>,
    pub step: u64,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    pub warmup_rate: f64,
    pub total_steps: u64,
}

impl AdamState {
    pub fn new(base_lr: f64) -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
            base_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::Constant,
            warmup_rate: 0.1,
            total_steps: 0,
        }
    }

    pub fn with_warmup(base_lr: f64, warmup_rate: f64, total_steps: u64) -> Self {
        AdamState {
            schedule: LrSchedule::WarmupLinear,
            warmup_rate,
            total_steps,
            ..Self::new(base_lr)
        }
    }

    pub fn effective_lr(&self) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.base_lr,
            LrSchedule::WarmupLinear => {
                self.base_lr * warmup_lr(self.step, self.total_steps, self.warmup_rate)
            }
        }
    }

    /// One update over named gradients. Parameters without a gradient
    /// entry (frozen or unreached) are untouched.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor<f64>>) -> Result<()> {
        self.step += 1;
        let lr = self.effective_lr();
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("gradient for unknown parameter `{name}`")))?;
            if !p.trainable {
                continue;
            }
            if p.value.shape() != grad.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter `{name}` {:?} vs gradient {:?}",
                    p.value.shape(),
                    grad.shape()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
            for ((pv, gv), (mv, vv)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Epoch counts for which the pre-trained-analogue components stay frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FreezeSchedule {
    pub text_frozen_epochs: usize,
    pub image_frozen_epochs: usize,
}

/// Marks parameter groups trainable for `epoch`. The text encoder
/// (transformer layers + token table) trains iff epoch ≥ text_frozen;
/// the image encoder iff epoch ≥ image_frozen. Image-token maps,
/// segment/position tables and heads are always trainable.
pub fn apply_freeze_schedule(
    params: &mut Params,
    epoch: usize,
    schedule: &FreezeSchedule,
) -> Vec<FreezeClass> {
    params.set_trainable_by_class(|c| match c {
        FreezeClass::Text => epoch >= schedule.text_frozen_epochs,
        FreezeClass::Image => epoch >= schedule.image_frozen_epochs,
        FreezeClass::Fusion => true,
    });
    params.trainable_classes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    Accuracy,
    MicroF1,
}

impl EarlyStopMetric {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Multiclass => EarlyStopMetric::Accuracy,
            TaskKind::Multilabel => EarlyStopMetric::MicroF1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_grid: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop_metric: EarlyStopMetric,
    pub freeze: FreezeSchedule,
    pub lr_schedule: LrSchedule,
    pub warmup_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_grid: vec![1e-4, 5e-5],
            max_epochs: 10,
            patience: 3,
            batch_size: 32,
            seed: 0,
            early_stop_metric: EarlyStopMetric::Accuracy,
            freeze: FreezeSchedule::default(),
            lr_schedule: LrSchedule::Constant,
            warmup_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() {
            return Err(Error::InvalidSpec("lr_grid must be non-empty".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidSpec("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidSpec("batch_size and max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of training history (serialized as line-delimited JSON).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: serde_json::Value,
}

impl HistoryRecord {
    pub fn number(epoch: usize, split: &str, metric: &str, value: f64) -> Self {
        HistoryRecord {
            epoch,
            split: split.into(),
            metric: metric.into(),
            value: serde_json::json!(value),
        }
    }
}

pub struct TrainResult {
    /// Parameter snapshot at the best dev epoch.
    pub best_params: Params,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<HistoryRecord>,
    /// Learning rate the run used.
    pub lr: f64,
}

fn metric_value(metric: EarlyStopMetric, ev: &EvalMetric) -> f64 {
    match metric {
        EarlyStopMetric::Accuracy => ev.accuracy.unwrap_or(0.0),
        EarlyStopMetric::MicroF1 => ev.micro_f1.unwrap_or(0.0),
    }
}

fn batch_loss(
    model: &Model,
    g: &mut Graph<f64>,
    bind: &mut Bindings,
    batch: &[&Example],
    weights: &[f64],
    mode: Mode,
    rng: &mut ChaRng,
) -> Result<Var> {
    let logits = model.forward_batch(g, bind, batch, mode, rng)?;
    match model.config.task {
        TaskKind::Multiclass => {
            let targets: Vec<usize> = batch
                .iter()
                .map(|e| {
                    model
                        .config
                        .classes
                        .iter()
                        .position(|c| c == &e.labels[0])
                        .ok_or_else(|| Error::UnknownLabel(e.labels[0].clone()))
                })
                .collect::<Result<_>>()?;
            weighted_ce_loss(g, logits, &targets, weights)
        }
        TaskKind::Multilabel => {
            let c = model.config.num_classes();
            let mut bits = vec![0.0; batch.len() * c];
            for (i, e) in batch.iter().enumerate() {
                for l in &e.labels {
                    let j = model
                        .config
                        .classes
                        .iter()
                        .position(|x| x == l)
                        .ok_or_else(|| Error::UnknownLabel(l.clone()))?;
                    bits[i * c + j] = 1.0;
                }
            }
            weighted_bce_loss(g, logits, &bits, weights)
        }
    }
}

/// One optimizer step over a batch; returns the loss value.
pub fn train_step(
    model: &mut Model,
    batch: &[&Example],
    weights: &[f64],
    adam: &mut AdamState,
    rng: &mut ChaRng,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut bind = Bindings::new();
    let loss = batch_loss(model, &mut g, &mut bind, batch, weights, Mode::Train, rng)?;
    let loss_val = g.value(loss).item();
    let grads = g.backward(loss)?;
    let mut named: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
    for (name, &var) in bind.iter() {
        if let Some(grad) = grads.get(var) {
            named.insert(name.clone(), grad.clone());
        }
    }
    adam.step(&mut model.params, &named)?;
    Ok(loss_val)
}

/// Epoch loop with seeded shuffling, per-epoch freeze schedule, dev-metric
/// early stopping and best-checkpoint tracking.
pub fn train(model: &mut Model, train_ds: &Dataset, dev_ds: &Dataset, cfg: &TrainConfig, lr: f64) -> Result<TrainResult> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if dev_ds.is_empty() {
        return Err(Error::EmptySplit("dev".into()));
    }
    let counts = crate::data::label_counts(train_ds, &model.config.classes)?;
    let weights = class_weights(&counts);
    let steps_per_epoch = train_ds.len().div_ceil(cfg.batch_size) as u64;
    let mut adam = match cfg.lr_schedule {
        LrSchedule::Constant => AdamState::new(lr),
        LrSchedule::WarmupLinear => {
            AdamState::with_warmup(lr, cfg.warmup_rate, steps_per_epoch * cfg.max_epochs as u64)
        }
    };
    let mut rng = ChaRng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Params)> = None;
    let mut bad_epochs = 0usize;
    for epoch in 0..cfg.max_epochs {
        let classes = apply_freeze_schedule(&mut model.params, epoch, &cfg.freeze);
        history.push(HistoryRecord {
            epoch,
            split: "train".into(),
            metric: "trainable_groups".into(),
            value: serde_json::json!(classes
                .iter()
                .map(|c| format!("{c:?}").to_lowercase())
                .collect::<Vec<_>>()
                .join(",")),
        });
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_ds.examples[i]).collect();
            loss_sum += train_step(model, &batch, &weights, &mut adam, &mut rng)?;
            batches += 1.0;
        }
        history.push(HistoryRecord::number(epoch, "train", "loss", loss_sum / batches));
        let ev = evaluate(model, dev_ds)?;
        let dev_metric = metric_value(cfg.early_stop_metric, &ev.metric);
        let metric_name = match cfg.early_stop_metric {
            EarlyStopMetric::Accuracy => "accuracy",
            EarlyStopMetric::MicroF1 => "micro_f1",
        };
        history.push(HistoryRecord::number(epoch, "dev", metric_name, dev_metric));
        let improved = best.as_ref().map_or(true, |(_, m, _)| dev_metric > *m);
        if improved {
            best = Some((epoch, dev_metric, model.params.clone()));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_metric, best_params) = best.unwrap();
    Ok(TrainResult { best_params, best_epoch, best_metric, history, lr })
}

/// One grid cell for the hyperparameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lr: f64,
    pub text_frozen_epochs: usize,
    pub image_frozen_epochs: usize,
    pub num_image_embeddings: usize,
}

pub struct SweepResult {
    pub best: SweepCell,
    pub best_metric: f64,
    /// (cell, dev metric) in grid order.
    pub table: Vec<(SweepCell, f64)>,
}

/// Runs every cell with a fresh seed-derived rng stream; returns the
/// argmax dev metric (first in grid order on ties) plus the full table.
pub fn sweep<F>(cells: &[SweepCell], mut run: F) -> Result<SweepResult>
where
    F: FnMut(&SweepCell, usize) -> Result<f64>,
{
    if cells.is_empty() {
        return Err(Error::InvalidSpec("empty sweep grid".into()));
    }
    let mut table = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let metric = run(cell, i)?;
        table.push((*cell, metric));
    }
    let (best, best_metric) = table
        .iter()
        .fold(None::<(SweepCell, f64)>, |acc, &(c, m)| match acc {
            Some((_, bm)) if m <= bm => acc,
            _ => Some((c, m)),
        })
        .unwrap();
    Ok(SweepResult { best, best_metric, table })
}
