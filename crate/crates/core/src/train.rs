//! Optimisation loop: early stopping, learning-rate halving on plateaus,
//! best-checkpoint restoration, and evaluation.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Tape;
use crate::capsules::{class_readout, CapsuleSet};
use crate::data::{ConfusionMatrix, Metrics, PatchDataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::rng::{derive_seed, seeded, shuffle, Rng};
use crate::tensor::Tensor;

/// A validation loss must drop by more than this to count as an improvement.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub early_stop_patience: usize,
    pub lr_halve_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 270,
            initial_lr: 0.001,
            early_stop_patience: 50,
            lr_halve_patience: 10,
            batch_size: 16,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 || self.lr_halve_patience == 0 {
            return Err(Error::Config("epochs, patience and batch size must be positive".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.initial_lr)));
        }
        Ok(())
    }
}

/// What the schedule decided after one epoch's validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub improved: bool,
    pub halved: bool,
    pub stop: bool,
}

/// Plateau bookkeeping. Every `lr_halve_patience` consecutive epochs without
/// improvement halve the rate; `early_stop_patience` of them end training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub current_lr: f64,
    pub halvings: u32,
    initial_lr: f64,
    halve_patience: usize,
    stop_patience: usize,
    max_epochs: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            epoch: 0,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            current_lr: cfg.initial_lr,
            halvings: 0,
            initial_lr: cfg.initial_lr,
            halve_patience: cfg.lr_halve_patience,
            stop_patience: cfg.early_stop_patience,
            max_epochs: cfg.max_epochs,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Decision {
        self.epoch += 1;
        let improved = val_loss < self.best_val_loss - IMPROVEMENT_TOLERANCE;
        if improved {
            self.best_val_loss = val_loss;
            self.best_epoch = self.epoch;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        let stop = self.epochs_since_improvement >= self.stop_patience || self.epoch >= self.max_epochs;
        let halved = !stop && !improved && self.epochs_since_improvement % self.halve_patience == 0;
        if halved {
            self.halvings += 1;
            self.current_lr = self.initial_lr / 2f64.powi(self.halvings as i32);
        }
        Decision { improved, halved, stop }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl History {
    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_loss\tlr\timproved\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.9}\t{:.9}\t{}\t{}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.improved as u8
            ));
        }
        s
    }
}

/// Something the schedule can drive.
pub trait Trainable {
    type Snapshot;

    /// Runs one epoch at rate `lr`; returns the mean training loss.
    fn train_epoch(&mut self, lr: f64) -> Result<f64>;
    fn val_loss(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Drives `t` until the schedule stops, then restores the best snapshot.
pub fn run_schedule<T: Trainable>(t: &mut T, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let mut state = TrainState::new(cfg);
    let mut epochs = Vec::new();
    let mut best = None;
    loop {
        let epoch = state.epoch + 1;
        let lr = state.current_lr;
        let diverged = |detail: String| Error::Divergence { epoch, detail };
        let train_loss = t.train_epoch(lr).map_err(|e| match e {
            Error::NonFinite(d) => diverged(d),
            other => other,
        })?;
        if !train_loss.is_finite() {
            return Err(diverged(format!("training loss {train_loss}")));
        }
        let val_loss = t.val_loss().map_err(|e| match e {
            Error::NonFinite(d) => diverged(d),
            other => other,
        })?;
        if !val_loss.is_finite() {
            return Err(diverged(format!("validation loss {val_loss}")));
        }
        let d = state.observe(val_loss);
        if d.improved {
            best = Some(t.snapshot());
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            improved: d.improved,
        });
        if d.stop {
            break;
        }
    }
    if let Some(s) = best {
        t.restore(s);
    }
    Ok(History {
        epochs,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
    })
}

enum Moments {
    Sgd,
    Adam { m: Vec<Tensor>, v: Vec<Tensor>, step: i32 },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimiser over the trainable entries of a [`ParamStore`].
pub struct Optimizer {
    moments: Moments,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let moments = match kind {
            OptimizerKind::Sgd => Moments::Sgd,
            OptimizerKind::Adam => Moments::Adam {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        };
        Optimizer { moments }
    }

    /// `grads` is aligned with the store; `None` leaves a parameter untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        if let Moments::Adam { step, .. } = &mut self.moments {
            *step += 1;
        }
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if !p.trainable {
                continue;
            }
            let w = p.value.data_mut();
            match &mut self.moments {
                Moments::Sgd => {
                    for (w, g) in w.iter_mut().zip(g.data()) {
                        *w -= lr * g;
                    }
                }
                Moments::Adam { m, v, step } => {
                    let c1 = 1.0 - ADAM_BETA1.powi(*step);
                    let c2 = 1.0 - ADAM_BETA2.powi(*step);
                    let (m, v) = (m[k].data_mut(), v[k].data_mut());
                    for i in 0..w.len() {
                        let gi = g.data()[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Mean margin loss over `patches` and its gradient for every parameter.
pub fn batch_loss_and_grads(model: &Model, patches: &[(&Tensor, usize)]) -> Result<(f64, Vec<Option<Tensor>>)> {
    if patches.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut losses = Vec::with_capacity(patches.len());
    for &(x, class) in patches {
        let x = tape.constant(x.clone());
        losses.push(model.loss_var(&mut tape, &bound, x, class)?);
    }
    let all = tape.concat(&losses, 0)?;
    let mean = tape.reduce_mean(all, &[0])?;
    let loss = tape.value(mean).item()?;
    tape.backward(mean)?;
    let grads = bound.vars().iter().map(|&v| tape.grad(v)).collect();
    Ok((loss, grads))
}

/// Class-capsule lengths for each patch.
pub fn batch_lengths(model: &Model, patches: &[&Tensor]) -> Result<Vec<Tensor>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(CHUNK) {
        let mut tape = Tape::new();
        let bound = model.params.bind_constant(&mut tape);
        for &x in chunk {
            let x = tape.constant(x.clone());
            let caps = model.forward_var(&mut tape, &bound, x)?;
            let set = CapsuleSet::from_stacked(tape.value(caps).clone(), model.stages.len())?;
            out.push(class_readout(&set).0);
        }
    }
    Ok(out)
}

pub fn mean_loss(model: &Model, ds: &PatchDataset) -> Result<f64> {
    let xs: Vec<&Tensor> = ds.patches.iter().map(|p| &p.data).collect();
    let lengths = batch_lengths(model, &xs)?;
    let mut total = 0.0;
    for (l, p) in lengths.iter().zip(&ds.patches) {
        total += crate::capsules::margin_loss(l, p.label as usize - 1)?;
    }
    Ok(total / ds.len() as f64)
}

/// Model plus splits, driven by [`run_schedule`].
pub struct ModelTrainer<'a> {
    pub model: Model,
    train: &'a PatchDataset,
    val: &'a PatchDataset,
    optimizer: Optimizer,
    batch_size: usize,
    rng: Rng,
}

impl<'a> ModelTrainer<'a> {
    pub fn new(model: Model, train: &'a PatchDataset, val: &'a PatchDataset, cfg: &TrainConfig) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Usage("training needs non-empty train and validation splits".into()));
        }
        let bb = &model.config.backbone;
        if train.size != bb.patch || train.bands != bb.bands || train.classes != model.config.classes {
            return Err(crate::error::DataError::ShapeMismatch(format!(
                "data has {0}x{0}x{1} patches and {2} classes, model expects {3}x{3}x{4} and {5}",
                train.size, train.bands, train.classes, bb.patch, bb.bands, model.config.classes
            ))
            .into());
        }
        let optimizer = Optimizer::new(cfg.optimizer, &model.params);
        Ok(ModelTrainer {
            model,
            train,
            val,
            optimizer,
            batch_size: cfg.batch_size,
            rng: seeded(derive_seed(cfg.seed, "batches")),
        })
    }
}

impl Trainable for ModelTrainer<'_> {
    type Snapshot = ParamStore;

    fn train_epoch(&mut self, lr: f64) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        shuffle(&mut order, &mut self.rng);
        let mut total = 0.0;
        for batch in order.chunks(self.batch_size) {
            let items: Vec<(&Tensor, usize)> = batch
                .iter()
                .map(|&i| {
                    let p = &self.train.patches[i];
                    (&p.data, p.label as usize - 1)
                })
                .collect();
            let (loss, grads) = batch_loss_and_grads(&self.model, &items)?;
            self.optimizer.step(&mut self.model.params, &grads, lr);
            total += loss * batch.len() as f64;
        }
        Ok(total / self.train.len() as f64)
    }

    fn val_loss(&mut self) -> Result<f64> {
        mean_loss(&self.model, self.val)
    }

    fn snapshot(&self) -> ParamStore {
        self.model.params.clone()
    }

    fn restore(&mut self, snapshot: ParamStore) {
        self.model.params = snapshot;
    }
}

/// Trains `model` on `train`, early-stopping on `val`; returns the model with
/// its best-validation parameters.
pub fn train(model: Model, train: &PatchDataset, val: &PatchDataset, cfg: &TrainConfig) -> Result<(Model, History)> {
    let mut t = ModelTrainer::new(model, train, val, cfg)?;
    let history = run_schedule(&mut t, cfg)?;
    Ok((t.model, history))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub predictions: Vec<usize>,
}

/// Confusion matrix and accuracy metrics from argmax class-capsule readout.
pub fn evaluate(model: &Model, ds: &PatchDataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty split".into()));
    }
    let xs: Vec<&Tensor> = ds.patches.iter().map(|p| &p.data).collect();
    let lengths = batch_lengths(model, &xs)?;
    let predictions: Vec<usize> = lengths.iter().map(|l| crate::capsules::argmax(l.data())).collect();
    let mut confusion = ConfusionMatrix::new(ds.classes);
    for (p, &pred) in ds.patches.iter().zip(&predictions) {
        confusion.record(p.label as usize - 1, pred);
    }
    let metrics = confusion.metrics()?;
    Ok(Evaluation {
        confusion,
        metrics,
        predictions,
    })
}
