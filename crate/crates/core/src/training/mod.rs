//! Empirical-risk minimization: Adam, staircase decay, L2, dropout,
//! early stopping and random hyperparameter search.

mod search;

pub use search::{random_search, SearchResult, SearchSpace, Trial};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::loss_and_top1;
use crate::models::{is_penalized, AggregatorConfig, Batch, Dropout, Model};
use crate::numerics::{BoundParams, GradientMap, NodeId, ParamStore, Tape};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_keep: f64,
    pub batch_size: usize,
    pub decay_rate: f64,
    /// Epochs per decay step.
    pub decay_steps: usize,
    pub early_stop_window: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            dropout_keep: 1.0,
            batch_size: 128,
            decay_rate: 0.95,
            decay_steps: 10,
            early_stop_window: 25,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be nonnegative", self.weight_decay));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout_keep {} must lie in (0, 1]", self.dropout_keep));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.decay_steps == 0 {
            return bad("decay_steps must be at least 1".into());
        }
        if self.early_stop_window == 0 {
            return bad("early_stop_window must be at least 1".into());
        }
        Ok(())
    }
}

/// Staircase schedule `lr · rate^⌊epoch / steps⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.learning_rate * cfg.decay_rate.powi((epoch / cfg.decay_steps) as i32)
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e−8).
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![S::zero(); t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &GradientMap<S>, lr: f64) -> Result<()> {
        for (name, _) in params.iter() {
            let g = grads.get(name).ok_or_else(|| Error::Config(format!("no gradient for `{name}`")))?;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}` at optimizer step {}", self.step + 1)));
            }
        }
        self.step += 1;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let c1 = S::one() - S::of(self.beta1.powi(self.step as i32));
        let c2 = S::one() - S::of(self.beta2.powi(self.step as i32));
        let (lr, eps) = (S::of(lr), S::of(self.eps));
        for (k, (name, p)) in params.iter_mut().enumerate() {
            let g = grads[name].data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy over the batch plus `λ·Σ‖W‖²` over affine weights.
pub fn batch_loss<S: Scalar>(
    model: &Model<S>,
    tape: &mut Tape<S>,
    bound: &BoundParams,
    batch: &Batch<S>,
    lambda: f64,
    dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    let scores = model.forward(tape, bound, batch, dropout)?;
    let nll = tape.segment_nll(scores, batch.segs.clone(), batch.labels.clone())?;
    if lambda == 0.0 {
        return Ok(nll);
    }
    let mut penalty: Option<NodeId> = None;
    for (name, _) in model.params().iter().filter(|(n, _)| is_penalized(n)) {
        let sq = tape.sum_squares(bound.get(name)?);
        penalty = Some(match penalty {
            Some(p) => tape.add(p, sq)?,
            None => sq,
        });
    }
    match penalty {
        Some(p) => {
            let scaled = tape.scale(p, S::of(lambda));
            tape.add(nll, scaled)
        }
        None => Ok(nll),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Tracks the best validation accuracy and signals when to stop.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    window: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(window: usize) -> Self {
        Self { window, best: None }
    }

    /// Records an epoch; returns `true` if it is a new strict best.
    pub fn record(&mut self, epoch: usize, val_top1: f64) -> bool {
        match self.best {
            Some((_, b)) if val_top1 <= b => false,
            _ => {
                self.best = Some((epoch, val_top1));
                true
            }
        }
    }

    /// `true` once `window` epochs have passed without improvement.
    pub fn should_stop(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(b, _)| epoch >= b + self.window)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Outcome of one epoch as reported by an [`EpochDriver`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_loss: f64,
}

/// One pass of optimization per call, driven by [`run_epochs`].
pub trait EpochDriver {
    fn run_epoch(&mut self, epoch: usize, lr: f64) -> Result<EpochStats>;

    /// Called right after an epoch that set a new best validation accuracy.
    fn on_best(&mut self, _epoch: usize) {}
}

/// Epoch loop with staircase learning rate and early stopping.
pub fn run_epochs(cfg: &TrainConfig, driver: &mut impl EpochDriver) -> Result<(Vec<EpochRecord>, EarlyStopping)> {
    let mut stopper = EarlyStopping::new(cfg.early_stop_window);
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        let stats = driver.run_epoch(epoch, lr)?;
        history.push(EpochRecord {
            epoch,
            train_loss: stats.train_loss,
            val_top1: stats.val_top1,
            val_loss: stats.val_loss,
            lr,
        });
        if stopper.record(epoch, stats.val_top1) {
            driver.on_best(epoch);
        }
        if stopper.should_stop(epoch) {
            break;
        }
    }
    Ok((history, stopper))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    /// Parameters from the best validation epoch (or the initialization
    /// when no epoch ran).
    pub model: Model<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_top1: Option<f64>,
    pub best_val_loss: Option<f64>,
}

/// Initializes a model from `config` with `tc.seed` and trains it.
pub fn train<S: Scalar>(
    config: &AggregatorConfig,
    tc: &TrainConfig,
    train_set: &Dataset<S>,
    val_set: &Dataset<S>,
) -> Result<TrainOutcome<S>> {
    let model = Model::init(config.clone(), train_set.d(), tc.seed)?;
    train_model(model, tc, train_set, val_set)
}

struct Trainer<'a, S> {
    tc: &'a TrainConfig,
    train_set: &'a Dataset<S>,
    val_set: &'a Dataset<S>,
    model: Model<S>,
    best: ParamStore<S>,
    adam: Adam<S>,
    rng: ChaCha8Rng,
    dropout: Dropout,
    order: Vec<usize>,
}

impl<S: Scalar> EpochDriver for Trainer<'_, S> {
    fn run_epoch(&mut self, epoch: usize, lr: f64) -> Result<EpochStats> {
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (b, idx) in self.order.chunks(self.tc.batch_size).enumerate() {
            let examples: Vec<_> = idx.iter().map(|&i| &self.train_set.examples()[i]).collect();
            let batch = Batch::from_examples(&examples)?;
            let mut tape = Tape::new();
            let bound = self.model.params().bind(&mut tape);
            let dropout = (self.tc.dropout_keep < 1.0).then_some(&mut self.dropout);
            let loss = batch_loss(&self.model, &mut tape, &bound, &batch, self.tc.weight_decay, dropout)?;
            let value = tape.value(loss).data()[0].to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            total += value * idx.len() as f64;
            let grads = tape.backward(loss)?;
            self.adam.step(self.model.params_mut(), &grads, lr)?;
            self.model.project();
        }
        let (val_loss, val_top1) = loss_and_top1(&self.model, self.val_set)?;
        Ok(EpochStats { train_loss: total / self.train_set.len() as f64, val_top1, val_loss })
    }

    fn on_best(&mut self, _epoch: usize) {
        self.best = self.model.params().clone();
    }
}

/// Trains starting from the current parameters of `model`; see [`train`].
pub fn train_model<S: Scalar>(
    mut model: Model<S>,
    tc: &TrainConfig,
    train_set: &Dataset<S>,
    val_set: &Dataset<S>,
) -> Result<TrainOutcome<S>> {
    tc.validate()?;
    if train_set.d() != model.d() || val_set.d() != model.d() {
        return Err(Error::Dimension(format!(
            "model expects d = {}, data has {} / {}",
            model.d(),
            train_set.d(),
            val_set.d()
        )));
    }
    let transform = model.transform().cloned();
    model.set_transform(None);
    let mut trainer = Trainer {
        tc,
        train_set,
        val_set,
        best: model.params().clone(),
        adam: Adam::new(model.params()),
        model,
        rng: ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5348_5546),
        dropout: Dropout::new(tc.dropout_keep, tc.seed ^ 0x4452_4f50),
        order: (0..train_set.len()).collect(),
    };
    let (history, stopper) = run_epochs(tc, &mut trainer)?;
    let mut model = trainer.model;
    model.set_params(trainer.best);
    model.set_transform(transform);
    let best = stopper.best();
    Ok(TrainOutcome {
        model,
        best_epoch: best.map(|(e, _)| e),
        best_val_top1: best.map(|(_, v)| v),
        best_val_loss: best.map(|(e, _)| history[e].val_loss),
        history,
    })
}
