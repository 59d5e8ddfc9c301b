use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::AggregatorConfig;
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig, TrainOutcome};

/// Sampling ranges for random hyperparameter search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    /// Log-uniform bounds.
    pub weight_decay: (f64, f64),
    /// Uniform bounds.
    pub dropout_keep: (f64, f64),
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { learning_rate: (1e-5, 1e-3), weight_decay: (1e-10, 1e-3), dropout_keep: (0.5, 1.0), trials: 20 }
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo.ln()..hi.ln()).exp().clamp(lo, hi)
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64), positive: bool| lo <= hi && (!positive || lo > 0.0);
        if !ok(self.learning_rate, true) || !ok(self.weight_decay, true) || !ok(self.dropout_keep, true) {
            return Err(Error::Config("search: bounds must satisfy 0 < lo ≤ hi".into()));
        }
        if self.dropout_keep.1 > 1.0 {
            return Err(Error::Config("search: dropout_keep upper bound exceeds 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("search: trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Draws one configuration, keeping every other field of `base`.
    pub fn sample(&self, rng: &mut impl Rng, base: &TrainConfig) -> TrainConfig {
        let learning_rate = log_uniform(rng, self.learning_rate);
        let weight_decay = log_uniform(rng, self.weight_decay);
        let (klo, khi) = self.dropout_keep;
        let dropout_keep = if klo == khi { klo } else { rng.gen_range(klo..=khi) };
        TrainConfig { learning_rate, weight_decay, dropout_keep, ..base.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: TrainConfig,
    pub val_top1: f64,
    pub val_loss: f64,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SearchResult<S> {
    pub best: TrainConfig,
    /// Sorted by validation top-1, descending; ties by lower validation loss,
    /// then trial index.
    pub leaderboard: Vec<Trial>,
    pub best_outcome: TrainOutcome<S>,
}

/// Trains `space.trials` sampled configurations (in parallel) and ranks them
/// on the validation set. Deterministic for a given `seed`.
pub fn random_search<S: Scalar>(
    space: &SearchSpace,
    config: &AggregatorConfig,
    base: &TrainConfig,
    train_set: &Dataset<S>,
    val_set: &Dataset<S>,
    seed: u64,
) -> Result<SearchResult<S>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrainConfig> = (0..space.trials).map(|_| space.sample(&mut rng, base)).collect();
    let outcomes: Vec<Result<TrainOutcome<S>>> =
        configs.par_iter().map(|tc| train(config, tc, train_set, val_set)).collect();
    let mut trials = Vec::with_capacity(outcomes.len());
    let mut models = Vec::with_capacity(outcomes.len());
    for (index, (tc, outcome)) in configs.into_iter().zip(outcomes).enumerate() {
        let outcome = outcome?;
        trials.push(Trial {
            index,
            config: tc,
            val_top1: outcome.best_val_top1.unwrap_or(f64::NEG_INFINITY),
            val_loss: outcome.best_val_loss.unwrap_or(f64::INFINITY),
            best_epoch: outcome.best_epoch,
        });
        models.push(Some(outcome));
    }
    trials.sort_by(|a, b| {
        b.val_top1.total_cmp(&a.val_top1).then(a.val_loss.total_cmp(&b.val_loss)).then(a.index.cmp(&b.index))
    });
    let best_index = trials[0].index;
    let best_outcome = models[best_index].take().expect("each trial yields one outcome");
    Ok(SearchResult { best: trials[0].config.clone(), leaderboard: trials, best_outcome })
}
