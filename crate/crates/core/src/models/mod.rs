//! Aggregation models: linear base scores, set networks, mechanisms and presets.

mod config;
mod model;
mod snapshot;
mod witness;

pub use config::{preset, AggregatorConfig, Comparison, Mechanism, Mu, RMode, WMode, PRESET_NAMES};
pub use model::{argmax_first, is_penalized, Batch, Components, Dropout, Model, C_MIN, RHO_RANGE};
pub use snapshot::{SNAPSHOT_FORMAT, SNAPSHOT_VERSION};
pub use witness::{fig1b_witness, ViolationWitness};

use crate::error::Result;
use crate::scalar::Scalar;

/// Anything that scores the items of a choice set.
pub trait Scorer<S: Scalar>: Sync {
    /// Scores for every item of each set, in item order.
    fn batch_scores(&self, sets: &[&[Vec<S>]]) -> Result<Vec<Vec<S>>>;

    fn scores(&self, items: &[Vec<S>]) -> Result<Vec<S>> {
        Ok(self.batch_scores(&[items])?.pop().unwrap_or_default())
    }

    fn predict(&self, items: &[Vec<S>]) -> Result<usize> {
        Ok(argmax_first(&self.scores(items)?))
    }
}

impl<S: Scalar> Scorer<S> for Model<S> {
    fn batch_scores(&self, sets: &[&[Vec<S>]]) -> Result<Vec<Vec<S>>> {
        Model::batch_scores(self, sets)
    }
}

/// Scores each item by a fixed linear function of its features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearScorer<S> {
    pub weights: Vec<S>,
}

impl<S: Scalar> Scorer<S> for LinearScorer<S> {
    fn batch_scores(&self, sets: &[&[Vec<S>]]) -> Result<Vec<Vec<S>>> {
        Ok(sets
            .iter()
            .map(|s| s.iter().map(|x| x.iter().zip(&self.weights).map(|(&a, &b)| a * b).sum()).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests;
