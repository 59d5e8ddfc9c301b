//! Choice datasets, file ingestion, splitting and synthetic generators.

mod generate;
mod io;
mod split;

pub use generate::{
    bayes_optimal_rate, choice_probabilities, component_probabilities, generate, sample_choice, Component,
    GeneratorKind, GeneratorSpec,
};
pub use io::{parse_grouped_csv, read_dataset, read_jsonl, write_grouped_csv, write_jsonl};
pub use split::{split, standardize, subsample, FeatureTransform, Splits};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One choice set and the index of the chosen item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct ChoiceExample<S> {
    pub items: Vec<Vec<S>>,
    pub chosen: usize,
}

impl<S: Scalar> ChoiceExample<S> {
    pub fn new(items: Vec<Vec<S>>, chosen: usize) -> Result<Self> {
        let ex = Self { items, chosen };
        ex.validate()?;
        Ok(ex)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn d(&self) -> usize {
        self.items.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::EmptySet("choice set has no items"));
        }
        if self.chosen >= self.items.len() {
            return Err(Error::InvalidLabel { label: self.chosen, n: self.items.len() });
        }
        let d = self.d();
        if let Some(bad) = self.items.iter().find(|x| x.len() != d) {
            return Err(Error::Dimension(format!("item of length {} in a set of dimension {d}", bad.len())));
        }
        Ok(())
    }
}

/// Validated collection of choice examples sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    examples: Vec<ChoiceExample<S>>,
    d: usize,
    provenance: String,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(examples: Vec<ChoiceExample<S>>, provenance: impl Into<String>) -> Result<Self> {
        let provenance = provenance.into();
        let Some(first) = examples.first() else {
            return Err(Error::EmptyDataset(provenance));
        };
        let d = first.d();
        for (i, ex) in examples.iter().enumerate() {
            ex.validate()?;
            if ex.d() != d {
                return Err(Error::Dimension(format!("example {i} has dimension {}, expected {d}", ex.d())));
            }
        }
        Ok(Self { examples, d, provenance })
    }

    pub fn examples(&self) -> &[ChoiceExample<S>] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<ChoiceExample<S>> {
        self.examples
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn max_set_size(&self) -> usize {
        self.examples.iter().map(ChoiceExample::len).max().unwrap_or(0)
    }

    pub fn mean_set_size(&self) -> f64 {
        self.examples.iter().map(|e| e.len() as f64).sum::<f64>() / self.len() as f64
    }

    /// Keeps only sets with at most `max_items` items.
    pub fn filter_max_items(&self, max_items: usize) -> Result<Self> {
        let kept = self.examples.iter().filter(|e| e.len() <= max_items).cloned().collect();
        Self::new(kept, format!("{} (sets ≤ {max_items})", self.provenance))
    }

    pub fn cast<T: Scalar>(&self) -> Dataset<T> {
        let examples = self
            .examples
            .iter()
            .map(|e| ChoiceExample {
                items: e.items.iter().map(|x| x.iter().map(|v| T::of(v.to_f64_lossy())).collect()).collect(),
                chosen: e.chosen,
            })
            .collect();
        Dataset { examples, d: self.d, provenance: self.provenance.clone() }
    }
}
