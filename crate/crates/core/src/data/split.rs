use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceExample, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Splits<S> {
    pub train: Dataset<S>,
    pub validation: Dataset<S>,
    pub test: Dataset<S>,
}

/// Seeded 50:25:25 partition. Train gets `round(m/2)` examples, validation
/// `round(m/4)`, test the remainder.
pub fn split<S: Scalar>(ds: &Dataset<S>, seed: u64) -> Result<Splits<S>> {
    let m = ds.len();
    if m < 4 {
        return Err(Error::EmptyDataset(format!("cannot split {m} examples into three nonempty parts")));
    }
    let n_train = (m as f64 * 0.5).round() as usize;
    let n_val = (m as f64 * 0.25).round() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize], tag: &str| {
        let examples = idx.iter().map(|&i| ds.examples()[i].clone()).collect();
        Dataset::new(examples, format!("{}#{tag}", ds.provenance()))
    };
    Ok(Splits {
        train: take(&order[..n_train], "train")?,
        validation: take(&order[n_train..n_train + n_val], "validation")?,
        test: take(&order[n_train + n_val..], "test")?,
    })
}

/// Draws `m` examples without replacement. Returns the dataset unchanged
/// when it has at most `m` examples.
pub fn subsample<S: Scalar>(ds: &Dataset<S>, m: usize, seed: u64) -> Result<Dataset<S>> {
    if ds.len() <= m {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, ds.len(), m).into_vec();
    idx.sort_unstable();
    let examples = idx.into_iter().map(|i| ds.examples()[i].clone()).collect();
    Dataset::new(examples, format!("{} (subsample {m})", ds.provenance()))
}

/// Per-feature z-score computed on training items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub mean: Vec<f64>,
    /// Divisor per feature; 1 where the training std fell below `1e-12`.
    pub scale: Vec<f64>,
}

impl FeatureTransform {
    /// Population statistics pooled over every item of every training set.
    pub fn fit<S: Scalar>(train: &Dataset<S>) -> Self {
        let d = train.d();
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for x in train.examples().iter().flat_map(|e| &e.items) {
            for (s, v) in sum.iter_mut().zip(x) {
                *s += v.to_f64_lossy();
            }
            count += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; d];
        for x in train.examples().iter().flat_map(|e| &e.items) {
            for ((acc, v), m) in var.iter_mut().zip(x).zip(&mean) {
                let dv = v.to_f64_lossy() - m;
                *acc += dv * dv;
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let std = (v / count as f64).sqrt();
                if std < 1e-12 {
                    1.0
                } else {
                    std
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn apply_item<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| S::of((v.to_f64_lossy() - m) / s))
            .collect()
    }

    pub fn apply<S: Scalar>(&self, ds: &Dataset<S>) -> Result<Dataset<S>> {
        if ds.d() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "transform for dimension {} applied to dimension {}",
                self.mean.len(),
                ds.d()
            )));
        }
        let examples = ds
            .examples()
            .iter()
            .map(|e| ChoiceExample { items: e.items.iter().map(|x| self.apply_item(x)).collect(), chosen: e.chosen })
            .collect();
        Dataset::new(examples, ds.provenance())
    }
}

/// Fits the transform on `train` and applies it to `train` and `others`.
pub fn standardize<S: Scalar>(
    train: &Dataset<S>,
    others: &[&Dataset<S>],
) -> Result<(Dataset<S>, Vec<Dataset<S>>, FeatureTransform)> {
    let t = FeatureTransform::fit(train);
    let train_z = t.apply(train)?;
    let others_z = others.iter().map(|o| t.apply(o)).collect::<Result<Vec<_>>>()?;
    Ok((train_z, others_z, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(m: usize) -> Dataset<f64> {
        let ex = (0..m).map(|i| ChoiceExample { items: vec![vec![i as f64]], chosen: 0 }).collect();
        Dataset::new(ex, "toy").unwrap()
    }

    fn ids(ds: &Dataset<f64>) -> Vec<usize> {
        ds.examples().iter().map(|e| e.items[0][0] as usize).collect()
    }

    #[test]
    fn split_sizes() {
        let s = split(&toy(100), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (50, 25, 25));
        let s = split(&toy(4), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2, 1, 1));
        assert!(split(&toy(3), 0).is_err());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let a = split(&toy(50), 11).unwrap();
        let b = split(&toy(50), 11).unwrap();
        assert_eq!(a, b);
        let c = split(&toy(50), 12).unwrap();
        assert_ne!(ids(&a.train), ids(&c.train));
    }

    proptest! {
        #[test]
        fn split_partitions(m in 4usize..300, seed in any::<u64>()) {
            let s = split(&toy(m), seed).unwrap();
            let mut all: Vec<usize> = ids(&s.train);
            all.extend(ids(&s.validation));
            all.extend(ids(&s.test));
            all.sort_unstable();
            prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
        }
    }

    #[test]
    fn subsample_without_replacement() {
        let s = subsample(&toy(100), 30, 5).unwrap();
        let mut v = ids(&s);
        v.dedup();
        assert_eq!(v.len(), 30);
        assert_eq!(subsample(&toy(10), 30, 5).unwrap().len(), 10);
    }

    #[test]
    fn standardize_rules() {
        // Feature 0: values 3, 7 → mean 5, std 2. Feature 1 constant.
        let train =
            Dataset::new(vec![ChoiceExample { items: vec![vec![3.0, 4.0], vec![7.0, 4.0]], chosen: 0 }], "t").unwrap();
        let test = Dataset::new(vec![ChoiceExample { items: vec![vec![9.0, 6.0]], chosen: 0 }], "v").unwrap();
        let (tz, others, t) = standardize(&train, &[&test]).unwrap();
        assert_eq!(t.mean, vec![5.0, 4.0]);
        assert_eq!(t.scale, vec![2.0, 1.0]);
        assert_eq!(others[0].examples()[0].items[0], vec![2.0, 2.0]);
        assert_eq!(tz.examples()[0].items[1], vec![1.0, 0.0]);
        let twice = t.apply(&others[0]).unwrap();
        assert_ne!(twice.examples()[0].items[0], others[0].examples()[0].items[0]);
    }
}
