use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceExample, Dataset};
use crate::error::{Error, Result};
use crate::numerics::ops::softmax;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Mnl,
    MixtureMnl,
}

/// One latent population segment: mixing weight and utility vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub theta: Vec<f64>,
}

/// Synthetic choice law. Item features are i.i.d. standard normal; the
/// chosen item follows a softmax of `⟨θ, x⟩ / temperature`, with `θ` drawn
/// per example from `components` for mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub d: usize,
    pub m: usize,
    pub set_size_range: (usize, usize),
    pub temperature: f64,
    pub components: Vec<Component>,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn mnl(theta: Vec<f64>, m: usize, set_size_range: (usize, usize), seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Mnl,
            d: theta.len(),
            m,
            set_size_range,
            temperature: 1.0,
            components: vec![Component { weight: 1.0, theta }],
            seed,
        }
    }

    /// Mixture of `components`; every θ must share one length.
    pub fn mixture(components: Vec<Component>, m: usize, set_size_range: (usize, usize), seed: u64) -> Self {
        Self {
            kind: GeneratorKind::MixtureMnl,
            d: components.first().map_or(0, |c| c.theta.len()),
            m,
            set_size_range,
            temperature: 1.0,
            components,
            seed,
        }
    }

    /// Two equally weighted components with `θ₂ = −θ₁`.
    pub fn opposing_mixture(theta: Vec<f64>, m: usize, set_size_range: (usize, usize), seed: u64) -> Self {
        let neg = theta.iter().map(|v| -v).collect();
        Self {
            kind: GeneratorKind::MixtureMnl,
            d: theta.len(),
            m,
            set_size_range,
            temperature: 1.0,
            components: vec![Component { weight: 0.5, theta }, Component { weight: 0.5, theta: neg }],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("generator: {m}")));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        let (lo, hi) = self.set_size_range;
        if lo == 0 || lo > hi {
            return bad(format!("set_size_range ({lo}, {hi}) must satisfy 1 ≤ min ≤ max"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if self.components.is_empty() {
            return bad("at least one component required".into());
        }
        if self.kind == GeneratorKind::Mnl && self.components.len() != 1 {
            return bad("kind = mnl takes exactly one component".into());
        }
        for c in &self.components {
            if !(c.weight > 0.0) {
                return bad(format!("component weight {} must be positive", c.weight));
            }
            if c.theta.len() != self.d {
                return bad(format!("component θ has length {}, expected d = {}", c.theta.len(), self.d));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("component weights sum to {total}, expected 1"));
        }
        Ok(())
    }
}

/// Choice probabilities of every item under one component.
pub fn component_probabilities<S: Scalar>(theta: &[f64], temperature: f64, items: &[Vec<S>]) -> Vec<f64> {
    let utils: Vec<f64> = items
        .iter()
        .map(|x| x.iter().zip(theta).map(|(v, t)| v.to_f64_lossy() * t).sum::<f64>() / temperature)
        .collect();
    softmax(&utils)
}

/// Exact choice law of `spec` on one set: the weight-averaged softmax.
pub fn choice_probabilities<S: Scalar>(spec: &GeneratorSpec, items: &[Vec<S>]) -> Vec<f64> {
    let mut p = vec![0.0; items.len()];
    for c in &spec.components {
        for (acc, q) in p.iter_mut().zip(component_probabilities(&c.theta, spec.temperature, items)) {
            *acc += c.weight * q;
        }
    }
    p
}

/// Inverse-CDF draw of an index from a probability vector.
pub fn sample_choice<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws a dataset from `spec`; the same spec always yields the same data.
pub fn generate<S: Scalar>(spec: &GeneratorSpec) -> Result<Dataset<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = WeightedIndex::new(spec.components.iter().map(|c| c.weight))
        .map_err(|e| Error::Config(format!("generator weights: {e}")))?;
    let (lo, hi) = spec.set_size_range;
    let mut examples = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let n = rng.gen_range(lo..=hi);
        let items: Vec<Vec<f64>> =
            (0..n).map(|_| (0..spec.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let k = weights.sample(&mut rng);
        let c = &spec.components[k];
        let chosen = sample_choice(&component_probabilities(&c.theta, spec.temperature, &items), &mut rng);
        let items = items.into_iter().map(|x| x.into_iter().map(S::of).collect()).collect();
        examples.push(ChoiceExample { items, chosen });
    }
    let tag = match spec.kind {
        GeneratorKind::Mnl => "mnl",
        GeneratorKind::MixtureMnl => "mixture_mnl",
    };
    Dataset::new(examples, format!("generated:{tag}:seed={}", spec.seed))
}

/// Highest achievable expected top-1 accuracy on `ds` under the law of
/// `spec`: mean over examples of the largest exact choice probability.
pub fn bayes_optimal_rate<S: Scalar>(spec: &GeneratorSpec, ds: &Dataset<S>) -> Result<f64> {
    if ds.d() != spec.d {
        return Err(Error::Dimension(format!("dataset has d = {}, generator has d = {}", ds.d(), spec.d)));
    }
    let total: f64 =
        ds.examples().iter().map(|e| choice_probabilities(spec, &e.items).into_iter().fold(0.0, f64::max)).sum();
    Ok(total / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singletons_choose_zero() {
        let spec = GeneratorSpec::mnl(vec![1.0, -1.0], 50, (1, 1), 4);
        let ds: Dataset<f64> = generate(&spec).unwrap();
        assert!(ds.examples().iter().all(|e| e.chosen == 0 && e.len() == 1));
    }

    #[test]
    fn same_seed_same_data() {
        let spec = GeneratorSpec::opposing_mixture(vec![1.0, 2.0, 0.5], 200, (2, 6), 9);
        let a: Dataset<f64> = generate(&spec).unwrap();
        let b: Dataset<f64> = generate(&spec).unwrap();
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.seed = 10;
        assert_ne!(a, generate::<f64>(&other).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = GeneratorSpec::opposing_mixture(vec![1.0], 10, (2, 3), 0);
        spec.components[0].weight = 0.7;
        assert!(generate::<f64>(&spec).is_err());
        let spec = GeneratorSpec::mnl(vec![1.0], 10, (4, 3), 0);
        assert!(spec.validate().is_err());
        let mut spec = GeneratorSpec::mnl(vec![1.0], 10, (1, 3), 0);
        spec.temperature = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn bayes_rate_limits() {
        let mut cold = GeneratorSpec::mnl(vec![1.0, 1.0], 300, (2, 5), 1);
        cold.temperature = 1e-9;
        let ds: Dataset<f64> = generate(&cold).unwrap();
        assert!(bayes_optimal_rate(&cold, &ds).unwrap() > 1.0 - 1e-12);

        let mut hot = cold.clone();
        hot.temperature = 1e12;
        let expected = ds.examples().iter().map(|e| 1.0 / e.len() as f64).sum::<f64>() / ds.len() as f64;
        assert!((bayes_optimal_rate(&hot, &ds).unwrap() - expected).abs() < 1e-9);

        let wrong = GeneratorSpec::mnl(vec![1.0], 10, (2, 5), 1);
        assert!(bayes_optimal_rate(&wrong, &ds).is_err());
    }

    #[test]
    fn mnl_law_satisfies_iia_exactly() {
        let spec = GeneratorSpec::mnl(vec![0.7, -1.3, 0.4], 1, (2, 2), 0);
        let items = vec![vec![0.1, 0.2, -0.3], vec![1.0, -0.5, 0.0], vec![-2.0, 0.3, 1.1], vec![0.4, 0.4, 0.4]];
        let pair = choice_probabilities(&spec, &items[..2]);
        let full = choice_probabilities(&spec, &items);
        assert!((pair[0] / pair[1] - full[0] / full[1]).abs() < 1e-12);
    }

    #[test]
    fn mixture_law_violates_iia() {
        let spec = GeneratorSpec::opposing_mixture(vec![2.0, 0.0], 1, (2, 2), 0);
        let items = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![3.0, 0.0]];
        let pair = choice_probabilities(&spec, &items[..2]);
        let full = choice_probabilities(&spec, &items);
        let (r2, r3) = (pair[0] / pair[1], full[0] / full[1]);
        assert!((r2 - r3).abs() / r2 > 0.01, "{r2} vs {r3}");
    }

    #[test]
    fn general_mixture() {
        let c = |w: f64, t: Vec<f64>| Component { weight: w, theta: t };
        let spec = GeneratorSpec::mixture(vec![c(0.5, vec![1.0, 2.0]), c(0.5, vec![-1.0, -2.0])], 10, (2, 4), 3);
        assert_eq!(spec, GeneratorSpec::opposing_mixture(vec![1.0, 2.0], 10, (2, 4), 3));
        let ragged = GeneratorSpec::mixture(vec![c(0.5, vec![1.0, 2.0]), c(0.5, vec![1.0])], 10, (2, 4), 3);
        assert!(ragged.validate().is_err());
        assert!(GeneratorSpec::mixture(vec![], 10, (2, 4), 3).validate().is_err());
    }
}
