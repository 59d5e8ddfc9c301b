use crate::error::Result;
use crate::models::{AggregatorConfig, Comparison, Mechanism, Model, Mu, RMode, WMode};
use crate::numerics::{ParamStore, Tensor};

/// A hand-set SDW model exhibiting a context effect (cf. the decoy example
/// of Fig. 1b) together with the instance on which it shows.
#[derive(Clone, Debug)]
pub struct ViolationWitness {
    pub model: Model<f64>,
    /// The full choice set `s`.
    pub items: Vec<Vec<f64>>,
    /// Index in `items` of the item `x` whose removal flips the choice.
    pub removed: usize,
    /// Prediction on `s`.
    pub full_choice: usize,
    /// Prediction on `s ∖ {x}`, as an index into `items`.
    pub reduced_choice: usize,
}

/// `ℓ = 2`, `Θ = I`, and a weight network whose only active path is
/// `w(s) = (1, −10·mean_{x∈s} tanh(tanh(x₁/2)))`. Adding the low-scoring
/// decoy `x = (−4, 0)` flips the sign of the second weight, so the choice
/// moves from `a = (1, 0)` to `b = (0, 1.5)`.
pub fn fig1b_witness() -> Result<ViolationWitness> {
    let config = AggregatorConfig {
        mechanism: Mechanism::Sdw,
        ell: 2,
        h: 1,
        comparison: Comparison::Diff,
        mu: Mu::Identity,
        w_mode: WMode::Setnet,
        r_mode: RMode::Zero,
        hidden: 16,
        per_dim_c: false,
        preset: None,
    };
    let hidden = config.hidden;
    let mut params = ParamStore::new();
    params.insert("theta", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0])?);
    let mut l1 = vec![0.0; 2 * hidden];
    l1[0] = 0.5;
    params.insert("w.l1.weight", Tensor::matrix(2, hidden, l1)?);
    params.insert("w.l1.bias", Tensor::zeros(&[hidden]));
    let mut l2 = vec![0.0; hidden * hidden];
    l2[0] = 1.0;
    params.insert("w.l2.weight", Tensor::matrix(hidden, hidden, l2)?);
    params.insert("w.l2.bias", Tensor::zeros(&[hidden]));
    let mut out = vec![0.0; hidden * 2];
    out[1] = -10.0;
    params.insert("w.out.weight", Tensor::matrix(hidden, 2, out)?);
    params.insert("w.out.bias", Tensor::vector(vec![1.0, 0.0]));
    let model = Model::from_parts(config, 2, params, None)?;

    let items = vec![vec![1.0, 0.0], vec![0.0, 1.5], vec![-4.0, 0.0]];
    let removed = 2;
    let full_choice = model.predict(&items)?;
    let reduced_choice = model.predict(&items[..2])?;
    Ok(ViolationWitness { model, items, removed, full_choice, reduced_choice })
}
