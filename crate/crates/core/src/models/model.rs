use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ChoiceExample, FeatureTransform};
use crate::error::{Error, Result};
use crate::models::config::{AggregatorConfig, Comparison, Mu, RMode, WMode};
use crate::numerics::{BoundParams, Extreme, NodeId, ParamStore, Segments, Tape, Tensor};
use crate::scalar::Scalar;

pub const C_MIN: f64 = 1.0 + 1e-6;
pub const RHO_RANGE: (f64, f64) = (0.05, 1.0);

/// Sets stacked row-wise into one `[N, d]` feature matrix.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub x: Tensor<S>,
    pub segs: Rc<Segments>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_sets(sets: &[&[Vec<S>]], transform: Option<&FeatureTransform>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::EmptySet("batch has no sets"));
        }
        let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        let segs = Segments::from_sizes(&sizes)?;
        let d = sets[0].first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(segs.total() * d);
        for item in sets.iter().flat_map(|s| s.iter()) {
            if item.len() != d {
                return Err(Error::Dimension(format!("item of length {} in a batch of dimension {d}", item.len())));
            }
            match transform {
                Some(t) => data.extend(t.apply_item(item)),
                None => data.extend_from_slice(item),
            }
        }
        let x = Tensor::matrix(segs.total(), d, data)?;
        Ok(Self { x, segs: Rc::new(segs), labels: vec![0; sets.len()] })
    }

    pub fn from_examples(examples: &[&ChoiceExample<S>]) -> Result<Self> {
        let sets: Vec<&[Vec<S>]> = examples.iter().map(|e| e.items.as_slice()).collect();
        let mut b = Self::from_sets(&sets, None)?;
        b.labels = examples.iter().map(|e| e.chosen).collect();
        Ok(b)
    }
}

/// Inverted dropout on set-network hidden activations.
#[derive(Clone, Debug)]
pub struct Dropout {
    rng: ChaCha8Rng,
    keep: f64,
}

impl Dropout {
    pub fn new(keep: f64, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), keep }
    }

    pub fn keep(&self) -> f64 {
        self.keep
    }

    fn mask<S: Scalar>(&mut self, n: usize) -> Vec<S> {
        let scale = S::of(1.0 / self.keep);
        (0..n).map(|_| if self.rng.gen::<f64>() < self.keep { scale } else { S::zero() }).collect()
    }
}

enum Init {
    Glorot(usize, usize),
    Const(f64),
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn set_net_specs(prefix: &str, input: usize, hidden: usize, output: usize) -> Vec<ParamSpec> {
    let w = |n: &str, a: usize, b: usize| ParamSpec {
        name: format!("{prefix}.{n}.weight"),
        shape: vec![a, b],
        init: Init::Glorot(a, b),
    };
    let b =
        |n: &str, k: usize| ParamSpec { name: format!("{prefix}.{n}.bias"), shape: vec![k], init: Init::Const(0.0) };
    vec![
        w("l1", input, hidden),
        b("l1", hidden),
        w("l2", hidden, hidden),
        b("l2", hidden),
        w("out", hidden, output),
        b("out", output),
    ]
}

fn param_specs(config: &AggregatorConfig, d: usize) -> Vec<ParamSpec> {
    let e = config.embed_width();
    let mut specs = vec![ParamSpec { name: "theta".into(), shape: vec![d, e], init: Init::Glorot(d, e) }];
    match config.w_mode {
        WMode::Setnet => specs.extend(set_net_specs("w", e, config.hidden, config.ell)),
        WMode::FreeVector => {
            specs.push(ParamSpec { name: "w.vector".into(), shape: vec![config.ell], init: Init::Const(1.0) })
        }
        WMode::Ones | WMode::SoftmaxMax => {}
    }
    if config.r_mode == RMode::Setnet {
        specs.extend(set_net_specs("r", e, config.hidden, e));
    }
    let coeff_len = if config.per_dim_c { config.ell } else { 1 };
    match config.mu {
        Mu::KinkedTanh | Mu::KinkedLinear => {
            specs.push(ParamSpec { name: "mu.c".into(), shape: vec![coeff_len], init: Init::Const(2.0) })
        }
        Mu::Power => specs.push(ParamSpec { name: "mu.rho".into(), shape: vec![coeff_len], init: Init::Const(0.5) }),
        Mu::Identity | Mu::Tanh => {}
    }
    specs
}

/// Whether a parameter is an affine weight matrix subject to L2 penalty.
pub fn is_penalized(name: &str) -> bool {
    name == "theta" || name.ends_with(".weight")
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax_first<S: Scalar>(scores: &[S]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

struct Trace {
    f: NodeId,
    w_set: Option<NodeId>,
    r_set: Option<NodeId>,
    phi: NodeId,
    scores: NodeId,
}

/// Forward-pass intermediates for one choice set.
#[derive(Clone, Debug, PartialEq)]
pub struct Components<S> {
    /// `F(x)` per item, each `ℓ × h`.
    pub base: Vec<Tensor<S>>,
    /// `w(s)`, length `ℓ`.
    pub weights: Vec<S>,
    /// `r(s)`, `ℓ × h` (zeros when the model has no reference).
    pub reference: Tensor<S>,
    /// `φ(x, s)` per item, length `ℓ`.
    pub embedding: Vec<Vec<S>>,
    pub scores: Vec<S>,
}

/// An aggregation model with its parameters and input transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    config: AggregatorConfig,
    d: usize,
    params: ParamStore<S>,
    transform: Option<FeatureTransform>,
}

impl<S: Scalar> Model<S> {
    /// Glorot-uniform weights, zero biases, `c = 2`, `ρ = 0.5`, unit free
    /// vectors.
    pub fn init(config: AggregatorConfig, d: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(Error::Dimension("feature dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in param_specs(&config, d) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Glorot(fan_in, fan_out) => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| S::of(rng.gen_range(-a..a))).collect()
                }
                Init::Const(v) => vec![S::of(v); n],
            };
            params.insert(spec.name, Tensor::new(spec.shape, data)?);
        }
        Ok(Self { config, d, params, transform: None })
    }

    /// Assembles a model from explicit parameters, checking names and shapes.
    pub fn from_parts(
        config: AggregatorConfig,
        d: usize,
        params: ParamStore<S>,
        transform: Option<FeatureTransform>,
    ) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config, d);
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters ({}), got {}",
                specs.len(),
                specs.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", "),
                params.len()
            )));
        }
        for spec in &specs {
            let t = params.require(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Shape(format!("{}: expected {:?}, got {:?}", spec.name, spec.shape, t.shape())));
            }
        }
        if let Some(t) = &transform {
            if t.mean.len() != d || t.scale.len() != d {
                return Err(Error::Dimension(format!("transform dimension {} for d = {d}", t.mean.len())));
            }
        }
        Ok(Self { config, d, params, transform })
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore<S>) {
        self.params = params;
    }

    pub fn transform(&self) -> Option<&FeatureTransform> {
        self.transform.as_ref()
    }

    /// Input transform applied by [`Model::scores`] to raw features.
    pub fn set_transform(&mut self, transform: Option<FeatureTransform>) {
        self.transform = transform;
    }

    /// Clamps `c ≥ 1 + 1e−6` and `ρ ∈ [0.05, 1]`.
    pub fn project(&mut self) {
        if let Some(c) = self.params.get_mut("mu.c") {
            c.data_mut().iter_mut().for_each(|v| *v = v.max(S::of(C_MIN)));
        }
        if let Some(r) = self.params.get_mut("mu.rho") {
            let (lo, hi) = RHO_RANGE;
            r.data_mut().iter_mut().for_each(|v| *v = v.max(S::of(lo)).min(S::of(hi)));
        }
    }

    fn set_net(
        &self,
        tape: &mut Tape<S>,
        p: &BoundParams,
        prefix: &str,
        input: NodeId,
        segs: &Rc<Segments>,
        dropout: &mut Option<&mut Dropout>,
    ) -> Result<NodeId> {
        let mut h = input;
        for layer in ["l1", "l2"] {
            let z = tape.matmul(h, p.get(&format!("{prefix}.{layer}.weight"))?)?;
            let z = tape.add_bias(z, p.get(&format!("{prefix}.{layer}.bias"))?)?;
            h = tape.tanh(z);
            if let Some(d) = dropout.as_deref_mut() {
                if d.keep < 1.0 {
                    let mask = d.mask(tape.value(h).len());
                    h = tape.mul_const(h, mask)?;
                }
            }
        }
        let pooled = tape.segment_mean(h, segs.clone())?;
        let out = tape.matmul(pooled, p.get(&format!("{prefix}.out.weight"))?)?;
        tape.add_bias(out, p.get(&format!("{prefix}.out.bias"))?)
    }

    /// Records the scores of every stacked item of `batch`, shape `[N]`.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        p: &BoundParams,
        batch: &Batch<S>,
        dropout: Option<&mut Dropout>,
    ) -> Result<NodeId> {
        Ok(self.trace(tape, p, batch, dropout)?.scores)
    }

    fn trace(
        &self,
        tape: &mut Tape<S>,
        p: &BoundParams,
        batch: &Batch<S>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Trace> {
        if batch.x.cols() != self.d {
            return Err(Error::Dimension(format!("features of width {}, model expects {}", batch.x.cols(), self.d)));
        }
        let cfg = &self.config;
        let segs = &batch.segs;
        let x = tape.constant(batch.x.clone());
        let f = tape.matmul(x, p.get("theta")?)?;

        let r_set = match cfg.r_mode {
            RMode::Zero => None,
            RMode::Min => Some(tape.segment_extreme(f, segs, Extreme::Min)?),
            RMode::MaxPlusMinHalf => {
                let lo = tape.segment_extreme(f, segs, Extreme::Min)?;
                let hi = tape.segment_extreme(f, segs, Extreme::Max)?;
                let sum = tape.add(lo, hi)?;
                Some(tape.scale(sum, S::of(0.5)))
            }
            RMode::Setnet => Some(self.set_net(tape, p, "r", f, segs, &mut dropout)?),
        };

        let z = match (cfg.comparison, r_set) {
            (Comparison::Diff, None) => f,
            (Comparison::Diff, Some(r)) => {
                let r = tape.broadcast(r, segs.clone())?;
                tape.sub(f, r)?
            }
            (Comparison::Inner, Some(r)) => {
                let r = tape.broadcast(r, segs.clone())?;
                tape.group_dot(f, r, cfg.h)?
            }
            (Comparison::Inner, None) => return Err(Error::Config("inner comparison needs a reference".into())),
        };

        let phi = match cfg.mu {
            Mu::Identity => z,
            Mu::Tanh => tape.tanh(z),
            Mu::KinkedTanh => tape.kinked_tanh(z, p.get("mu.c")?)?,
            Mu::KinkedLinear => tape.kinked_linear(z, p.get("mu.c")?)?,
            Mu::Power => tape.power(z, p.get("mu.rho")?)?,
        };

        let (w_set, scores) = match cfg.w_mode {
            WMode::Ones => {
                let ones = tape.constant(Tensor::filled(&[cfg.ell], S::one()));
                (None, tape.matmul(phi, ones)?)
            }
            WMode::FreeVector => (None, tape.matmul(phi, p.get("w.vector")?)?),
            WMode::Setnet | WMode::SoftmaxMax => {
                let w = if cfg.w_mode == WMode::Setnet {
                    self.set_net(tape, p, "w", f, segs, &mut dropout)?
                } else {
                    let m = tape.segment_extreme(f, segs, Extreme::Max)?;
                    tape.row_softmax(m)
                };
                let wb = tape.broadcast(w, segs.clone())?;
                (Some(w), tape.row_dot(wb, phi)?)
            }
        };
        Ok(Trace { f, w_set, r_set, phi, scores })
    }

    /// Intermediate quantities of the forward pass on one set of raw items.
    pub fn components(&self, items: &[Vec<S>]) -> Result<Components<S>> {
        let batch = Batch::from_sets(&[items], self.transform.as_ref())?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let t = self.trace(&mut tape, &bound, &batch, None)?;
        let (ell, h) = (self.config.ell, self.config.h);
        let base = tape
            .value(t.f)
            .data()
            .chunks(ell * h)
            .map(|r| Tensor::matrix(ell, h, r.to_vec()))
            .collect::<Result<_>>()?;
        let weights = match (t.w_set, self.config.w_mode) {
            (Some(w), _) => tape.value(w).data().to_vec(),
            (None, WMode::FreeVector) => self.params.require("w.vector")?.data().to_vec(),
            (None, _) => vec![S::one(); ell],
        };
        let reference = match t.r_set {
            Some(r) => Tensor::matrix(ell, h, tape.value(r).data().to_vec())?,
            None => Tensor::zeros(&[ell, h]),
        };
        let embedding = tape.value(t.phi).data().chunks(ell).map(<[S]>::to_vec).collect();
        let scores = tape.value(t.scores).data().to_vec();
        Ok(Components { base, weights, reference, embedding, scores })
    }

    /// Scores of every item in each set, applying the stored transform.
    pub fn batch_scores(&self, sets: &[&[Vec<S>]]) -> Result<Vec<Vec<S>>> {
        let batch = Batch::from_sets(sets, self.transform.as_ref())?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let s = self.forward(&mut tape, &bound, &batch, None)?;
        let flat = tape.value(s).data();
        Ok((0..batch.segs.len()).map(|b| flat[batch.segs.range(b)].to_vec()).collect())
    }

    pub fn scores(&self, items: &[Vec<S>]) -> Result<Vec<S>> {
        Ok(self.batch_scores(&[items])?.pop().expect("one set in, one out"))
    }

    pub fn predict(&self, items: &[Vec<S>]) -> Result<usize> {
        Ok(argmax_first(&self.scores(items)?))
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model { config: self.config.clone(), d: self.d, params: self.params.cast(), transform: self.transform.clone() }
    }
}
