//! Sigmoid circuits that implement triple bases from a pair of separating
//! linear score functions, and exhaustive isolation checks on small universes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::ops::sigmoid;
use crate::{Error, Result};


/// An exact five-utility triple basis for range-weighted aggregation.
/// Columns are the values on `(x1, x2, x3)`.
pub const RANGE_WEIGHTED_BASIS: [[f64; 3]; 5] =
    [[-2.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, -2.0, 0.0], [1.0, 2.0, 0.0], [2.0, 0.0, 0.0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemUniverse {
    items: Vec<Vec<f64>>,
}

impl ItemUniverse {
    pub const MAX_ITEMS: usize = 12;

    pub fn new(items: Vec<Vec<f64>>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptySet("item universe"));
        }
        if items.len() > Self::MAX_ITEMS {
            return Err(Error::Config(format!(
                "item universe has {} items; enumeration is limited to {}",
                items.len(),
                Self::MAX_ITEMS
            )));
        }
        let d = items[0].len();
        for (i, item) in items.iter().enumerate() {
            if item.len() != d {
                return Err(Error::Dimension(format!("item {i} has {} features, expected {d}", item.len())));
            }
            if item.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("item {i}")));
            }
            if items[..i].contains(item) {
                return Err(Error::Config(format!("item {i} duplicates an earlier item")));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn d(&self) -> usize {
        self.items[0].len()
    }
}

/// `(x, s, t)` with `x ∈ s` and `s ∩ t = ∅`, as item indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetTriple {
    x: usize,
    s: Vec<usize>,
    t: Vec<usize>,
}

impl SetTriple {
    pub fn new(x: usize, mut s: Vec<usize>, mut t: Vec<usize>) -> Result<Self> {
        s.sort_unstable();
        s.dedup();
        t.sort_unstable();
        t.dedup();
        if !s.contains(&x) {
            return Err(Error::Config(format!("set triple: x = {x} is not in s = {s:?}")));
        }
        if let Some(i) = s.iter().find(|i| t.contains(i)) {
            return Err(Error::Config(format!("set triple: item {i} is in both s and t")));
        }
        Ok(Self { x, s, t })
    }

    /// The classic triple `(x1, x2, x3)` as `(x1, {x1, x2}, {x3})`.
    pub fn plain(x1: usize, x2: usize, x3: usize) -> Result<Self> {
        Self::new(x1, vec![x1, x2], vec![x3])
    }

    /// `(x, s, X ∖ s)` over a universe of `n` items.
    pub fn isolating(x: usize, s: Vec<usize>, n: usize) -> Result<Self> {
        let t = (0..n).filter(|i| !s.contains(i)).collect();
        Self::new(x, s, t)
    }

    pub fn x(&self) -> usize {
        self.x
    }

    pub fn s(&self) -> &[usize] {
        &self.s
    }

    pub fn t(&self) -> &[usize] {
        &self.t
    }

    /// `s ∖ {x}`.
    pub fn rest(&self) -> Vec<usize> {
        self.s.iter().copied().filter(|&i| i != self.x).collect()
    }

    /// Column of the basis that item `i` plays: 0 for x, 1 for s ∖ {x}, 2 for t.
    pub fn role(&self, i: usize) -> Option<usize> {
        if i == self.x {
            Some(0)
        } else if self.s.contains(&i) {
            Some(1)
        } else if self.t.contains(&i) {
            Some(2)
        } else {
            None
        }
    }

    fn check_indices(&self, n: usize) -> Result<()> {
        match self.s.iter().chain(&self.t).find(|&&i| i >= n) {
            Some(i) => Err(Error::Config(format!("set triple index {i} outside a universe of {n} items"))),
            None => Ok(()),
        }
    }
}

/// `σ(⟨α, v⟩ + β)`; the output unit `r5` is evaluated without `σ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub alpha: [f64; 2],
    pub beta: f64,
}

impl Unit {
    pub fn affine(&self, v: [f64; 2]) -> f64 {
        self.alpha[0] * v[0] + self.alpha[1] * v[1] + self.beta
    }

    pub fn eval(&self, v: [f64; 2]) -> f64 {
        sigmoid(self.affine(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub separates: bool,
    pub margin: f64,
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Whether `b` scores every item of `a` above every item of `lo`.
pub fn check_separation(b: &[f64], a: &[Vec<f64>], lo: &[Vec<f64>]) -> Result<Separation> {
    if a.is_empty() || lo.is_empty() {
        return Err(Error::EmptySet("separation operand"));
    }
    for item in a.iter().chain(lo) {
        if item.len() != b.len() {
            return Err(Error::Dimension(format!("item has {} features, score has {}", item.len(), b.len())));
        }
    }
    if let Some(item) = a.iter().find(|item| lo.contains(item)) {
        return Err(Error::Separation(format!("item {item:?} appears on both sides")));
    }
    let min_a = a.iter().map(|x| dot(b, x)).fold(f64::INFINITY, f64::min);
    let max_b = lo.iter().map(|x| dot(b, x)).fold(f64::NEG_INFINITY, f64::max);
    let margin = min_a - max_b;
    Ok(Separation { separates: margin > 0.0, margin })
}

/// Gain and offset placing the sigmoid midpoint between `hi` and `lo`, with
/// outputs at least `σ(M/2)` on `hi` and at most `σ(−M/2)` on `lo`.
pub fn fit_threshold_unit(hi: &[f64], lo: &[f64], m: f64) -> Result<(f64, f64)> {
    if hi.is_empty() || lo.is_empty() {
        return Err(Error::EmptySet("threshold unit values"));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Config(format!("scale M must be positive, got {m}")));
    }
    let min_hi = hi.iter().copied().fold(f64::INFINITY, f64::min);
    let max_lo = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let margin = min_hi - max_lo;
    if !(margin > 0.0) {
        return Err(Error::Separation(format!(
            "min(hi) = {min_hi} does not exceed max(lo) = {max_lo} (margin {margin})"
        )));
    }
    let alpha = m / margin;
    Ok((alpha, -alpha * (min_hi + max_lo) / 2.0))
}

/// `(α1, α2, β)` with `α1 + α2 + β = u1`, `α2 + β = u2`, `β = u3`.
pub fn solve_output_layer(u: [f64; 3]) -> (f64, f64, f64) {
    (u[0] - u[1], u[1] - u[2], u[2])
}

/// Upper bound on `|4M(σ(r/M) − ½) − r|` for `r ∈ [0, 1]`.
pub fn identity_error_bound(m: f64) -> f64 {
    1.0 / (12.0 * m * m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hidden {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleBasisCircuit {
    pub b: Vec<f64>,
    pub b_prime: Vec<f64>,
    pub r1: Unit,
    pub r2: Unit,
    pub r3: Unit,
    pub r4: Unit,
    pub r5: Unit,
    pub m: f64,
    pub target: [f64; 3],
}

impl TripleBasisCircuit {
    pub fn hidden(&self, z: &[f64]) -> Hidden {
        let v = [dot(&self.b, z), dot(&self.b_prime, z)];
        let r1 = self.r1.eval(v);
        let r2 = self.r2.eval(v);
        let r3 = self.r3.eval([r1, r2]);
        let r4 = self.r4.eval([r1, r2]);
        Hidden { r1, r2, r3, r4 }
    }

    /// `r4` mapped back to the scale of its input, `4M(r4 − ½)`.
    pub fn linearized_r4(&self, r4: f64) -> f64 {
        4.0 * self.m * (r4 - 0.5)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let h = self.hidden(z);
        self.r5.affine([h.r3, h.r4])
    }
}

/// One circuit per row of `u`, sharing `r1..r4`.
pub fn build_circuit(
    b: &[f64],
    b_prime: &[f64],
    universe: &ItemUniverse,
    triple: &SetTriple,
    u: &[[f64; 3]],
    m: f64,
) -> Result<Vec<TripleBasisCircuit>> {
    if u.is_empty() {
        return Err(Error::EmptySet("target utilities"));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Config(format!("scale M must be positive, got {m}")));
    }
    let d = universe.d();
    if b.len() != d || b_prime.len() != d {
        return Err(Error::Dimension(format!(
            "score functions have {} and {} weights, items have {d} features",
            b.len(),
            b_prime.len()
        )));
    }
    triple.check_indices(universe.len())?;
    let rest = triple.rest();
    if rest.is_empty() {
        return Err(Error::EmptySet("s ∖ {x}"));
    }
    if triple.t().is_empty() {
        return Err(Error::EmptySet("t"));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| universe.item(i).to_vec()).collect::<Vec<_>>();
    let s_items = pick(triple.s());
    let t_items = pick(triple.t());
    let rest_items = pick(&rest);
    let x_item = vec![universe.item(triple.x()).to_vec()];

    let sep = check_separation(b, &s_items, &t_items)?;
    if !sep.separates {
        return Err(Error::Separation(format!("b does not separate s from t (margin {})", sep.margin)));
    }
    let sep = check_separation(b_prime, &x_item, &rest_items)?;
    if !sep.separates {
        return Err(Error::Separation(format!("b′ does not separate x from s ∖ {{x}} (margin {})", sep.margin)));
    }

    let values = |w: &[f64], items: &[Vec<f64>]| items.iter().map(|z| dot(w, z)).collect::<Vec<_>>();
    let (a1, c1) = fit_threshold_unit(&values(b, &s_items), &values(b, &t_items), m)?;
    let r1 = Unit { alpha: [a1, 0.0], beta: c1 };
    let (a2, c2) = fit_threshold_unit(&values(b_prime, &x_item), &values(b_prime, &rest_items), m)?;
    let r2 = Unit { alpha: [0.0, a2], beta: c2 };

    let first_layer = |z: &[f64]| {
        let v = [dot(b, z), dot(b_prime, z)];
        r1.eval(v) + r2.eval(v)
    };
    let hi = [first_layer(&x_item[0])];
    let lo: Vec<f64> = rest_items.iter().chain(&t_items).map(|z| first_layer(z)).collect();
    let (a3, c3) = fit_threshold_unit(&hi, &lo, m)
        .map_err(|e| Error::Separation(format!("r3 cannot isolate x at scale M = {m}: {e}")))?;
    let r3 = Unit { alpha: [a3, a3], beta: c3 };
    let r4 = Unit { alpha: [1.0 / m, 0.0], beta: 0.0 };

    Ok(u.iter()
        .map(|&target| {
            let (o1, o2, o3) = solve_output_layer(target);
            let r5 = Unit { alpha: [o1, 4.0 * m * o2], beta: o3 - 2.0 * m * o2 };
            TripleBasisCircuit { b: b.to_vec(), b_prime: b_prime.to_vec(), r1, r2, r3, r4, r5, m, target }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `Σ_i f_i(z)`; satisfies IIA, so it cannot be indifferent off the target pair.
    Additive,
    /// `Σ_i (max_{s'} f_i − min_{s'} f_i) · f_i(z)`.
    #[default]
    RangeWeighted,
}

/// Aggregated score of each item in a set. `rows[i][j]` is `f_i` on item `j`.
pub fn aggregate(rows: &[Vec<f64>], mechanism: Aggregation) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for row in rows {
        let weight = match mechanism {
            Aggregation::Additive => 1.0,
            Aggregation::RangeWeighted => {
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                hi - lo
            }
        };
        for (o, v) in out.iter_mut().zip(row) {
            *o += weight * v;
        }
    }
    out
}

/// `f_i(z)` for every circuit and every universe item.
pub fn circuit_table(circuits: &[TripleBasisCircuit], universe: &ItemUniverse) -> Vec<Vec<f64>> {
    circuits.iter().map(|c| universe.items().iter().map(|z| c.eval(z)).collect()).collect()
}

/// Columns of `table` restricted to the items of `subset`.
pub fn restrict(table: &[Vec<f64>], subset: &[usize]) -> Vec<Vec<f64>> {
    table.iter().map(|row| subset.iter().map(|&j| row[j]).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisReport {
    pub m: f64,
    pub epsilon: f64,
    pub aggregation: Aggregation,
    pub r3_deviation: f64,
    pub r4_deviation: f64,
    pub implementation_error: f64,
    pub indifference_gap: f64,
    pub worst_indifference_subset: Vec<usize>,
    pub min_choice_margin: f64,
    pub worst_choice_subset: Vec<usize>,
    pub choice_correct: bool,
    pub qualifying_subsets: usize,
    pub other_subsets: usize,
}

impl BasisReport {
    pub fn passed(&self) -> bool {
        self.choice_correct && self.indifference_gap < self.epsilon
    }
}

pub fn verify_isolation(
    circuits: &[TripleBasisCircuit],
    universe: &ItemUniverse,
    triple: &SetTriple,
    epsilon: f64,
) -> Result<BasisReport> {
    verify_isolation_with(circuits, universe, triple, epsilon, Aggregation::default())
}

enum Outcome {
    Choice(f64),
    Spread(f64),
}

pub fn verify_isolation_with(
    circuits: &[TripleBasisCircuit],
    universe: &ItemUniverse,
    triple: &SetTriple,
    epsilon: f64,
    mechanism: Aggregation,
) -> Result<BasisReport> {
    let first = circuits.first().ok_or(Error::EmptySet("circuits"))?;
    triple.check_indices(universe.len())?;
    if first.b.len() != universe.d() {
        return Err(Error::Dimension(format!(
            "circuit scores have {} weights, items have {} features",
            first.b.len(),
            universe.d()
        )));
    }

    let mut r3_deviation = 0.0f64;
    let mut r4_deviation = 0.0f64;
    let mut implementation_error = 0.0f64;
    for i in 0..universe.len() {
        let Some(role) = triple.role(i) else { continue };
        let z = universe.item(i);
        let h = first.hidden(z);
        let (t3, t4) = [(1.0, 1.0), (0.0, 1.0), (0.0, 0.0)][role];
        r3_deviation = r3_deviation.max((h.r3 - t3).abs());
        r4_deviation = r4_deviation.max((first.linearized_r4(h.r4) - t4).abs());
        for c in circuits {
            implementation_error = implementation_error.max((c.eval(z) - c.target[role]).abs());
        }
    }

    let table = circuit_table(circuits, universe);
    let n = universe.len();
    let x = triple.x();
    let outcomes: Vec<(usize, Outcome)> = (1usize..1 << n)
        .into_par_iter()
        .map(|mask| {
            let subset: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
            let g = aggregate(&restrict(&table, &subset), mechanism);
            let qualifying = subset.contains(&x) && subset.iter().all(|i| triple.s().contains(i));
            let outcome = if qualifying {
                let gx = g[subset.iter().position(|&i| i == x).unwrap()];
                let rival =
                    subset.iter().zip(&g).filter(|(&i, _)| i != x).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
                Outcome::Choice(gx - rival)
            } else {
                let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
                Outcome::Spread(hi - lo)
            };
            (mask, outcome)
        })
        .collect();

    let subset_of = |mask: usize| (0..n).filter(|j| mask >> j & 1 == 1).collect::<Vec<_>>();
    let mut gap = (0.0, None);
    let mut margin = (f64::INFINITY, None);
    let (mut qualifying, mut others) = (0, 0);
    for (mask, outcome) in outcomes {
        match outcome {
            Outcome::Choice(v) => {
                qualifying += 1;
                if v < margin.0 {
                    margin = (v, Some(mask));
                }
            }
            Outcome::Spread(v) => {
                others += 1;
                if v > gap.0 || gap.1.is_none() {
                    gap = (v, Some(mask));
                }
            }
        }
    }

    Ok(BasisReport {
        m: first.m,
        epsilon,
        aggregation: mechanism,
        r3_deviation,
        r4_deviation,
        implementation_error,
        indifference_gap: gap.0,
        worst_indifference_subset: gap.1.map(subset_of).unwrap_or_default(),
        min_choice_margin: margin.0,
        worst_choice_subset: margin.1.map(subset_of).unwrap_or_default(),
        choice_correct: margin.0 > 0.0,
        qualifying_subsets: qualifying,
        other_subsets: others,
    })
}

/// A five-item instance in two features with unit separation margins:
/// `b(z) = z₁` separates `s = {0, 1, 2}` from `t = {3, 4}` and
/// `b′(z) = z₂` separates item 0 from items 1 and 2.
pub fn unit_margin_instance() -> (ItemUniverse, SetTriple, Vec<f64>, Vec<f64>) {
    let universe =
        ItemUniverse::new(vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0, -1.0], vec![0.0, 1.0], vec![-1.0, -1.0]])
            .expect("valid universe");
    let triple = SetTriple::new(0, vec![0, 1, 2], vec![3, 4]).expect("valid triple");
    (universe, triple, vec![1.0, 0.0], vec![0.0, 1.0])
}
