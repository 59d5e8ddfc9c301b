use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Partition of stacked item rows into consecutive choice sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    row_segment: Vec<usize>,
}

impl Segments {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut row_segment = Vec::new();
        offsets.push(0);
        for (b, &n) in sizes.iter().enumerate() {
            if n == 0 {
                return Err(Error::EmptySet("segment with zero rows"));
            }
            row_segment.extend(std::iter::repeat_n(b, n));
            offsets.push(offsets[b] + n);
        }
        Ok(Self { offsets, row_segment })
    }

    /// Number of segments.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of rows covered.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    pub fn size(&self, b: usize) -> usize {
        self.offsets[b + 1] - self.offsets[b]
    }

    pub fn segment_of(&self, row: usize) -> usize {
        self.row_segment[row]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    MulConst(NodeId, Vec<S>),
    Tanh(NodeId),
    KinkedTanh { z: NodeId, c: NodeId },
    KinkedLinear { z: NodeId, c: NodeId },
    Power { z: NodeId, rho: NodeId },
    SegmentMean(NodeId, Rc<Segments>),
    SegmentExtreme { x: NodeId, arg: Vec<usize> },
    Broadcast(NodeId, Rc<Segments>),
    GroupDot { a: NodeId, b: NodeId, width: usize },
    RowDot(NodeId, NodeId),
    RowSoftmax(NodeId),
    SegmentNll { scores: NodeId, segs: Rc<Segments>, labels: Vec<usize>, probs: Vec<S> },
    SumSquares(NodeId),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Gradients of a scalar loss keyed by parameter name.
pub type GradientMap<S> = BTreeMap<String, Tensor<S>>;

/// Reverse-mode recording of a computation.
///
/// Nodes are appended in evaluation order, so every operation's inputs
/// precede it and [`Tape::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: Vec<(String, NodeId)>,
    branches: Vec<u32>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), branches: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Discrete choices taken by piecewise ops (kink sides, argmin/argmax)
    /// since the tape was created. Two forward passes with equal signatures
    /// are smooth along the segment between their inputs.
    pub fn branch_signature(&self) -> &[u32] {
        &self.branches
    }

    /// Drops every node recorded after `len`, keeping earlier ones (e.g.
    /// bound parameters) for reuse.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.params.retain(|(_, id)| id.0 < len);
        self.branches.clear();
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Registers a named parameter leaf whose gradient `backward` reports.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<S>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push((name.into(), id));
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds a length-`k` bias to every row of an `n × k` matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        let k = av.cols();
        if bv.len() != k {
            return Err(Error::Shape(format!("bias {:?} for {:?}", bv.shape(), av.shape())));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(k) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: S) -> NodeId {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, mask: Vec<S>) -> Result<NodeId> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(Error::Shape(format!("mask of {} for {:?}", mask.len(), av.shape())));
        }
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let v = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(v, Op::MulConst(a, mask)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    /// Index into a coefficient shared globally (`len 1`) or per column.
    fn coefficient_index(&self, z: NodeId, c: NodeId) -> Result<impl Fn(usize) -> usize> {
        let cols = self.value(z).cols();
        let clen = self.value(c).len();
        if clen != 1 && clen != cols {
            return Err(Error::Shape(format!("coefficient of length {clen} for {cols} columns")));
        }
        Ok(move |i: usize| if clen == 1 { 0 } else { i % cols })
    }

    pub fn kinked_tanh(&mut self, z: NodeId, c: NodeId) -> Result<NodeId> {
        let idx = self.coefficient_index(z, c)?;
        let (zv, cv) = (self.value(z), self.value(c));
        let data = zv.data().iter().enumerate().map(|(i, &x)| ops::kinked_tanh_scalar(x, cv.data()[idx(i)])).collect();
        let v = Tensor::new(zv.shape().to_vec(), data)?;
        let signs: Vec<u32> = zv.data().iter().map(|&x| u32::from(x < S::zero())).collect();
        self.branches.extend(signs);
        Ok(self.push(v, Op::KinkedTanh { z, c }))
    }

    pub fn kinked_linear(&mut self, z: NodeId, c: NodeId) -> Result<NodeId> {
        let idx = self.coefficient_index(z, c)?;
        let (zv, cv) = (self.value(z), self.value(c));
        let data =
            zv.data().iter().enumerate().map(|(i, &x)| ops::kinked_linear_scalar(x, cv.data()[idx(i)])).collect();
        let v = Tensor::new(zv.shape().to_vec(), data)?;
        let signs: Vec<u32> = zv.data().iter().map(|&x| u32::from(x < S::zero())).collect();
        self.branches.extend(signs);
        Ok(self.push(v, Op::KinkedLinear { z, c }))
    }

    /// `max(z, 0)^rho` with a learnable exponent.
    pub fn power(&mut self, z: NodeId, rho: NodeId) -> Result<NodeId> {
        let idx = self.coefficient_index(z, rho)?;
        let (zv, rv) = (self.value(z), self.value(rho));
        let data = zv.data().iter().enumerate().map(|(i, &x)| ops::power_scalar(x, rv.data()[idx(i)])).collect();
        let v = Tensor::new(zv.shape().to_vec(), data)?;
        let signs: Vec<u32> = zv.data().iter().map(|&x| u32::from(x > S::zero())).collect();
        self.branches.extend(signs);
        Ok(self.push(v, Op::Power { z, rho }))
    }

    fn check_segments(&self, x: NodeId, segs: &Segments) -> Result<()> {
        let rows = self.value(x).rows();
        if segs.total() != rows {
            return Err(Error::Shape(format!("segments cover {} rows, tensor has {rows}", segs.total())));
        }
        Ok(())
    }

    /// Per-segment column means: `[N, k] → [B, k]`.
    pub fn segment_mean(&mut self, x: NodeId, segs: Rc<Segments>) -> Result<NodeId> {
        self.check_segments(x, &segs)?;
        let xv = self.value(x);
        let k = xv.cols();
        let mut out = vec![S::zero(); segs.len() * k];
        for b in 0..segs.len() {
            let orow = &mut out[b * k..(b + 1) * k];
            for r in segs.range(b) {
                for (o, &v) in orow.iter_mut().zip(xv.row(r)) {
                    *o = *o + v;
                }
            }
            let inv = S::one() / S::of_usize(segs.size(b));
            orow.iter_mut().for_each(|o| *o = *o * inv);
        }
        let v = Tensor::matrix(segs.len(), k, out)?;
        Ok(self.push(v, Op::SegmentMean(x, segs)))
    }

    /// Per-segment column minimum or maximum: `[N, k] → [B, k]`.
    pub fn segment_extreme(&mut self, x: NodeId, segs: &Segments, which: Extreme) -> Result<NodeId> {
        self.check_segments(x, segs)?;
        let xv = self.value(x);
        let k = xv.cols();
        let mut out = Vec::with_capacity(segs.len() * k);
        let mut arg = Vec::with_capacity(segs.len() * k);
        for b in 0..segs.len() {
            let range = segs.range(b);
            for j in 0..k {
                let mut best = range.start;
                for r in range.clone() {
                    let (v, cur) = (xv.data()[r * k + j], xv.data()[best * k + j]);
                    let better = match which {
                        Extreme::Min => v < cur,
                        Extreme::Max => v > cur,
                    };
                    if better {
                        best = r;
                    }
                }
                out.push(xv.data()[best * k + j]);
                arg.push(best);
            }
        }
        self.branches.extend(arg.iter().map(|&a| a as u32));
        let v = Tensor::matrix(segs.len(), k, out)?;
        Ok(self.push(v, Op::SegmentExtreme { x, arg }))
    }

    /// Repeats row `b` of a `[B, k]` matrix for every row of segment `b`.
    pub fn broadcast(&mut self, x: NodeId, segs: Rc<Segments>) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rows() != segs.len() {
            return Err(Error::Shape(format!("broadcast of {} rows over {} segments", xv.rows(), segs.len())));
        }
        let k = xv.cols();
        let mut out = Vec::with_capacity(segs.total() * k);
        for b in 0..segs.len() {
            for _ in segs.range(b) {
                out.extend_from_slice(xv.row(b));
            }
        }
        let v = Tensor::matrix(segs.total(), k, out)?;
        Ok(self.push(v, Op::Broadcast(x, segs)))
    }

    /// Inner products over consecutive column groups of `width`:
    /// `[N, g·width] × [N, g·width] → [N, g]`.
    pub fn group_dot(&mut self, a: NodeId, b: NodeId, width: usize) -> Result<NodeId> {
        self.same_shape(a, b, "group_dot")?;
        let av = self.value(a);
        let cols = av.cols();
        if width == 0 || !cols.is_multiple_of(width) {
            return Err(Error::Shape(format!("group width {width} for {cols} columns")));
        }
        let bv = self.value(b);
        let groups = cols / width;
        let n = av.rows();
        let mut out = Vec::with_capacity(n * groups);
        for (ra, rb) in av.data().chunks(width).zip(bv.data().chunks(width)) {
            out.push(ra.iter().zip(rb).map(|(&x, &y)| x * y).sum());
        }
        let v = Tensor::matrix(n, groups, out)?;
        Ok(self.push(v, Op::GroupDot { a, b, width }))
    }

    /// Row-wise inner products: `[N, k] × [N, k] → [N]`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "row_dot")?;
        let (av, bv) = (self.value(a), self.value(b));
        let k = av.cols();
        let out: Vec<S> = av
            .data()
            .chunks(k)
            .zip(bv.data().chunks(k))
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| x * y).sum())
            .collect();
        let v = Tensor::vector(out);
        Ok(self.push(v, Op::RowDot(a, b)))
    }

    pub fn row_softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let k = xv.cols();
        let data: Vec<S> = xv.data().chunks(k).flat_map(ops::softmax).collect();
        let v = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(v, Op::RowSoftmax(x))
    }

    /// Mean over segments of the softmax negative log-likelihood of each
    /// segment's labelled row.
    pub fn segment_nll(&mut self, scores: NodeId, segs: Rc<Segments>, labels: Vec<usize>) -> Result<NodeId> {
        let sv = self.value(scores);
        if sv.len() != segs.total() || labels.len() != segs.len() {
            return Err(Error::Shape(format!(
                "{} scores / {} labels for {} segments over {} rows",
                sv.len(),
                labels.len(),
                segs.len(),
                segs.total()
            )));
        }
        if segs.is_empty() {
            return Err(Error::EmptySet("loss over an empty batch"));
        }
        let mut total = S::zero();
        let mut probs = Vec::with_capacity(sv.len());
        for (b, &label) in labels.iter().enumerate() {
            let slice = &sv.data()[segs.range(b)];
            total = total + ops::softmax_nll(slice, label)?;
            probs.extend(ops::softmax(slice));
        }
        let v = Tensor::scalar(total / S::of_usize(segs.len()));
        Ok(self.push(v, Op::SegmentNll { scores, segs, labels, probs }))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum_squares());
        self.push(v, Op::SumSquares(x))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).data().iter().copied().sum());
        self.push(v, Op::Sum(x))
    }

    /// Reverse sweep from a scalar `loss`. Every registered parameter gets
    /// an entry; parameters off the loss path get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap<S>> {
        let grads = self.node_gradients(loss)?;
        let mut out = GradientMap::new();
        for (name, id) in &self.params {
            let g = match &grads[id.0] {
                Some(g) => Tensor::new(self.value(*id).shape().to_vec(), g.clone())?,
                None => Tensor::zeros(self.value(*id).shape()),
            };
            match out.get_mut(name) {
                // A name bound twice accumulates.
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                        *e = *e + *v;
                    }
                }
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }

    fn node_gradients(&self, loss: NodeId) -> Result<Vec<Option<Vec<S>>>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        fn slot<S: Scalar>(grads: &mut [Option<Vec<S>>], id: NodeId, len: usize) -> &mut Vec<S> {
            grads[id.0].get_or_insert_with(|| vec![S::zero(); len])
        }
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k) = (av.rows(), av.cols());
                let m = if bv.shape().len() == 1 { 1 } else { bv.cols() };
                // dA = G · Bᵀ
                let da = slot(grads, *a, n * k);
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv.data()[p * m..(p + 1) * m];
                        let s: S = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        da[i * k + p] = da[i * k + p] + s;
                    }
                }
                // dB = Aᵀ · G
                let db = slot(grads, *b, k * m);
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let av_ip = av.data()[i * k + p];
                        if av_ip == S::zero() {
                            continue;
                        }
                        let drow = &mut db[p * m..(p + 1) * m];
                        for (d, &x) in drow.iter_mut().zip(grow) {
                            *d = *d + av_ip * x;
                        }
                    }
                }
            }
            Op::AddBias(a, bias) => {
                let k = val(*bias).len();
                add_into(slot(grads, *a, g.len()), g);
                let db = slot(grads, *bias, k);
                for row in g.chunks(k) {
                    add_into(db, row);
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                let db = slot(grads, *b, g.len());
                for (d, &x) in db.iter_mut().zip(g) {
                    *d = *d - x;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let da = slot(grads, *a, g.len());
                for ((d, &x), &y) in da.iter_mut().zip(g).zip(bv) {
                    *d = *d + x * y;
                }
                let db = slot(grads, *b, g.len());
                for ((d, &x), &y) in db.iter_mut().zip(g).zip(av) {
                    *d = *d + x * y;
                }
            }
            Op::Scale(a, k) => {
                let da = slot(grads, *a, g.len());
                for (d, &x) in da.iter_mut().zip(g) {
                    *d = *d + x * *k;
                }
            }
            Op::MulConst(a, mask) => {
                let da = slot(grads, *a, g.len());
                for ((d, &x), &m) in da.iter_mut().zip(g).zip(mask) {
                    *d = *d + x * m;
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let da = slot(grads, *a, g.len());
                for ((d, &x), &t) in da.iter_mut().zip(g).zip(y) {
                    *d = *d + x * (S::one() - t * t);
                }
            }
            Op::KinkedTanh { z, c } => {
                let (zv, cv) = (val(*z), val(*c));
                let cols = zv.cols();
                let clen = cv.len();
                let ci = |i: usize| if clen == 1 { 0 } else { i % cols };
                let mut dc = vec![S::zero(); clen];
                {
                    let dz = slot(grads, *z, g.len());
                    for (i, (&x, &gi)) in zv.data().iter().zip(g).enumerate() {
                        let c = cv.data()[ci(i)];
                        dz[i] = dz[i] + gi * ops::kinked_tanh_grad(x, c);
                        if x < S::zero() {
                            dc[ci(i)] = dc[ci(i)] + gi * x.tanh();
                        }
                    }
                }
                add_into(slot(grads, *c, clen), &dc);
            }
            Op::KinkedLinear { z, c } => {
                let (zv, cv) = (val(*z), val(*c));
                let cols = zv.cols();
                let clen = cv.len();
                let ci = |i: usize| if clen == 1 { 0 } else { i % cols };
                let mut dc = vec![S::zero(); clen];
                {
                    let dz = slot(grads, *z, g.len());
                    for (i, (&x, &gi)) in zv.data().iter().zip(g).enumerate() {
                        if x < S::zero() {
                            dz[i] = dz[i] + gi * cv.data()[ci(i)];
                            dc[ci(i)] = dc[ci(i)] + gi * x;
                        } else {
                            dz[i] = dz[i] + gi;
                        }
                    }
                }
                add_into(slot(grads, *c, clen), &dc);
            }
            Op::Power { z, rho } => {
                let (zv, rv) = (val(*z), val(*rho));
                let cols = zv.cols();
                let rlen = rv.len();
                let ri = |i: usize| if rlen == 1 { 0 } else { i % cols };
                let mut dr = vec![S::zero(); rlen];
                {
                    let dz = slot(grads, *z, g.len());
                    for (i, (&x, &gi)) in zv.data().iter().zip(g).enumerate() {
                        if x > S::zero() {
                            let r = rv.data()[ri(i)];
                            let y = x.powf(r);
                            dz[i] = dz[i] + gi * r * y / x;
                            dr[ri(i)] = dr[ri(i)] + gi * y * x.ln();
                        }
                    }
                }
                add_into(slot(grads, *rho, rlen), &dr);
            }
            Op::SegmentMean(x, segs) => {
                let xv = val(*x);
                let k = xv.cols();
                let dx = slot(grads, *x, xv.len());
                for b in 0..segs.len() {
                    let inv = S::one() / S::of_usize(segs.size(b));
                    let grow = &g[b * k..(b + 1) * k];
                    for r in segs.range(b) {
                        for (d, &gv) in dx[r * k..(r + 1) * k].iter_mut().zip(grow) {
                            *d = *d + gv * inv;
                        }
                    }
                }
            }
            Op::SegmentExtreme { x, arg } => {
                let xv = val(*x);
                let k = xv.cols();
                let dx = slot(grads, *x, xv.len());
                for (flat, (&row, &gv)) in arg.iter().zip(g).enumerate() {
                    let j = flat % k;
                    dx[row * k + j] = dx[row * k + j] + gv;
                }
            }
            Op::Broadcast(x, segs) => {
                let xv = val(*x);
                let k = xv.cols();
                let dx = slot(grads, *x, xv.len());
                for b in 0..segs.len() {
                    for r in segs.range(b) {
                        add_into(&mut dx[b * k..(b + 1) * k], &g[r * k..(r + 1) * k]);
                    }
                }
            }
            Op::GroupDot { a, b, width } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let w = *width;
                {
                    let da = slot(grads, *a, av.len());
                    for (gi, &gv) in g.iter().enumerate() {
                        for t in 0..w {
                            da[gi * w + t] = da[gi * w + t] + gv * bv[gi * w + t];
                        }
                    }
                }
                let db = slot(grads, *b, bv.len());
                for (gi, &gv) in g.iter().enumerate() {
                    for t in 0..w {
                        db[gi * w + t] = db[gi * w + t] + gv * av[gi * w + t];
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (avt, bvt) = (val(*a), val(*b));
                let k = avt.cols();
                let (av, bv) = (avt.data(), bvt.data());
                {
                    let da = slot(grads, *a, av.len());
                    for (i, &gv) in g.iter().enumerate() {
                        for j in 0..k {
                            da[i * k + j] = da[i * k + j] + gv * bv[i * k + j];
                        }
                    }
                }
                let db = slot(grads, *b, bv.len());
                for (i, &gv) in g.iter().enumerate() {
                    for j in 0..k {
                        db[i * k + j] = db[i * k + j] + gv * av[i * k + j];
                    }
                }
            }
            Op::RowSoftmax(x) => {
                let y = node.value.data();
                let k = node.value.cols();
                let dx = slot(grads, *x, y.len());
                for ((drow, yrow), grow) in dx.chunks_mut(k).zip(y.chunks(k)).zip(g.chunks(k)) {
                    let dot: S = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = *d + yv * (gv - dot);
                    }
                }
            }
            Op::SegmentNll { scores, segs, labels, probs } => {
                let scale = g[0] / S::of_usize(segs.len());
                let ds = slot(grads, *scores, probs.len());
                for (b, &label) in labels.iter().enumerate() {
                    let range = segs.range(b);
                    let start = range.start;
                    for r in range {
                        let target = if r - start == label { S::one() } else { S::zero() };
                        ds[r] = ds[r] + scale * (probs[r] - target);
                    }
                }
            }
            Op::SumSquares(x) => {
                let xv = val(*x).data();
                let two = S::of(2.0) * g[0];
                let dx = slot(grads, *x, xv.len());
                for (d, &v) in dx.iter_mut().zip(xv) {
                    *d = *d + two * v;
                }
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                let dx = slot(grads, *x, n);
                dx.iter_mut().for_each(|d| *d = *d + g[0]);
            }
        }
    }
}

#[inline]
fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
