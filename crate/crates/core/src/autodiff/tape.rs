use serde::{Deserialize, Serialize};

use super::array::Array;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable arrays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }
}

/// Gradients aligned with the parameters of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Array>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store
                .values
                .iter()
                .map(|v| Array::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(Array::sum_of_squares)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales every gradient so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for g in &mut self.grads {
                for x in g.data_mut() {
                    *x *= factor;
                }
            }
        }
        norm
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Recip(Var),
    Transpose(Var),
    SumAll(Var),
    RowSum(Var),
    ColSum(Var),
    RowMax(Var, Vec<usize>),
    GlobalMax(Var, usize),
    AddRowBroadcast(Var, Var),
    MulColBroadcast(Var, Var),
    MulRowBroadcast(Var, Var),
    SubScalar(Var, Var),
    GatherRows(Var, Vec<usize>),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Records a computation for a single reverse pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order of the graph. [`Tape::backward`] consumes the tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let value = x.zip_map(y, |p, q| p + q);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let value = x.zip_map(y, |p, q| p - q);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let value = x.zip_map(y, |p, q| p * q);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        self.push(value, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(value, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / x);
        self.push(value, Op::Recip(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    fn non_empty(&self, op: &'static str, a: Var) -> Result<()> {
        if self.value(a).is_empty() {
            return Err(Error::Domain {
                op,
                reason: "empty array".into(),
            });
        }
        Ok(())
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.non_empty("sum_all", a)?;
        let value = Array::scalar(self.value(a).sum());
        Ok(self.push(value, Op::SumAll(a)))
    }

    /// `m×n → m×1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.non_empty("row_sum", a)?;
        let x = self.value(a);
        let value = Array::column_vector((0..x.rows()).map(|i| x.row(i).iter().sum()).collect());
        Ok(self.push(value, Op::RowSum(a)))
    }

    /// `m×n → 1×n`.
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        self.non_empty("col_sum", a)?;
        let x = self.value(a);
        let mut sums = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (s, v) in sums.iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        Ok(self.push(Array::row_vector(sums), Op::ColSum(a)))
    }

    /// `m×n → m×1`; ties go to the first index.
    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        self.non_empty("row_max", a)?;
        let x = self.value(a);
        let mut argmax = Vec::with_capacity(x.rows());
        let mut maxes = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let (j, m) = first_argmax(x.row(i));
            argmax.push(j);
            maxes.push(m);
        }
        Ok(self.push(Array::column_vector(maxes), Op::RowMax(a, argmax)))
    }

    /// Largest entry as a `1×1` array; ties go to the first index.
    pub fn global_max(&mut self, a: Var) -> Result<Var> {
        self.non_empty("global_max", a)?;
        let (j, m) = first_argmax(self.value(a).data());
        Ok(self.push(Array::scalar(m), Op::GlobalMax(a, j)))
    }

    /// `a[m×n] + b[1×n]` with `b` repeated over rows.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(Error::Dimension {
                op: "add_row_broadcast",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let value = Array::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + y.get(0, j));
        Ok(self.push(value, Op::AddRowBroadcast(a, b)))
    }

    /// `a[m×n] ⊙ v[m×1]`, scaling each row.
    pub fn mul_col_broadcast(&mut self, a: Var, v: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(v));
        if y.cols() != 1 || y.rows() != x.rows() {
            return Err(Error::Dimension {
                op: "mul_col_broadcast",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let value = Array::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * y.get(i, 0));
        Ok(self.push(value, Op::MulColBroadcast(a, v)))
    }

    /// `a[m×n] ⊙ v[1×n]`, scaling each column.
    pub fn mul_row_broadcast(&mut self, a: Var, v: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(v));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(Error::Dimension {
                op: "mul_row_broadcast",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let value = Array::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * y.get(0, j));
        Ok(self.push(value, Op::MulRowBroadcast(a, v)))
    }

    /// `a - s` for a `1×1` array `s`.
    pub fn sub_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let s_val = self.value(s).item().map_err(|_| Error::Dimension {
            op: "sub_scalar",
            lhs: self.value(a).shape(),
            rhs: self.value(s).shape(),
        })?;
        let value = self.value(a).map(|x| x - s_val);
        Ok(self.push(value, Op::SubScalar(a, s)))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Domain {
                op: "gather_rows",
                reason: format!("row {bad} out of range for {} rows", t.rows()),
            });
        }
        let value = Array::from_fn(indices.len(), t.cols(), |r, j| t.get(indices[r], j));
        Ok(self.push(value, Op::GatherRows(table, indices.to_vec())))
    }

    /// Weighted binary cross-entropy on logits, returned as a `1×1` sum:
    /// `Σ wᵢ (softplus(zᵢ) − yᵢ zᵢ)`, which equals `−Σ wᵢ log p(yᵢ)` with
    /// `p = sigmoid(z)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != targets.len() || targets.len() != weights.len() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                lhs: z.shape(),
                rhs: (targets.len(), weights.len()),
            });
        }
        let loss: f64 = z
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&zi, &yi), &wi)| if wi == 0.0 { 0.0 } else { wi * (softplus(zi) - yi * zi) })
            .sum();
        Ok(self.push(
            Array::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<GradStore> {
        let loss_shape = self.value(loss).shape();
        if loss_shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Array>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, contrib: Array| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            };
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul(&val(*b).transpose())?);
                    acc(*b, val(*a).transpose().matmul(&g)?);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), |gi, y| gi * y));
                    acc(*b, g.zip_map(val(*a), |gi, x| gi * x));
                }
                Op::Neg(a) => acc(*a, g.map(|x| -x)),
                Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
                Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y))),
                Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y))),
                Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gi, y| gi * y)),
                Op::Recip(a) => acc(*a, g.zip_map(&node.value, |gi, y| -gi * y * y)),
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::SumAll(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Array::filled(r, c, g.data()[0]));
                }
                Op::RowSum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Array::from_fn(r, c, |i, _| g.get(i, 0)));
                }
                Op::ColSum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Array::from_fn(r, c, |_, j| g.get(0, j)));
                }
                Op::RowMax(a, argmax) => {
                    let (r, c) = val(*a).shape();
                    let mut out = Array::zeros(r, c);
                    for (i, &j) in argmax.iter().enumerate() {
                        out.set(i, j, g.get(i, 0));
                    }
                    acc(*a, out);
                }
                Op::GlobalMax(a, j) => {
                    let (r, c) = val(*a).shape();
                    let mut out = Array::zeros(r, c);
                    out.data_mut()[*j] = g.data()[0];
                    acc(*a, out);
                }
                Op::AddRowBroadcast(a, b) => {
                    let mut gb = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (s, x) in gb.iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    acc(*a, g.clone());
                    acc(*b, Array::row_vector(gb));
                }
                Op::MulColBroadcast(a, v) => {
                    let (x, y) = (val(*a), val(*v));
                    let ga = Array::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * y.get(i, 0));
                    let gv = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(x.row(i)).map(|(p, q)| p * q).sum())
                        .collect();
                    acc(*a, ga);
                    acc(*v, Array::column_vector(gv));
                }
                Op::MulRowBroadcast(a, v) => {
                    let (x, y) = (val(*a), val(*v));
                    let ga = Array::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * y.get(0, j));
                    let mut gv = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for ((s, p), q) in gv.iter_mut().zip(g.row(i)).zip(x.row(i)) {
                            *s += p * q;
                        }
                    }
                    acc(*a, ga);
                    acc(*v, Array::row_vector(gv));
                }
                Op::SubScalar(a, s) => {
                    acc(*s, Array::scalar(-g.sum()));
                    acc(*a, g.clone());
                }
                Op::GatherRows(table, indices) => {
                    let (r, c) = val(*table).shape();
                    let mut out = Array::zeros(r, c);
                    for (row, &src) in indices.iter().enumerate() {
                        for j in 0..c {
                            let cur = out.get(src, j);
                            out.set(src, j, cur + g.get(row, j));
                        }
                    }
                    acc(*table, out);
                }
                Op::BceWithLogits {
                    logits,
                    targets,
                    weights,
                } => {
                    let g0 = g.data()[0];
                    let z = val(*logits);
                    let gz = z
                        .data()
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&zi, &yi), &wi)| g0 * wi * (sigmoid(zi) - yi))
                        .collect();
                    acc(*logits, Array::column_vector(gz));
                }
            }
            grads[idx] = Some(g);
        }

        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(GradStore {
            grads,
            shapes,
            params,
        })
    }
}

fn first_argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (j, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = j;
        }
    }
    (best, xs[best])
}

/// Gradients of every node on a consumed tape.
#[derive(Debug)]
pub struct GradStore {
    grads: Vec<Option<Array>>,
    shapes: Vec<(usize, usize)>,
    params: Vec<(ParamId, usize)>,
}

impl GradStore {
    /// dLoss/dv; zero for nodes the loss does not depend on.
    pub fn wrt(&self, v: Var) -> Array {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Array::zeros(r, c)
            }
        }
    }

    /// Sums gradients over every leaf that read each parameter.
    pub fn param_grads(&self, store: &ParamStore) -> Gradients {
        let mut out = Gradients::zeros_like(store);
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                out.grads[id.0].add_assign(g);
            }
        }
        out
    }
}
