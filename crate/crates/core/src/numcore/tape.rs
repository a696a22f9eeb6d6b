//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation executed during one forward pass.
//! Node indices are assigned in execution order, so the record is already
//! topologically sorted and [`Tape::backward`] walks it once in reverse.

use crate::numcore::tensor::{matmul_a_bt, matmul_at_b, matmul_raw};
use crate::numcore::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Softplus,
    Square,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Matmul(Var, Var),
    Softmax(Var),
    Reduce {
        op: Reduce,
        input: Var,
        axis: Option<usize>,
        // flat input index chosen for each output element (max/min only)
        picks: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    BagMean {
        table: Var,
        bags: Vec<Vec<usize>>,
    },
    SelectRows {
        mask: Vec<bool>,
        on: Var,
        off: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Operation record for one forward graph.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn stable_softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` was
    /// reachable from the loss and tracks gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 2,
                actual: s.len(),
            });
        }
        Ok((s[0], s[1]))
    }

    // ---- elementwise -------------------------------------------------------

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let value = match op {
            Unary::Sigmoid => x.map(stable_sigmoid),
            Unary::Tanh => x.map(|v| v.tanh()),
            Unary::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Unary::Exp => x.map(|v| v.exp()),
            Unary::Log => {
                if x.data().iter().any(|&v| !(v > T::zero())) {
                    return Err(TensorError::LogDomain);
                }
                x.map(|v| v.ln())
            }
            Unary::Softplus => x.map(stable_softplus),
            Unary::Square => x.map(|v| v * v),
            Unary::Neg => x.map(|v| -v),
        };
        let name = match op {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Softplus => "softplus",
            Unary::Square => "square",
            Unary::Neg => "neg",
        };
        let rg = self.rg(a);
        self.push(value, Op::Unary(op, a), rg, name)
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        self.same_shape(name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data: Vec<T> = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| match op {
                Binary::Add => p + q,
                Binary::Sub => p - q,
                Binary::Mul => p * q,
            })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Binary(op, a, b), rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Log, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Softplus, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Square, a)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg, "scale")
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, shift: T) -> Result<Var, TensorError> {
        let value = self.value(a).map(|v| v + shift);
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg, "offset")
    }

    /// Adds a row vector (`[k]` or `[1×k]`) to every row of an `n×k` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (n, k) = self.matrix_dims("add_row", a)?;
        let rs = self.shape(row);
        let ok = matches!(rs, [c] if *c == k) || matches!(rs, [1, c] if *c == k);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: rs.to_vec(),
            });
        }
        let (x, r) = (self.value(a).data(), self.value(row).data());
        let mut data = x.to_vec();
        for i in 0..n {
            for j in 0..k {
                data[i * k + j] = data[i * k + j] + r[j];
            }
        }
        let value = Tensor::new(vec![n, k], data)?;
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg, "add_row")
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Matmul(a, b), rg, "matmul")
    }

    /// Row-wise softmax of an `n×K` matrix, `K ≥ 2`.
    pub fn softmax(&mut self, logits: Var) -> Result<Var, TensorError> {
        let (n, k) = self.matrix_dims("softmax", logits)?;
        if k < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax",
                left: vec![n, k],
                right: vec![n, 2],
            });
        }
        let z = self.value(logits);
        if !z.is_finite() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            data.extend(softmax_row(z.row(i)));
        }
        let value = Tensor::new(vec![n, k], data)?;
        let rg = self.rg(logits);
        self.push(value, Op::Softmax(logits), rg, "softmax")
    }

    // ---- reductions --------------------------------------------------------

    /// Reduces over one axis, or over every element when `axis` is `None`.
    ///
    /// Max and min route their sub-gradient to the first extremal element.
    pub fn reduce(&mut self, op: Reduce, a: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(TensorError::Empty { op: "reduce" });
        }
        let shape = x.shape().to_vec();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, x.len(), 1, Vec::new()),
            Some(ax) if ax < shape.len() => {
                let (o, l, i) = axis_extents(&shape, ax);
                let mut s = shape.clone();
                s.remove(ax);
                (o, l, i, s)
            }
            Some(ax) => {
                return Err(TensorError::InvalidAxis {
                    axis: ax,
                    rank: shape.len(),
                })
            }
        };
        let data = x.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut picks = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                match op {
                    Reduce::Sum | Reduce::Mean => {
                        let mut acc = T::zero();
                        for j in 0..len {
                            acc = acc + data[idx(j)];
                        }
                        if op == Reduce::Mean {
                            acc = acc / T::count(len);
                        }
                        out.push(acc);
                    }
                    Reduce::Max | Reduce::Min => {
                        let mut best = idx(0);
                        for j in 1..len {
                            let cand = data[idx(j)];
                            let better = if op == Reduce::Max {
                                cand > data[best]
                            } else {
                                cand < data[best]
                            };
                            if better {
                                best = idx(j);
                            }
                        }
                        picks.push(best);
                        out.push(data[best]);
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a);
        self.push(value, Op::Reduce { op, input: a, axis, picks }, rg, "reduce")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        self.reduce(Reduce::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        self.reduce(Reduce::Mean, a, None)
    }

    // ---- structural --------------------------------------------------------

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_cols" })?;
        let (n, _) = self.matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if r != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![n, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (n, k) = self.matrix_dims("slice_cols", a)?;
        if start >= end || end > k {
            return Err(TensorError::IndexOutOfRange { index: end, bound: k + 1 });
        }
        let x = self.value(a);
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&x.row(i)[start..end]);
        }
        let value = Tensor::new(vec![n, end - start], data)?;
        let rg = self.rg(a);
        self.push(value, Op::SliceCols { input: a, start }, rg, "slice_cols")
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (v, d) = self.matrix_dims("gather_rows", table)?;
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange { index: id, bound: v });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table);
        self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    /// One row per bag holding the mean of the bag's table rows; empty bags
    /// yield zero rows.
    pub fn bag_mean(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var, TensorError> {
        let (v, d) = self.matrix_dims("bag_mean", table)?;
        let t = self.value(table);
        let mut data = vec![T::zero(); bags.len() * d];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                continue;
            }
            let out = &mut data[b * d..(b + 1) * d];
            for &id in bag {
                if id >= v {
                    return Err(TensorError::IndexOutOfRange { index: id, bound: v });
                }
                for (o, &w) in out.iter_mut().zip(t.row(id)) {
                    *o = *o + w;
                }
            }
            let inv = T::one() / T::count(bag.len());
            out.iter_mut().for_each(|o| *o = *o * inv);
        }
        let value = Tensor::new(vec![bags.len(), d], data)?;
        let rg = self.rg(table);
        self.push(
            value,
            Op::BagMean {
                table,
                bags: bags.to_vec(),
            },
            rg,
            "bag_mean",
        )
    }

    /// Row `i` of the result is row `i` of `on` where `mask[i]`, otherwise
    /// row `i` of `off`. Values are copied, never blended.
    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Result<Var, TensorError> {
        self.same_shape("select_rows", on, off)?;
        let (n, k) = self.matrix_dims("select_rows", on)?;
        if mask.len() != n {
            return Err(TensorError::DataLength {
                expected: n,
                actual: mask.len(),
            });
        }
        let (a, b) = (self.value(on), self.value(off));
        let mut data = Vec::with_capacity(n * k);
        for (i, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { a.row(i) } else { b.row(i) });
        }
        let value = Tensor::new(vec![n, k], data)?;
        let rg = self.rg(on) || self.rg(off);
        self.push(
            value,
            Op::SelectRows {
                mask: mask.to_vec(),
                on,
                off,
            },
            rg,
            "select_rows",
        )
    }

    // ---- fused losses ------------------------------------------------------

    /// Mean binary cross-entropy of `n×1` logits against targets in `[0,1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var, TensorError> {
        let z = self.value(logits);
        if z.len() != targets.len() || z.is_empty() {
            return Err(TensorError::DataLength {
                expected: z.len(),
                actual: targets.len(),
            });
        }
        let mut acc = T::zero();
        for (&zi, &yi) in z.data().iter().zip(targets) {
            acc = acc + zi.max(T::zero()) - zi * yi + (-zi.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(acc / T::count(targets.len()));
        let rg = self.rg(logits);
        self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
            "bce_with_logits",
        )
    }

    /// Mean categorical cross-entropy of `n×K` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let (n, k) = self.matrix_dims("softmax_cross_entropy", logits)?;
        if labels.len() != n || n == 0 {
            return Err(TensorError::DataLength {
                expected: n,
                actual: labels.len(),
            });
        }
        let z = self.value(logits);
        let mut acc = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(TensorError::IndexOutOfRange { index: y, bound: k });
            }
            let row = z.row(i);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            acc = acc + lse - row[y];
        }
        let value = Tensor::scalar(acc / T::count(n));
        let rg = self.rg(logits);
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    // ---- backward ----------------------------------------------------------

    /// Populates `grad` on every gradient-tracking node reachable from the
    /// scalar `loss`. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            let shape = self.nodes[idx].value.shape().to_vec();
            self.nodes[idx].grad = Some(Tensor::new(shape, g)?);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let send = |v: Var, contrib: Vec<T>, grads: &mut [Option<Vec<T>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a = *a + c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let local: Vec<T> = match op {
                    Unary::Sigmoid => out.iter().zip(g).map(|(&s, &gi)| gi * s * (T::one() - s)).collect(),
                    Unary::Tanh => out.iter().zip(g).map(|(&t, &gi)| gi * (T::one() - t * t)).collect(),
                    Unary::Relu => x
                        .iter()
                        .zip(g)
                        .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect(),
                    Unary::Exp => out.iter().zip(g).map(|(&e, &gi)| gi * e).collect(),
                    Unary::Log => x.iter().zip(g).map(|(&xi, &gi)| gi / xi).collect(),
                    Unary::Softplus => x.iter().zip(g).map(|(&xi, &gi)| gi * stable_sigmoid(xi)).collect(),
                    Unary::Square => x.iter().zip(g).map(|(&xi, &gi)| gi * (xi + xi)).collect(),
                    Unary::Neg => g.iter().map(|&gi| -gi).collect(),
                };
                send(*a, local, grads);
            }
            Op::Binary(op, a, b) => {
                let (a, b) = (*a, *b);
                match op {
                    Binary::Add => {
                        send(a, g.to_vec(), grads);
                        send(b, g.to_vec(), grads);
                    }
                    Binary::Sub => {
                        send(a, g.to_vec(), grads);
                        send(b, g.iter().map(|&v| -v).collect(), grads);
                    }
                    Binary::Mul => {
                        let (x, y) = (self.value(a).data(), self.value(b).data());
                        if self.rg(a) {
                            send(a, g.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect(), grads);
                        }
                        if self.rg(b) {
                            send(b, g.iter().zip(x).map(|(&gi, &xi)| gi * xi).collect(), grads);
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.to_vec(), grads);
                if self.rg(*row) {
                    let k = self.value(*row).len();
                    let mut acc = vec![T::zero(); k];
                    for chunk in g.chunks(k) {
                        acc.iter_mut().zip(chunk).for_each(|(s, &c)| *s = *s + c);
                    }
                    send(*row, acc, grads);
                }
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|&gi| gi * *f).collect(), grads),
            Op::Offset(a) => send(*a, g.to_vec(), grads),
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if self.rg(a) {
                    send(a, matmul_a_bt(g, self.value(b).data(), m, k, n), grads);
                }
                if self.rg(b) {
                    send(b, matmul_at_b(self.value(a).data(), g, m, k, n), grads);
                }
            }
            Op::Softmax(a) => {
                let k = node.value.cols();
                let mut local = Vec::with_capacity(out.len());
                for (s_row, g_row) in out.chunks(k).zip(g.chunks(k)) {
                    let dot: T = s_row.iter().zip(g_row).map(|(&s, &gi)| s * gi).sum();
                    local.extend(s_row.iter().zip(g_row).map(|(&s, &gi)| s * (gi - dot)));
                }
                send(*a, local, grads);
            }
            Op::Reduce { op, input, axis, picks } => {
                let x = self.value(*input);
                let mut local = vec![T::zero(); x.len()];
                match op {
                    Reduce::Max | Reduce::Min => {
                        for (&p, &gi) in picks.iter().zip(g) {
                            local[p] = local[p] + gi;
                        }
                    }
                    Reduce::Sum | Reduce::Mean => {
                        let (outer, len, inner) = match axis {
                            None => (1, x.len(), 1),
                            Some(ax) => axis_extents(x.shape(), *ax),
                        };
                        let scale = if *op == Reduce::Mean {
                            T::one() / T::count(len)
                        } else {
                            T::one()
                        };
                        for o in 0..outer {
                            for i in 0..inner {
                                let gi = g[o * inner + i] * scale;
                                for j in 0..len {
                                    local[o * len * inner + j * inner + i] = gi;
                                }
                            }
                        }
                    }
                }
                send(*input, local, grads);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut local = Vec::with_capacity(self.value(p).len());
                        for row in g.chunks(total) {
                            local.extend_from_slice(&row[start..start + w]);
                        }
                        send(p, local, grads);
                    }
                    start += w;
                }
            }
            Op::SliceCols { input, start } => {
                let x = self.value(*input);
                let k = x.cols();
                let w = node.value.cols();
                let mut local = vec![T::zero(); x.len()];
                for (i, row) in g.chunks(w).enumerate() {
                    local[i * k + start..i * k + start + w].copy_from_slice(row);
                }
                send(*input, local, grads);
            }
            Op::GatherRows { table, ids } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut local = vec![T::zero(); t.len()];
                for (row, &id) in g.chunks(d).zip(ids) {
                    let dst = &mut local[id * d..(id + 1) * d];
                    dst.iter_mut().zip(row).for_each(|(a, &c)| *a = *a + c);
                }
                send(*table, local, grads);
            }
            Op::BagMean { table, bags } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut local = vec![T::zero(); t.len()];
                for (row, bag) in g.chunks(d).zip(bags) {
                    if bag.is_empty() {
                        continue;
                    }
                    let inv = T::one() / T::count(bag.len());
                    for &id in bag {
                        let dst = &mut local[id * d..(id + 1) * d];
                        dst.iter_mut().zip(row).for_each(|(a, &c)| *a = *a + c * inv);
                    }
                }
                send(*table, local, grads);
            }
            Op::SelectRows { mask, on, off } => {
                let k = node.value.cols();
                let mut g_on = vec![T::zero(); g.len()];
                let mut g_off = vec![T::zero(); g.len()];
                for (i, &m) in mask.iter().enumerate() {
                    let dst = if m { &mut g_on } else { &mut g_off };
                    dst[i * k..(i + 1) * k].copy_from_slice(&g[i * k..(i + 1) * k]);
                }
                send(*on, g_on, grads);
                send(*off, g_off, grads);
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits).data();
                let scale = g[0] / T::count(targets.len());
                let local = z
                    .iter()
                    .zip(targets)
                    .map(|(&zi, &yi)| (stable_sigmoid(zi) - yi) * scale)
                    .collect();
                send(*logits, local, grads);
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let z = self.value(*logits);
                let scale = g[0] / T::count(labels.len());
                let mut local = Vec::with_capacity(z.len());
                for (i, &y) in labels.iter().enumerate() {
                    for (j, p) in softmax_row(z.row(i)).into_iter().enumerate() {
                        let target = if j == y { T::one() } else { T::zero() };
                        local.push((p - target) * scale);
                    }
                }
                send(*logits, local, grads);
            }
        }
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    /// Central-difference check of `f` with respect to every input element.
    fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        tape.backward(loss).unwrap();
        let h = 1e-5;
        for (which, t) in inputs.iter().enumerate() {
            let analytic = tape.grad(vars[which]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for e in 0..t.len() {
                let eval = |delta: f64| {
                    let mut moved = inputs.clone();
                    moved[which].data_mut()[e] += delta;
                    let mut tp = Tape::new();
                    let vs: Vec<Var> = moved.into_iter().map(|t| tp.param(t)).collect();
                    let l = f(&mut tp, &vs);
                    tp.value(l).item().unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let ad = analytic.data()[e];
                let rel = (ad - fd).abs() / (fd.abs() + 1e-8);
                assert!(rel < 1e-4 || (ad - fd).abs() < 1e-9, "input {which} elem {e}: ad {ad} fd {fd}");
            }
        }
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(Tensor::identity(2));
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(p), tape.value(a));
        let ones = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let q = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(q).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(a, c), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn unary_point_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::vector(vec![0.0, -3.0]));
        let s = tape.sigmoid(x).unwrap();
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(s).data()[0], 0.5);
        assert_eq!(tape.value(r).data()[1], 0.0);
        let big = tape.constant(Tensor::vector(vec![-800.0, 800.0, 36.0]));
        let s = tape.sigmoid(big).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v >= 0.0 && v <= 1.0));
    }

    #[test]
    fn log_of_non_positive_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(TensorError::LogDomain)));
    }

    #[test]
    fn non_finite_results_are_surfaced() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::vector(vec![1000.0]));
        assert!(matches!(tape.exp(x), Err(TensorError::NonFinite { .. })));
        let z = tape.constant(Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap());
        assert!(matches!(tape.softmax(z), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::from_rows(&[vec![2.0; 4], vec![0.0, 3f64.ln(), 0.0, 0.0]]).unwrap());
        let s = tape.softmax(z).unwrap();
        assert!(tape.value(s).row(0).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let z2 = tape.constant(Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap());
        let s2 = tape.softmax(z2).unwrap();
        assert!((tape.value(s2).data()[0] - 0.25).abs() < 1e-15);
        assert!((tape.value(s2).data()[1] - 0.75).abs() < 1e-15);
        let one_col = tape.constant(Tensor::zeros(&[3, 1]));
        assert!(tape.softmax(one_col).is_err());
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = tape.sum(x).unwrap();
        assert_eq!(tape.value(s).item(), Some(6.0));
        let c = tape.constant(Tensor::full(&[2, 3], 4.5));
        let m = tape.mean(c).unwrap();
        assert_eq!(tape.value(m).item(), Some(4.5));
        assert!(matches!(tape.reduce(Reduce::Sum, c, Some(2)), Err(TensorError::InvalidAxis { .. })));
        let mx = tape.reduce(Reduce::Max, c, Some(1)).unwrap();
        assert_eq!(tape.value(mx).shape(), &[2]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean(x).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 5.0, 5.0, 2.0]));
        let m = tape.reduce(Reduce::Max, x, None).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_closed_forms_and_contract() {
        let w = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let mut tape = Tape::<f64>::new();
        let v = tape.param(w.clone());
        let s = tape.sum(v).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[1.0; 3]);
        assert!(matches!(tape.backward(s), Err(TensorError::BackwardTwice)));

        let mut tape = Tape::<f64>::new();
        let v = tape.param(w.clone());
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[1.0, -2.0, 4.0]);

        let mut tape = Tape::<f64>::new();
        let v = tape.param(w);
        assert!(matches!(tape.backward(v), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = tape.param(Tensor::vector(vec![3.0, 4.0]));
        let m = tape.mul(c, p).unwrap();
        let s = tape.sum(m).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn gradient_checks_for_every_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let m = rng.random_range(1..=6);
            let k = rng.random_range(1..=6);
            let n = rng.random_range(2..=6);
            let a = random(&mut rng, &[m, k]);
            let b = random(&mut rng, &[k, n]);
            let w = random(&mut rng, &[m, n]);
            check(vec![a.clone(), b.clone(), w.clone()], |t, v| {
                let p = t.matmul(v[0], v[1]).unwrap();
                let q = t.mul(p, v[2]).unwrap();
                t.sum(q).unwrap()
            });
            for op in [Unary::Sigmoid, Unary::Tanh, Unary::Exp, Unary::Softplus, Unary::Square, Unary::Neg, Unary::Relu] {
                check(vec![w.clone(), a.clone()], |t, v| {
                    let u = t.unary(op, v[0]).unwrap();
                    let sq = t.mul(u, u).unwrap();
                    let r = t.reduce(Reduce::Sum, sq, Some(0)).unwrap();
                    let s = t.sum(r).unwrap();
                    let s2 = t.sum(v[1]).unwrap();
                    t.add(s, s2).unwrap()
                });
            }
            let pos = w.map(|v| v.abs() + 0.3);
            check(vec![pos], |t, v| {
                let l = t.log(v[0]).unwrap();
                let sq = t.square(l).unwrap();
                t.sum(sq).unwrap()
            });
            let row = random(&mut rng, &[n]);
            check(vec![w.clone(), row, w.clone()], |t, v| {
                let s = t.add_row(v[0], v[1]).unwrap();
                let sm = t.softmax(s).unwrap();
                let p = t.mul(sm, v[2]).unwrap();
                let r = t.reduce(Reduce::Mean, p, Some(1)).unwrap();
                let mx = t.reduce(Reduce::Max, r, None).unwrap();
                let mn = t.reduce(Reduce::Min, p, Some(0)).unwrap();
                let s2 = t.sum(mn).unwrap();
                let s3 = t.scale(s2, 0.7).unwrap();
                let s4 = t.offset(s3, 1.0).unwrap();
                t.sub(mx, s4).unwrap()
            });
            let ids: Vec<usize> = (0..5).map(|_| rng.random_range(0..m)).collect();
            let bags = vec![ids[..2].to_vec(), vec![], ids[2..].to_vec()];
            let mask: Vec<bool> = (0..3).map(|i| i != 1).collect();
            check(vec![w.clone(), random(&mut rng, &[3, n])], |t, v| {
                let g = t.gather_rows(v[0], &ids).unwrap();
                let b = t.bag_mean(v[0], &bags).unwrap();
                let sel = t.select_rows(&mask, b, v[1]).unwrap();
                let c = t.concat_cols(&[sel, v[1]]).unwrap();
                let sl = t.slice_cols(c, 1, n + 1).unwrap();
                let th = t.tanh(sl).unwrap();
                let s1 = t.sum(th).unwrap();
                let gs = t.sigmoid(g).unwrap();
                let s2 = t.sum(gs).unwrap();
                t.add(s1, s2).unwrap()
            });
            let targets: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
            let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            check(vec![random(&mut rng, &[m, 1]), w.clone()], |t, v| {
                let a = t.bce_with_logits(v[0], &targets).unwrap();
                let b = t.softmax_cross_entropy(v[1], &labels).unwrap();
                t.add(a, b).unwrap()
            });
        }
    }

    #[test]
    fn identical_passes_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let a = random(&mut rng, &[4, 5]);
            let b = random(&mut rng, &[5, 3]);
            let mut tape = Tape::<f64>::new();
            let (va, vb) = (tape.param(a), tape.param(b));
            let p = tape.matmul(va, vb).unwrap();
            let s = tape.softmax(p).unwrap();
            let l = tape.sum(s).unwrap();
            tape.backward(l).unwrap();
            (tape.value(s).clone(), tape.grad(va).unwrap().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn works_for_single_precision() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::vector(vec![0.7f32]));
        let t = tape.tanh(x).unwrap();
        let s = tape.sum(t).unwrap();
        tape.backward(s).unwrap();
        let expected = 1.0 - 0.7f32.tanh().powi(2);
        assert!((tape.grad(x).unwrap().data()[0] - expected).abs() < 1e-6);
    }
}
