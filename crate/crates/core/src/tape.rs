//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its value and, when any operand is tracked, the rule needed to
//! push gradients back to its operands. Node ids are assigned in creation
//! order, so operands always precede results and a single reverse sweep is a
//! valid topological traversal.
//!
//! Nodes created from [`Tape::constant`] (and everything computed only from
//! constants) are untracked: `backward` never visits them. Freezing a network
//! is therefore just binding its parameters as constants.

use crate::tensor::{gemm, sigmoid, split_axis, MatRef, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    SumAll(Var),
    SumAxis(Var, usize),
    Concat(Var, Var),
    Select(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves the gradient out, leaving `None`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    /// A tracked leaf: gradients will be reported for it.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// The value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push_leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, operands: &[Var]) -> Var {
        let tracked = operands.iter().any(|v| self.nodes[v.0].tracked);
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Broadcast add of a bias row over every row of a matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(row))?;
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("a tensor always matches its own shape")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).sigmoid();
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).tanh();
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).exp();
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).log()?;
        Ok(self.push(value, Op::Log(a), &[a]))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).softplus();
        self.push(value, Op::Softplus(a), &[a])
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).clamp(lo, hi);
        self.push(value, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax();
        self.push(value, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = self.value(a).log_softmax();
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = self.value(a).sum_axis(axis)?;
        Ok(self.push(value, Op::SumAxis(a, axis), &[a]))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let dim = self.value(a).shape().get(axis).copied().unwrap_or(1) as f64;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / dim))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_last(self.value(b))?;
        Ok(self.push(value, Op::Concat(a, b), &[a, b]))
    }

    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_last(start, end)?;
        Ok(self.push(value, Op::Select(a, (start..end).collect()), &[a]))
    }

    pub fn select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).select_last(indices)?;
        Ok(self.push(value, Op::Select(a, indices.to_vec()), &[a]))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.apply_rule(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.axpy(1.0, &delta).expect("gradient shape matches its node"),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Gradient slot for `v`, zero-initialised on first use.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let shape = self.nodes[v.0].value.shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn apply_rule(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = x.data().iter().zip(g.data()).map(|(&x, &g)| f(x, g)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape as operand")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.tracked(*a) {
                    let da = self.slot(grads, *a);
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(g.data(), n),
                        MatRef::transposed(bv.data(), n),
                        1.0,
                        da.data_mut(),
                    );
                }
                if self.tracked(*b) {
                    let db = self.slot(grads, *b);
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(av.data(), k),
                        MatRef::row_major(g.data(), n),
                        1.0,
                        db.data_mut(),
                    );
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.mul(val(*b)).expect("same shape"));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g.mul(val(*a)).expect("same shape"));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracked(*row) {
                    let summed = g.sum_axis(0).expect("matrix gradient");
                    let summed = summed
                        .reshape(val(*row).shape().to_vec())
                        .expect("bias length matches columns");
                    self.accumulate(grads, *row, summed);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = elementwise(val(*a), &|x, g| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = elementwise(&node.value, &|y, g| g * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = elementwise(&node.value, &|y, g| g * (1.0 - y * y));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = elementwise(&node.value, &|y, g| g * y);
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = elementwise(val(*a), &|x, g| g / x);
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = elementwise(val(*a), &|x, g| g * sigmoid(x));
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = elementwise(val(*a), &|x, g| if x >= lo && x <= hi { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = y.clone();
                for (dr, (yr, gr)) in d
                    .data_mut()
                    .chunks_mut(c)
                    .zip(y.data().chunks(c).zip(g.data().chunks(c)))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = g.clone();
                for (dr, (yr, gr)) in d
                    .data_mut()
                    .chunks_mut(c)
                    .zip(y.data().chunks(c).zip(g.data().chunks(c)))
                {
                    let total: f64 = gr.iter().sum();
                    for (dv, &yv) in dr.iter_mut().zip(yr) {
                        *dv -= yv.exp() * total;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let d = Tensor::full(val(*a).shape(), g.data()[0]);
                self.accumulate(grads, *a, d);
            }
            Op::SumAxis(a, axis) => {
                let shape = val(*a).shape();
                let (outer, dim, inner) = split_axis(shape, *axis);
                let mut d = Tensor::zeros(shape);
                let dd = d.data_mut();
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for k in 0..dim {
                        dd[(o * dim + k) * inner..(o * dim + k + 1) * inner].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Concat(a, b) => {
                let ca = val(*a).cols();
                if self.tracked(*a) {
                    let d = g.slice_last(0, ca).expect("concat split");
                    self.accumulate(grads, *a, d);
                }
                if self.tracked(*b) {
                    let d = g.slice_last(ca, g.cols()).expect("concat split");
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Select(a, indices) => {
                let src_cols = val(*a).cols();
                let dst = self.slot(grads, *a);
                let n = indices.len();
                for (r, grow) in g.data().chunks(n).enumerate() {
                    let drow = &mut dst.data_mut()[r * src_cols..(r + 1) * src_cols];
                    for (&i, &gv) in indices.iter().zip(grow) {
                        drow[i] += gv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::new(vec![1], vec![3.0]).unwrap());
        let sq = tape.square(x);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
        assert_eq!(grads.get(loss).unwrap().data(), &[1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::full(&[2], 1.5));
        let zero = tape.scale(x, 0.0);
        let c = tape.constant(Tensor::full(&[2], 4.0));
        let y = tape.add(zero, c).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[3]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn constants_are_not_visited() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::full(&[2, 2], 1.0));
        let x = tape.var(Tensor::full(&[1, 2], 2.0));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn reused_operand_accumulates() {
        // loss = sum(x + x + x) → grad 3
        let mut tape = Tape::new();
        let x = tape.var(Tensor::full(&[2], 0.7));
        let a = tape.add(x, x).unwrap();
        let b = tape.add(a, x).unwrap();
        let loss = tape.sum(b);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn every_tracked_node_gets_gradient_of_its_shape() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::full(&[2, 3], 0.5));
        let w = tape.var(Tensor::full(&[3, 4], 0.1));
        let h = tape.matmul(x, w).unwrap();
        let s = tape.softmax(h);
        let loss = tape.mean(s);
        let grads = tape.backward(loss).unwrap();
        for v in [x, w, h, s, loss] {
            assert_eq!(grads.get(v).unwrap().shape(), tape.value(v).shape());
        }
    }
}
