//! Reverse-mode automatic differentiation over a flat tape.
//!
//! The graph is define-by-run: record a forward pass, call [`Tape::backward`]
//! once, read the gradients, and drop or reuse the tape. `backward` clears
//! the tape, so every training step works on a fresh graph and there is no
//! cross-step cache state to invalidate. Accumulating over several passes is
//! possible but explicit: sum the returned gradient tensors yourself.

use crate::kernels;
use crate::tensor::{Tensor, TensorError};

/// Handle to a node in one tape. Ids are only meaningful for the tape (and
/// the backward pass) that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    ConcatLast(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    /// Broadcast a rank-1 bias across the rows of a rank-2 tensor.
    AddBias(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumSquares(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by the node ids of the
/// graph that was just consumed.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Takes ownership of the gradient for `id`, if one was produced.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

/// A define-by-run computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf holding `value`.
    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, needs_grad)
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// The forward value at `id`.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        Ok(())
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check_same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        Ok(self.push(Op::Add(a, b), value, self.needs(a) || self.needs(b)))
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check_same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let value = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        Ok(self.push(Op::Sub(a, b), value, self.needs(a) || self.needs(b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check_same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        Ok(self.push(Op::Mul(a, b), value, self.needs(a) || self.needs(b)))
    }

    /// Multiplication by a compile-time-known scalar.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        if !factor.is_finite() {
            return Err(TensorError::NonFinite { context: "scale".into() });
        }
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let value = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        Ok(self.push(Op::Scale(a, factor), value, self.needs(a)))
    }

    /// Matrix product of two rank-2 tensors, (m×k)·(k×n).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let data = kernels::matmul_nn(va.data(), vb.data(), m, k, n);
        let value = Tensor::from_raw(vec![m, n], data);
        Ok(self.push(Op::MatMul(a, b), value, self.needs(a) || self.needs(b)))
    }

    /// Concatenation along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "concat_last",
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        };
        if va.rank() == 0 || va.rank() != vb.rank() {
            return Err(mismatch());
        }
        let lead = va.rank() - 1;
        if va.shape()[..lead] != vb.shape()[..lead] {
            return Err(mismatch());
        }
        let (wa, wb) = (va.shape()[lead], vb.shape()[lead]);
        let outer: usize = va.shape()[..lead].iter().product();
        let mut data = Vec::with_capacity(outer * (wa + wb));
        for r in 0..outer {
            data.extend_from_slice(&va.data()[r * wa..(r + 1) * wa]);
            data.extend_from_slice(&vb.data()[r * wb..(r + 1) * wb]);
        }
        let mut shape = va.shape().to_vec();
        shape[lead] = wa + wb;
        let value = Tensor::from_raw(shape, data);
        Ok(self.push(Op::ConcatLast(a, b), value, self.needs(a) || self.needs(b)))
    }

    /// Leaky rectifier: `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId, TensorError> {
        if !slope.is_finite() {
            return Err(TensorError::NonFinite { context: "leaky_relu".into() });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        let value = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        Ok(self.push(Op::LeakyRelu(a, slope), value, self.needs(a)))
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.rank() != 2 || vb.rank() != 1 || vx.cols() != vb.len() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, n) = (vx.rows(), vx.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = vx.row(r);
            for j in 0..n {
                data.push(row[j] + vb.data()[j]);
            }
        }
        let value = Tensor::from_raw(vec![m, n], data);
        Ok(self.push(Op::AddBias(x, bias), value, self.needs(x) || self.needs(bias)))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let total = self.value(a).data().iter().sum();
        let value = Tensor::from_raw(Vec::new(), vec![total]);
        Ok(self.push(Op::Sum(a), value, self.needs(a)))
    }

    /// Mean of all entries, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(TensorError::Invalid { op: "mean", msg: "empty tensor".into() });
        }
        let total: f64 = self.value(a).data().iter().sum();
        let value = Tensor::from_raw(Vec::new(), vec![total / n as f64]);
        Ok(self.push(Op::Mean(a), value, self.needs(a)))
    }

    /// Sum of squared entries, as a scalar node.
    pub fn sum_of_squares(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let total = self.value(a).data().iter().map(|x| x * x).sum();
        let value = Tensor::from_raw(Vec::new(), vec![total]);
        Ok(self.push(Op::SumSquares(a), value, self.needs(a)))
    }

    /// Runs reverse-mode accumulation from a scalar `root`, returning the
    /// gradients of every grad-requiring node. The tape is cleared so the
    /// next step starts from a fresh graph.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients, TensorError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(TensorError::NotScalar { shape: root_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Tensor::from_raw(root_value.shape().to_vec(), vec![1.0]));
            for idx in (0..=root.0).rev() {
                if !self.nodes[idx].needs_grad {
                    continue;
                }
                let Some(g) = grads[idx].take() else { continue };
                self.propagate(idx, &g, &mut grads);
                // Only leaves keep their gradient; interior nodes are done.
                if matches!(self.nodes[idx].op, Op::Leaf) {
                    grads[idx] = Some(g);
                }
            }
        }
        self.nodes.clear();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.data().to_vec());
                self.accumulate(grads, b, g.data().to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.data().to_vec());
                self.accumulate(grads, b, g.data().iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let d = zip_map(g.data(), self.value(b).data(), |x, y| x * y);
                    self.accumulate(grads, a, d);
                }
                if self.needs(b) {
                    let d = zip_map(g.data(), self.value(a).data(), |x, y| x * y);
                    self.accumulate(grads, b, d);
                }
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, a, g.data().iter().map(|v| v * factor).collect());
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.needs(a) {
                    // dA = dC · Bᵀ
                    let d = kernels::matmul_nt(g.data(), vb.data(), m, n, k);
                    self.accumulate(grads, a, d);
                }
                if self.needs(b) {
                    // dB = Aᵀ · dC
                    let d = kernels::matmul_tn(va.data(), g.data(), m, k, n);
                    self.accumulate(grads, b, d);
                }
            }
            Op::ConcatLast(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let lead = va.rank() - 1;
                let (wa, wb) = (va.shape()[lead], vb.shape()[lead]);
                let outer: usize = va.shape()[..lead].iter().product();
                if self.needs(a) {
                    let mut d = Vec::with_capacity(outer * wa);
                    for r in 0..outer {
                        d.extend_from_slice(&g.data()[r * (wa + wb)..r * (wa + wb) + wa]);
                    }
                    self.accumulate(grads, a, d);
                }
                if self.needs(b) {
                    let mut d = Vec::with_capacity(outer * wb);
                    for r in 0..outer {
                        d.extend_from_slice(&g.data()[r * (wa + wb) + wa..(r + 1) * (wa + wb)]);
                    }
                    self.accumulate(grads, b, d);
                }
            }
            Op::LeakyRelu(a, slope) => {
                // Subgradient 1 at exactly zero, matching the forward branch.
                let d = zip_map(g.data(), self.value(a).data(), |gv, x| {
                    if x >= 0.0 {
                        gv
                    } else {
                        slope * gv
                    }
                });
                self.accumulate(grads, a, d);
            }
            Op::AddBias(x, bias) => {
                let vx = self.value(x);
                let (m, n) = (vx.rows(), vx.cols());
                if self.needs(x) {
                    self.accumulate(grads, x, g.data().to_vec());
                }
                if self.needs(bias) {
                    let mut d = vec![0.0; n];
                    for r in 0..m {
                        for j in 0..n {
                            d[j] += g.data()[r * n + j];
                        }
                    }
                    self.accumulate(grads, bias, d);
                }
            }
            Op::Sum(a) => {
                let gs = g.item();
                self.accumulate(grads, a, vec![gs; self.value(a).len()]);
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                let gs = g.item() / n as f64;
                self.accumulate(grads, a, vec![gs; n]);
            }
            Op::SumSquares(a) => {
                let gs = g.item();
                let d = self.value(a).data().iter().map(|x| 2.0 * gs * x).collect();
                self.accumulate(grads, a, d);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, contribution: Vec<f64>) {
        if !self.needs(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (slot, add) in existing.data_mut().iter_mut().zip(&contribution) {
                    *slot += add;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_raw(self.value(target).shape().to_vec(), contribution));
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_small_case() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let x = tape.constant(t(vec![2, 1], vec![1.0, 1.0]));
        let y = tape.matmul(a, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn leaky_relu_negative_input() {
        let mut tape = Tape::new();
        let x = tape.constant(t(vec![1], vec![-2.0]));
        let y = tape.leaky_relu(x, 0.01).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.02]);
    }

    #[test]
    fn concat_rank_one() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![2], vec![1.0, 2.0]));
        let b = tape.constant(t(vec![1], vec![3.0]));
        let c = tape.concat_last(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[3]);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_rank_two_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]), true);
        let b = tape.leaf(t(vec![2, 1], vec![5.0, 6.0]), true);
        let c = tape.concat_last(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        // Weight the entries so the split is visible.
        let w = tape.constant(t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let prod = tape.mul(c, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(a).unwrap().data(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(grads.take(b).unwrap().data(), &[3.0, 6.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![1.0, 2.0]), true);
        let loss = tape.sum_of_squares(x).unwrap();
        assert_eq!(tape.value(loss).item(), 5.0);
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_gradient_rows() {
        // d/dA of sum(A·x) with x = (1, 1) puts (1, 1) in every row of dA.
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2, 2], vec![0.5, -1.0, 2.0, 3.0]), true);
        let x = tape.constant(t(vec![2, 1], vec![1.0, 1.0]));
        let y = tape.matmul(a, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(a).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn add_bias_sums_rows_in_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![3, 2], vec![0.0; 6]), true);
        let b = tape.leaf(t(vec![2], vec![1.0, -1.0]), true);
        let y = tape.add_bias(x, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(b).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(grads.take(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![1.0, 2.0]), true);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NotScalar { .. }));
    }

    #[test]
    fn backward_clears_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![1], vec![2.0]), true);
        let loss = tape.sum_of_squares(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.is_empty());
    }

    #[test]
    fn two_passes_accumulate_only_when_summed_explicitly() {
        // Same computation recorded twice on fresh tapes: per-pass gradients
        // are equal, and the sum over passes is exactly twice one pass.
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(t(vec![2], vec![1.5, -0.5]), true);
            let loss = tape.sum_of_squares(x).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            grads.take(x).unwrap()
        };
        let g1 = run();
        let g2 = run();
        assert_eq!(g1, g2);
        let summed: Vec<f64> = g1.data().iter().zip(g2.data()).map(|(a, b)| a + b).collect();
        assert_eq!(summed, vec![6.0, -2.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![2, 2], vec![0.0; 4]));
        let b = tape.constant(t(vec![3], vec![0.0; 3]));
        match tape.add(a, b).unwrap_err() {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2, 2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn constant_subgraph_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![1.0, 2.0]), true);
        let c = tape.constant(t(vec![2], vec![3.0, 4.0]));
        let prod = tape.mul(x, c).unwrap();
        let loss = tape.sum(prod).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(x).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.take(c).is_none());
    }

    #[test]
    fn mean_gradient_divides_by_len() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![4], vec![1.0, 2.0, 3.0, 4.0]), true);
        let loss = tape.mean(x).unwrap();
        assert_eq!(tape.value(loss).item(), 2.5);
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(x).unwrap().data(), &[0.25; 4]);
    }
}
