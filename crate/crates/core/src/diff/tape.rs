//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is an append-only arena: every primitive pushes a node holding
//! its forward value and the ids of its operands. Because operands always
//! precede their results, iterating the arena backwards is a valid reverse
//! topological order, so [`Tape::backward`] is a single sweep.
//!
//! Sparse operands ([`CsrMatrix`]) are constants and receive no gradient.
//! Every forward result is checked for NaN/Inf.

use std::sync::Arc;

use crate::diff::{CsrMatrix, Matrix};
use crate::error::{Error, Result};

/// Probabilities are clamped at this floor before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Deliberately wrong local derivatives, used to check that the gradient
/// checker actually notices broken backward rules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FaultInjection {
    #[default]
    None,
    /// Uses `σ(x)` instead of `σ(x)(1 − σ(x))` in the sigmoid backward rule.
    SigmoidDerivative,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    ScaleRows(Var, Var),
    ConcatCols(Var, Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Relu(Var),
    MeanRows(Var),
    Sum(Var),
    SumSqRows(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    CrossEntropyRows(Var, Vec<usize>),
    ClampMax(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
    fault: FaultInjection,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; all zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Matrix {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: FaultInjection) -> Self {
        Tape {
            fault,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node past the first `len`, so leaves bound once can be
    /// reused for another forward/backward pass.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, operands: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op, a, b));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Sparse-dense product; the sparse operand is a constant.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix>, b: Var) -> Result<Var> {
        let value = s.spmm(self.value(b))?;
        self.push("spmm", value, Op::SpMM(Arc::clone(s), b), &[b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(self.mismatch("add_row", a, bias));
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).as_slice().to_vec();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push("add_row", value, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| c * x);
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("hadamard", value, Op::Hadamard(a, b), &[a, b])
    }

    /// Multiplies row `i` of `a` by `weights[i]`, where `weights` is `n × 1`.
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var> {
        let (n, _) = self.shape(a);
        if self.shape(weights) != (n, 1) {
            return Err(self.mismatch("scale_rows", a, weights));
        }
        let mut value = self.value(a).clone();
        let w = self.value(weights).as_slice().to_vec();
        for (r, wr) in w.iter().enumerate() {
            for x in value.row_mut(r) {
                *x *= wr;
            }
        }
        self.push("scale_rows", value, Op::ScaleRows(a, weights), &[a, weights])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = self.shape(a);
        let (nb, cb) = self.shape(b);
        if n != nb {
            return Err(self.mismatch("concat_cols", a, b));
        }
        let mut value = Matrix::zeros(n, ca + cb);
        for r in 0..n {
            let row = value.row_mut(r);
            row[..ca].copy_from_slice(self.nodes[a.0].value.row(r));
            row[ca..].copy_from_slice(self.nodes[b.0].value.row(r));
        }
        self.push("concat_cols", value, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if !src.is_finite() {
            return Err(Error::NonFinite("softmax_rows input".into()));
        }
        let mut value = src.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    /// Column means: `n × c` to `1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let (n, c) = src.shape();
        if n == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                left: (n, c),
                right: (1, c),
            });
        }
        let mut value = Matrix::zeros(1, c);
        for r in 0..n {
            for (o, x) in value.as_mut_slice().iter_mut().zip(src.row(r)) {
                *o += x;
            }
        }
        value.scale_in_place(1.0 / n as f64);
        self.push("mean_rows", value, Op::MeanRows(a), &[a])
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// Squared Euclidean norm of each row, `n × 1`.
    pub fn sum_sq_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let norms: Vec<f64> = (0..src.rows())
            .map(|r| src.row(r).iter().map(|x| x * x).sum())
            .collect();
        self.push("sum_sq_rows", Matrix::column(&norms), Op::SumSqRows(a), &[a])
    }

    /// `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: (n, c),
                right: (bad, c),
            });
        }
        let value = self.value(a).select_rows(index);
        self.push("gather_rows", value, Op::GatherRows(a, index.to_vec()), &[a])
    }

    /// `out[index[i]] += a[i]` into a zero matrix with `out_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let (n, c) = self.shape(a);
        if index.len() != n || index.iter().any(|&i| i >= out_rows) {
            return Err(Error::ShapeMismatch {
                op: "scatter_add_rows",
                left: (n, c),
                right: (index.len(), out_rows),
            });
        }
        let mut value = Matrix::zeros(out_rows, c);
        let src = self.value(a);
        for (i, &dst) in index.iter().enumerate() {
            for (o, x) in value.row_mut(dst).iter_mut().zip(src.row(i)) {
                *o += x;
            }
        }
        self.push("scatter_add_rows", value, Op::ScatterAddRows(a, index.to_vec()), &[a])
    }

    /// `out[i] = −ln(max(probs[i, labels[i]], PROB_FLOOR))`, `n × 1`.
    pub fn cross_entropy_rows(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(probs);
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_rows",
                left: (n, c),
                right: (labels.len(), 1),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let p = self.value(probs);
        let losses: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p[(i, l)].max(PROB_FLOOR).ln())
            .collect();
        self.push(
            "cross_entropy_rows",
            Matrix::column(&losses),
            Op::CrossEntropyRows(probs, labels.to_vec()),
            &[probs],
        )
    }

    /// Entrywise `min(a, cap)`; no gradient flows through capped entries.
    pub fn clamp_max(&mut self, a: Var, cap: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.min(cap));
        self.push("clamp_max", value, Op::ClampMax(a, cap), &[a])
    }

    /// Reverse sweep from the scalar `loss`. A tape supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NotScalar(shape));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, contribution: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot => *slot = Some(contribution),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, g.matmul_nt(val(*b))?);
                }
                if wants(*b) {
                    acc(*b, val(*a).matmul_tn(g)?);
                }
            }
            Op::SpMM(s, b) => acc(*b, s.spmm_t(g)?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                if wants(*bias) {
                    let mut col_sum = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in col_sum.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*bias, col_sum);
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
            Op::Hadamard(a, b) => {
                if wants(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::ScaleRows(a, w) => {
                let av = val(*a);
                let wv = val(*w);
                if wants(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let wr = wv.as_slice()[r];
                        for x in ga.row_mut(r) {
                            *x *= wr;
                        }
                    }
                    acc(*a, ga);
                }
                if wants(*w) {
                    let gw: Vec<f64> = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(*w, Matrix::column(&gw));
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let n = g.rows();
                let mut ga = Matrix::zeros(n, ca);
                let mut gb = Matrix::zeros(n, cb);
                for r in 0..n {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let local = match self.fault {
                    FaultInjection::SigmoidDerivative => y.clone(),
                    FaultInjection::None => y.map(|s| s * (1.0 - s)),
                };
                acc(*a, g.zip_map(&local, |x, d| x * d));
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, p)| x * p).sum();
                    for ((o, gi), yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yi * (gi - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::MeanRows(a) => {
                let (n, c) = val(*a).shape();
                let inv = 1.0 / n as f64;
                let mut ga = Matrix::zeros(n, c);
                for r in 0..n {
                    for (o, x) in ga.row_mut(r).iter_mut().zip(g.as_slice()) {
                        *o = x * inv;
                    }
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let (n, c) = val(*a).shape();
                acc(*a, Matrix::filled(n, c, g.as_slice()[0]));
            }
            Op::SumSqRows(a) => {
                let x = val(*a);
                let mut ga = x.map(|v| 2.0 * v);
                for r in 0..ga.rows() {
                    let gr = g.as_slice()[r];
                    for v in ga.row_mut(r) {
                        *v *= gr;
                    }
                }
                acc(*a, ga);
            }
            Op::GatherRows(a, index) => {
                let (n, c) = val(*a).shape();
                let mut ga = Matrix::zeros(n, c);
                for (i, &src) in index.iter().enumerate() {
                    for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterAddRows(a, index) => acc(*a, g.select_rows(index)),
            Op::CrossEntropyRows(p, labels) => {
                let pv = val(*p);
                let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                for (i, &l) in labels.iter().enumerate() {
                    let prob = pv[(i, l)];
                    if prob > PROB_FLOOR {
                        gp[(i, l)] = -g.as_slice()[i] / prob;
                    }
                }
                acc(*p, gp);
            }
            Op::ClampMax(a, cap) => {
                let x = val(*a);
                acc(*a, g.zip_map(x, |gi, xi| if xi < *cap { gi } else { 0.0 }));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.scalar(y), 0.5);
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![1.0, 2.0, 3.0], vec![-50.0, 0.0, 700.0]]));
        let y = t.softmax_rows(x).unwrap();
        for r in 0..2 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(m(&[vec![1.0, -2.0], vec![3.0, 4.0]]));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x), Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn sum_sq_gradient_is_twice_input() {
        let mut t = Tape::new();
        let data = m(&[vec![1.0, -2.0], vec![0.5, 4.0]]);
        let x = t.param(data.clone());
        let s = t.sum_sq_rows(x).unwrap();
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x), data.map(|v| 2.0 * v));
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(3, 2, 0.7));
        let a = t.sum(x).unwrap();
        let b = t.sum(x).unwrap();
        let l = t.add(a, b).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x), Matrix::filled(3, 2, 2.0));
    }

    #[test]
    fn cross_entropy_of_softmax_gradient_is_residual() {
        let z = m(&[vec![0.3, -1.2, 2.0]]);
        let mut t = Tape::new();
        let x = t.param(z.clone());
        let p = t.softmax_rows(x).unwrap();
        let ce = t.cross_entropy_rows(p, &[1]).unwrap();
        let l = t.sum(ce).unwrap();
        let probs = t.value(p).clone();
        let g = t.backward(l).unwrap().get(x);
        let mut expected = probs;
        expected[(0, 1)] -= 1.0;
        assert!(g.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::NotScalar((2, 2)))));
        let l = t.sum(x).unwrap();
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::DoubleBackward)));
    }

    #[test]
    fn unreachable_values_get_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(1, 3, 1.0));
        let unused = t.param(Matrix::filled(2, 2, 5.0));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(unused), Matrix::zeros(2, 2));
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(3, 2));
        match t.add(a, b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_forward_is_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::scalar(f64::MAX));
        assert!(matches!(t.scale(a, 10.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut t = Tape::new();
        let p = t.constant(Matrix::filled(1, 2, 0.5));
        assert!(matches!(
            t.cross_entropy_rows(p, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let mut t = Tape::new();
        let p = t.param(m(&[vec![0.0, 1.0]]));
        let ce = t.cross_entropy_rows(p, &[0]).unwrap();
        assert!((t.value(ce)[(0, 0)] + PROB_FLOOR.ln()).abs() < 1e-12);
        let l = t.sum(ce).unwrap();
        assert_eq!(t.backward(l).unwrap().get(p), Matrix::zeros(1, 2));
    }
}
