//! Expectation-step model: a node-wise MLP `f_θ`, personalized-PageRank
//! propagation of its output, and a mean-of-softmax graph readout.
//!
//! The transform never mixes neighbours; all mixing happens in
//! [`ppr_propagate`], so propagation depth is independent of network depth.

use std::sync::Arc;

use rand::Rng;

use crate::diff::{CsrMatrix, Matrix, ParameterSet, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest system solved by [`ppr_closed_form`].
pub const CLOSED_FORM_MAX_NODES: usize = 200;

const NAMES: [&str; 6] = ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2", "head.w", "head.b"];

/// MLP weights (`d_in → hidden → hidden`, relu in between) and the linear
/// class head applied before the softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub head_w: Matrix,
    pub head_b: Matrix,
}

/// [`PropagationParams`] registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PropagationVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub head_w: Var,
    pub head_b: Var,
}

impl PropagationVars {
    pub fn from_slice(vars: &[Var]) -> Self {
        PropagationVars {
            w1: vars[0],
            b1: vars[1],
            w2: vars[2],
            b2: vars[3],
            head_w: vars[4],
            head_b: vars[5],
        }
    }

    pub fn to_vec(self) -> Vec<Var> {
        vec![self.w1, self.b1, self.w2, self.b2, self.head_w, self.head_b]
    }
}

impl PropagationParams {
    /// Glorot weights, zero biases.
    pub fn init<R: Rng>(d_in: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        PropagationParams {
            w1: Matrix::glorot(d_in, hidden, rng),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::glorot(hidden, hidden, rng),
            b2: Matrix::zeros(1, hidden),
            head_w: Matrix::glorot(hidden, classes, rng),
            head_b: Matrix::zeros(1, classes),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w2.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head_w.cols()
    }

    pub fn to_set(&self) -> ParameterSet {
        let arrays = [&self.w1, &self.b1, &self.w2, &self.b2, &self.head_w, &self.head_b];
        NAMES.iter().zip(arrays).map(|(n, m)| (n.to_string(), m.clone())).collect()
    }

    pub fn from_set(set: &ParameterSet) -> Result<Self> {
        Ok(PropagationParams {
            w1: set.require(NAMES[0])?.clone(),
            b1: set.require(NAMES[1])?.clone(),
            w2: set.require(NAMES[2])?.clone(),
            b2: set.require(NAMES[3])?.clone(),
            head_w: set.require(NAMES[4])?.clone(),
            head_b: set.require(NAMES[5])?.clone(),
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> PropagationVars {
        PropagationVars {
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
            head_w: tape.param(self.head_w.clone()),
            head_b: tape.param(self.head_b.clone()),
        }
    }

    /// Arrays in [`PropagationVars::to_vec`] order.
    pub fn arrays_mut(&mut self) -> [&mut Matrix; 6] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.head_w, &mut self.head_b]
    }

    /// Same as [`bind`](Self::bind) but as constants (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> PropagationVars {
        PropagationVars {
            w1: tape.constant(self.w1.clone()),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
            head_w: tape.constant(self.head_w.clone()),
            head_b: tape.constant(self.head_b.clone()),
        }
    }
}

/// `H = relu(X W₁ + b₁) W₂ + b₂`, row by row.
pub fn mlp_forward(tape: &mut Tape, x: Var, p: &PropagationVars) -> Result<Var> {
    let a = tape.matmul(x, p.w1)?;
    let a = tape.add_row(a, p.b1)?;
    let a = tape.relu(a)?;
    let h = tape.matmul(a, p.w2)?;
    tape.add_row(h, p.b2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("teleport probability {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// `k` steps of `Z ← (1−α) Â Z + α H` from `Z = H`. No softmax.
pub fn ppr_propagate(tape: &mut Tape, adj: &Arc<CsrMatrix>, h: Var, alpha: f64, k: usize) -> Result<Var> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::InvalidArgument("propagation needs k >= 1".into()));
    }
    let teleport = tape.scale(h, alpha)?;
    let mut z = h;
    for _ in 0..k {
        let az = tape.spmm(adj, z)?;
        let az = tape.scale(az, 1.0 - alpha)?;
        z = tape.add(az, teleport)?;
    }
    Ok(z)
}

/// Tape-free version of [`ppr_propagate`].
pub fn ppr_iterate(adj: &CsrMatrix, h: &Matrix, alpha: f64, k: usize) -> Result<Matrix> {
    check_alpha(alpha)?;
    let teleport = h.map(|v| alpha * v);
    let mut z = h.clone();
    for _ in 0..k {
        let az = adj.spmm(&z)?;
        z = az.zip_map(&teleport, |a, t| (1.0 - alpha) * a + t);
    }
    Ok(z)
}

/// Fixed point `α (I − (1−α) Â)⁻¹ H` by Gaussian elimination with partial
/// pivoting. Test oracle only; limited to small graphs.
pub fn ppr_closed_form(adj: &Matrix, h: &Matrix, alpha: f64) -> Result<Matrix> {
    check_alpha(alpha)?;
    let n = adj.rows();
    if adj.cols() != n || h.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "ppr_closed_form",
            left: adj.shape(),
            right: h.shape(),
        });
    }
    if n > CLOSED_FORM_MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "closed-form PPR limited to {CLOSED_FORM_MAX_NODES} nodes, got {n}"
        )));
    }
    let m = h.cols();
    let mut a = Matrix::identity(n);
    for r in 0..n {
        for c in 0..n {
            a[(r, c)] -= (1.0 - alpha) * adj[(r, c)];
        }
    }
    let mut b = h.map(|v| alpha * v);

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))
            .expect("non-empty range");
        let pivot = a[(pivot_row, col)];
        if pivot.abs() < 1e-14 {
            return Err(Error::SingularMatrix { column: col, pivot });
        }
        if pivot_row != col {
            for c in 0..n {
                let tmp = a[(col, c)];
                a[(col, c)] = a[(pivot_row, c)];
                a[(pivot_row, c)] = tmp;
            }
            for c in 0..m {
                let tmp = b[(col, c)];
                b[(col, c)] = b[(pivot_row, c)];
                b[(pivot_row, c)] = tmp;
            }
        }
        for r in col + 1..n {
            let factor = a[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[(r, c)] -= factor * a[(col, c)];
            }
            for c in 0..m {
                b[(r, c)] -= factor * b[(col, c)];
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..m {
            let mut acc = b[(col, c)];
            for k in col + 1..n {
                acc -= a[(col, k)] * b[(k, c)];
            }
            b[(col, c)] = acc / a[(col, col)];
        }
    }
    Ok(b)
}

/// `probs = softmax_rows(Z W_c + b_c)`, `y_pred = mean over nodes of probs`.
pub fn classify(tape: &mut Tape, z_pre: Var, p: &PropagationVars) -> Result<(Var, Var)> {
    let logits = tape.matmul(z_pre, p.head_w)?;
    let logits = tape.add_row(logits, p.head_b)?;
    let probs = tape.softmax_rows(logits)?;
    let y_pred = tape.mean_rows(probs)?;
    Ok((probs, y_pred))
}

/// `−ln y_pred[label]` (clamped), as a `1 × 1` node.
pub fn expectation_loss(tape: &mut Tape, y_pred: Var, label: usize) -> Result<Var> {
    let ce = tape.cross_entropy_rows(y_pred, &[label])?;
    tape.sum(ce)
}

#[derive(Clone, Copy, Debug)]
pub struct PropagationOutput {
    pub z_pre: Var,
    pub probs: Var,
    pub y_pred: Var,
}

/// Full expectation-step forward pass for one graph.
pub fn propagate_graph(tape: &mut Tape, graph: &Graph, p: &PropagationVars, alpha: f64, k: usize) -> Result<PropagationOutput> {
    let x = tape.constant(graph.features().clone());
    let h = mlp_forward(tape, x, p)?;
    let z_pre = ppr_propagate(tape, graph.adj_norm(), h, alpha, k)?;
    let (probs, y_pred) = classify(tape, z_pre, p)?;
    Ok(PropagationOutput { z_pre, probs, y_pred })
}

/// Predicted class: argmax of `y_pred`, ties to the lowest index.
pub fn predict(y_pred: &Matrix) -> usize {
    let row = y_pred.row(0);
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}
