//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! Every primitive evaluates eagerly and appends a node to the [`Tape`]. Node
//! inputs always precede the node itself, so the record is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive set. Binary ops hold their operand handles.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Matrix plus a bias broadcast over rows.
    AddBias(Var, Var),
    /// Each row of a matrix divided by the matching entry of an `[r, 1]` column.
    DivRows(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    /// Column-wise concatenation of matrices with equal row counts.
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    /// Sum over the last axis: `[r, c] -> [r, 1]`.
    RowSum(Var),
    Reshape(Var),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::DivRows(..) => "div_rows",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Abs(_) => "abs",
            Op::Concat(_) => "concat",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn is_matrix(t: &Tensor) -> bool {
    t.shape().len() == 2
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Concat(vs) => vs.iter().any(|v| self.nodes[v.0].requires_grad),
            other => operands(other)
                .into_iter()
                .any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn op(&self, var: Var) -> &Op {
        &self.nodes[var.0].op
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = ta.matmul(tb)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// `a[r, c] + bias[c]` (bias may also be `[1, c]`).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let c = ta.cols();
        let ok = is_matrix(ta)
            && (tb.shape() == [c] || tb.shape() == [1, c]);
        if !ok {
            return Err(Error::shape("add_bias", ta.shape(), tb.shape()));
        }
        let mut value = ta.clone();
        for row in value.data_mut().chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    /// `a[i, j] / d[i]` with `d` shaped `[r, 1]`.
    pub fn div_rows(&mut self, a: Var, d: Var) -> Result<Var> {
        let (ta, td) = (self.value(a), self.value(d));
        if !is_matrix(ta) || td.shape() != [ta.rows(), 1] {
            return Err(Error::shape("div_rows", ta.shape(), td.shape()));
        }
        let c = ta.cols();
        let mut value = ta.clone();
        for (row, &den) in value.data_mut().chunks_mut(c).zip(td.data()) {
            for v in row {
                *v /= den;
            }
        }
        Ok(self.push(value, Op::DivRows(a, d)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(first).rows();
        for &p in parts {
            let t = self.value(p);
            if !is_matrix(t) || t.rows() != rows {
                return Err(Error::shape("concat", self.shape(first), t.shape()));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(value, Op::Mean(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !is_matrix(t) {
            return Err(Error::shape("row_sum", t.shape(), &[]));
        }
        let sums = t.data().chunks(t.cols()).map(|r| r.iter().sum()).collect();
        let value = Tensor::matrix(t.rows(), 1, sums)?;
        Ok(self.push(value, Op::RowSum(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    let (gd, bd) = (g.data(), tb.data());
                    for i in 0..m {
                        let g_row = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &bd[p * n..(p + 1) * n];
                            da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let at = ta.transpose();
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut db, k, m, n);
                    accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddBias(a, bias) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*bias) {
                    let tb = self.value(*bias);
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *bias, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }
            Op::DivRows(a, d) => {
                let (ta, td) = (self.value(*a), self.value(*d));
                let c = ta.cols();
                if self.wants(*a) {
                    let mut da = g.clone();
                    for (row, &den) in da.data_mut().chunks_mut(c).zip(td.data()) {
                        for v in row {
                            *v /= den;
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if self.wants(*d) {
                    let dd: Vec<f64> = g
                        .data()
                        .chunks(c)
                        .zip(ta.data().chunks(c))
                        .zip(td.data())
                        .map(|((gr, ar), &den)| {
                            -gr.iter().zip(ar).map(|(x, y)| x * y).sum::<f64>() / (den * den)
                        })
                        .collect();
                    accumulate(grads, *d, Tensor::new(td.shape().to_vec(), dd).unwrap());
                }
            }
            Op::Scale(a, factor) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.map(|x| x * factor));
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.zip_map(y, |gv, s| gv * s * (1.0 - s)));
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.zip_map(y, |gv, t| gv * (1.0 - t * t)));
                }
            }
            Op::Abs(a) => {
                if self.wants(*a) {
                    // Subgradient 0 at exactly 0.
                    let sign = self.value(*a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate(grads, *a, g.zip_map(&sign, |gv, s| gv * s));
                }
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(grads, p, Tensor::matrix(rows, c, dp).unwrap());
                    }
                    offset += c;
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    accumulate(grads, *a, Tensor::full(self.shape(*a), g.item()));
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let n = self.value(*a).len() as f64;
                    accumulate(grads, *a, Tensor::full(self.shape(*a), g.item() / n));
                }
            }
            Op::RowSum(a) => {
                if self.wants(*a) {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat(v).take(c)).collect();
                    accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), data).unwrap());
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    let shape = self.shape(*a).to_vec();
                    accumulate(grads, *a, g.clone().reshape(&shape).unwrap());
                }
            }
        }
    }
}

fn operands(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddBias(a, b)
        | Op::DivRows(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Abs(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::RowSum(a)
        | Op::Reshape(a) => vec![*a],
        Op::Concat(vs) => vs.clone(),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
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

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(t).item(), 0.0);
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![0.0, 2.0, -3.0]));
        let a = tape.abs(x);
        let s = tape.sum(a);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 3]));
        let b = tape.var(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn add_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 3]));
        let b = tape.var(Tensor::zeros(&[3, 2]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + x  => dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.5));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 4.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.mul(c, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn concat_layout() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = tape.var(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }
}
