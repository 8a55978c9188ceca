//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Each recorded
//! node keeps its forward value and enough information to push an adjoint
//! back to its operands. Calling [`Tape::backward`] on a scalar node walks
//! the record in reverse and returns the adjoint of every node that depends
//! on a leaf.
//!
//! Shapes are `(rows, cols)` with row-major storage. Elementwise binary ops
//! accept equal shapes or a `1x1` operand broadcast against the other one;
//! nothing else broadcasts.

use crate::error::{Error, Result};

/// LeakyReLU negative slope used by the coupling subnetworks.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Invalid(format!(
                "tensor of shape ({rows}, {cols}) needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Column vector `(len, 1)`.
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    /// Row vector `(1, len)`.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Value of a `1x1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b = &rhs.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Tape::record`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Neg,
    Tanh,
    LeakyRelu,
    Relu,
    Exp,
    Log,
    Square,
    Powf(f64),
    Sum,
    Mean,
    Transpose,
    /// Contiguous run of the operand's storage starting at `offset`, viewed
    /// with the given shape. Doubles as reshape when `offset == 0`.
    Slice {
        offset: usize,
        rows: usize,
        cols: usize,
    },
}

impl OpKind {
    fn arity(self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Neg => "neg",
            OpKind::Tanh => "tanh",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Powf(_) => "powf",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Transpose => "transpose",
            OpKind::Slice { .. } => "slice",
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Origin {
    Leaf,
    Constant,
    Op { kind: OpKind, args: [usize; 2] },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
    needs_grad: bool,
}

/// Ordered record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Leaf, true)
    }

    /// Input that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Constant, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].origin, Origin::Leaf)
    }

    fn push(&mut self, value: Tensor, origin: Origin, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `kind` applied to `operands` and returns the new node.
    pub fn record(&mut self, kind: OpKind, operands: &[Var]) -> Result<Var> {
        if operands.len() != kind.arity() {
            return Err(Error::Invalid(format!(
                "{} takes {} operand(s), got {}",
                kind.name(),
                kind.arity(),
                operands.len()
            )));
        }
        let a = operands[0].0;
        let b = operands.get(1).map_or(a, |v| v.0);
        let value = {
            let x = &self.nodes[a].value;
            let y = &self.nodes[b].value;
            forward(kind, x, y)?
        };
        let needs_grad = self.nodes[a].needs_grad || (kind.arity() == 2 && self.nodes[b].needs_grad);
        Ok(self.push(value, Origin::Op { kind, args: [a, b] }, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(OpKind::Scale(s), &[a])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Neg, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Tanh, &[a])
    }
    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::LeakyRelu, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Relu, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Log, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Square, &[a])
    }
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.record(OpKind::Powf(p), &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Mean, &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Transpose, &[a])
    }
    pub fn slice(&mut self, a: Var, offset: usize, rows: usize, cols: usize) -> Result<Var> {
        self.record(OpKind::Slice { offset, rows, cols }, &[a])
    }
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        self.slice(a, 0, rows, cols)
    }

    /// Adds a scalar constant to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.scalar_constant(c);
        self.add(a, k)
    }

    /// Propagates adjoints from the scalar `root` back through the record.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let shape = self.nodes[root.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if let Origin::Op { kind, args } = node.origin {
                let [a, b] = args;
                let xa = &self.nodes[a];
                let xb = &self.nodes[b];
                let want_a = xa.needs_grad;
                let want_b = kind.arity() == 2 && xb.needs_grad;
                if want_a || want_b {
                    let (ga, gb) = local_grads(kind, &g, &xa.value, &xb.value, &node.value, want_a, want_b);
                    if let Some(ga) = ga {
                        accumulate(&mut adj[a], ga);
                    }
                    if let Some(gb) = gb {
                        accumulate(&mut adj[b], gb);
                    }
                }
            }
            adj[i] = Some(g);
        }
        Ok(Gradients { adj })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn broadcast(op: &'static str, x: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if x.shape() == y.shape() {
        Ok(x.zip_map(y, f))
    } else if y.is_scalar() {
        let s = y.item();
        Ok(x.map(|a| f(a, s)))
    } else if x.is_scalar() {
        let s = x.item();
        Ok(y.map(|b| f(s, b)))
    } else {
        Err(Error::Shape {
            op,
            lhs: x.shape(),
            rhs: y.shape(),
        })
    }
}

fn forward(kind: OpKind, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok(match kind {
        OpKind::MatMul => x.matmul(y)?,
        OpKind::Add => broadcast("add", x, y, |a, b| a + b)?,
        OpKind::Sub => broadcast("sub", x, y, |a, b| a - b)?,
        OpKind::Mul => broadcast("mul", x, y, |a, b| a * b)?,
        OpKind::Scale(s) => x.map(|a| a * s),
        OpKind::Neg => x.map(|a| -a),
        OpKind::Tanh => x.map(f64::tanh),
        OpKind::LeakyRelu => x.map(|a| if a >= 0.0 { a } else { LEAKY_SLOPE * a }),
        OpKind::Relu => x.map(|a| if a > 0.0 { a } else { 0.0 }),
        OpKind::Exp => x.map(f64::exp),
        OpKind::Log => x.map(f64::ln),
        OpKind::Square => x.map(|a| a * a),
        OpKind::Powf(p) => x.map(|a| a.powf(p)),
        OpKind::Sum => Tensor::scalar(x.sum()),
        OpKind::Mean => Tensor::scalar(x.sum() / x.len() as f64),
        OpKind::Transpose => x.transpose(),
        OpKind::Slice { offset, rows, cols } => {
            let end = offset + rows * cols;
            if end > x.len() {
                return Err(Error::Shape {
                    op: "slice",
                    lhs: x.shape(),
                    rhs: (rows, cols),
                });
            }
            Tensor {
                rows,
                cols,
                data: x.data[offset..end].to_vec(),
            }
        }
    })
}

/// Reduces a broadcast adjoint back to the operand's shape.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::scalar(g.sum())
    }
}

fn local_grads(
    kind: OpKind,
    g: &Tensor,
    x: &Tensor,
    y: &Tensor,
    out: &Tensor,
    want_a: bool,
    want_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let unary = |t: Tensor| (Some(t), None);
    match kind {
        OpKind::MatMul => {
            let ga = want_a.then(|| g.matmul(&y.transpose()).expect("matmul adjoint shape"));
            let gb = want_b.then(|| x.transpose().matmul(g).expect("matmul adjoint shape"));
            (ga, gb)
        }
        OpKind::Add => (
            want_a.then(|| unbroadcast(g.clone(), x)),
            want_b.then(|| unbroadcast(g.clone(), y)),
        ),
        OpKind::Sub => (
            want_a.then(|| unbroadcast(g.clone(), x)),
            want_b.then(|| unbroadcast(g.map(|v| -v), y)),
        ),
        OpKind::Mul => {
            let ga = want_a.then(|| {
                let full = broadcast("mul", g, y, |a, b| a * b).expect("mul adjoint shape");
                unbroadcast(full, x)
            });
            let gb = want_b.then(|| {
                let full = broadcast("mul", g, x, |a, b| a * b).expect("mul adjoint shape");
                unbroadcast(full, y)
            });
            (ga, gb)
        }
        OpKind::Scale(s) => unary(g.map(|v| v * s)),
        OpKind::Neg => unary(g.map(|v| -v)),
        OpKind::Tanh => unary(g.zip_map(out, |gv, t| gv * (1.0 - t * t))),
        OpKind::LeakyRelu => unary(g.zip_map(x, |gv, a| if a >= 0.0 { gv } else { LEAKY_SLOPE * gv })),
        OpKind::Relu => unary(g.zip_map(x, |gv, a| if a > 0.0 { gv } else { 0.0 })),
        OpKind::Exp => unary(g.zip_map(out, |gv, e| gv * e)),
        OpKind::Log => unary(g.zip_map(x, |gv, a| gv / a)),
        OpKind::Square => unary(g.zip_map(x, |gv, a| 2.0 * a * gv)),
        OpKind::Powf(p) => unary(g.zip_map(x, |gv, a| gv * p * a.powf(p - 1.0))),
        OpKind::Sum => {
            let s = g.item();
            unary(x.map(|_| s))
        }
        OpKind::Mean => {
            let s = g.item() / x.len() as f64;
            unary(x.map(|_| s))
        }
        OpKind::Transpose => unary(g.transpose()),
        OpKind::Slice { offset, .. } => {
            let mut full = Tensor::zeros(x.rows, x.cols);
            full.data[offset..offset + g.len()].copy_from_slice(&g.data);
            unary(full)
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the root
    /// through any differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v` as a flat vector, zero-filled when `v` is unreachable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; tape.value(v).len()],
        }
    }

    /// Iterator over every node that received an adjoint.
    pub fn reached(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.adj
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|t| (Var(i), t)))
    }
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of `f` at `x0` against central differences
/// with step `h`. The error per coordinate is
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x0: &[f64], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(crate::error::domain(
            "grad_check",
            format!("step must be positive, got {h}"),
        ));
    }
    let eval = |x: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::column(x));
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::column(x0.to_vec()));
    let root = f(&mut tape, v)?;
    let centre = tape.value(root).item();
    if !centre.is_finite() {
        return Err(Error::NonFinite(format!("f(x0) = {centre}")));
    }
    let analytic = tape.backward(root)?.wrt(&tape, v);

    let mut numeric = Vec::with_capacity(x0.len());
    let mut worst = (0.0_f64, 0usize);
    for i in 0..x0.len() {
        let mut up = x0.to_vec();
        up[i] += h;
        let mut down = x0.to_vec();
        down[i] -= h;
        let (fu, fd) = (eval(up)?, eval(down)?);
        if !fu.is_finite() || !fd.is_finite() {
            return Err(Error::NonFinite(format!(
                "f evaluated to {fu} / {fd} at coordinate {i} (+/- {h})"
            )));
        }
        let num = (fu - fd) / (2.0 * h);
        let err = (analytic[i] - num).abs() / analytic[i].abs().max(1.0);
        if err > worst.0 {
            worst = (err, i);
        }
        numeric.push(num);
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x).unwrap();
        assert_eq!(t.value(y).item(), 0.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn leaky_relu_negative_and_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::column(vec![-2.0, 0.0, 3.0]));
        let y = t.leaky_relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[-0.02, 0.0, 3.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        // subgradient at exactly zero takes the positive branch
        assert_eq!(g.get(x).unwrap().data(), &[0.01, 1.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::column(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_matches_hand_product() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = t.constant(Tensor::column(vec![7.0, 8.0, 9.0]));
        let c = t.matmul(a, b).unwrap();
        // [1*7+2*8+3*9, 4*7+5*8+6*9]
        assert_eq!(t.value(c).shape(), (2, 1));
        assert_eq!(t.value(c).data(), &[50.0, 122.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 1));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(2, 1)"), "{msg}");
        let c = t.constant(Tensor::zeros(3, 2));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let check = grad_check(|tape, _x| Ok(tape.scalar_constant(4.2)), &[1.0, -2.0], 1e-5).unwrap();
        assert!(check.analytic.iter().all(|&g| g == 0.0));
        assert_eq!(check.max_rel_error, 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::column(vec![1.0, 2.0]));
        let y = t.exp(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::NonScalarRoot((2, 1)))));
    }

    #[test]
    fn quadratic_form_grad_check() {
        let q = Tensor::new(3, 3, vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
        let check = grad_check(
            |tape, x| {
                let qv = tape.constant(q.clone());
                let qx = tape.matmul(qv, x)?;
                let xt = tape.transpose(x)?;
                let xqx = tape.matmul(xt, qx)?;
                tape.reshape(xqx, 1, 1)
            },
            &[0.3, -1.2, 0.7],
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-8, "{}", check.max_rel_error);
    }

    #[test]
    fn slice_scatters_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::column(vec![1.0, 2.0, 3.0, 4.0]));
        let m = t.slice(x, 1, 1, 2).unwrap();
        assert_eq!(t.value(m).data(), &[2.0, 3.0]);
        let s = t.sum(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(t.slice(x, 3, 2, 1).is_err());
    }

    #[test]
    fn scalar_broadcast_reduces_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::column(vec![1.0, 2.0, 3.0]));
        let c = t.leaf(Tensor::scalar(2.0));
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(c).unwrap().item(), 6.0);
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        let k = t.constant(Tensor::scalar(5.0));
        let y = t.mul(x, k).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(k).is_none());
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }
}
