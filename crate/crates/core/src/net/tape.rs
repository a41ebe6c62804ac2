//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its value and the indices of its
//! operands, so the node list is always in topological order. `backward`
//! walks it once in reverse.

use super::{NetError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a (r×c) + row (1×c)` broadcast over rows.
    AddRow(usize, usize),
    /// `a (r×c) ∘ row (1×c)` broadcast over rows.
    MulRow(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sin(usize),
    Cos(usize),
    Tan(usize),
    Reciprocal(usize),
    Abs(usize),
    Select { src: usize, start: usize },
    Concat(Vec<usize>),
    Sum(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MatMul(..) => "matmul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Tan(..) => "tan",
            Op::Reciprocal(..) => "reciprocal",
            Op::Abs(..) => "abs",
            Op::Select { .. } => "select",
            Op::Concat(..) => "concat",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Smallest `|cos x|` accepted by [`Tape::tan`].
pub const TAN_COS_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient w.r.t. `var`; exactly zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[var.0];
            Tensor::zeros(r, c)
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(g) => g.axpy(1.0, &delta),
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Parameters, inputs and constants all enter the tape as leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a 1×c row");
        assert_eq!(av.cols(), rv.cols(), "add_row column mismatch");
        let mut out = av.clone();
        let cols = av.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += rv.data()[i % cols];
        }
        self.push(out, Op::AddRow(a.0, row.0))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "mul_row expects a 1×c row");
        assert_eq!(av.cols(), rv.cols(), "mul_row column mismatch");
        let mut out = av.clone();
        let cols = av.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= rv.data()[i % cols];
        }
        self.push(out, Op::MulRow(a.0, row.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Offset(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        self.push(v, Op::Sin(a.0))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        self.push(v, Op::Cos(a.0))
    }

    /// `sin/cos`, rejecting arguments where `|cos| < TAN_COS_GUARD`.
    pub fn tan(&mut self, a: Var) -> Result<Var, NetError> {
        let av = self.value(a);
        if let Some(&bad) = av.data().iter().find(|x| !(x.cos().abs() >= TAN_COS_GUARD)) {
            return Err(NetError::TanGuard { node: a.0, value: bad });
        }
        let v = av.map(|x| {
            let (s, c) = x.sin_cos();
            s / c
        });
        Ok(self.push(v, Op::Tan(a.0)))
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Reciprocal(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a.0))
    }

    /// Columns `start..start + len` of `a`.
    pub fn select(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "select out of range");
        let mut out = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            out.extend_from_slice(&av.row_slice(r)[start..start + len]);
        }
        let v = Tensor::from_vec(av.rows(), len, out);
        self.push(v, Op::Select { src: a.0, start })
    }

    /// Column-wise concatenation of equally tall operands.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), rows, "concat row mismatch");
                out.extend_from_slice(pv.row_slice(r));
            }
        }
        let idx = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::from_vec(rows, cols, out), Op::Concat(idx))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a.0))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NetError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(NetError::NonScalarLoss { rows: shape.0, cols: shape.1 });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut results: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut pushes: Vec<(usize, Tensor)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    pushes.push((*a, g.clone()));
                    pushes.push((*b, g.clone()));
                }
                Op::Sub(a, b) => {
                    pushes.push((*a, g.clone()));
                    pushes.push((*b, g.map(|x| -x)));
                }
                Op::Mul(a, b) => {
                    pushes.push((*a, g.zip_map(&self.nodes[*b].value, |x, y| x * y)));
                    pushes.push((*b, g.zip_map(&self.nodes[*a].value, |x, y| x * y)));
                }
                Op::AddRow(a, r) => {
                    pushes.push((*r, g.column_sums()));
                    pushes.push((*a, g.clone()));
                }
                Op::MulRow(a, r) => {
                    let av = &self.nodes[*a].value;
                    let rv = &self.nodes[*r].value;
                    let cols = rv.cols();
                    let mut ga = g.clone();
                    for (k, x) in ga.data_mut().iter_mut().enumerate() {
                        *x *= rv.data()[k % cols];
                    }
                    pushes.push((*r, g.zip_map(av, |x, y| x * y).column_sums()));
                    pushes.push((*a, ga));
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    pushes.push((*a, g.matmul_t(bv)));
                    pushes.push((*b, av.t_matmul(&g)));
                }
                Op::Scale(a, c) => pushes.push((*a, g.map(|x| c * x))),
                Op::Offset(a) => pushes.push((*a, g.clone())),
                Op::Tanh(a) => pushes.push((*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y)))),
                Op::Sigmoid(a) => pushes.push((*a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y)))),
                Op::Sin(a) => pushes.push((*a, g.zip_map(&self.nodes[*a].value, |x, t| x * t.cos()))),
                Op::Cos(a) => pushes.push((*a, g.zip_map(&self.nodes[*a].value, |x, t| -x * t.sin()))),
                Op::Tan(a) => pushes.push((*a, g.zip_map(&node.value, |x, y| x * (1.0 + y * y)))),
                Op::Reciprocal(a) => pushes.push((*a, g.zip_map(&node.value, |x, y| -x * y * y))),
                Op::Abs(a) => pushes.push((
                    *a,
                    // Subgradient 0 at the kink.
                    g.zip_map(&self.nodes[*a].value, |x, t| {
                        if t > 0.0 {
                            x
                        } else if t < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    }),
                )),
                Op::Select { src, start } => {
                    let sv = &self.nodes[*src].value;
                    let mut full = Tensor::zeros(sv.rows(), sv.cols());
                    let len = g.cols();
                    for r in 0..g.rows() {
                        for c in 0..len {
                            full.set(r, start + c, g.get(r, c));
                        }
                    }
                    pushes.push((*src, full));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.cols();
                        let mut part = Vec::with_capacity(g.rows() * pc);
                        for r in 0..g.rows() {
                            part.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        pushes.push((p, Tensor::from_vec(g.rows(), pc, part)));
                        offset += pc;
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    pushes.push((*a, Tensor::filled(r, c, g.item())));
                }
            }
            for (target, delta) in pushes {
                if !delta.is_finite() {
                    return Err(NetError::NonFiniteGradient {
                        node: i,
                        op: node.op.name(),
                    });
                }
                accumulate(&mut grads[target], delta);
            }
            results[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads: results, shapes })
    }
}
