//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and enough context to
//! push a cotangent back to its inputs. Nodes only ever reference earlier
//! nodes, so a single reverse sweep visits each operation exactly once.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    Neg,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    /// scalar var times tensor var
    ScalarMul {
        scalar: Var,
        tensor: Var,
    },
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    LinComb(Vec<(f64, Var)>),
    Sum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    SelectRows(Var, Var, Vec<bool>),
    Map(Var, fn(f64) -> f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the variable does not influence the seeded outputs.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, with zeros substituted when it was never reached.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = tape.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_eq(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
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

    /// Drops all recorded nodes; previously issued `Var`s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data: Vec<f64> = match op {
            UnaryOp::Tanh => x.data().iter().map(|v| v.tanh()).collect(),
            UnaryOp::Sigmoid => x.data().iter().map(|&v| kernels::sigmoid(v)).collect(),
            UnaryOp::Exp => x.data().iter().map(|v| v.exp()).collect(),
            UnaryOp::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                x.data().iter().map(|v| v.ln()).collect()
            }
            UnaryOp::Softplus => x.data().iter().map(|&v| kernels::softplus(v)).collect(),
            UnaryOp::Neg => x.data().iter().map(|v| -v).collect(),
            UnaryOp::Square => x.data().iter().map(|v| v * v).collect(),
        };
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Unary(op, a), rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        shape_eq(
            match op {
                BinaryOp::Add => "add",
                BinaryOp::Sub => "sub",
                BinaryOp::Mul => "mul",
            },
            x,
            y,
        )?;
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| match op {
                BinaryOp::Add => p + q,
                BinaryOp::Sub => p - q,
                BinaryOp::Mul => p * q,
            })
            .collect();
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Softplus, a).expect("softplus is total")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a).expect("square is total")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a).expect("neg is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    /// Multiplies every element of `tensor` by the `1 x 1` variable `scalar`.
    pub fn scalar_mul(&mut self, scalar: Var, tensor: Var) -> Result<Var> {
        let s = self.value(scalar);
        if s.shape() != [1, 1] {
            return Err(Error::Shape {
                op: "scalar_mul",
                left: s.shape(),
                right: [1, 1],
            });
        }
        let s = s.item();
        let t = self.value(tensor);
        let value = Tensor::new(t.rows(), t.cols(), t.data().iter().map(|v| s * v).collect())?;
        let rg = self.rg(scalar) || self.rg(tensor);
        Ok(self.push(value, Op::ScalarMul { scalar, tensor }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|v| c * v).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|v| v + c).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::AddConst(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x[m x n] + row[1 x n]` applied to every row (explicit bias add).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: xv.shape(),
                right: rv.shape(),
            });
        }
        let mut data = xv.data().to_vec();
        kernels::add_row_inplace(&mut data, rv.data());
        let value = Tensor::new(xv.rows(), xv.cols(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    /// `sum_i c_i * v_i` with constant coefficients over equal-shaped vars.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Contract("lincomb needs at least one term".into()))?;
        let shape = self.value(first.1).shape();
        for (_, v) in terms {
            shape_eq("lincomb", self.value(first.1), self.value(*v))?;
        }
        let slices: Vec<(f64, &[f64])> = terms
            .iter()
            .map(|(c, v)| (*c, self.value(*v).data()))
            .collect();
        let mut out = vec![0.0; shape[0] * shape[1]];
        kernels::lincomb(&slices, &mut out);
        let value = Tensor::new(shape[0], shape[1], out)?;
        let rg = terms.iter().any(|(c, v)| *c != 0.0 && self.rg(*v));
        Ok(self.push(value, Op::LinComb(terms.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Columns `[start, end)` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::Contract(format!(
                "slice_cols [{start}, {end}) out of range for {:?}",
                x.shape()
            )));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(x.rows() * width);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.data()[r * x.cols() + start..r * x.cols() + end]);
        }
        let value = Tensor::new(x.rows(), width, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|v| self.value(*v).rows())
            .ok_or_else(|| Error::Contract("concat_cols needs inputs".into()))?;
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: t.shape(),
                });
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                data.extend_from_slice(&t.data()[r * t.cols()..(r + 1) * t.cols()]);
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|v| self.value(*v).cols())
            .ok_or_else(|| Error::Contract("stack_rows needs inputs".into()))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Error::Shape {
                    op: "stack_rows",
                    left: self.value(parts[0]).shape(),
                    right: t.shape(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(value, Op::StackRows(parts.to_vec()), rg))
    }

    /// Flat-index selection into a `1 x indices.len()` row.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::Contract(format!(
                "gather index {bad} out of range for {:?}",
                x.shape()
            )));
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let value = Tensor::row(data);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Gather(a, indices.to_vec()), rg))
    }

    /// Row `i` of `a` where `pick[i]`, else row `i` of `b`.
    pub fn select_rows(&mut self, pick: &[bool], a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        shape_eq("select_rows", av, bv)?;
        if pick.len() != av.rows() {
            return Err(Error::Contract(format!(
                "select_rows: {} flags for {} rows",
                pick.len(),
                av.rows()
            )));
        }
        let cols = av.cols();
        let mut data = Vec::with_capacity(av.len());
        for (r, &p) in pick.iter().enumerate() {
            let src = if p { av } else { bv };
            data.extend_from_slice(&src.data()[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(av.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::SelectRows(a, b, pick.to_vec()), rg))
    }

    /// Elementwise `f` with user-supplied derivative `df`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Map(a, df), rg)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        self.backward_seeded(&[(loss, Tensor::scalar(1.0))])
    }

    /// Reverse sweep seeded with explicit cotangents (vector-Jacobian product).
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, seed) in seeds {
            shape_eq("backward seed", self.value(*v), seed)?;
            accumulate(&mut grads[v.0], seed.data(), seed.shape());
            top = top.max(v.0 + 1);
        }
        for idx in (0..top).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, a) => {
                if !self.rg(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let y = node.value.data();
                let local: Vec<f64> = match op {
                    UnaryOp::Tanh => y.iter().zip(gd).map(|(y, g)| g * (1.0 - y * y)).collect(),
                    UnaryOp::Sigmoid => y.iter().zip(gd).map(|(y, g)| g * y * (1.0 - y)).collect(),
                    UnaryOp::Exp => y.iter().zip(gd).map(|(y, g)| g * y).collect(),
                    UnaryOp::Log => x.iter().zip(gd).map(|(x, g)| g / x).collect(),
                    UnaryOp::Softplus => x
                        .iter()
                        .zip(gd)
                        .map(|(&x, g)| g * kernels::sigmoid(x))
                        .collect(),
                    UnaryOp::Neg => gd.iter().map(|g| -g).collect(),
                    UnaryOp::Square => x.iter().zip(gd).map(|(x, g)| 2.0 * x * g).collect(),
                };
                accumulate(&mut grads[a.0], &local, g.shape());
            }
            Op::Binary(op, a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                match op {
                    BinaryOp::Add => {
                        if self.rg(*a) {
                            accumulate(&mut grads[a.0], gd, g.shape());
                        }
                        if self.rg(*b) {
                            accumulate(&mut grads[b.0], gd, g.shape());
                        }
                    }
                    BinaryOp::Sub => {
                        if self.rg(*a) {
                            accumulate(&mut grads[a.0], gd, g.shape());
                        }
                        if self.rg(*b) {
                            let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                            accumulate(&mut grads[b.0], &neg, g.shape());
                        }
                    }
                    BinaryOp::Mul => {
                        if self.rg(*a) {
                            let l: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                            accumulate(&mut grads[a.0], &l, g.shape());
                        }
                        if self.rg(*b) {
                            let l: Vec<f64> = gd.iter().zip(x).map(|(g, x)| g * x).collect();
                            accumulate(&mut grads[b.0], &l, g.shape());
                        }
                    }
                }
            }
            Op::ScalarMul { scalar, tensor } => {
                let t = self.value(*tensor).data();
                let s = self.value(*scalar).item();
                if self.rg(*scalar) {
                    let d: f64 = gd.iter().zip(t).map(|(g, t)| g * t).sum();
                    accumulate(&mut grads[scalar.0], &[d], [1, 1]);
                }
                if self.rg(*tensor) {
                    let l: Vec<f64> = gd.iter().map(|g| g * s).collect();
                    accumulate(&mut grads[tensor.0], &l, g.shape());
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    let l: Vec<f64> = gd.iter().map(|g| g * c).collect();
                    accumulate(&mut grads[a.0], &l, g.shape());
                }
            }
            Op::AddConst(a) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], gd, g.shape());
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let slot = zeros_slot(&mut grads[a.0], av.shape());
                    kernels::matmul_a_bt_acc(gd, bv.data(), slot, m, n, k);
                }
                if self.rg(*b) {
                    let slot = zeros_slot(&mut grads[b.0], bv.shape());
                    kernels::matmul_at_b_acc(av.data(), gd, slot, m, k, n);
                }
            }
            Op::AddRow(x, row) => {
                if self.rg(*x) {
                    accumulate(&mut grads[x.0], gd, g.shape());
                }
                if self.rg(*row) {
                    let n = g.cols();
                    let slot = zeros_slot(&mut grads[row.0], [1, n]);
                    for chunk in gd.chunks_exact(n) {
                        for (s, v) in slot.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                }
            }
            Op::LinComb(terms) => {
                for (c, v) in terms {
                    if *c == 0.0 || !self.rg(*v) {
                        continue;
                    }
                    let slot = zeros_slot(&mut grads[v.0], g.shape());
                    for (s, gv) in slot.iter_mut().zip(gd) {
                        *s += c * gv;
                    }
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let slot = zeros_slot(&mut grads[a.0], shape);
                    slot.iter_mut().for_each(|s| *s += gd[0]);
                }
            }
            Op::SliceCols(a, start) => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let width = g.cols();
                    let slot = zeros_slot(&mut grads[a.0], shape);
                    for r in 0..shape[0] {
                        for c in 0..width {
                            slot[r * shape[1] + start + c] += gd[r * width + c];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let shape = self.value(*p).shape();
                    if self.rg(*p) {
                        let slot = zeros_slot(&mut grads[p.0], shape);
                        for r in 0..shape[0] {
                            for c in 0..shape[1] {
                                slot[r * shape[1] + c] += gd[r * total + offset + c];
                            }
                        }
                    }
                    offset += shape[1];
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let shape = self.value(*p).shape();
                    let n = shape[0] * shape[1];
                    if self.rg(*p) {
                        accumulate(&mut grads[p.0], &gd[offset..offset + n], shape);
                    }
                    offset += n;
                }
            }
            Op::Gather(a, indices) => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let slot = zeros_slot(&mut grads[a.0], shape);
                    for (&i, gv) in indices.iter().zip(gd) {
                        slot[i] += gv;
                    }
                }
            }
            Op::SelectRows(a, b, pick) => {
                let cols = g.cols();
                for (v, want) in [(*a, true), (*b, false)] {
                    if !self.rg(v) {
                        continue;
                    }
                    let slot = zeros_slot(&mut grads[v.0], g.shape());
                    for (r, &p) in pick.iter().enumerate() {
                        if p == want {
                            let span = r * cols..(r + 1) * cols;
                            slot[span.clone()]
                                .iter_mut()
                                .zip(&gd[span])
                                .for_each(|(s, v)| *s += v);
                        }
                    }
                }
            }
            Op::Map(a, df) => {
                if self.rg(*a) {
                    let x = self.value(*a).data();
                    let l: Vec<f64> = x.iter().zip(gd).map(|(&x, g)| g * df(x)).collect();
                    accumulate(&mut grads[a.0], &l, g.shape());
                }
            }
        }
    }
}

fn zeros_slot(slot: &mut Option<Tensor>, shape: [usize; 2]) -> &mut [f64] {
    slot.get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]))
        .data_mut()
}

fn accumulate(slot: &mut Option<Tensor>, g: &[f64], shape: [usize; 2]) {
    match slot {
        Some(t) => t.data_mut().iter_mut().zip(g).for_each(|(s, v)| *s += v),
        None => {
            *slot = Some(Tensor::new(shape[0], shape[1], g.to_vec()).expect("grad shape"));
        }
    }
}
