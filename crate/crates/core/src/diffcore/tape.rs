//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! indices of its inputs. Nodes are appended in evaluation order, so the node
//! list is already topologically sorted and [`Tape::backward`] is a single
//! reverse sweep. Constants (noise, problem matrices) never receive gradients
//! and the sweep skips any node that does not depend on a leaf.
//!
//! ```
//! use nrdc::diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.square(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

/// Backward rule of a user-defined op: receives the output gradient and the
/// input values, returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor]) -> Vec<Tensor> + Send>;

/// Operation kinds that take tensor inputs only (no extra attributes).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Affine,
    Silu,
    Tanh,
    Sigmoid,
    Log,
    Exp,
    Square,
    Sum,
    Mean,
    SumCols,
    Concat,
    Contract,
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::MatMul,
        OpKind::Affine,
        OpKind::Silu,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Log,
        OpKind::Exp,
        OpKind::Square,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SumCols,
        OpKind::Concat,
        OpKind::Contract,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Affine => "affine",
            OpKind::Silu => "silu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumCols => "sum_cols",
            OpKind::Concat => "concat",
            OpKind::Contract => "contract",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    MatMul(usize, usize),
    Affine(usize, usize, usize),
    Silu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Concat(Vec<usize>),
    Slice { input: usize, start: usize },
    Contract { m: usize, v: usize },
    Reshape(usize),
    Custom { inputs: Vec<usize>, backward: BackwardFn },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`. Every leaf has an entry (zeros when the
    /// leaf does not influence the root); interior nodes may not.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index()).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index()).and_then(Option::take)
    }
}

fn bcast_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (ra, ca) = a.dims2();
    let (rb, cb) = b.dims2();
    let r = if ra == rb || rb == 1 {
        ra
    } else if ra == 1 {
        rb
    } else {
        return Err(Error::shape(op, a.shape(), b.shape()));
    };
    let c = if ca == cb || cb == 1 {
        ca
    } else if ca == 1 {
        cb
    } else {
        return Err(Error::shape(op, a.shape(), b.shape()));
    };
    Ok((r, c))
}

fn bcast_apply(a: &Tensor, b: &Tensor, r: usize, c: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (ra, ca) = a.dims2();
    let (rb, cb) = b.dims2();
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(r * c);
    if ra == r && ca == c && rb == r && cb == c {
        out.extend(ad.iter().zip(bd).map(|(&x, &y)| f(x, y)));
    } else {
        for i in 0..r {
            let ia = if ra == 1 { 0 } else { i * ca };
            let ib = if rb == 1 { 0 } else { i * cb };
            for j in 0..c {
                let x = ad[ia + if ca == 1 { 0 } else { j }];
                let y = bd[ib + if cb == 1 { 0 } else { j }];
                out.push(f(x, y));
            }
        }
    }
    let shape = if a.dims2() == (r, c) {
        a.shape().to_vec()
    } else if b.dims2() == (r, c) {
        b.shape().to_vec()
    } else {
        vec![r, c]
    };
    Tensor::new(shape, out).expect("broadcast shape")
}

/// Sum a full `r x c` gradient down to the (possibly broadcast) shape of `target`.
fn reduce_to(grad: &[f64], r: usize, c: usize, target: &Tensor) -> Tensor {
    let (rt, ct) = target.dims2();
    if rt == r && ct == c {
        return Tensor::new(target.shape().to_vec(), grad.to_vec()).expect("same shape");
    }
    let mut out = vec![0.0; rt * ct];
    for i in 0..r {
        let it = if rt == 1 { 0 } else { i * ct };
        for j in 0..c {
            out[it + if ct == 1 { 0 } else { j }] += grad[i * c + j];
        }
    }
    Tensor::new(target.shape().to_vec(), out).expect("reduced shape")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enable or disable the per-op NaN/Inf check.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::StaleTape {
                expected: self.id,
                found: v.tape,
            });
        }
        Ok(v.index())
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("output of `{name}`"),
                step: self.nodes.len(),
            });
        }
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Const => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
            Op::Contract { m, v } => self.nodes[*m].needs_grad || self.nodes[*v].needs_grad,
            Op::Affine(a, b, c) => self.nodes[*a].needs_grad || self.nodes[*b].needs_grad || self.nodes[*c].needs_grad,
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Silu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumCols(a)
            | Op::Reshape(a)
            | Op::Slice { input: a, .. } => self.nodes[*a].needs_grad,
            Op::Concat(xs) | Op::Custom { inputs: xs, .. } => xs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        let idx = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var {
            tape: self.id,
            idx: idx as u32,
        })
    }

    /// Differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, "leaf").expect("leaf insertion")
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Const,
            needs_grad: false,
        });
        Var {
            tape: self.id,
            idx: idx as u32,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.index()].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Dispatch by kind; used by the gradient-check suite to sweep every op.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul | OpKind::Contract => 2,
            OpKind::Affine => 3,
            OpKind::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{kind} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Affine => self.affine(inputs[0], inputs[1], inputs[2]),
            OpKind::Silu => self.silu(inputs[0]),
            OpKind::Tanh => self.tanh(inputs[0]),
            OpKind::Sigmoid => self.sigmoid(inputs[0]),
            OpKind::Log => self.log(inputs[0]),
            OpKind::Exp => self.exp(inputs[0]),
            OpKind::Square => self.square(inputs[0]),
            OpKind::Sum => self.sum(inputs[0]),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::SumCols => self.sum_cols(inputs[0]),
            OpKind::Concat => self.concat(inputs),
            OpKind::Contract => self.contract(inputs[0], inputs[1]),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (r, c) = bcast_dims(name, va, vb)?;
        let out = bcast_apply(va, vb, r, c, f);
        self.push(out, op(ia, ib), name)
    }

    /// Elementwise sum with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product with row/column broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|x| x * s);
        self.push(out, Op::Scale(ia, s), "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|x| x + s);
        self.push(out, Op::Shift(ia), "add_scalar")
    }

    /// Matrix product of 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let ((m, k), (k2, n)) = (va.dims2(), vb.dims2());
        if k != k2 {
            return Err(Error::shape("matmul", va.shape(), vb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        self.push(Tensor::new([m, n], out)?, Op::MatMul(ia, ib), "matmul")
    }

    /// `x W + b` for `x: [rows, in]`, `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ix, iw, ib) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (vx, vw, vb) = (&self.nodes[ix].value, &self.nodes[iw].value, &self.nodes[ib].value);
        let ((m, k), (k2, n)) = (vx.dims2(), vw.dims2());
        if k != k2 {
            return Err(Error::shape("affine", vx.shape(), vw.shape()));
        }
        if vb.len() != n {
            return Err(Error::shape("affine", vw.shape(), vb.shape()));
        }
        let mut out = vb.broadcast_rows(m).into_data();
        gemm(m, k, n, vx.data(), false, vw.data(), false, &mut out, true);
        self.push(Tensor::new([m, n], out)?, Op::Affine(ix, iw, ib), "affine")
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(f);
        self.push(out, op(ia), name)
    }

    /// `x / (1 + e^{-x})`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary("silu", a, |x| x * sigmoid(x), Op::Silu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(ia), "mean")
    }

    /// Row sums: `[r, c] -> [r, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (r, c) = v.dims2();
        let out: Vec<f64> = v.data().chunks(c).map(|row| row.iter().sum()).collect();
        self.push(Tensor::new([r, 1], out)?, Op::SumCols(ia), "sum_cols")
    }

    /// Concatenate along columns; all inputs need the same row count.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let idxs = xs.iter().map(|&x| self.idx(x)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idxs.first() else {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        };
        let rows = self.nodes[first].value.rows();
        let mut cols = 0;
        for &i in &idxs {
            let v = &self.nodes[i].value;
            if v.rows() != rows {
                return Err(Error::shape("concat", self.nodes[first].value.shape(), v.shape()));
            }
            cols += v.cols();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idxs {
                out.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        self.push(Tensor::new([rows, cols], out)?, Op::Concat(idxs), "concat")
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (r, c) = v.dims2();
        if start >= end || end > c {
            return Err(Error::InvalidArgument(format!(
                "slice: column range {start}..{end} out of bounds for shape {:?}",
                v.shape()
            )));
        }
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&v.row(i)[start..end]);
        }
        self.push(
            Tensor::new([r, end - start], out)?,
            Op::Slice { input: ia, start },
            "slice",
        )
    }

    /// Batched matrix-vector product: `m: [b, n*k]` holds one row-major
    /// `n x k` matrix per row, `v: [b, k]`; result is `[b, n]`.
    pub fn contract(&mut self, m: Var, v: Var) -> Result<Var> {
        let (im, iv) = (self.idx(m)?, self.idx(v)?);
        let (vm, vv) = (&self.nodes[im].value, &self.nodes[iv].value);
        let ((bm, nk), (bv, k)) = (vm.dims2(), vv.dims2());
        if bm != bv || nk % k != 0 {
            return Err(Error::shape("contract", vm.shape(), vv.shape()));
        }
        let n = nk / k;
        let mut out = vec![0.0; bm * n];
        for b in 0..bm {
            let mrow = vm.row(b);
            let vrow = vv.row(b);
            for (i, o) in out[b * n..(b + 1) * n].iter_mut().enumerate() {
                *o = mrow[i * k..(i + 1) * k].iter().zip(vrow).map(|(x, y)| x * y).sum();
            }
        }
        self.push(Tensor::new([bm, n], out)?, Op::Contract { m: im, v: iv }, "contract")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(ia), "reshape")
    }

    /// Record an op with a caller-supplied value and backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor, &[&Tensor]) -> Vec<Tensor> + Send + 'static,
    ) -> Result<Var> {
        let idxs = inputs.iter().map(|&x| self.idx(x)).collect::<Result<Vec<_>>>()?;
        self.push(
            value,
            Op::Custom {
                inputs: idxs,
                backward: Box::new(backward),
            },
            "custom",
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let ir = self.idx(root)?;
        let rv = &self.nodes[ir].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(ir + 1, || None);
        grads[ir] = Some(Tensor::full(rv.shape().to_vec(), 1.0));

        for i in (0..=ir).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate().take(ir + 1) {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        let wants = |j: usize| self.nodes[j].needs_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (r, c) = out.dims2();
                if wants(*a) {
                    accumulate(&mut grads[*a], reduce_to(g.data(), r, c, val(*a)));
                }
                if wants(*b) {
                    let mut gb = reduce_to(g.data(), r, c, val(*b));
                    if matches!(node.op, Op::Sub(..)) {
                        gb.data_mut().iter_mut().for_each(|x| *x = -*x);
                    }
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Mul(a, b) => {
                let (r, c) = out.dims2();
                if wants(*a) {
                    let full = bcast_apply(g, val(*b), r, c, |x, y| x * y);
                    accumulate(&mut grads[*a], reduce_to(full.data(), r, c, val(*a)));
                }
                if wants(*b) {
                    let full = bcast_apply(g, val(*a), r, c, |x, y| x * y);
                    accumulate(&mut grads[*b], reduce_to(full.data(), r, c, val(*b)));
                }
            }
            Op::Scale(a, s) => accumulate(&mut grads[*a], g.map(|x| x * s)),
            Op::Shift(a) | Op::Reshape(a) => {
                let gg = Tensor::new(val(*a).shape().to_vec(), g.data().to_vec()).expect("same size");
                accumulate(&mut grads[*a], gg);
            }
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (val(*a).dims2(), val(*b).dims2());
                if wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, val(*b).data(), true, &mut ga, false);
                    accumulate(&mut grads[*a], Tensor::new(val(*a).shape().to_vec(), ga).unwrap());
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(*a).data(), true, g.data(), false, &mut gb, false);
                    accumulate(&mut grads[*b], Tensor::new(val(*b).shape().to_vec(), gb).unwrap());
                }
            }
            Op::Affine(x, w, b) => {
                let ((m, k), (_, n)) = (val(*x).dims2(), val(*w).dims2());
                if wants(*x) {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, val(*w).data(), true, &mut gx, false);
                    accumulate(&mut grads[*x], Tensor::new(val(*x).shape().to_vec(), gx).unwrap());
                }
                if wants(*w) {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, val(*x).data(), true, g.data(), false, &mut gw, false);
                    accumulate(&mut grads[*w], Tensor::new(val(*w).shape().to_vec(), gw).unwrap());
                }
                if wants(*b) {
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads[*b], Tensor::new(val(*b).shape().to_vec(), gb).unwrap());
                }
            }
            Op::Silu(a) => {
                let x = val(*a);
                let d = zip_map(g, x, |gi, xi| {
                    let s = sigmoid(xi);
                    gi * s * (1.0 + xi * (1.0 - s))
                });
                accumulate(&mut grads[*a], d);
            }
            Op::Tanh(a) => accumulate(&mut grads[*a], zip_map(g, out, |gi, y| gi * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(&mut grads[*a], zip_map(g, out, |gi, y| gi * y * (1.0 - y))),
            Op::Log(a) => accumulate(&mut grads[*a], zip_map(g, val(*a), |gi, x| gi / x)),
            Op::Exp(a) => accumulate(&mut grads[*a], zip_map(g, out, |gi, y| gi * y)),
            Op::Square(a) => accumulate(&mut grads[*a], zip_map(g, val(*a), |gi, x| 2.0 * gi * x)),
            Op::Sum(a) => {
                let gs = g.item();
                accumulate(&mut grads[*a], val(*a).map(|_| gs));
            }
            Op::Mean(a) => {
                let gs = g.item() / val(*a).len() as f64;
                accumulate(&mut grads[*a], val(*a).map(|_| gs));
            }
            Op::SumCols(a) => {
                let (r, c) = val(*a).dims2();
                let mut ga = Vec::with_capacity(r * c);
                for &gi in g.data() {
                    ga.extend(std::iter::repeat_n(gi, c));
                }
                accumulate(&mut grads[*a], Tensor::new(val(*a).shape().to_vec(), ga).unwrap());
            }
            Op::Concat(xs) => {
                let (r, c) = out.dims2();
                let mut offset = 0;
                for &j in xs {
                    let cj = val(j).cols();
                    if wants(j) {
                        let mut gj = Vec::with_capacity(r * cj);
                        for row in 0..r {
                            gj.extend_from_slice(&g.data()[row * c + offset..row * c + offset + cj]);
                        }
                        accumulate(&mut grads[j], Tensor::new(val(j).shape().to_vec(), gj).unwrap());
                    }
                    offset += cj;
                }
            }
            Op::Slice { input, start } => {
                let (r, c) = val(*input).dims2();
                let w = out.cols();
                let mut gi = vec![0.0; r * c];
                for row in 0..r {
                    gi[row * c + start..row * c + start + w].copy_from_slice(&g.data()[row * w..(row + 1) * w]);
                }
                accumulate(
                    &mut grads[*input],
                    Tensor::new(val(*input).shape().to_vec(), gi).unwrap(),
                );
            }
            Op::Contract { m, v } => {
                let (vm, vv) = (val(*m), val(*v));
                let (b, nk) = vm.dims2();
                let k = vv.cols();
                let n = nk / k;
                if wants(*m) {
                    let mut gm = vec![0.0; b * nk];
                    for bi in 0..b {
                        let vrow = vv.row(bi);
                        for i in 0..n {
                            let gi = g.data()[bi * n + i];
                            let dst = &mut gm[bi * nk + i * k..bi * nk + (i + 1) * k];
                            for (d, x) in dst.iter_mut().zip(vrow) {
                                *d = gi * x;
                            }
                        }
                    }
                    accumulate(&mut grads[*m], Tensor::new(vm.shape().to_vec(), gm).unwrap());
                }
                if wants(*v) {
                    let mut gv = vec![0.0; b * k];
                    for bi in 0..b {
                        let mrow = vm.row(bi);
                        let dst = &mut gv[bi * k..(bi + 1) * k];
                        for i in 0..n {
                            let gi = g.data()[bi * n + i];
                            for (d, x) in dst.iter_mut().zip(&mrow[i * k..(i + 1) * k]) {
                                *d += gi * x;
                            }
                        }
                    }
                    accumulate(&mut grads[*v], Tensor::new(vv.shape().to_vec(), gv).unwrap());
                }
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&j| val(j)).collect();
                for (&j, gj) in inputs.iter().zip(backward(g, &values)) {
                    if wants(j) {
                        accumulate(&mut grads[j], gj);
                    }
                }
            }
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}
