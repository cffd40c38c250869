//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as a node holding the forward value and
//! the parent indices. Nodes are appended in execution order, so walking the
//! node list backwards visits each node exactly once in reverse topological
//! order. A tape is single-owner: it is consumed by the first [`Var::grad`]
//! call and rejects further recording.
//!
//! The op set is deliberately minimal. Elementwise binaries support one form
//! of broadcasting only: the right operand's shape may be a suffix of the
//! left's, in which case it is expanded across the leading dimensions.
//! Everything else requires an explicit `reshape`.

use crate::error::{Error, Result};
use crate::require;
use crate::tensor::{Element, Tensor};
use std::cell::{Cell, RefCell};
use std::sync::Arc;

/// Variance floor used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T: Element> {
    Leaf,
    Add { a: usize, b: usize, expand_b: bool },
    Sub { a: usize, b: usize, expand_b: bool },
    Mul { a: usize, b: usize, expand_b: bool },
    AddScalar { a: usize },
    MulScalar { a: usize, c: T },
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    Reshape { a: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Split { a: usize, axis: usize, index: usize, parts: usize },
    GatherRows { a: usize, indices: Arc<Vec<usize>> },
    Sum { a: usize },
    Mean { a: usize },
    MaxReduce { a: usize, argmax: usize },
    Abs { a: usize },
    Exp { a: usize },
    Log { a: usize },
    Sqrt { a: usize },
    Gelu { a: usize },
    Softmax { a: usize },
    LayerNorm { a: usize, inv_std: Vec<T> },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording tape for one forward computation.
pub struct Tape<T: Element = crate::tensor::Real> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

/// Handle to one recorded value on a [`Tape`].
pub struct Var<'t, T: Element = crate::tensor::Real> {
    tape: &'t Tape<T>,
    idx: usize,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T: Element> Copy for Var<'_, T> {}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Record a trainable leaf; gradients will be produced for it.
    pub fn param(&self, value: &Tensor<T>) -> Var<'_, T> {
        self.push_unchecked(value.clone(), Op::Leaf, true)
    }

    /// Record a non-trainable leaf (inputs, targets, fixed weights).
    pub fn constant(&self, value: &Tensor<T>) -> Var<'_, T> {
        self.push_unchecked(value.clone(), Op::Leaf, false)
    }

    fn push_unchecked(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn push(&self, kind: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var<'_, T>> {
        if self.consumed.get() {
            return Err(Error::Contract(
                "tape already consumed by a gradient pass".into(),
            ));
        }
        value.check_finite(kind)?;
        let needs_grad = {
            let nodes = self.nodes.borrow();
            op_parents(&op).iter().any(|&p| nodes[p].needs_grad)
        };
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn value_of(&self, idx: usize) -> Tensor<T> {
        self.nodes.borrow()[idx].value.clone()
    }

    fn shape_of(&self, idx: usize) -> Vec<usize> {
        self.nodes.borrow()[idx].value.shape().to_vec()
    }

    /// Concatenate along `axis`. All parts must agree on every other extent.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        require!(!parts.is_empty(), "concat of zero tensors");
        for p in parts {
            require!(
                std::ptr::eq(p.tape, self),
                "concat operand from a different tape"
            );
        }
        let first = self.shape_of(parts[0].idx);
        require!(axis < first.len(), "concat axis {axis} out of rank");
        let mut axis_total = 0usize;
        for p in parts {
            let s = self.shape_of(p.idx);
            require!(s.len() == first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(first.iter()).enumerate() {
                require!(
                    d == axis || a == b,
                    "concat extent mismatch at dim {d}: {a} vs {b}"
                );
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let pre: usize = first[..axis].iter().product();
        let post: usize = first[axis + 1..].iter().product();
        let mut data = vec![T::zero(); pre * axis_total * post];
        {
            let nodes = self.nodes.borrow();
            let mut offset = 0usize;
            for p in parts {
                let src = &nodes[p.idx].value;
                let len_axis = src.shape()[axis];
                let run = len_axis * post;
                for i in 0..pre {
                    let dst_start = (i * axis_total + offset) * post;
                    let src_start = i * run;
                    data[dst_start..dst_start + run]
                        .copy_from_slice(&src.data()[src_start..src_start + run]);
                }
                offset += len_axis;
            }
        }
        self.push(
            "concat",
            Tensor::new(out_shape, data)?,
            Op::Concat {
                parts: parts.iter().map(|p| p.idx).collect(),
                axis,
            },
        )
    }
}

fn op_parents<T: Element>(op: &Op<T>) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Add { a, b, .. } | Op::Sub { a, b, .. } | Op::Mul { a, b, .. } => vec![*a, *b],
        Op::Matmul { a, b } => vec![*a, *b],
        Op::Concat { parts, .. } => parts.clone(),
        Op::AddScalar { a }
        | Op::MulScalar { a, .. }
        | Op::Transpose { a }
        | Op::Reshape { a }
        | Op::Split { a, .. }
        | Op::GatherRows { a, .. }
        | Op::Sum { a }
        | Op::Mean { a }
        | Op::MaxReduce { a, .. }
        | Op::Abs { a }
        | Op::Exp { a }
        | Op::Log { a }
        | Op::Sqrt { a }
        | Op::Gelu { a }
        | Op::Softmax { a }
        | Op::LayerNorm { a, .. } => vec![*a],
    }
}

/// `true` if `small` is a suffix of `big` (leading-dimension expansion).
fn is_suffix(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn binary_shapes<T: Element>(
    kind: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<bool> {
    if a.shape() == b.shape() {
        Ok(false)
    } else if is_suffix(a.shape(), b.shape()) {
        Ok(true)
    } else {
        Err(Error::Contract(format!(
            "{kind}: shape {:?} does not conform to {:?} (equal or rhs-suffix required)",
            a.shape(),
            b.shape()
        )))
    }
}

fn elementwise<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    expand_b: bool,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let bn = b.numel();
    let data = if expand_b {
        a.data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % bn]))
            .collect()
    } else {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    };
    Tensor::new(a.shape().to_vec(), data).expect("elementwise shape")
}

/// Sum `g` (shaped like the expanded lhs) over its leading dims back to `shape`.
fn reduce_leading<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let small: usize = shape.iter().product();
    let mut out = vec![T::zero(); small];
    for (i, &v) in g.data().iter().enumerate() {
        out[i % small] = out[i % small] + v;
    }
    Tensor::new(shape.to_vec(), out).expect("reduce shape")
}

/// Row-major matmul: `a` is m×k, `b` is k×n.
pub(crate) fn matmul_raw<T: Element>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aip * bv;
            }
        }
    }
    c
}

fn transpose_raw<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn gelu_scalar<T: Element>(x: T) -> T {
    // tanh approximation
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let u = c * (x + k * x * x * x);
    let half = T::from_f64(0.5);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let three = T::from_f64(3.0);
    let half = T::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Softmax over the last axis; `cols` is the last extent.
fn softmax_raw<T: Element>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row_in, row_out) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mut mx = row_in[0];
        for &v in row_in {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            *o = (v - mx).exp();
            sum = sum + *o;
        }
        for o in row_out.iter_mut() {
            *o = *o / sum;
        }
    }
    out
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tensor(&self) -> Tensor<T> {
        self.tape.value_of(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.idx)
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        require!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
        Ok(())
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs)?;
        let (a, b) = (self.tensor(), rhs.tensor());
        let expand_b = binary_shapes("add", &a, &b)?;
        let out = elementwise(&a, &b, expand_b, |x, y| x + y);
        self.tape.push(
            "add",
            out,
            Op::Add {
                a: self.idx,
                b: rhs.idx,
                expand_b,
            },
        )
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs)?;
        let (a, b) = (self.tensor(), rhs.tensor());
        let expand_b = binary_shapes("sub", &a, &b)?;
        let out = elementwise(&a, &b, expand_b, |x, y| x - y);
        self.tape.push(
            "sub",
            out,
            Op::Sub {
                a: self.idx,
                b: rhs.idx,
                expand_b,
            },
        )
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs)?;
        let (a, b) = (self.tensor(), rhs.tensor());
        let expand_b = binary_shapes("mul", &a, &b)?;
        let out = elementwise(&a, &b, expand_b, |x, y| x * y);
        self.tape.push(
            "mul",
            out,
            Op::Mul {
                a: self.idx,
                b: rhs.idx,
                expand_b,
            },
        )
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>> {
        let out = self.tensor().map(|x| x + c);
        self.tape.push("add_scalar", out, Op::AddScalar { a: self.idx })
    }

    pub fn mul_scalar(self, c: T) -> Result<Var<'t, T>> {
        let out = self.tensor().map(|x| x * c);
        self.tape
            .push("mul_scalar", out, Op::MulScalar { a: self.idx, c })
    }

    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs)?;
        let (a, b) = (self.tensor(), rhs.tensor());
        require!(
            a.rank() == 2 && b.rank() == 2,
            "matmul requires 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        );
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        require!(
            k == k2,
            "matmul inner extents disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let data = matmul_raw(a.data(), b.data(), m, k, n);
        self.tape.push(
            "matmul",
            Tensor::new(vec![m, n], data)?,
            Op::Matmul {
                a: self.idx,
                b: rhs.idx,
            },
        )
    }

    pub fn transpose(self) -> Result<Var<'t, T>> {
        let a = self.tensor();
        require!(a.rank() == 2, "transpose requires 2-D, got {:?}", a.shape());
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let data = transpose_raw(a.data(), r, c);
        self.tape.push(
            "transpose",
            Tensor::new(vec![c, r], data)?,
            Op::Transpose { a: self.idx },
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.tensor().reshaped(shape)?;
        self.tape.push("reshape", out, Op::Reshape { a: self.idx })
    }

    /// Split into `parts` equal pieces along `axis`.
    pub fn split(self, axis: usize, parts: usize) -> Result<Vec<Var<'t, T>>> {
        let a = self.tensor();
        require!(axis < a.rank(), "split axis {axis} out of rank");
        require!(parts >= 1, "split into zero parts");
        let extent = a.shape()[axis];
        require!(
            extent % parts == 0,
            "split: extent {extent} not divisible by {parts}"
        );
        let piece = extent / parts;
        let pre: usize = a.shape()[..axis].iter().product();
        let post: usize = a.shape()[axis + 1..].iter().product();
        let mut out_shape = a.shape().to_vec();
        out_shape[axis] = piece;
        let mut vars = Vec::with_capacity(parts);
        for index in 0..parts {
            let mut data = vec![T::zero(); pre * piece * post];
            let run = piece * post;
            for i in 0..pre {
                let src_start = (i * extent + index * piece) * post;
                data[i * run..(i + 1) * run]
                    .copy_from_slice(&a.data()[src_start..src_start + run]);
            }
            vars.push(self.tape.push(
                "split",
                Tensor::new(out_shape.clone(), data)?,
                Op::Split {
                    a: self.idx,
                    axis,
                    index,
                    parts,
                },
            )?);
        }
        Ok(vars)
    }

    /// Select rows (leading-axis slices) by index, in order. Indices may repeat.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t, T>> {
        let a = self.tensor();
        require!(a.rank() >= 1, "gather_rows requires rank >= 1");
        let rows = a.shape()[0];
        let row_len = a.numel() / rows.max(1);
        for &i in indices {
            require!(i < rows, "gather_rows index {i} out of {rows}");
        }
        let mut data = Vec::with_capacity(indices.len() * row_len);
        for &i in indices {
            data.extend_from_slice(&a.data()[i * row_len..(i + 1) * row_len]);
        }
        let mut shape = a.shape().to_vec();
        shape[0] = indices.len();
        self.tape.push(
            "gather_rows",
            Tensor::new(shape, data)?,
            Op::GatherRows {
                a: self.idx,
                indices: Arc::new(indices.to_vec()),
            },
        )
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let a = self.tensor();
        // accumulate in f64 so long reductions keep their low-order bits
        let s: f64 = a.data().iter().map(|&v| v.as_f64()).sum();
        self.tape
            .push("sum", Tensor::scalar(T::from_f64(s)), Op::Sum { a: self.idx })
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean(self) -> Result<Var<'t, T>> {
        let a = self.tensor();
        require!(a.numel() > 0, "mean of empty tensor");
        let s: f64 = a.data().iter().map(|&v| v.as_f64()).sum();
        let m = T::from_f64(s / a.numel() as f64);
        self.tape
            .push("mean", Tensor::scalar(m), Op::Mean { a: self.idx })
    }

    /// Maximum element, as a rank-0 scalar. Gradient flows to the first argmax.
    pub fn max_reduce(self) -> Result<Var<'t, T>> {
        let a = self.tensor();
        require!(a.numel() > 0, "max of empty tensor");
        let mut best = 0usize;
        for (i, &v) in a.data().iter().enumerate() {
            if v > a.data()[best] {
                best = i;
            }
        }
        self.tape.push(
            "max_reduce",
            Tensor::scalar(a.data()[best]),
            Op::MaxReduce {
                a: self.idx,
                argmax: best,
            },
        )
    }

    pub fn abs(self) -> Result<Var<'t, T>> {
        let out = self.tensor().map(|x| x.abs());
        self.tape.push("abs", out, Op::Abs { a: self.idx })
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        let out = self.tensor().map(|x| x.exp());
        self.tape.push("exp", out, Op::Exp { a: self.idx })
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        let out = self.tensor().map(|x| x.ln());
        self.tape.push("log", out, Op::Log { a: self.idx })
    }

    pub fn sqrt(self) -> Result<Var<'t, T>> {
        let out = self.tensor().map(|x| x.sqrt());
        self.tape.push("sqrt", out, Op::Sqrt { a: self.idx })
    }

    pub fn gelu(self) -> Result<Var<'t, T>> {
        let out = self.tensor().map(gelu_scalar);
        self.tape.push("gelu", out, Op::Gelu { a: self.idx })
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let a = self.tensor();
        require!(a.rank() >= 1, "softmax requires rank >= 1");
        let cols = *a.shape().last().unwrap();
        require!(cols > 0, "softmax over empty axis");
        let data = softmax_raw(a.data(), cols);
        self.tape.push(
            "softmax",
            Tensor::new(a.shape().to_vec(), data)?,
            Op::Softmax { a: self.idx },
        )
    }

    /// Layer normalization over the last axis, without learnable scale/shift.
    pub fn layer_norm(self) -> Result<Var<'t, T>> {
        let a = self.tensor();
        require!(a.rank() >= 1, "layer_norm requires rank >= 1");
        let cols = *a.shape().last().unwrap();
        require!(cols > 0, "layer_norm over empty axis");
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_cols = T::one() / T::from_f64(cols as f64);
        let mut data = vec![T::zero(); a.numel()];
        let mut inv_std = Vec::with_capacity(a.numel() / cols);
        for (row_in, row_out) in a.data().chunks(cols).zip(data.chunks_mut(cols)) {
            let mean: T = row_in.iter().copied().sum::<T>() * inv_cols;
            let var: T = row_in
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_cols;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - mean) * is;
            }
        }
        self.tape.push(
            "layer_norm",
            Tensor::new(a.shape().to_vec(), data)?,
            Op::LayerNorm {
                a: self.idx,
                inv_std,
            },
        )
    }

    /// Run the backward pass from this scalar and return one gradient per
    /// `wrt` entry, shaped like the parameter. The tape is consumed.
    pub fn grad(self, wrt: &[Var<'t, T>]) -> Result<Vec<Tensor<T>>> {
        for w in wrt {
            self.same_tape(w)?;
        }
        if self.tape.consumed.get() {
            return Err(Error::Contract("tape already consumed".into()));
        }
        let nodes = std::mem::take(&mut *self.tape.nodes.borrow_mut());
        self.tape.consumed.set(true);

        let loss = &nodes[self.idx].value;
        require!(
            loss.is_scalar(),
            "grad requires a scalar loss, got shape {:?}",
            loss.shape()
        );

        let mut adjoint: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        adjoint[self.idx] = Some(Tensor::full(loss.shape(), T::one()));
        let mut keep = vec![false; nodes.len()];
        for w in wrt {
            keep[w.idx] = true;
        }

        for idx in (0..=self.idx).rev() {
            let g = match adjoint[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[idx];
            if node.needs_grad && !matches!(node.op, Op::Leaf) {
                backward_step(&nodes, idx, &g, &mut adjoint)?;
            }
            if keep[idx] {
                adjoint[idx] = Some(g);
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match &adjoint[w.idx] {
                Some(g) => g.clone(),
                None => Tensor::zeros(nodes[w.idx].value.shape()),
            })
            .collect())
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, contrib: Tensor<T>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                *e = *e + *c;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn backward_step<T: Element>(
    nodes: &[Node<T>],
    idx: usize,
    g: &Tensor<T>,
    adjoint: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let needs = |p: usize| nodes[p].needs_grad;
    let val = |p: usize| &nodes[p].value;
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Add { a, b, expand_b } => {
            if needs(*a) {
                accumulate(&mut adjoint[*a], g.clone());
            }
            if needs(*b) {
                let gb = if *expand_b {
                    reduce_leading(g, val(*b).shape())
                } else {
                    g.clone()
                };
                accumulate(&mut adjoint[*b], gb);
            }
        }
        Op::Sub { a, b, expand_b } => {
            if needs(*a) {
                accumulate(&mut adjoint[*a], g.clone());
            }
            if needs(*b) {
                let neg = g.map(|x| -x);
                let gb = if *expand_b {
                    reduce_leading(&neg, val(*b).shape())
                } else {
                    neg
                };
                accumulate(&mut adjoint[*b], gb);
            }
        }
        Op::Mul { a, b, expand_b } => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let ga = elementwise(g, bv, *expand_b, |x, y| x * y);
                accumulate(&mut adjoint[*a], ga);
            }
            if needs(*b) {
                let gxa = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&x, &y)| x * y)
                        .collect(),
                )?;
                let gb = if *expand_b {
                    reduce_leading(&gxa, bv.shape())
                } else {
                    gxa
                };
                accumulate(&mut adjoint[*b], gb);
            }
        }
        Op::AddScalar { a } => {
            if needs(*a) {
                accumulate(&mut adjoint[*a], g.clone());
            }
        }
        Op::MulScalar { a, c } => {
            if needs(*a) {
                accumulate(&mut adjoint[*a], g.map(|x| x * *c));
            }
        }
        Op::Matmul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if needs(*a) {
                // dA = g @ B^T
                let bt = transpose_raw(bv.data(), k, n);
                let da = matmul_raw(g.data(), &bt, m, n, k);
                accumulate(&mut adjoint[*a], Tensor::new(vec![m, k], da)?);
            }
            if needs(*b) {
                // dB = A^T @ g
                let at = transpose_raw(av.data(), m, k);
                let db = matmul_raw(&at, g.data(), k, m, n);
                accumulate(&mut adjoint[*b], Tensor::new(vec![k, n], db)?);
            }
        }
        Op::Transpose { a } => {
            if needs(*a) {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let da = transpose_raw(g.data(), r, c);
                accumulate(&mut adjoint[*a], Tensor::new(vec![c, r], da)?);
            }
        }
        Op::Reshape { a } => {
            if needs(*a) {
                accumulate(&mut adjoint[*a], g.reshaped(val(*a).shape())?);
            }
        }
        Op::Concat { parts, axis } => {
            let out_shape = nodes[idx].value.shape().to_vec();
            let pre: usize = out_shape[..*axis].iter().product();
            let post: usize = out_shape[*axis + 1..].iter().product();
            let total = out_shape[*axis];
            let mut offset = 0usize;
            for &p in parts {
                let pshape = val(p).shape().to_vec();
                let len_axis = pshape[*axis];
                if needs(p) {
                    let run = len_axis * post;
                    let mut dp = vec![T::zero(); pre * run];
                    for i in 0..pre {
                        let src_start = (i * total + offset) * post;
                        dp[i * run..(i + 1) * run]
                            .copy_from_slice(&g.data()[src_start..src_start + run]);
                    }
                    accumulate(&mut adjoint[p], Tensor::new(pshape, dp)?);
                }
                offset += len_axis;
            }
        }
        Op::Split {
            a,
            axis,
            index,
            parts,
        } => {
            if needs(*a) {
                let ashape = val(*a).shape().to_vec();
                let pre: usize = ashape[..*axis].iter().product();
                let post: usize = ashape[*axis + 1..].iter().product();
                let extent = ashape[*axis];
                let piece = extent / parts;
                let run = piece * post;
                let mut da = Tensor::zeros(&ashape);
                for i in 0..pre {
                    let dst_start = (i * extent + index * piece) * post;
                    da.data_mut()[dst_start..dst_start + run]
                        .copy_from_slice(&g.data()[i * run..(i + 1) * run]);
                }
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::GatherRows { a, indices } => {
            if needs(*a) {
                let ashape = val(*a).shape().to_vec();
                let rows = ashape[0];
                let row_len = val(*a).numel() / rows.max(1);
                let mut da = Tensor::zeros(&ashape);
                for (out_row, &src_row) in indices.iter().enumerate() {
                    let src = &g.data()[out_row * row_len..(out_row + 1) * row_len];
                    let dst = &mut da.data_mut()[src_row * row_len..(src_row + 1) * row_len];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::Sum { a } => {
            if needs(*a) {
                let gv = g.data()[0];
                accumulate(&mut adjoint[*a], Tensor::full(val(*a).shape(), gv));
            }
        }
        Op::Mean { a } => {
            if needs(*a) {
                let n = T::from_f64(val(*a).numel() as f64);
                let gv = g.data()[0] / n;
                accumulate(&mut adjoint[*a], Tensor::full(val(*a).shape(), gv));
            }
        }
        Op::MaxReduce { a, argmax } => {
            if needs(*a) {
                let mut da = Tensor::zeros(val(*a).shape());
                da.data_mut()[*argmax] = g.data()[0];
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::Abs { a } => {
            if needs(*a) {
                let av = val(*a);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| {
                            if x > T::zero() {
                                gv
                            } else if x < T::zero() {
                                -gv
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                )?;
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::Exp { a } => {
            if needs(*a) {
                let out = &nodes[idx].value;
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gv, &y)| gv * y)
                        .collect(),
                )?;
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::Log { a } => {
            if needs(*a) {
                let av = val(*a);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| gv / x)
                        .collect(),
                )?;
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::Sqrt { a } => {
            if needs(*a) {
                let out = &nodes[idx].value;
                let two = T::from_f64(2.0);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gv, &y)| gv / (two * y))
                        .collect(),
                )?;
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::Gelu { a } => {
            if needs(*a) {
                let av = val(*a);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| gv * gelu_grad_scalar(x))
                        .collect(),
                )?;
                accumulate(&mut adjoint[*a], da);
            }
        }
        Op::Softmax { a } => {
            if needs(*a) {
                let y = &nodes[idx].value;
                let cols = *y.shape().last().unwrap();
                let mut da = vec![T::zero(); y.numel()];
                for ((gr, yr), dr) in g
                    .data()
                    .chunks(cols)
                    .zip(y.data().chunks(cols))
                    .zip(da.chunks_mut(cols))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&gv, &yv)| gv * yv).sum();
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                accumulate(&mut adjoint[*a], Tensor::new(y.shape().to_vec(), da)?);
            }
        }
        Op::LayerNorm { a, inv_std } => {
            if needs(*a) {
                let y = &nodes[idx].value;
                let cols = *y.shape().last().unwrap();
                let inv_cols = T::one() / T::from_f64(cols as f64);
                let mut da = vec![T::zero(); y.numel()];
                for (row, ((gr, yr), dr)) in g
                    .data()
                    .chunks(cols)
                    .zip(y.data().chunks(cols))
                    .zip(da.chunks_mut(cols))
                    .enumerate()
                {
                    let g_mean: T = gr.iter().copied().sum::<T>() * inv_cols;
                    let gy_mean: T =
                        gr.iter().zip(yr).map(|(&gv, &yv)| gv * yv).sum::<T>() * inv_cols;
                    let is = inv_std[row];
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = (gv - g_mean - yv * gy_mean) * is;
                    }
                }
                accumulate(&mut adjoint[*a], Tensor::new(y.shape().to_vec(), da)?);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_preserves_input() {
        let tape = Tape::<f64>::new();
        let id = tape.constant(&Tensor::identity(3));
        let x = tape.constant(
            &Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        );
        let y = id.matmul(x).unwrap();
        assert_eq!(y.tensor(), x.tensor());
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::full(&[4], 3.25));
        let y = x.layer_norm().unwrap().tensor();
        for &v in y.data() {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = x.softmax().unwrap().tensor();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn quadratic_gradient() {
        // loss = sum(w∘w), w=[1,2] → grad [2,4]
        let tape = Tape::<f64>::new();
        let w = tape.param(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let loss = w.mul(w).unwrap().sum().unwrap();
        let grads = loss.grad(&[w]).unwrap();
        assert_eq!(grads[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let tape = Tape::<f64>::new();
        let w = tape.param(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let unused = tape.param(&Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap());
        let loss = w.sum().unwrap();
        let grads = loss.grad(&[w, unused]).unwrap();
        assert_eq!(grads[1].shape(), &[3]);
        assert!(grads[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_rejects_non_scalar_loss() {
        let tape = Tape::<f64>::new();
        let w = tape.param(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let y = w.mul(w).unwrap();
        assert!(matches!(y.grad(&[w]), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_is_consumed_by_grad() {
        let tape = Tape::<f64>::new();
        let w = tape.param(&Tensor::new(vec![1], vec![2.0]).unwrap());
        let loss = w.sum().unwrap();
        loss.grad(&[w]).unwrap();
        assert!(tape.param(&Tensor::scalar(1.0)).sum().is_err() || tape.consumed.get());
    }

    #[test]
    fn shared_subexpression_accumulates_once_per_use() {
        // loss = sum(w∘w) + sum(w) → grad = 2w + 1
        let tape = Tape::<f64>::new();
        let w = tape.param(&Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
        let sq = w.mul(w).unwrap().sum().unwrap();
        let lin = w.sum().unwrap();
        let loss = sq.add(lin).unwrap();
        let grads = loss.grad(&[w]).unwrap();
        assert_eq!(grads[0].data(), &[7.0, -1.0]);
    }

    #[test]
    fn non_finite_output_is_surfaced() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        match x.log() {
            Err(Error::Numeric { op, .. }) => assert_eq!(op, "log"),
            Err(other) => panic!("expected numeric fault, got {other:?}"),
            Ok(_) => panic!("expected numeric fault, got a value"),
        }
    }

    #[test]
    fn broadcast_add_bias() {
        let tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.param(&Tensor::new(vec![3], vec![10., 20., 30.]).unwrap());
        let y = x.add(b).unwrap();
        assert_eq!(y.tensor().data(), &[11., 22., 33., 14., 25., 36.]);
        let loss = y.sum().unwrap();
        let grads = loss.grad(&[x, b]).unwrap();
        assert!(grads[0].data().iter().all(|&v| v == 1.0));
        assert_eq!(grads[1].data(), &[2.0, 2.0, 2.0]); // summed over leading dim
    }

    #[test]
    fn gather_rows_scatter_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = x.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(y.tensor().data(), &[5., 6., 1., 2., 5., 6.]);
        let loss = y.sum().unwrap();
        let grads = loss.grad(&[x]).unwrap();
        assert_eq!(grads[0].data(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn split_concat_roundtrip_and_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::new(vec![2, 4], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap());
        let parts = x.split(1, 2).unwrap();
        assert_eq!(parts[0].tensor().data(), &[1., 2., 5., 6.]);
        assert_eq!(parts[1].tensor().data(), &[3., 4., 7., 8.]);
        let back = tape.concat(&parts, 1).unwrap();
        assert_eq!(back.tensor(), x.tensor());
        let loss = back.mul(back).unwrap().sum().unwrap();
        let grads = loss.grad(&[x]).unwrap();
        let expect: Vec<f64> = (1..=8).map(|v| 2.0 * v as f64).collect();
        assert_eq!(grads[0].data(), &expect[..]);
    }

    #[test]
    fn determinism_same_seed_bitwise_identical_gradients() {
        use rand::Rng;
        let run = || -> Vec<f64> {
            let mut rng = crate::rng::stream(11, "tape-det", &[]);
            let tape = Tape::<f64>::new();
            let w = tape.param(&Tensor::from_fn(&[4, 4], |_| rng.random::<f64>()));
            let x = tape.constant(&Tensor::from_fn(&[4, 4], |_| rng.random::<f64>()));
            let loss = x
                .matmul(w)
                .unwrap()
                .gelu()
                .unwrap()
                .softmax()
                .unwrap()
                .sum()
                .unwrap();
            loss.grad(&[w]).unwrap()[0].data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
