//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! The tape records dense real tensors (scalars, vectors, row-major matrices)
//! and supplies exactly the operations the FDN forward pass and the training
//! losses need: elementwise arithmetic, reductions, matrix products, an
//! unnormalized DFT pair with adjoint transforms, a differentiable matrix
//! exponential, and two fused kernels for the sample recursion and the soft
//! echo-density profile.
//!
//! Nodes are pushed in topological order (an operation's parents always
//! precede it), so one reverse sweep visits each node exactly once.

mod fft;
mod fused;

use std::cell::{Ref, RefCell};

use fused::{FdnUnrollSaved, SoftEdpSaved, SQRT_GUARD};

/// Absolute bound on the imaginary residue a conjugate-symmetric spectrum may
/// leave behind after the inverse transform.
pub const IDFT_IMAG_TOL: f64 = 1e-9;

/// Deterministic four-accumulator dot product, shared with the plain
/// (untaped) signal paths.
pub fn plain_dot(a: &[f64], b: &[f64]) -> f64 {
    fused::dot(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense real tensor. All tape values and adjoints are of this form.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Shape::Scalar,
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match shape");
        Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::matrix(n, n, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "tensor is not a scalar");
        self.data[0]
    }
}

struct FdnRecord {
    kernels: Vec<usize>,
    feedback: usize,
    input_gains: usize,
    output_gains: usize,
    direct: usize,
    read_depth: usize,
    saved: FdnUnrollSaved,
}

struct SoftEdpRecord {
    input: usize,
    window: Vec<f64>,
    kappa: Vec<f64>,
    norm: f64,
    saved: SoftEdpSaved,
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Abs(usize),
    Square(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Sin(usize),
    Cos(usize),
    MinConst(usize, f64),
    Sum(usize),
    Mean(usize),
    Dot(usize, usize),
    MatVec(usize, usize),
    MatMul(usize, usize),
    Concat(usize, usize),
    Slice { input: usize, start: usize },
    /// Output is `[Re(X) || Im(X)]`, length 2K.
    Dft(usize),
    /// Real part of the inverse DFT of a conjugate-symmetric spectrum.
    IdftReal { re: usize, im: usize },
    ReverseCumsum(usize),
    /// Strict upper triangle minus its transpose (a skew-symmetric matrix).
    StrictUpperSkew(usize),
    /// `out[i][j] = m[i][j] * v[j]`
    ScaleColumns { matrix: usize, scale: usize },
    FdnUnroll(Box<FdnRecord>),
    SoftEdp(Box<SoftEdpRecord>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording tape. Single-owner during recording; independent tapes may run
/// on different threads.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Adjoints produced by one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Adjoint of `v`; zero tensor if the backward sweep never reached it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        let shape = self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// A gradient-tracked input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        assert!(
            value.data.iter().all(|v| v.is_finite()),
            "leaf value must be finite"
        );
        self.push(value, Op::Leaf, true)
    }

    /// A value that participates in the forward pass but receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn leaf_scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(v))
    }

    pub fn leaf_vector(&self, v: &[f64]) -> Var<'_> {
        self.leaf(Tensor::vector(v.to_vec()))
    }

    pub fn constant_scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub fn constant_vector(&self, v: &[f64]) -> Var<'_> {
        self.constant(Tensor::vector(v.to_vec()))
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

fn ew_shapes(a: Shape, b: Shape) -> Shape {
    if a == b {
        a
    } else if a.len() == 1 {
        b
    } else if b.len() == 1 {
        a
    } else {
        panic!("shape error: {a:?} and {b:?} are not compatible");
    }
}

fn ew_apply(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let shape = ew_shapes(a.shape, b.shape);
    let data = if a.len() == b.len() {
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect()
    } else if a.len() == 1 {
        b.data.iter().map(|y| f(a.data[0], *y)).collect()
    } else {
        a.data.iter().map(|x| f(*x, b.data[0])).collect()
    };
    Tensor { shape, data }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |nodes| &nodes[self.id].value)
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.data.clone()
    }

    pub fn scalar_value(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.as_scalar()
    }

    pub fn max_abs(&self) -> f64 {
        self.tape.nodes.borrow()[self.id]
            .value
            .data
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn binary(self, rhs: Var<'t>, make: impl FnOnce(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            ew_apply(&nodes[self.id].value, &nodes[rhs.id].value, f)
        };
        let rg = self.tape.requires_grad(self.id) || self.tape.requires_grad(rhs.id);
        self.tape.push(value, make(self.id, rhs.id), rg)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            Tensor {
                shape: v.shape,
                data: v.data.iter().map(|x| f(*x)).collect(),
            }
        };
        let rg = self.tape.requires_grad(self.id);
        self.tape.push(value, op, rg)
    }

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, |a, b| a * b)
    }

    pub fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    /// Elementwise absolute value with subgradient 0 at the origin.
    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    /// Elementwise square root. The adjoint is guarded below so values at
    /// zero produce a large-but-finite gradient instead of an infinity.
    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), |x| x.max(0.0).sqrt())
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), f64::cos)
    }

    /// `min(x, c)` elementwise; the clipped branch has subgradient 0.
    pub fn min_const(self, c: f64) -> Var<'t> {
        self.unary(Op::MinConst(self.id, c), |x| x.min(c))
    }

    pub fn sum(self) -> Var<'t> {
        let total: f64 = self.tape.nodes.borrow()[self.id].value.data.iter().sum();
        let rg = self.tape.requires_grad(self.id);
        self.tape.push(Tensor::scalar(total), Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t> {
        let (total, n) = {
            let nodes = self.tape.nodes.borrow();
            let d = &nodes[self.id].value.data;
            assert!(!d.is_empty(), "mean of an empty tensor");
            (d.iter().sum::<f64>(), d.len())
        };
        let rg = self.tape.requires_grad(self.id);
        self.tape
            .push(Tensor::scalar(total / n as f64), Op::Mean(self.id), rg)
    }

    pub fn dot(self, rhs: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            assert_eq!(a.len(), b.len(), "shape error: dot operands differ in length");
            Tensor::scalar(fused::dot(&a.data, &b.data))
        };
        let rg = self.tape.requires_grad(self.id) || self.tape.requires_grad(rhs.id);
        self.tape.push(value, Op::Dot(self.id, rhs.id), rg)
    }

    pub fn matvec(self, v: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let m = &nodes[self.id].value;
            let x = &nodes[v.id].value;
            let Shape::Matrix(r, c) = m.shape else {
                panic!("shape error: matvec lhs must be a matrix");
            };
            assert_eq!(x.len(), c, "shape error: matvec dimensions {r}x{c} vs {}", x.len());
            let data = (0..r)
                .map(|i| fused::dot(&m.data[i * c..(i + 1) * c], &x.data))
                .collect();
            Tensor::vector(data)
        };
        let rg = self.tape.requires_grad(self.id) || self.tape.requires_grad(v.id);
        self.tape.push(value, Op::MatVec(self.id, v.id), rg)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            let (Shape::Matrix(r, k), Shape::Matrix(k2, c)) = (a.shape, b.shape) else {
                panic!("shape error: matmul operands must be matrices");
            };
            assert_eq!(k, k2, "shape error: matmul inner dimensions {k} vs {k2}");
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for p in 0..k {
                    let aip = a.data[i * k + p];
                    if aip != 0.0 {
                        fused::axpy(&mut data[i * c..(i + 1) * c], aip, &b.data[p * c..(p + 1) * c]);
                    }
                }
            }
            Tensor::matrix(r, c, data)
        };
        let rg = self.tape.requires_grad(self.id) || self.tape.requires_grad(rhs.id);
        self.tape.push(value, Op::MatMul(self.id, rhs.id), rg)
    }

    pub fn concat(self, rhs: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let mut data = nodes[self.id].value.data.clone();
            data.extend_from_slice(&nodes[rhs.id].value.data);
            Tensor::vector(data)
        };
        let rg = self.tape.requires_grad(self.id) || self.tape.requires_grad(rhs.id);
        self.tape.push(value, Op::Concat(self.id, rhs.id), rg)
    }

    pub fn slice(self, start: usize, len: usize) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            assert!(
                start + len <= v.len(),
                "shape error: slice {start}..{} out of bounds for length {}",
                start + len,
                v.len()
            );
            Tensor::vector(v.data[start..start + len].to_vec())
        };
        let rg = self.tape.requires_grad(self.id);
        self.tape.push(value, Op::Slice { input: self.id, start }, rg)
    }

    /// Suffix sums: `out[n] = sum_{t >= n} x[t]`.
    pub fn reverse_cumsum(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            let mut out = v.data.clone();
            let mut acc = 0.0;
            for slot in out.iter_mut().rev() {
                acc += *slot;
                *slot = acc;
            }
            Tensor::vector(out)
        };
        let rg = self.tape.requires_grad(self.id);
        self.tape.push(value, Op::ReverseCumsum(self.id), rg)
    }

    /// Backpropagates from a scalar output and returns every adjoint.
    pub fn backward(self) -> Gradients {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(
            nodes[self.id].value.len(),
            1,
            "backward requires a scalar output"
        );

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[self.id] = Some(vec![1.0]);

        for id in (0..=self.id).rev() {
            if grads[id].is_none() || !nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].clone().expect("adjoint present");
            propagate(&nodes, &mut grads, id, &g);
        }

        Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape).collect(),
        }
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        Var::div(self, rhs)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

/// Adds `contrib` into the adjoint slot of `target`, allocating it on first
/// touch. Constants are skipped.
fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    target: usize,
    contrib: impl FnOnce(&mut [f64]),
) {
    if !nodes[target].requires_grad {
        return;
    }
    let slot = grads[target].get_or_insert_with(|| vec![0.0; nodes[target].value.len()]);
    contrib(slot);
}

/// Accumulates one side of a broadcasting binary op: `partial[i]` is the
/// derivative of output element `i` w.r.t. the corresponding element of the
/// target parent (already multiplied by the upstream adjoint).
fn accumulate_broadcast(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    target: usize,
    partials: &[f64],
) {
    if !nodes[target].requires_grad {
        return;
    }
    let tlen = nodes[target].value.len();
    accumulate(nodes, grads, target, |slot| {
        if tlen == partials.len() {
            for (s, p) in slot.iter_mut().zip(partials) {
                *s += p;
            }
        } else {
            debug_assert_eq!(tlen, 1);
            slot[0] += partials.iter().sum::<f64>();
        }
    });
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let read = |pid: usize| -> &[f64] { &nodes[pid].value.data };
    match &nodes[id].op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            accumulate_broadcast(nodes, grads, *a, g);
            accumulate_broadcast(nodes, grads, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate_broadcast(nodes, grads, *a, g);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            accumulate_broadcast(nodes, grads, *b, &neg);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (read(*a), read(*b));
            let pa: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, gi)| gi * bv[if bv.len() == 1 { 0 } else { i }])
                .collect();
            let pb: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, gi)| gi * av[if av.len() == 1 { 0 } else { i }])
                .collect();
            accumulate_broadcast(nodes, grads, *a, &pa);
            accumulate_broadcast(nodes, grads, *b, &pb);
        }
        Op::Div(a, b) => {
            let (av, bv) = (read(*a), read(*b));
            let pick = |v: &[f64], i: usize| v[if v.len() == 1 { 0 } else { i }];
            let pa: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, gi)| gi / pick(bv, i))
                .collect();
            let pb: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, gi)| {
                    let b_i = pick(bv, i);
                    -gi * pick(av, i) / (b_i * b_i)
                })
                .collect();
            accumulate_broadcast(nodes, grads, *a, &pa);
            accumulate_broadcast(nodes, grads, *b, &pb);
        }
        Op::Neg(a) => accumulate(nodes, grads, *a, |slot| {
            for (s, gi) in slot.iter_mut().zip(g) {
                *s -= gi;
            }
        }),
        Op::Abs(a) => {
            let av = read(*a);
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..slot.len() {
                    let sgn = if av[i] > 0.0 {
                        1.0
                    } else if av[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    slot[i] += g[i] * sgn;
                }
            });
        }
        Op::Square(a) => {
            let av = read(*a);
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..slot.len() {
                    slot[i] += g[i] * 2.0 * av[i];
                }
            });
        }
        Op::Sqrt(a) => {
            let av = read(*a);
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..slot.len() {
                    slot[i] += g[i] * 0.5 / av[i].max(SQRT_GUARD).sqrt();
                }
            });
        }
        Op::Sigmoid(a) => {
            let out = &nodes[id].value.data;
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..slot.len() {
                    slot[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            });
        }
        Op::Sin(a) => {
            let av = read(*a);
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..slot.len() {
                    slot[i] += g[i] * av[i].cos();
                }
            });
        }
        Op::Cos(a) => {
            let av = read(*a);
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..slot.len() {
                    slot[i] -= g[i] * av[i].sin();
                }
            });
        }
        Op::MinConst(a, c) => {
            let av = read(*a);
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..slot.len() {
                    if av[i] < *c {
                        slot[i] += g[i];
                    }
                }
            });
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |slot| {
            for s in slot.iter_mut() {
                *s += g[0];
            }
        }),
        Op::Mean(a) => {
            let n = nodes[*a].value.len() as f64;
            accumulate(nodes, grads, *a, |slot| {
                for s in slot.iter_mut() {
                    *s += g[0] / n;
                }
            });
        }
        Op::Dot(a, b) => {
            let (av, bv) = (read(*a), read(*b));
            accumulate(nodes, grads, *a, |slot| fused::axpy(slot, g[0], bv));
            accumulate(nodes, grads, *b, |slot| fused::axpy(slot, g[0], av));
        }
        Op::MatVec(m, v) => {
            let mv = read(*m);
            let xv = read(*v);
            let c = xv.len();
            accumulate(nodes, grads, *m, |slot| {
                for (i, gi) in g.iter().enumerate() {
                    fused::axpy(&mut slot[i * c..(i + 1) * c], *gi, xv);
                }
            });
            accumulate(nodes, grads, *v, |slot| {
                for (i, gi) in g.iter().enumerate() {
                    fused::axpy(slot, *gi, &mv[i * c..(i + 1) * c]);
                }
            });
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (read(*a), read(*b));
            let Shape::Matrix(r, k) = nodes[*a].value.shape else {
                unreachable!()
            };
            let Shape::Matrix(_, c) = nodes[*b].value.shape else {
                unreachable!()
            };
            // A_bar = G B^T ; B_bar = A^T G
            accumulate(nodes, grads, *a, |slot| {
                for i in 0..r {
                    for p in 0..k {
                        slot[i * k + p] += fused::dot(&g[i * c..(i + 1) * c], &bv[p * c..(p + 1) * c]);
                    }
                }
            });
            accumulate(nodes, grads, *b, |slot| {
                for p in 0..k {
                    for i in 0..r {
                        let a_ip = av[i * k + p];
                        if a_ip != 0.0 {
                            fused::axpy(&mut slot[p * c..(p + 1) * c], a_ip, &g[i * c..(i + 1) * c]);
                        }
                    }
                }
            });
        }
        Op::Concat(a, b) => {
            let la = nodes[*a].value.len();
            accumulate(nodes, grads, *a, |slot| {
                for (s, gi) in slot.iter_mut().zip(&g[..la]) {
                    *s += gi;
                }
            });
            accumulate(nodes, grads, *b, |slot| {
                for (s, gi) in slot.iter_mut().zip(&g[la..]) {
                    *s += gi;
                }
            });
        }
        Op::Slice { input, start } => {
            let s0 = *start;
            accumulate(nodes, grads, *input, |slot| {
                for (s, gi) in slot[s0..s0 + g.len()].iter_mut().zip(g) {
                    *s += gi;
                }
            });
        }
        Op::Dft(x) => {
            // x_bar = Re(F(R_bar - j I_bar)) where F is the forward transform.
            let k = g.len() / 2;
            let mut re: Vec<f64> = g[..k].to_vec();
            let mut im: Vec<f64> = g[k..].iter().map(|v| -v).collect();
            fft::fft(&mut re, &mut im, false);
            accumulate(nodes, grads, *x, |slot| {
                for (s, v) in slot.iter_mut().zip(&re) {
                    *s += v;
                }
            });
        }
        Op::IdftReal { re, im } => {
            // (re_bar, im_bar) = (Re, Im) of F(g) / K.
            let k = g.len();
            let mut fr: Vec<f64> = g.to_vec();
            let mut fi = vec![0.0; k];
            fft::fft(&mut fr, &mut fi, false);
            let scale = 1.0 / k as f64;
            accumulate(nodes, grads, *re, |slot| {
                for (s, v) in slot.iter_mut().zip(&fr) {
                    *s += v * scale;
                }
            });
            accumulate(nodes, grads, *im, |slot| {
                for (s, v) in slot.iter_mut().zip(&fi) {
                    *s += v * scale;
                }
            });
        }
        Op::ReverseCumsum(a) => {
            // out[n] = sum_{t>=n} x[t]  =>  x_bar[t] = sum_{n<=t} g[n]
            accumulate(nodes, grads, *a, |slot| {
                let mut acc = 0.0;
                for (s, gi) in slot.iter_mut().zip(g) {
                    acc += gi;
                    *s += acc;
                }
            });
        }
        Op::StrictUpperSkew(w) => {
            let Shape::Matrix(n, _) = nodes[*w].value.shape else {
                unreachable!()
            };
            accumulate(nodes, grads, *w, |slot| {
                for i in 0..n {
                    for j in (i + 1)..n {
                        slot[i * n + j] += g[i * n + j] - g[j * n + i];
                    }
                }
            });
        }
        Op::ScaleColumns { matrix, scale } => {
            let mv = read(*matrix);
            let sv = read(*scale);
            let c = sv.len();
            let r = mv.len() / c;
            accumulate(nodes, grads, *matrix, |slot| {
                for i in 0..r {
                    for j in 0..c {
                        slot[i * c + j] += g[i * c + j] * sv[j];
                    }
                }
            });
            accumulate(nodes, grads, *scale, |slot| {
                for i in 0..r {
                    for j in 0..c {
                        slot[j] += g[i * c + j] * mv[i * c + j];
                    }
                }
            });
        }
        Op::FdnUnroll(rec) => {
            let kernels: Vec<&[f64]> = rec.kernels.iter().map(|&kid| read(kid)).collect();
            let out = fused::fdn_unroll_backward(
                g,
                &kernels,
                read(rec.feedback),
                read(rec.output_gains),
                rec.read_depth,
                &rec.saved,
            );
            for (kid, kg) in rec.kernels.iter().zip(&out.kernels) {
                accumulate(nodes, grads, *kid, |slot| {
                    for (s, v) in slot.iter_mut().zip(kg) {
                        *s += v;
                    }
                });
            }
            accumulate(nodes, grads, rec.feedback, |slot| {
                for (s, v) in slot.iter_mut().zip(&out.feedback) {
                    *s += v;
                }
            });
            accumulate(nodes, grads, rec.input_gains, |slot| {
                for (s, v) in slot.iter_mut().zip(&out.input_gains) {
                    *s += v;
                }
            });
            accumulate(nodes, grads, rec.output_gains, |slot| {
                for (s, v) in slot.iter_mut().zip(&out.output_gains) {
                    *s += v;
                }
            });
            accumulate(nodes, grads, rec.direct, |slot| slot[0] += out.direct);
        }
        Op::SoftEdp(rec) => {
            let h = read(rec.input);
            let h_bar =
                fused::soft_edp_backward(g, h, &rec.window, &rec.kappa, rec.norm, &rec.saved);
            accumulate(nodes, grads, rec.input, |slot| {
                for (s, v) in slot.iter_mut().zip(&h_bar) {
                    *s += v;
                }
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Transform and composite operations
// ---------------------------------------------------------------------------

/// Unnormalized DFT of a real vector whose length is a power of two.
/// Returns the spectrum as paired real vectors `(re, im)`.
pub fn dft(x: Var<'_>) -> (Var<'_>, Var<'_>) {
    let (stacked, k) = {
        let nodes = x.tape.nodes.borrow();
        let v = &nodes[x.id].value;
        let k = v.len();
        assert!(
            k.is_power_of_two(),
            "dft length {k} is not a power of two"
        );
        let mut re = v.data.clone();
        let mut im = vec![0.0; k];
        fft::fft(&mut re, &mut im, false);
        re.extend_from_slice(&im);
        (Tensor::vector(re), k)
    };
    let rg = x.tape.requires_grad(x.id);
    let node = x.tape.push(stacked, Op::Dft(x.id), rg);
    (node.slice(0, k), node.slice(k, k))
}

/// Inverse DFT of a conjugate-symmetric spectrum; returns the real signal and
/// the largest imaginary magnitude that was discarded.
pub fn idft_with_residue<'t>(re: Var<'t>, im: Var<'t>) -> (Var<'t>, f64) {
    let (value, residue) = {
        let nodes = re.tape.nodes.borrow();
        let rv = &nodes[re.id].value;
        let iv = &nodes[im.id].value;
        let k = rv.len();
        assert_eq!(k, iv.len(), "shape error: spectrum halves differ in length");
        assert!(k.is_power_of_two(), "idft length {k} is not a power of two");
        let mut out_re = rv.data.clone();
        let mut out_im = iv.data.clone();
        fft::fft(&mut out_re, &mut out_im, true);
        let residue = out_im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (Tensor::vector(out_re), residue)
    };
    let rg = re.tape.requires_grad(re.id) || re.tape.requires_grad(im.id);
    let node = re.tape.push(
        value,
        Op::IdftReal {
            re: re.id,
            im: im.id,
        },
        rg,
    );
    (node, residue)
}

/// Inverse DFT that requires the spectrum to be conjugate-symmetric.
pub fn idft<'t>(re: Var<'t>, im: Var<'t>) -> Var<'t> {
    let (out, residue) = idft_with_residue(re, im);
    assert!(
        residue <= IDFT_IMAG_TOL,
        "idft: imaginary residue {residue:e} exceeds {IDFT_IMAG_TOL:e}; spectrum is not conjugate-symmetric"
    );
    out
}

/// Strict upper triangle minus its transpose: maps any square matrix onto a
/// skew-symmetric one. Only the strict upper triangle receives gradient.
pub fn strict_upper_skew(w: Var<'_>) -> Var<'_> {
    let value = {
        let nodes = w.tape.nodes.borrow();
        let v = &nodes[w.id].value;
        let Shape::Matrix(n, c) = v.shape else {
            panic!("shape error: strict_upper_skew needs a matrix");
        };
        assert_eq!(n, c, "shape error: strict_upper_skew needs a square matrix");
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                data[i * n + j] = v.data[i * n + j];
                data[j * n + i] = -v.data[i * n + j];
            }
        }
        Tensor::matrix(n, n, data)
    };
    let rg = w.tape.requires_grad(w.id);
    w.tape.push(value, Op::StrictUpperSkew(w.id), rg)
}

/// Scales matrix columns by a vector: `out[i][j] = m[i][j] * v[j]`. This is
/// right-multiplication by `diag(v)`.
pub fn scale_columns<'t>(m: Var<'t>, v: Var<'t>) -> Var<'t> {
    let value = {
        let nodes = m.tape.nodes.borrow();
        let mv = &nodes[m.id].value;
        let sv = &nodes[v.id].value;
        let Shape::Matrix(r, c) = mv.shape else {
            panic!("shape error: scale_columns lhs must be a matrix");
        };
        assert_eq!(sv.len(), c, "shape error: scale vector length {} vs {c} columns", sv.len());
        let mut data = mv.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] *= sv.data[j];
            }
        }
        Tensor::matrix(r, c, data)
    };
    let rg = m.tape.requires_grad(m.id) || m.tape.requires_grad(v.id);
    m.tape.push(
        value,
        Op::ScaleColumns {
            matrix: m.id,
            scale: v.id,
        },
        rg,
    )
}

/// Differentiable matrix exponential by scaling and squaring with a truncated
/// Taylor series. The argument is halved until its 1-norm is at most 0.5,
/// terms are summed until they drop below 1e-16, and the result is squared
/// back up. Every step is an ordinary tape operation, so gradients flow.
pub fn matrix_exp(m: Var<'_>) -> Var<'_> {
    const TAYLOR_TOL: f64 = 1e-16;
    const THETA: f64 = 0.5;
    const MAX_TERMS: usize = 64;

    let (n, norm1) = {
        let nodes = m.tape.nodes.borrow();
        let v = &nodes[m.id].value;
        let Shape::Matrix(r, c) = v.shape else {
            panic!("shape error: matrix_exp needs a square matrix");
        };
        assert_eq!(r, c, "shape error: matrix_exp needs a square matrix");
        assert!(r <= 64, "matrix_exp supports orders up to 64, got {r}");
        let mut norm1 = 0.0f64;
        for j in 0..c {
            let col: f64 = (0..r).map(|i| v.data[i * c + j].abs()).sum();
            norm1 = norm1.max(col);
        }
        (r, norm1)
    };

    let tape = m.tape;
    let mut squarings = 0u32;
    let mut scaled = norm1;
    while scaled > THETA {
        scaled *= 0.5;
        squarings += 1;
    }

    let arg = if squarings > 0 {
        m * tape.constant_scalar(0.5f64.powi(squarings as i32))
    } else {
        m
    };

    let mut acc = tape.constant(Tensor::identity(n));
    let mut term = tape.constant(Tensor::identity(n));
    for k in 1..=MAX_TERMS {
        term = term.matmul(arg) * tape.constant_scalar(1.0 / k as f64);
        acc = acc + term;
        if term.max_abs() < TAYLOR_TOL {
            break;
        }
    }
    for _ in 0..squarings {
        acc = acc.matmul(acc);
    }
    acc
}

/// Records the full FDN time-domain recursion as one tape node.
///
/// `kernels` are the per-line fractional-delay FIRs (length > `read_depth`),
/// `feedback` the N x N matrix, and the output is the impulse response of
/// length `len`. See [`fused::fdn_unroll_forward`] for the exact semantics.
pub fn fdn_unroll<'t>(
    kernels: &[Var<'t>],
    feedback: Var<'t>,
    input_gains: Var<'t>,
    output_gains: Var<'t>,
    direct: Var<'t>,
    read_depth: usize,
    len: usize,
) -> Var<'t> {
    assert!(!kernels.is_empty());
    let tape = kernels[0].tape;
    let (value, saved) = {
        let nodes = tape.nodes.borrow();
        let kvals: Vec<&[f64]> = kernels.iter().map(|k| nodes[k.id].value.data()).collect();
        let a = nodes[feedback.id].value.data();
        let b = nodes[input_gains.id].value.data();
        let c = nodes[output_gains.id].value.data();
        let d = nodes[direct.id].value.as_scalar();
        let (y, saved) = fused::fdn_unroll_forward(&kvals, a, b, c, d, read_depth, len);
        (Tensor::vector(y), saved)
    };
    let rg = kernels.iter().any(|k| tape.requires_grad(k.id))
        || tape.requires_grad(feedback.id)
        || tape.requires_grad(input_gains.id)
        || tape.requires_grad(output_gains.id)
        || tape.requires_grad(direct.id);
    tape.push(
        value,
        Op::FdnUnroll(Box::new(FdnRecord {
            kernels: kernels.iter().map(|k| k.id).collect(),
            feedback: feedback.id,
            input_gains: input_gains.id,
            output_gains: output_gains.id,
            direct: direct.id,
            read_depth,
            saved,
        })),
        rg,
    )
}

/// Records the soft echo-density profile of `h` as one tape node.
pub fn soft_edp<'t>(h: Var<'t>, window: &[f64], kappa: &[f64], norm: f64) -> Var<'t> {
    let tape = h.tape;
    let (value, saved) = {
        let nodes = tape.nodes.borrow();
        let hv = nodes[h.id].value.data();
        let (eta, saved) = fused::soft_edp_forward(hv, window, kappa, norm);
        (Tensor::vector(eta), saved)
    };
    let rg = tape.requires_grad(h.id);
    tape.push(
        value,
        Op::SoftEdp(Box::new(SoftEdpRecord {
            input: h.id,
            window: window.to_vec(),
            kappa: kappa.to_vec(),
            norm,
            saved,
        })),
        rg,
    )
}
