use std::cell::{Ref, RefCell};
use std::fmt;
use std::sync::Arc;

use super::tensor::{matmul_raw, numel, transpose_raw, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::Csr;

/// Forward behaviour of the straight-through threshold.
///
/// `Hard` emits Θ(x) ∈ {0,1}. `Relaxed` emits σ(βx), the smooth function whose
/// exact derivative is the surrogate, which makes finite-difference checks of
/// the surrogate path possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    #[default]
    Hard,
    Relaxed,
}

#[derive(Clone)]
enum Op<F> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, F),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Powf(usize, F),
    ClampMin(usize, F),
    Heaviside(usize, F),
    Matmul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    SumLastAxis(usize),
    Concat(Vec<usize>, usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    IndexSelect(usize, Vec<usize>),
    Spmm(Arc<Csr<F>>, usize),
    SqDist(usize, usize),
    LogSoftmax(usize),
    Softmax(usize),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

struct Inner<F> {
    nodes: Vec<Node<F>>,
    consumed: bool,
}

/// Records a forward computation for a single reverse pass.
///
/// The tape supports exactly one call to [`Tape::backward`]; a second call
/// reports [`Error::StaleTape`]. Record a new forward pass on a fresh tape.
pub struct Tape<F> {
    inner: RefCell<Inner<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F> fmt::Debug for Tape<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("consumed", &inner.consumed)
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Gradients produced by one backward pass, indexed by tape node.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not require gradients.
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `var`; zeros when no path reaches it.
    pub fn wrt(&self, var: Var<'_, F>) -> Tensor<F> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }
}

/// Shape produced by broadcasting one operand over the leading axes of the other.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Some(a.to_vec())
    } else if a.len() < b.len() && b[b.len() - a.len()..] == *a {
        Some(b.to_vec())
    } else {
        None
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Surrogate derivative β·σ(βx)·(1−σ(βx)).
pub fn surrogate_grad<F: Scalar>(x: F, beta: F) -> F {
    let s = sigmoid(beta * x);
    beta * s * (F::one() - s)
}

fn accumulate<F: Scalar>(slot: &mut Option<Vec<F>>, len: usize, f: impl FnOnce(&mut [F])) {
    let buf = slot.get_or_insert_with(|| vec![F::zero(); len]);
    f(buf);
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var<'_, F> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.constant(Tensor::scalar(value))
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor<F>> {
        Ref::map(self.inner.borrow(), |inner| &inner.nodes[id].value)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, op: Op<F>, f: impl Fn(F) -> F) -> Var<'_, F> {
        let value = self.value_ref(a).map(f);
        let rg = self.requires(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        name: &'static str,
        a: usize,
        b: usize,
        op: Op<F>,
        f: impl Fn(F, F) -> F,
    ) -> Result<Var<'_, F>> {
        let value = {
            let av = self.value_ref(a);
            let bv = self.value_ref(b);
            let shape = broadcast_shape(av.shape(), bv.shape())
                .ok_or_else(|| Error::shape(name, av.shape(), bv.shape()))?;
            let (ad, bd) = (av.data(), bv.data());
            let (na, nb) = (ad.len(), bd.len());
            Tensor::from_fn(&shape, |i| f(ad[i % na], bd[i % nb]))
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::StaleTape);
        }
        let nodes = &inner.nodes;
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![F::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            let keep = matches!(node.op, Op::Leaf);
            self.backprop_node(nodes, node, &g, out, &mut grads);
            if keep {
                grads[id] = Some(g);
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(g) => Tensor::new(node.value.shape(), g).expect("grad shape"),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        inner.consumed = true;
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(
        &self,
        nodes: &[Node<F>],
        node: &Node<F>,
        g: &[F],
        out: &Tensor<F>,
        grads: &mut [Option<Vec<F>>],
    ) {
        let val = |i: usize| &nodes[i].value;
        let wants = |i: usize| nodes[i].requires_grad;
        let len = |i: usize| nodes[i].value.len();

        // Elementwise binary helper: accumulates `da(i)` into a and `db(i)` into b
        // with broadcast reduction over repeated leading blocks.
        let mut binary = |a: usize,
                          b: usize,
                          da: &dyn Fn(usize, F, F) -> F,
                          db: &dyn Fn(usize, F, F) -> F| {
            let (ad, bd) = (val(a).data(), val(b).data());
            let (na, nb) = (ad.len(), bd.len());
            if wants(a) {
                let mut buf = grads[a].take().unwrap_or_else(|| vec![F::zero(); na]);
                for (i, &gi) in g.iter().enumerate() {
                    buf[i % na] = buf[i % na] + da(i, gi, bd[i % nb]);
                }
                grads[a] = Some(buf);
            }
            if wants(b) {
                let mut buf = grads[b].take().unwrap_or_else(|| vec![F::zero(); nb]);
                for (i, &gi) in g.iter().enumerate() {
                    buf[i % nb] = buf[i % nb] + db(i, gi, ad[i % na]);
                }
                grads[b] = Some(buf);
            }
        };

        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => binary(a, b, &|_, g, _| g, &|_, g, _| g),
            &Op::Sub(a, b) => binary(a, b, &|_, g, _| g, &|_, g, _| -g),
            &Op::Mul(a, b) => binary(a, b, &|_, g, bv| g * bv, &|_, g, av| g * av),
            &Op::Div(a, b) => {
                let bd = val(b).data();
                let nb = bd.len();
                binary(
                    a,
                    b,
                    &|_, g, bv| g / bv,
                    &|i, g, av| -g * av / (bd[i % nb] * bd[i % nb]),
                );
            }
            &Op::Scale(a, c) => unary_acc(grads, a, len(a), wants(a), |i| g[i] * c),
            &Op::AddScalar(a) => unary_acc(grads, a, len(a), wants(a), |i| g[i]),
            &Op::Exp(a) => unary_acc(grads, a, len(a), wants(a), |i| g[i] * out.data()[i]),
            &Op::Log(a) => {
                let x = val(a).data();
                unary_acc(grads, a, len(a), wants(a), |i| g[i] / x[i])
            }
            &Op::Relu(a) => {
                let x = val(a).data();
                unary_acc(grads, a, len(a), wants(a), |i| {
                    if x[i] > F::zero() {
                        g[i]
                    } else {
                        F::zero()
                    }
                })
            }
            &Op::Sigmoid(a) => unary_acc(grads, a, len(a), wants(a), |i| {
                let s = out.data()[i];
                g[i] * s * (F::one() - s)
            }),
            &Op::Tanh(a) => unary_acc(grads, a, len(a), wants(a), |i| {
                let t = out.data()[i];
                g[i] * (F::one() - t * t)
            }),
            &Op::Powf(a, p) => {
                let x = val(a).data();
                unary_acc(grads, a, len(a), wants(a), |i| g[i] * p * x[i].powf(p - F::one()))
            }
            &Op::ClampMin(a, lo) => {
                let x = val(a).data();
                unary_acc(grads, a, len(a), wants(a), |i| {
                    if x[i] >= lo {
                        g[i]
                    } else {
                        F::zero()
                    }
                })
            }
            &Op::Heaviside(a, beta) => {
                let x = val(a).data();
                unary_acc(grads, a, len(a), wants(a), |i| g[i] * surrogate_grad(x[i], beta))
            }
            &Op::Matmul(a, b) => {
                let (n, k) = val(a).dims2().expect("matmul lhs");
                let m = val(b).shape()[1];
                if wants(a) {
                    let bt = transpose_raw(val(b).data(), k, m);
                    let ga = matmul_raw(g, &bt, n, m, k);
                    add_into(grads, a, &ga);
                }
                if wants(b) {
                    let at = transpose_raw(val(a).data(), n, k);
                    let gb = matmul_raw(&at, g, k, n, m);
                    add_into(grads, b, &gb);
                }
            }
            &Op::Transpose(a) => {
                if wants(a) {
                    let (r, c) = val(a).dims2().expect("transpose");
                    add_into(grads, a, &transpose_raw(g, c, r));
                }
            }
            &Op::Reshape(a) => {
                if wants(a) {
                    add_into(grads, a, g);
                }
            }
            &Op::Sum(a) => unary_acc(grads, a, len(a), wants(a), |_| g[0]),
            &Op::Mean(a) => {
                let n = F::from_count(len(a));
                unary_acc(grads, a, len(a), wants(a), |_| g[0] / n)
            }
            &Op::SumLastAxis(a) => {
                let last = *val(a).shape().last().expect("non-scalar");
                unary_acc(grads, a, len(a), wants(a), |i| g[i / last])
            }
            Op::Concat(parts, axis) => {
                let axis = *axis;
                let outer: usize = out.shape()[..axis].iter().product();
                let inner: usize = out.shape()[axis + 1..].iter().product();
                let total = out.shape()[axis];
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).shape()[axis];
                    if wants(p) {
                        let mut piece = Vec::with_capacity(len(p));
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            piece.extend_from_slice(&g[base..base + width * inner]);
                        }
                        add_into(grads, p, &piece);
                    }
                    offset += width;
                }
            }
            &Op::Slice { src, axis, start } => {
                if wants(src) {
                    let shape = val(src).shape();
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let full = shape[axis];
                    let width = out.shape()[axis];
                    accumulate(&mut grads[src], len(src), |buf| {
                        for o in 0..outer {
                            let dst = (o * full + start) * inner;
                            let srcp = o * width * inner;
                            for j in 0..width * inner {
                                buf[dst + j] = buf[dst + j] + g[srcp + j];
                            }
                        }
                    });
                }
            }
            Op::IndexSelect(a, idx) => {
                let a = *a;
                if wants(a) {
                    let row = len(a) / val(a).shape()[0];
                    accumulate(&mut grads[a], len(a), |buf| {
                        for (k, &r) in idx.iter().enumerate() {
                            for j in 0..row {
                                buf[r * row + j] = buf[r * row + j] + g[k * row + j];
                            }
                        }
                    });
                }
            }
            Op::Spmm(m, b) => {
                let b = *b;
                if wants(b) {
                    let width = val(b).shape()[1];
                    let gb = m.transpose().mul_dense(g, width).expect("spmm backward");
                    add_into(grads, b, &gb);
                }
            }
            &Op::SqDist(a, b) => {
                let (na, dim) = val(a).dims2().expect("sqdist lhs");
                let nb = val(b).shape()[0];
                let (ad, bd) = (val(a).data(), val(b).data());
                let two = F::lit(2.0);
                if wants(a) {
                    accumulate(&mut grads[a], na * dim, |buf| {
                        for i in 0..na {
                            for j in 0..nb {
                                let w = two * g[i * nb + j];
                                if w == F::zero() {
                                    continue;
                                }
                                for k in 0..dim {
                                    let d = ad[i * dim + k] - bd[j * dim + k];
                                    buf[i * dim + k] = buf[i * dim + k] + w * d;
                                }
                            }
                        }
                    });
                }
                if wants(b) {
                    accumulate(&mut grads[b], nb * dim, |buf| {
                        for i in 0..na {
                            for j in 0..nb {
                                let w = two * g[i * nb + j];
                                if w == F::zero() {
                                    continue;
                                }
                                for k in 0..dim {
                                    let d = ad[i * dim + k] - bd[j * dim + k];
                                    buf[j * dim + k] = buf[j * dim + k] - w * d;
                                }
                            }
                        }
                    });
                }
            }
            &Op::LogSoftmax(a) => {
                if wants(a) {
                    let last = *out.shape().last().expect("non-scalar");
                    let o = out.data();
                    accumulate(&mut grads[a], len(a), |buf| {
                        for (r, grow) in g.chunks(last).enumerate() {
                            let gs: F = grow.iter().copied().sum();
                            for j in 0..last {
                                let i = r * last + j;
                                buf[i] = buf[i] + grow[j] - o[i].exp() * gs;
                            }
                        }
                    });
                }
            }
            &Op::Softmax(a) => {
                if wants(a) {
                    let last = *out.shape().last().expect("non-scalar");
                    let o = out.data();
                    accumulate(&mut grads[a], len(a), |buf| {
                        for (r, grow) in g.chunks(last).enumerate() {
                            let srow = &o[r * last..(r + 1) * last];
                            let dot: F = grow.iter().zip(srow).map(|(&x, &s)| x * s).sum();
                            for j in 0..last {
                                let i = r * last + j;
                                buf[i] = buf[i] + srow[j] * (grow[j] - dot);
                            }
                        }
                    });
                }
            }
        }
    }
}

fn unary_acc<F: Scalar>(
    grads: &mut [Option<Vec<F>>],
    a: usize,
    len: usize,
    wants: bool,
    f: impl Fn(usize) -> F,
) {
    if !wants {
        return;
    }
    accumulate(&mut grads[a], len, |buf| {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = *b + f(i);
        }
    });
}

fn add_into<F: Scalar>(grads: &mut [Option<Vec<F>>], a: usize, g: &[F]) {
    accumulate(&mut grads[a], g.len(), |buf| {
        for (b, &x) in buf.iter_mut().zip(g) {
            *b = *b + x;
        }
    });
}

impl<'t, F: Scalar> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor<F> {
        self.tape.value_ref(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    pub fn item(&self) -> Result<F> {
        self.tape.value_ref(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(&[self.id])
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, F> {
        self.tape.constant(self.value())
    }

    fn same_tape(&self, other: &Var<'t, F>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("operands recorded on different tapes".into()))
        }
    }

    pub fn add(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other)?;
        self.tape
            .binary("add", self.id, other.id, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other)?;
        self.tape
            .binary("sub", self.id, other.id, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other)?;
        self.tape
            .binary("mul", self.id, other.id, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other)?;
        self.tape
            .binary("div", self.id, other.id, Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(&self, c: F) -> Var<'t, F> {
        self.tape.unary(self.id, Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(&self) -> Var<'t, F> {
        self.scale(-F::one())
    }

    pub fn add_scalar(&self, c: F) -> Var<'t, F> {
        self.tape.unary(self.id, Op::AddScalar(self.id), |x| x + c)
    }

    pub fn exp(&self) -> Var<'t, F> {
        self.tape.unary(self.id, Op::Exp(self.id), |x| x.exp())
    }

    pub fn log(&self) -> Var<'t, F> {
        self.tape.unary(self.id, Op::Log(self.id), |x| x.ln())
    }

    pub fn relu(&self) -> Var<'t, F> {
        self.tape
            .unary(self.id, Op::Relu(self.id), |x| if x > F::zero() { x } else { F::zero() })
    }

    pub fn sigmoid(&self) -> Var<'t, F> {
        self.tape.unary(self.id, Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(&self) -> Var<'t, F> {
        self.tape.unary(self.id, Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn powf(&self, p: F) -> Var<'t, F> {
        self.tape.unary(self.id, Op::Powf(self.id, p), |x| x.powf(p))
    }

    /// `max(x, lo)`; gradient passes where `x ≥ lo`.
    pub fn clamp_min(&self, lo: F) -> Var<'t, F> {
        self.tape.unary(self.id, Op::ClampMin(self.id, lo), |x| x.max(lo))
    }

    /// Heaviside threshold Θ(x) (Θ(0) = 1) with the sigmoid surrogate gradient
    /// β·σ(βx)·(1−σ(βx)) on the backward pass.
    pub fn heaviside_st(&self, beta: F) -> Var<'t, F> {
        self.heaviside_with(beta, SpikeMode::Hard)
    }

    pub fn heaviside_with(&self, beta: F, mode: SpikeMode) -> Var<'t, F> {
        match mode {
            SpikeMode::Hard => self.tape.unary(self.id, Op::Heaviside(self.id, beta), |x| {
                if x >= F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }),
            SpikeMode::Relaxed => self
                .tape
                .unary(self.id, Op::Heaviside(self.id, beta), |x| sigmoid(beta * x)),
        }
    }

    pub fn matmul(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other)?;
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            a.matmul(&b)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Matmul(self.id, other.id), rg))
    }

    pub fn t(&self) -> Result<Var<'t, F>> {
        let value = self.tape.value_ref(self.id).transpose()?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, F>> {
        let value = self.value().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    pub fn sum(&self) -> Var<'t, F> {
        let s: F = self.tape.value_ref(self.id).data().iter().copied().sum();
        let rg = self.requires_grad();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'t, F> {
        let v = self.tape.value_ref(self.id);
        let s: F = v.data().iter().copied().sum::<F>() / F::from_count(v.len());
        drop(v);
        let rg = self.requires_grad();
        self.tape.push(Tensor::scalar(s), Op::Mean(self.id), rg)
    }

    /// Sums out the last axis.
    pub fn sum_last_axis(&self) -> Result<Var<'t, F>> {
        let value = {
            let v = self.tape.value_ref(self.id);
            let Some((&last, lead)) = v.shape().split_last() else {
                return Err(Error::InvalidArgument("sum_last_axis on a scalar".into()));
            };
            let data = v.data().chunks(last).map(|c| c.iter().copied().sum()).collect();
            Tensor::new(lead, data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::SumLastAxis(self.id), rg))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
        let value = {
            let v = self.tape.value_ref(self.id);
            let shape = v.shape();
            if axis >= shape.len() {
                return Err(Error::IndexOutOfRange {
                    index: axis,
                    len: shape.len(),
                });
            }
            if len == 0 || start + len > shape[axis] {
                return Err(Error::IndexOutOfRange {
                    index: start + len,
                    len: shape[axis],
                });
            }
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * shape[axis] + start) * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            Tensor::new(&out_shape, data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            value,
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Gathers entries of the leading axis; indices may repeat.
    pub fn index_select(&self, indices: &[usize]) -> Result<Var<'t, F>> {
        let value = {
            let v = self.tape.value_ref(self.id);
            let Some((&lead, rest)) = v.shape().split_first() else {
                return Err(Error::InvalidArgument("index_select on a scalar".into()));
            };
            if indices.is_empty() {
                return Err(Error::EmptySet("index_select indices".into()));
            }
            let row = numel(rest);
            let mut data = Vec::with_capacity(indices.len() * row);
            for &i in indices {
                if i >= lead {
                    return Err(Error::IndexOutOfRange { index: i, len: lead });
                }
                data.extend_from_slice(&v.data()[i * row..(i + 1) * row]);
            }
            let mut shape = vec![indices.len()];
            shape.extend_from_slice(rest);
            Tensor::new(&shape, data)?
        };
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(value, Op::IndexSelect(self.id, indices.to_vec()), rg))
    }

    /// Pairwise squared Euclidean distances between the rows of two matrices.
    pub fn sq_dist(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other)?;
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            let (na, da) = a.dims2()?;
            let (nb, db) = b.dims2()?;
            if da != db {
                return Err(Error::shape("sq_dist", a.shape(), b.shape()));
            }
            Tensor::new(&[na, nb], sq_dist_raw(a.data(), b.data(), na, nb, da))?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::SqDist(self.id, other.id), rg))
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Var<'t, F>> {
        let value = {
            let v = self.tape.value_ref(self.id);
            let &last = v
                .shape()
                .last()
                .ok_or_else(|| Error::InvalidArgument("log_softmax on a scalar".into()))?;
            let mut data = Vec::with_capacity(v.len());
            for row in v.data().chunks(last) {
                let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<F>().ln();
                data.extend(row.iter().map(|&x| x - lse));
            }
            Tensor::new(v.shape(), data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::LogSoftmax(self.id), rg))
    }

    pub fn softmax(&self) -> Result<Var<'t, F>> {
        let value = {
            let v = self.tape.value_ref(self.id);
            let &last = v
                .shape()
                .last()
                .ok_or_else(|| Error::InvalidArgument("softmax on a scalar".into()))?;
            Tensor::new(v.shape(), softmax_rows(v.data(), last))?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Softmax(self.id), rg))
    }
}

pub(crate) fn softmax_rows<F: Scalar>(data: &[F], width: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(width) {
        let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = row.iter().map(|&x| (x - mx).exp()).collect();
        let z: F = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

pub(crate) fn sq_dist_raw<F: Scalar>(a: &[F], b: &[F], na: usize, nb: usize, dim: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(na * nb);
    for i in 0..na {
        let ai = &a[i * dim..(i + 1) * dim];
        for j in 0..nb {
            let bj = &b[j * dim..(j + 1) * dim];
            out.push(ai.iter().zip(bj).map(|(&x, &y)| (x - y) * (x - y)).sum());
        }
    }
    out
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat<'t, F: Scalar>(parts: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::EmptySet("concat parts".into()))?;
    let tape = first.tape;
    for p in parts {
        first.same_tape(p)?;
    }
    let value = {
        let vals: Vec<Ref<'_, Tensor<F>>> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
        let base = vals[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::IndexOutOfRange {
                index: axis,
                len: base.len(),
            });
        }
        let mut total = 0;
        for v in &vals {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let w = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Tensor::new(&shape, data)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.requires(&ids);
    Ok(tape.push(value, Op::Concat(ids, axis), rg))
}

/// Constant sparse matrix times a dense matrix.
pub fn spmm<'t, F: Scalar>(m: &Arc<Csr<F>>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    let value = {
        let bv = b.tape.value_ref(b.id);
        let (rows, width) = bv.dims2()?;
        if rows != m.cols() {
            return Err(Error::shape("spmm", &[m.rows(), m.cols()], bv.shape()));
        }
        Tensor::new(&[m.rows(), width], m.mul_dense(bv.data(), width)?)?
    };
    let rg = b.requires_grad();
    Ok(b.tape.push(value, Op::Spmm(Arc::clone(m), b.id), rg))
}
