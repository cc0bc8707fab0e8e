//! Reverse-mode automatic differentiation.
//!
//! A [`Graph`] is one measured region: every [`Var`] created through it
//! records, when any input requires a gradient, the operation that produced
//! it. [`Graph::backward`] walks the recorded nodes in reverse creation order
//! and returns the gradients of every parameter leaf; the recorded operations
//! are released afterwards, so each graph supports one backward pass.
//!
//! Nodes whose inputs are all gradient-free record nothing. A forward pass
//! over a frozen model with gradient-free inputs therefore keeps no
//! intermediate alive and allocates no gradient storage.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use core::marker::PhantomData;

use crate::counters::{Ledger, OpCounters, Scope};
use crate::kernels::{self, flops};
use crate::tensor::{numel, Tensor, TensorId};
use crate::{Error, Real, Result};

struct Inner {
    ledger: Ledger,
    scope: Cell<Scope>,
    next_id: Cell<usize>,
}

struct Guard {
    inner: Rc<Inner>,
    bytes: u64,
}

impl Drop for Guard {
    fn drop(&mut self) {
        self.inner.ledger.release(self.bytes);
    }
}

/// Storage allocated inside a region, registered with its ledger while alive.
struct Buf<T> {
    data: Vec<T>,
    _guard: Guard,
}

enum Op<T: Real> {
    MatMul { a: Var<T>, b: Var<T>, m: usize, k: usize, n: usize },
    MatMulNt { a: Var<T>, b: Var<T>, m: usize, k: usize, n: usize },
    Add(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Scale(Var<T>, T),
    Sum(Var<T>),
    RmsNorm { x: Var<T>, w: Var<T>, inv: Buf<T> },
    Softmax(Var<T>),
    SwiGlu { gate: Var<T>, up: Var<T> },
    Rope { x: Var<T>, n_heads: usize, base: f64, offset: usize },
    Attention { q: Var<T>, k: Var<T>, v: Var<T>, n_heads: usize, causal: bool, probs: Buf<T> },
    Embedding { table: Var<T>, ids: Vec<u32> },
    SliceRows { x: Var<T>, start: usize },
    AddRows { h: Var<T>, delta: Var<T>, offset: usize },
    MaskedMse { pred: Var<T>, target: Arc<Vec<T>>, mask: Vec<bool>, count: usize },
    MaskedCe { logits: Var<T>, targets: Vec<u32>, mask: Vec<bool>, count: usize },
}

impl<T: Real> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::MatMul { a, b, .. } | Op::MatMulNt { a, b, .. } | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(x, _) | Op::Sum(x) | Op::Softmax(x) | Op::Rope { x, .. } | Op::SliceRows { x, .. } => vec![x],
            Op::RmsNorm { x, w, .. } => vec![x, w],
            Op::SwiGlu { gate, up } => vec![gate, up],
            Op::Attention { q, k, v, .. } => vec![q, k, v],
            Op::Embedding { table, .. } => vec![table],
            Op::AddRows { h, delta, .. } => vec![h, delta],
            Op::MaskedMse { pred, .. } => vec![pred],
            Op::MaskedCe { logits, .. } => vec![logits],
        }
    }
}

struct Node<T: Real> {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    scope: Scope,
    leaf: Option<TensorId>,
    op: RefCell<Option<Op<T>>>,
    freed: Cell<bool>,
    _guard: Option<Guard>,
}

/// A value inside a [`Graph`]. Cheap to clone.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> core::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn scope(&self) -> Scope {
        self.0.scope
    }

    /// First element; the value of a scalar.
    pub fn item(&self) -> T {
        self.0.data[0]
    }

    pub fn rows(&self) -> usize {
        self.0.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.0.shape.get(1).copied().unwrap_or(1)
    }

    /// Detached copy of the value, sharing storage.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_shared(self.0.shape.clone(), Arc::clone(&self.0.data))
    }

    fn has_op(&self) -> bool {
        self.0.op.borrow().is_some()
    }
}

/// Gradients of parameter leaves, keyed by tensor identity.
#[derive(Debug, Default)]
pub struct Gradients<T: Real> {
    by_param: BTreeMap<TensorId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: TensorId) -> Option<&[T]> {
        self.by_param.get(&id).map(|g| g.as_slice())
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Adds this tensor's gradient into its gradient slot. A tensor that
    /// requires grad but was not on the path gets a zero slot; a tensor that
    /// does not require grad is left untouched.
    pub fn store_into(&mut self, t: &mut Tensor<T>) {
        if !t.requires_grad() {
            return;
        }
        let incoming = self.by_param.remove(&t.id());
        match (t.take_grad(), incoming) {
            (Some(mut acc), Some(g)) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
                t.set_grad(acc);
            }
            (Some(acc), None) => t.set_grad(acc),
            (None, Some(g)) => t.set_grad(g),
            (None, None) => t.set_grad(vec![T::zero(); t.numel()]),
        }
    }
}

/// Restores the previous scope when dropped.
pub struct ScopeGuard<'g> {
    inner: &'g Inner,
    prev: Scope,
}

impl Drop for ScopeGuard<'_> {
    fn drop(&mut self) {
        self.inner.scope.set(self.prev);
    }
}

pub struct Graph<T: Real> {
    inner: Rc<Inner>,
    _t: PhantomData<fn() -> T>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(Inner { ledger: Ledger::default(), scope: Cell::new(Scope::Other), next_id: Cell::new(0) }),
            _t: PhantomData,
        }
    }

    pub fn counters(&self) -> OpCounters {
        self.inner.ledger.snapshot()
    }

    /// Starts a new measured region. Live bytes carry over as the new peak
    /// baseline.
    pub fn reset_counters(&self) {
        self.inner.ledger.reset();
    }

    /// Number of recorded (differentiable) nodes per scope.
    pub fn recorded_nodes(&self) -> BTreeMap<Scope, u64> {
        self.inner.ledger.nodes_by_scope()
    }

    /// Sequence length of every attention call, in call order.
    pub fn attention_trace(&self) -> Vec<(Scope, usize)> {
        self.inner.ledger.attention_lengths()
    }

    pub fn scope(&self) -> Scope {
        self.inner.scope.get()
    }

    pub fn enter(&self, scope: Scope) -> ScopeGuard<'_> {
        let prev = self.inner.scope.replace(scope);
        ScopeGuard { inner: &self.inner, prev }
    }

    fn next_id(&self) -> usize {
        let id = self.inner.next_id.get();
        self.inner.next_id.set(id + 1);
        id
    }

    fn guard(&self, len: usize) -> Guard {
        let bytes = (len * T::BYTES) as u64;
        self.inner.ledger.alloc(bytes);
        Guard { inner: Rc::clone(&self.inner), bytes }
    }

    fn buf(&self, data: Vec<T>) -> Buf<T> {
        let g = self.guard(data.len());
        Buf { data, _guard: g }
    }

    fn grad_buf(&self, scope: Scope, data: Vec<T>) -> Buf<T> {
        let bytes = (data.len() * T::BYTES) as u64;
        self.inner.ledger.alloc_grad(scope, bytes);
        Buf { data, _guard: Guard { inner: Rc::clone(&self.inner), bytes } }
    }

    fn node(&self, shape: Vec<usize>, data: Vec<T>, op: Option<Op<T>>, flops: u64) -> Var<T> {
        let scope = self.scope();
        self.inner.ledger.add_flops(scope, flops);
        let guard = self.guard(data.len());
        let requires_grad = op.is_some();
        if requires_grad {
            self.inner.ledger.record_node(scope);
        }
        Var(Rc::new(Node {
            id: self.next_id(),
            shape,
            data: Arc::new(data),
            requires_grad,
            scope,
            leaf: None,
            op: RefCell::new(op),
            freed: Cell::new(false),
            _guard: Some(guard),
        }))
    }

    /// Shares a tensor into the graph. Gradients flow back to it when it
    /// requires grad. Its storage is not charged to this region.
    pub fn param(&self, t: &Tensor<T>) -> Var<T> {
        Var(Rc::new(Node {
            id: self.next_id(),
            shape: t.shape().to_vec(),
            data: t.shared(),
            requires_grad: t.requires_grad(),
            scope: self.scope(),
            leaf: t.requires_grad().then(|| t.id()),
            op: RefCell::new(None),
            freed: Cell::new(false),
            _guard: None,
        }))
    }

    /// Shares a tensor as a constant, regardless of its grad flag.
    pub fn constant(&self, t: &Tensor<T>) -> Var<T> {
        Var(Rc::new(Node {
            id: self.next_id(),
            shape: t.shape().to_vec(),
            data: t.shared(),
            requires_grad: false,
            scope: self.scope(),
            leaf: None,
            op: RefCell::new(None),
            freed: Cell::new(false),
            _guard: None,
        }))
    }

    /// A constant allocated inside the region.
    pub fn value(&self, shape: &[usize], data: Vec<T>) -> Result<Var<T>> {
        if numel(shape) != data.len() {
            return Err(shape_err("value", format!("shape {:?} vs {} elements", shape, data.len())));
        }
        Ok(self.node(shape.to_vec(), data, None, 0))
    }

    fn rank2(op: &'static str, v: &Var<T>) -> Result<(usize, usize)> {
        match v.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a rank-2 tensor, got {:?}", s))),
        }
    }

    fn same_shape(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok(())
    }

    fn record(&self, any_grad: bool, op: impl FnOnce() -> Op<T>) -> Option<Op<T>> {
        any_grad.then(op)
    }

    /// `a[m,k] · b[k,n]`
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (m, k) = Self::rank2("matmul", a)?;
        let (k2, n) = Self::rank2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} · {:?}", a.shape(), b.shape())));
        }
        let out = kernels::matmul(a.data(), b.data(), m, k, n);
        let op = self.record(a.requires_grad() || b.requires_grad(), || Op::MatMul {
            a: a.clone(),
            b: b.clone(),
            m,
            k,
            n,
        });
        Ok(self.node(vec![m, n], out, op, flops::matmul(m, k, n)))
    }

    /// `a[m,k] · b[n,k]ᵀ`
    pub fn matmul_nt(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (m, k) = Self::rank2("matmul", a)?;
        let (n, k2) = Self::rank2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} · {:?}ᵀ", a.shape(), b.shape())));
        }
        let out = kernels::matmul_nt(a.data(), b.data(), m, k, n);
        let op = self.record(a.requires_grad() || b.requires_grad(), || Op::MatMulNt {
            a: a.clone(),
            b: b.clone(),
            m,
            k,
            n,
        });
        Ok(self.node(vec![m, n], out, op, flops::matmul(m, k, n)))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("add", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect::<Vec<_>>();
        let op = self.record(a.requires_grad() || b.requires_grad(), || Op::Add(a.clone(), b.clone()));
        Ok(self.node(a.shape().to_vec(), out, op, flops::elementwise(a.numel())))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("elementwise-multiply", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect::<Vec<_>>();
        let op = self.record(a.requires_grad() || b.requires_grad(), || Op::Mul(a.clone(), b.clone()));
        Ok(self.node(a.shape().to_vec(), out, op, flops::elementwise(a.numel())))
    }

    pub fn scale(&self, x: &Var<T>, c: T) -> Var<T> {
        let out = x.data().iter().map(|v| *v * c).collect::<Vec<_>>();
        let op = self.record(x.requires_grad(), || Op::Scale(x.clone(), c));
        self.node(x.shape().to_vec(), out, op, flops::elementwise(x.numel()))
    }

    pub fn sum(&self, x: &Var<T>) -> Var<T> {
        let s = x.data().iter().copied().sum::<T>();
        let op = self.record(x.requires_grad(), || Op::Sum(x.clone()));
        self.node(vec![], vec![s], op, flops::elementwise(x.numel()))
    }

    /// Row-wise RMS normalisation of `x[rows,d]` scaled by `w[d]`.
    pub fn rms_norm(&self, x: &Var<T>, w: &Var<T>) -> Result<Var<T>> {
        let (rows, d) = Self::rank2("rms-norm", x)?;
        if w.shape() != [d] {
            return Err(shape_err("rms-norm", format!("input {:?} with weight {:?}", x.shape(), w.shape())));
        }
        let (y, inv) = kernels::rms_norm(x.data(), w.data(), rows, d);
        let op = self.record(x.requires_grad() || w.requires_grad(), || Op::RmsNorm {
            x: x.clone(),
            w: w.clone(),
            inv: self.buf(inv),
        });
        Ok(self.node(vec![rows, d], y, op, flops::rms_norm(rows, d)))
    }

    pub fn softmax(&self, x: &Var<T>) -> Result<Var<T>> {
        let (rows, n) = Self::rank2("softmax", x)?;
        let y = kernels::softmax_rows(x.data(), rows, n);
        let op = self.record(x.requires_grad(), || Op::Softmax(x.clone()));
        Ok(self.node(vec![rows, n], y, op, flops::softmax(rows, n)))
    }

    /// `silu(gate) ⊙ up`, the gate of a SiLU-gated MLP.
    pub fn swiglu(&self, gate: &Var<T>, up: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("silu-gated-mlp", gate, up)?;
        let y = kernels::swiglu(gate.data(), up.data());
        let op =
            self.record(gate.requires_grad() || up.requires_grad(), || Op::SwiGlu { gate: gate.clone(), up: up.clone() });
        Ok(self.node(gate.shape().to_vec(), y, op, flops::swiglu(gate.numel())))
    }

    /// Rotary position embedding; row `i` sits at position `offset + i`.
    pub fn rope(&self, x: &Var<T>, n_heads: usize, base: f64, offset: usize) -> Result<Var<T>> {
        let (t, d) = Self::rank2("rotary", x)?;
        if n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0 {
            return Err(shape_err("rotary", format!("width {} cannot split into {} even heads", d, n_heads)));
        }
        let y = kernels::rope(x.data(), t, d, n_heads, base, offset, false);
        let op = self.record(x.requires_grad(), || Op::Rope { x: x.clone(), n_heads, base, offset });
        Ok(self.node(vec![t, d], y, op, flops::rope(t * d)))
    }

    /// Multi-head self-attention over `q`, `k`, `v` of shape `[t,d]`.
    pub fn attention(&self, q: &Var<T>, k: &Var<T>, v: &Var<T>, n_heads: usize, causal: bool) -> Result<Var<T>> {
        let (t, d) = Self::rank2("causal-self-attention", q)?;
        Self::same_shape("causal-self-attention", q, k)?;
        Self::same_shape("causal-self-attention", q, v)?;
        if n_heads == 0 || d % n_heads != 0 {
            return Err(shape_err("causal-self-attention", format!("width {} not divisible by {} heads", d, n_heads)));
        }
        self.inner.ledger.record_attention(self.scope(), t);
        let (out, probs) = kernels::attention(q.data(), k.data(), v.data(), t, d, n_heads, causal);
        let any = q.requires_grad() || k.requires_grad() || v.requires_grad();
        let op = self.record(any, || Op::Attention {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            n_heads,
            causal,
            probs: self.buf(probs),
        });
        Ok(self.node(vec![t, d], out, op, flops::attention(t, d, n_heads, causal)))
    }

    /// Rows of `table[vocab,d]` selected by `ids`.
    pub fn embedding(&self, table: &Var<T>, ids: &[u32]) -> Result<Var<T>> {
        let (vocab, d) = Self::rank2("embedding", table)?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
            out.extend_from_slice(&table.data()[id as usize * d..(id as usize + 1) * d]);
        }
        let op = self.record(table.requires_grad(), || Op::Embedding { table: table.clone(), ids: ids.to_vec() });
        Ok(self.node(vec![ids.len(), d], out, op, 0))
    }

    /// Rows `start..start+len` of `x`.
    pub fn slice_rows(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let (rows, d) = Self::rank2("slice-rows", x)?;
        if start + len > rows {
            return Err(shape_err("slice-rows", format!("rows {}..{} of {:?}", start, start + len, x.shape())));
        }
        let out = x.data()[start * d..(start + len) * d].to_vec();
        let op = self.record(x.requires_grad(), || Op::SliceRows { x: x.clone(), start });
        Ok(self.node(vec![len, d], out, op, 0))
    }

    /// `h` with `delta` added to rows `offset..offset+delta.rows()`.
    pub fn add_rows(&self, h: &Var<T>, delta: &Var<T>, offset: usize) -> Result<Var<T>> {
        let (rows, d) = Self::rank2("add-rows", h)?;
        let (drows, dd) = Self::rank2("add-rows", delta)?;
        if dd != d || offset + drows > rows {
            return Err(shape_err("add-rows", format!("{:?} into {:?} at row {}", delta.shape(), h.shape(), offset)));
        }
        let mut out = h.data().to_vec();
        for (o, v) in out[offset * d..(offset + drows) * d].iter_mut().zip(delta.data()) {
            *o = *o + *v;
        }
        let op = self.record(h.requires_grad() || delta.requires_grad(), || Op::AddRows {
            h: h.clone(),
            delta: delta.clone(),
            offset,
        });
        Ok(self.node(vec![rows, d], out, op, flops::elementwise(drows * d)))
    }

    /// Mean squared error over the rows where `mask` is true, averaged over
    /// rows and columns. The target is treated as a constant.
    pub fn masked_mse(&self, pred: &Var<T>, target: &Var<T>, mask: &[bool]) -> Result<Var<T>> {
        let (rows, d) = Self::rank2("masked-mse", pred)?;
        Self::same_shape("masked-mse", pred, target)?;
        if mask.len() != rows {
            return Err(shape_err("masked-mse", format!("mask of {} for {} rows", mask.len(), rows)));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::EmptyLossSupport { op: "masked-mse" });
        }
        let mut acc = T::zero();
        for r in (0..rows).filter(|r| mask[*r]) {
            for c in 0..d {
                let e = pred.data()[r * d + c] - target.data()[r * d + c];
                acc = acc + e * e;
            }
        }
        let loss = acc / T::lit((count * d) as f64);
        let op = self.record(pred.requires_grad(), || Op::MaskedMse {
            pred: pred.clone(),
            target: Arc::clone(&target.0.data),
            mask: mask.to_vec(),
            count,
        });
        Ok(self.node(vec![], vec![loss], op, flops::masked_mse(count, d)))
    }

    /// Mean token cross-entropy of `logits[t,vocab]` against `targets[t]`
    /// over positions where `mask` is true.
    pub fn masked_cross_entropy(&self, logits: &Var<T>, targets: &[u32], mask: &[bool]) -> Result<Var<T>> {
        let (rows, vocab) = Self::rank2("masked-cross-entropy", logits)?;
        if targets.len() != rows || mask.len() != rows {
            return Err(shape_err(
                "masked-cross-entropy",
                format!("logits {:?}, {} targets, mask of {}", logits.shape(), targets.len(), mask.len()),
            ));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::EmptyLossSupport { op: "masked-cross-entropy" });
        }
        let mut acc = T::zero();
        for r in (0..rows).filter(|r| mask[*r]) {
            let tok = targets[r];
            if tok as usize >= vocab {
                return Err(Error::TokenOutOfRange { id: tok, vocab });
            }
            let row = &logits.data()[r * vocab..(r + 1) * vocab];
            acc = acc + kernels::log_sum_exp(row) - row[tok as usize];
        }
        let loss = acc / T::lit(count as f64);
        let op = self.record(logits.requires_grad(), || Op::MaskedCe {
            logits: logits.clone(),
            targets: targets.to_vec(),
            mask: mask.to_vec(),
            count,
        });
        Ok(self.node(vec![], vec![loss], op, flops::masked_cross_entropy(count, vocab)))
    }

    /// Back-propagates from a scalar loss and returns parameter gradients.
    /// The recorded graph is released; a second call fails.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        if loss.0.freed.get() {
            return Err(Error::GraphFreed);
        }
        if !loss.requires_grad() {
            return Err(Error::NoGradPath);
        }

        let mut reach: BTreeMap<usize, Var<T>> = BTreeMap::new();
        let mut stack = vec![loss.clone()];
        while let Some(v) = stack.pop() {
            if reach.contains_key(&v.0.id) {
                continue;
            }
            if let Some(op) = v.0.op.borrow().as_ref() {
                stack.extend(op.parents().into_iter().filter(|p| p.requires_grad()).cloned());
            }
            reach.insert(v.0.id, v);
        }

        let mut grads: BTreeMap<usize, Buf<T>> = BTreeMap::new();
        grads.insert(loss.0.id, self.grad_buf(loss.scope(), vec![T::one()]));
        let mut out = Gradients::default();

        // Parents are always created before their children, so descending
        // id order is a reverse topological order.
        for v in reach.values().rev() {
            let Some(g) = grads.remove(&v.0.id) else { continue };
            if let Some(tid) = v.0.leaf {
                match out.by_param.get_mut(&tid) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g.data) {
                            *a = *a + *b;
                        }
                    }
                    None => {
                        out.by_param.insert(tid, g.data);
                    }
                }
                continue;
            }
            let op = v.0.op.borrow();
            let Some(op) = op.as_ref() else { continue };
            for (parent, pg) in self.op_backward(op, v, &g.data) {
                if !parent.requires_grad() {
                    continue;
                }
                match grads.get_mut(&parent.0.id) {
                    Some(acc) => {
                        for (a, b) in acc.data.iter_mut().zip(pg) {
                            *a = *a + b;
                        }
                    }
                    None => {
                        let buf = self.grad_buf(parent.scope(), pg);
                        grads.insert(parent.0.id, buf);
                    }
                }
            }
        }

        for v in reach.values() {
            v.0.op.borrow_mut().take();
            v.0.freed.set(true);
        }
        Ok(out)
    }

    fn charge_backward(&self, scope: Scope, flops: u64) {
        self.inner.ledger.add_flops(scope, flops);
    }

    fn op_backward(&self, op: &Op<T>, out: &Var<T>, g: &[T]) -> Vec<(Var<T>, Vec<T>)> {
        let scope = out.scope();
        match op {
            Op::MatMul { a, b, m, k, n } => {
                let mut r = Vec::new();
                if a.requires_grad() {
                    self.charge_backward(scope, flops::matmul(*m, *n, *k));
                    r.push((a.clone(), kernels::matmul_nt(g, b.data(), *m, *n, *k)));
                }
                if b.requires_grad() {
                    self.charge_backward(scope, flops::matmul(*k, *m, *n));
                    r.push((b.clone(), kernels::matmul_tn(a.data(), g, *m, *k, *n)));
                }
                r
            }
            Op::MatMulNt { a, b, m, k, n } => {
                // c = a bᵀ: da = g b, db = gᵀ a
                let mut r = Vec::new();
                if a.requires_grad() {
                    self.charge_backward(scope, flops::matmul(*m, *n, *k));
                    r.push((a.clone(), kernels::matmul(g, b.data(), *m, *n, *k)));
                }
                if b.requires_grad() {
                    self.charge_backward(scope, flops::matmul(*n, *m, *k));
                    r.push((b.clone(), kernels::matmul_tn(g, a.data(), *m, *n, *k)));
                }
                r
            }
            Op::Add(a, b) => vec![(a.clone(), g.to_vec()), (b.clone(), g.to_vec())],
            Op::Mul(a, b) => {
                let ga = g.iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
                let gb = g.iter().zip(a.data()).map(|(x, y)| *x * *y).collect();
                vec![(a.clone(), ga), (b.clone(), gb)]
            }
            Op::Scale(x, c) => vec![(x.clone(), g.iter().map(|v| *v * *c).collect())],
            Op::Sum(x) => vec![(x.clone(), vec![g[0]; x.numel()])],
            Op::RmsNorm { x, w, inv } => {
                let (rows, d) = (x.rows(), x.cols());
                self.charge_backward(scope, 2 * flops::rms_norm(rows, d));
                let (dx, dw) = kernels::rms_norm_backward(x.data(), w.data(), &inv.data, g, rows, d);
                vec![(x.clone(), dx), (w.clone(), dw)]
            }
            Op::Softmax(x) => {
                let (rows, n) = (x.rows(), x.cols());
                self.charge_backward(scope, flops::softmax(rows, n));
                vec![(x.clone(), kernels::softmax_rows_backward(out.data(), g, rows, n))]
            }
            Op::SwiGlu { gate, up } => {
                self.charge_backward(scope, 2 * flops::swiglu(gate.numel()));
                let (dg, du) = kernels::swiglu_backward(gate.data(), up.data(), g);
                vec![(gate.clone(), dg), (up.clone(), du)]
            }
            Op::Rope { x, n_heads, base, offset } => {
                self.charge_backward(scope, flops::rope(x.numel()));
                let dx = kernels::rope(g, x.rows(), x.cols(), *n_heads, *base, *offset, true);
                vec![(x.clone(), dx)]
            }
            Op::Attention { q, k, v, n_heads, causal, probs } => {
                let (t, d) = (q.rows(), q.cols());
                self.charge_backward(scope, 2 * flops::attention(t, d, *n_heads, *causal));
                let (dq, dk, dv) =
                    kernels::attention_backward(q.data(), k.data(), v.data(), &probs.data, g, t, d, *n_heads, *causal);
                vec![(q.clone(), dq), (k.clone(), dk), (v.clone(), dv)]
            }
            Op::Embedding { table, ids } => {
                let d = table.cols();
                let mut dt = vec![T::zero(); table.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    let row = &mut dt[id as usize * d..(id as usize + 1) * d];
                    for (a, b) in row.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *a = *a + *b;
                    }
                }
                vec![(table.clone(), dt)]
            }
            Op::SliceRows { x, start } => {
                let d = x.cols();
                let mut dx = vec![T::zero(); x.numel()];
                dx[start * d..start * d + g.len()].copy_from_slice(g);
                vec![(x.clone(), dx)]
            }
            Op::AddRows { h, delta, offset } => {
                let d = h.cols();
                let dd = g[offset * d..offset * d + delta.numel()].to_vec();
                vec![(h.clone(), g.to_vec()), (delta.clone(), dd)]
            }
            Op::MaskedMse { pred, target, mask, count } => {
                let d = pred.cols();
                let c = T::lit(2.0) * g[0] / T::lit((count * d) as f64);
                let mut dp = vec![T::zero(); pred.numel()];
                for r in (0..mask.len()).filter(|r| mask[*r]) {
                    for j in r * d..(r + 1) * d {
                        dp[j] = c * (pred.data()[j] - target[j]);
                    }
                }
                vec![(pred.clone(), dp)]
            }
            Op::MaskedCe { logits, targets, mask, count } => {
                let vocab = logits.cols();
                self.charge_backward(scope, flops::masked_cross_entropy(*count, vocab));
                let c = g[0] / T::lit(*count as f64);
                let mut dl = vec![T::zero(); logits.numel()];
                for r in (0..mask.len()).filter(|r| mask[*r]) {
                    let row = &logits.data()[r * vocab..(r + 1) * vocab];
                    let p = kernels::softmax_rows(row, 1, vocab);
                    for j in 0..vocab {
                        dl[r * vocab + j] = c * p[j];
                    }
                    dl[r * vocab + targets[r] as usize] = dl[r * vocab + targets[r] as usize] - c;
                }
                vec![(logits.clone(), dl)]
            }
        }
    }
}

impl<T: Real> Var<T> {
    /// Whether the operation that produced this value is still recorded.
    pub fn is_recorded(&self) -> bool {
        self.has_op()
    }
}
