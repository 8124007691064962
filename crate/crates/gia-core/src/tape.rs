//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! A [`Tape`] owns every tensor produced during a forward pass. Ops append
//! nodes in execution order, so the node list is topologically sorted by
//! construction: every node's inputs precede it. [`Tape::backward`] seeds the
//! loss gradient with 1 and visits the nodes exactly once in reverse order,
//! accumulating gradients into the differentiation leaves.
//!
//! [`Var`] is a copyable handle (tape reference + slot index) returned by
//! every op. Elementwise arithmetic lives here; structured neural ops live in
//! [`crate::nn`] and record themselves through the same `push` interface.
//!
//! Repeated `backward` calls on one tape accumulate into the leaf gradients;
//! call [`Tape::zero_grads`] between passes if that is not intended. A tape is
//! single-threaded; independent tapes may run in parallel.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use std::cell::RefCell;

/// Index of a value slot on a tape.
pub type ValueId = usize;

/// Read access to forward values during the backward pass.
pub struct Values<'a> {
    slots: &'a [Slot],
}

impl Values<'_> {
    #[inline]
    pub fn tensor(&self, id: ValueId) -> &Tensor {
        &self.slots[id].value
    }

    #[inline]
    pub fn data(&self, id: ValueId) -> &[f32] {
        self.slots[id].value.data()
    }

    #[inline]
    pub fn shape(&self, id: ValueId) -> Shape {
        self.slots[id].value.shape()
    }
}

/// Per-slot gradient buffers being assembled during one backward pass.
pub struct Grads {
    bufs: Vec<Option<Vec<f32>>>,
}

impl Grads {
    fn new(n: usize) -> Self {
        Grads {
            bufs: (0..n).map(|_| None).collect(),
        }
    }

    /// Mutable gradient buffer for `id`, zero-initialized on first use.
    #[inline]
    pub fn buf_mut(&mut self, id: ValueId, numel: usize) -> &mut [f32] {
        self.bufs[id].get_or_insert_with(|| vec![0.0; numel])
    }

    /// Adds `delta` elementwise into the gradient of `id`.
    pub fn accumulate(&mut self, id: ValueId, delta: &[f32]) {
        let buf = self.buf_mut(id, delta.len());
        for (b, d) in buf.iter_mut().zip(delta) {
            *b += d;
        }
    }

    fn take(&mut self, id: ValueId) -> Option<Vec<f32>> {
        self.bufs[id].take()
    }
}

/// Backward rule of one recorded op: receives the forward values, the
/// gradient of the op output, and the gradient sink for its inputs.
pub type BackwardFn = Box<dyn Fn(&Values<'_>, &[f32], &mut Grads)>;

struct Slot {
    value: Tensor,
    is_leaf: bool,
}

struct Node {
    out: ValueId,
    backward: BackwardFn,
}

struct TapeInner {
    slots: Vec<Slot>,
    nodes: Vec<Node>,
}

/// Recording tape for one forward/backward pass.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                slots: Vec::new(),
                nodes: Vec::new(),
            }),
        }
    }

    /// Registers `t` as a differentiation leaf. Whether gradients are
    /// collected for it follows the tensor's `requires_grad` flag.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.slots.len();
        inner.slots.push(Slot {
            value: t,
            is_leaf: true,
        });
        Var { tape: self, id }
    }

    /// Records an op result, with its backward rule when gradients flow.
    pub(crate) fn push(&self, value: Tensor, backward: Option<BackwardFn>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.slots.len();
        let value = value.requires_grad(backward.is_some());
        inner.slots.push(Slot {
            value,
            is_leaf: false,
        });
        if let Some(backward) = backward {
            inner.nodes.push(Node { out: id, backward });
        }
        Var { tape: self, id }
    }

    /// Runs `f` with read access to the recorded forward values.
    pub(crate) fn with_values<R>(&self, f: impl FnOnce(&Values<'_>) -> R) -> R {
        let inner = self.inner.borrow();
        f(&Values {
            slots: &inner.slots,
        })
    }

    /// Number of recorded op nodes (for tests and diagnostics).
    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Propagates d(loss)/d(leaf) into every `requires_grad` leaf.
    ///
    /// `loss` must be scalar. Gradients of intermediate values are freed as
    /// soon as their producing node has run.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(
            std::ptr::eq(self, loss.tape),
            "backward called with a Var from another tape"
        );
        let inner = &mut *self.inner.borrow_mut();
        let loss_shape = inner.slots[loss.id].value.shape();
        if !loss_shape.is_scalar() {
            return Err(Error::NotScalar { shape: loss_shape });
        }
        let mut grads = Grads::new(inner.slots.len());
        grads.buf_mut(loss.id, 1)[0] = 1.0;

        {
            let values = Values {
                slots: &inner.slots,
            };
            for node in inner.nodes.iter().rev() {
                let Some(gout) = grads.take(node.out) else {
                    continue; // value does not influence the loss
                };
                (node.backward)(&values, &gout, &mut grads);
            }
        }

        for (id, slot) in inner.slots.iter_mut().enumerate() {
            if let Some(g) = grads.take(id) {
                if slot.is_leaf && slot.value.needs_grad() {
                    slot.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grads(&self) {
        for slot in self.inner.borrow_mut().slots.iter_mut() {
            slot.value.clear_grad();
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: ValueId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {})", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> ValueId {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.tape.with_values(|v| v.shape(self.id))
    }

    pub fn needs_grad(&self) -> bool {
        self.tape
            .with_values(|v| v.tensor(self.id).needs_grad())
    }

    /// Clone of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.with_values(|v| v.tensor(self.id).clone())
    }

    /// Scalar forward value.
    pub fn item(&self) -> Result<f32> {
        self.tape.with_values(|v| v.tensor(self.id).item())
    }

    /// Clone of the accumulated gradient (leaves only).
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.with_values(|v| {
            let t = v.tensor(self.id);
            t.grad()
                .map(|g| Tensor::from_vec(t.shape(), g.to_vec()).expect("grad shape"))
        })
    }

    /// Backpropagates from this (scalar) value.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }
}

fn same_tape(a: Var<'_>, b: Var<'_>) {
    assert!(
        std::ptr::eq(a.tape, b.tape),
        "op combining Vars from different tapes"
    );
}

fn check_same_shape(op: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    same_tape(a, b);
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op,
            lhs: sa,
            rhs: sb,
        });
    }
    Ok(())
}

fn binary_elementwise<'t>(
    op: &'static str,
    a: Var<'t>,
    b: Var<'t>,
    forward: impl Fn(f32, f32) -> f32,
    // d(out)/d(a) and d(out)/d(b) as functions of the input values
    dfda: impl Fn(f32, f32) -> f32 + 'static,
    dfdb: impl Fn(f32, f32) -> f32 + 'static,
) -> Result<Var<'t>> {
    check_same_shape(op, a, b)?;
    let tape = a.tape;
    let out = tape.with_values(|v| {
        let (xa, xb) = (v.data(a.id), v.data(b.id));
        let data = xa.iter().zip(xb).map(|(&x, &y)| forward(x, y)).collect();
        Tensor::from_vec(v.shape(a.id), data).expect("elementwise shape")
    });
    let needs = a.needs_grad() || b.needs_grad();
    let backward: Option<BackwardFn> = needs.then(|| {
        let (ai, bi) = (a.id, b.id);
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let (xa, xb) = (v.data(ai), v.data(bi));
            if v.tensor(ai).needs_grad() {
                let buf = grads.buf_mut(ai, xa.len());
                for i in 0..xa.len() {
                    buf[i] += gout[i] * dfda(xa[i], xb[i]);
                }
            }
            if v.tensor(bi).needs_grad() {
                let buf = grads.buf_mut(bi, xb.len());
                for i in 0..xb.len() {
                    buf[i] += gout[i] * dfdb(xa[i], xb[i]);
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Elementwise sum.
pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    binary_elementwise("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
}

/// Elementwise difference.
pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    binary_elementwise("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
}

/// Elementwise product.
pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    binary_elementwise("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
}

/// Elementwise quotient. Callers must guarantee the denominator is bounded
/// away from zero (the SSIM constants serve that role in the losses).
pub fn div<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    binary_elementwise(
        "div",
        a,
        b,
        |x, y| x / y,
        |_, y| 1.0 / y,
        |x, y| -x / (y * y),
    )
}

fn unary_elementwise<'t>(
    a: Var<'t>,
    forward: impl Fn(f32) -> f32,
    dfdx: impl Fn(f32) -> f32 + 'static,
) -> Var<'t> {
    let tape = a.tape;
    let out = tape.with_values(|v| {
        let data = v.data(a.id).iter().map(|&x| forward(x)).collect();
        Tensor::from_vec(v.shape(a.id), data).expect("elementwise shape")
    });
    let backward: Option<BackwardFn> = a.needs_grad().then(|| {
        let ai = a.id;
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let x = v.data(ai);
            let buf = grads.buf_mut(ai, x.len());
            for i in 0..x.len() {
                buf[i] += gout[i] * dfdx(x[i]);
            }
        }) as BackwardFn
    });
    tape.push(out, backward)
}

/// Multiplication by a scalar constant.
pub fn scalar_mul(a: Var<'_>, s: f32) -> Var<'_> {
    unary_elementwise(a, move |x| x * s, move |_| s)
}

/// Addition of a scalar constant.
pub fn scalar_add(a: Var<'_>, s: f32) -> Var<'_> {
    unary_elementwise(a, move |x| x + s, |_| 1.0)
}

/// Elementwise negation.
pub fn neg(a: Var<'_>) -> Var<'_> {
    scalar_mul(a, -1.0)
}

/// Elementwise absolute value; the subgradient at 0 is taken as 0.
pub fn abs(a: Var<'_>) -> Var<'_> {
    unary_elementwise(
        a,
        f32::abs,
        |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        },
    )
}

/// Elementwise lower clamp. Gradient is passed through where `x > lo` and
/// blocked where the clamp is active.
pub fn clamp_min(a: Var<'_>, lo: f32) -> Var<'_> {
    unary_elementwise(
        a,
        move |x| x.max(lo),
        move |x| if x > lo { 1.0 } else { 0.0 },
    )
}

fn reduce<'t>(a: Var<'t>, scale_by_len: bool) -> Var<'t> {
    let tape = a.tape;
    let (total, len) = tape.with_values(|v| {
        let x = v.data(a.id);
        // f64 accumulation keeps scalar reductions stable enough for
        // finite-difference checks of f32 graphs.
        let s: f64 = x.iter().map(|&v| v as f64).sum();
        (s, x.len())
    });
    let factor = if scale_by_len { 1.0 / len as f64 } else { 1.0 };
    let out = Tensor::scalar((total * factor) as f32);
    let backward: Option<BackwardFn> = a.needs_grad().then(|| {
        let ai = a.id;
        let f = factor as f32;
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let n = v.data(ai).len();
            let g = gout[0] * f;
            let buf = grads.buf_mut(ai, n);
            for b in buf.iter_mut() {
                *b += g;
            }
        }) as BackwardFn
    });
    tape.push(out, backward)
}

/// Sum of all elements, as a scalar tensor.
pub fn sum(a: Var<'_>) -> Var<'_> {
    reduce(a, false)
}

/// Mean of all elements, as a scalar tensor.
pub fn mean(a: Var<'_>) -> Var<'_> {
    reduce(a, true)
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        add(self, rhs).expect("Var + Var: shape mismatch")
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        sub(self, rhs).expect("Var - Var: shape mismatch")
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        mul(self, rhs).expect("Var * Var: shape mismatch")
    }
}
