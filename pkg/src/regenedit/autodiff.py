"""Reverse-mode differentiation over numpy arrays.

The operation set is exactly what the toy denoiser and the guidance losses
need: elementwise arithmetic, 2-D matmul, 3x3 same-padded convolution, row
softmax, circular shifts, 2x2 average pooling, axis means, and a few scalar
reductions.  Values are float32 by default; explicit reductions accumulate in
float64 before casting back.  Passing float64 arrays runs the whole graph in
float64 (the finite-difference checker relies on this).

A graph node (Var) records its parents and a closure producing parent
adjoints.  Nodes whose inputs are all untracked skip recording, so inference
forwards carry no graph.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError, ShapeError

Array = np.ndarray


def _as_array(x, like: Optional[Array] = None) -> Array:
    dtype = like.dtype if like is not None else np.float32
    a = np.asarray(x, dtype=dtype)
    return a


class Var:
    """A value in the recorded computation graph."""

    __slots__ = ("value", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: Sequence["Var"] = (),
        backward: Optional[Callable[[Array], Sequence[Optional[Array]]]] = None,
    ):
        self.value = np.asarray(value)
        if self.value.dtype not in (np.float32, np.float64):
            self.value = self.value.astype(np.float32)
        self.requires_grad = bool(requires_grad)
        if self.requires_grad and backward is not None:
            self._parents = tuple(parents)
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    # -- arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(_as_array(other, self.value)), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.value)


def constant(value) -> Var:
    """Untracked leaf."""
    return Var(value, requires_grad=False)


def tracked(value) -> Var:
    """Leaf whose adjoint will be accumulated during backprop."""
    return Var(value, requires_grad=True)


def _coerce(x, like: Optional[Var] = None) -> Var:
    if isinstance(x, Var):
        return x
    return constant(_as_array(x, like.value if like is not None else None))


def _make(value, parents: Sequence[Var], backward) -> Var:
    needs = any(p.requires_grad for p in parents)
    return Var(value, requires_grad=needs, parents=parents, backward=backward)


def _unbroadcast(grad: Array, shape) -> Array:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    # Added leading axes.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.astype(grad.dtype)


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Var:
    a = _coerce(a)
    b = _coerce(b, a)
    value = a.value + b.value

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(value, (a, b), backward)


def sub(a, b) -> Var:
    a = _coerce(a)
    b = _coerce(b, a)
    value = a.value - b.value

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(value, (a, b), backward)


def mul(a, b) -> Var:
    a = _coerce(a)
    b = _coerce(b, a)
    value = a.value * b.value
    av, bv = a.value, b.value

    def backward(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _make(value, (a, b), backward)


def div(a, b) -> Var:
    a = _coerce(a)
    b = _coerce(b, a)
    value = a.value / b.value
    av, bv = a.value, b.value

    def backward(g):
        return (
            _unbroadcast(g / bv, a.shape),
            _unbroadcast(-g * av / (bv * bv), b.shape),
        )

    return _make(value, (a, b), backward)


def square(a: Var) -> Var:
    a = _coerce(a)
    av = a.value

    def backward(g):
        return (g * (2.0 * av),)

    return _make(av * av, (a,), backward)


def sqrt(a: Var) -> Var:
    a = _coerce(a)
    value = np.sqrt(a.value)

    def backward(g):
        return (g * (0.5 / value),)

    return _make(value, (a,), backward)


def log(a: Var) -> Var:
    a = _coerce(a)
    av = a.value

    def backward(g):
        return (g / av,)

    return _make(np.log(av), (a,), backward)


def exp(a: Var) -> Var:
    a = _coerce(a)
    value = np.exp(a.value)

    def backward(g):
        return (g * value,)

    return _make(value, (a,), backward)


def clamp_min(a: Var, floor: float) -> Var:
    """max(a, floor); zero subgradient on the clamped region."""
    a = _coerce(a)
    av = a.value
    mask = av > floor

    def backward(g):
        return (np.where(mask, g, 0.0).astype(av.dtype),)

    return _make(np.maximum(av, floor).astype(av.dtype), (a,), backward)


def silu(a: Var) -> Var:
    """x * sigmoid(x)."""
    a = _coerce(a)
    av = a.value
    sig = 1.0 / (1.0 + np.exp(-av))
    value = av * sig

    def backward(g):
        return (g * (sig * (1.0 + av * (1.0 - sig))),)

    return _make(value.astype(av.dtype), (a,), backward)


# -- structure ------------------------------------------------------------

def reshape(a: Var, shape) -> Var:
    a = _coerce(a)
    old = a.shape
    value = a.value.reshape(shape)

    def backward(g):
        return (g.reshape(old),)

    return _make(value, (a,), backward)


def transpose2d(a: Var) -> Var:
    a = _coerce(a)
    if a.value.ndim != 2:
        raise ShapeError(f"transpose2d expects rank-2, got shape {a.shape}")
    value = np.ascontiguousarray(a.value.T)

    def backward(g):
        return (np.ascontiguousarray(g.T),)

    return _make(value, (a,), backward)


def roll(a: Var, shift: int, axis: int) -> Var:
    """Circular shift along one axis."""
    a = _coerce(a)
    value = np.roll(a.value, shift, axis=axis)

    def backward(g):
        return (np.roll(g, -shift, axis=axis),)

    return _make(value, (a,), backward)


def matmul(a: Var, b: Var) -> Var:
    a = _coerce(a)
    b = _coerce(b, a)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(
            f"matmul expects rank-2 operands, got {a.shape} @ {b.shape}"
        )
    av, bv = a.value, b.value
    value = av @ bv

    def backward(g):
        return g @ bv.T, av.T @ g

    return _make(value, (a, b), backward)


# -- reductions -----------------------------------------------------------

def sum_all(a: Var) -> Var:
    a = _coerce(a)
    av = a.value
    value = np.asarray(np.sum(av, dtype=np.float64), dtype=av.dtype)

    def backward(g):
        return (np.full(av.shape, g, dtype=av.dtype),)

    return _make(value, (a,), backward)


def mean_all(a: Var) -> Var:
    a = _coerce(a)
    av = a.value
    n = av.size
    value = np.asarray(np.sum(av, dtype=np.float64) / n, dtype=av.dtype)

    def backward(g):
        return (np.full(av.shape, g / n, dtype=av.dtype),)

    return _make(value, (a,), backward)


def mean_axis(a: Var, axis: int) -> Var:
    """Mean along one axis, keepdims; float64 accumulation."""
    a = _coerce(a)
    av = a.value
    n = av.shape[axis]
    value = (np.sum(av, axis=axis, keepdims=True, dtype=np.float64) / n).astype(
        av.dtype
    )

    def backward(g):
        return (np.broadcast_to(g / n, av.shape).astype(av.dtype),)

    return _make(value, (a,), backward)


def frob_norm(a: Var) -> Var:
    """Euclidean norm of all entries; subgradient 0 at the origin."""
    a = _coerce(a)
    av = a.value
    norm = float(np.sqrt(np.sum(av.astype(np.float64) ** 2)))
    value = np.asarray(norm, dtype=av.dtype)

    def backward(g):
        if norm == 0.0:
            return (np.zeros_like(av),)
        return ((g / norm) * av,)

    return _make(value, (a,), backward)


# -- array kernels shared with the plain-numpy API ------------------------

def _softmax_rows_value(m: Array) -> Array:
    z = m.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(m.dtype)


def softmax_rows_v(a: Var) -> Var:
    a = _coerce(a)
    if a.value.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank-2, got shape {a.shape}")
    value = _softmax_rows_value(a.value)

    def backward(g):
        dot = np.sum(g * value, axis=1, keepdims=True, dtype=np.float64)
        return ((value * (g - dot)).astype(value.dtype),)

    return _make(value, (a,), backward)


def _avg_pool2_value(m: Array) -> Array:
    h, w, c = m.shape
    blocks = m.reshape(h // 2, 2, w // 2, 2, c).astype(np.float64)
    return (blocks.sum(axis=(1, 3)) / 4.0).astype(m.dtype)


def avg_pool2_v(a: Var) -> Var:
    a = _coerce(a)
    v = a.value
    if v.ndim != 3:
        raise ShapeError(f"avg_pool2 expects H x W x C, got shape {a.shape}")
    h, w, _ = v.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even extents, got {h} x {w}")
    value = _avg_pool2_value(v)

    def backward(g):
        up = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) / 4.0
        return (up.astype(v.dtype),)

    return _make(value, (a,), backward)


def conv3x3(x: Var, w: Var, b: Var) -> Var:
    """Same-padded 3x3 convolution: (H,W,Ci) x (3,3,Ci,Co) -> (H,W,Co)."""
    x = _coerce(x)
    w = _coerce(w, x)
    b = _coerce(b, x)
    xv, wv = x.value, w.value
    if xv.ndim != 3 or wv.shape[:2] != (3, 3) or wv.shape[2] != xv.shape[2]:
        raise ShapeError(
            f"conv3x3 shape mismatch: input {xv.shape}, weight {wv.shape}"
        )
    h, wd, ci = xv.shape
    co = wv.shape[3]
    padded = np.zeros((h + 2, wd + 2, ci), dtype=xv.dtype)
    padded[1:-1, 1:-1] = xv
    # (H*W, 9*Ci) patch matrix; offset order fixed, row-major over (di, dj).
    cols = np.empty((h * wd, 9 * ci), dtype=xv.dtype)
    for di in range(3):
        for dj in range(3):
            k = di * 3 + dj
            cols[:, k * ci:(k + 1) * ci] = padded[
                di:di + h, dj:dj + wd
            ].reshape(h * wd, ci)
    wf = wv.reshape(9 * ci, co)
    value = (cols @ wf).reshape(h, wd, co) + b.value

    def backward(g):
        gf = g.reshape(h * wd, co)
        dw = (cols.T @ gf).reshape(3, 3, ci, co)
        db = gf.sum(axis=0, dtype=np.float64).astype(g.dtype)
        gcols = gf @ wf.T
        dpad = np.zeros_like(padded)
        for di in range(3):
            for dj in range(3):
                k = di * 3 + dj
                dpad[di:di + h, dj:dj + wd] += gcols[
                    :, k * ci:(k + 1) * ci
                ].reshape(h, wd, ci)
        return dpad[1:-1, 1:-1], dw, db

    return _make(value, (x, w, b), backward)


# -- plain-array entry points ---------------------------------------------

def softmax_rows(m: Array) -> Array:
    """Row-stochastic softmax of a rank-2 array, row-max stabilized."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank-2, got shape {m.shape}")
    return _softmax_rows_value(m.astype(np.float32, copy=False))


def avg_pool2(m: Array) -> Array:
    """2x2 average pooling of an H x W x C array with even extents."""
    m = np.asarray(m)
    if m.ndim != 3:
        raise ShapeError(f"avg_pool2 expects H x W x C, got shape {m.shape}")
    h, w, _ = m.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even extents, got {h} x {w}")
    return _avg_pool2_value(m.astype(np.float32, copy=False))


# -- backprop -------------------------------------------------------------

def backprop(root: Var) -> dict:
    """Run reverse accumulation from a scalar root.

    Returns a map id(var) -> adjoint array for every tracked node reached.
    """
    if root.value.size != 1:
        raise ParameterError(
            f"backprop root must be scalar, got shape {root.shape}"
        )
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    grads: dict[int, Array] = {
        id(root): np.ones_like(root.value)
    }
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = pg.astype(parent.value.dtype, copy=False)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


def gradient(loss_builder: Callable[[Var], Var], at: Array) -> Array:
    """Adjoint of a scalar loss with respect to `at`.

    `loss_builder` must compose tape operations on the tracked input and
    return a scalar Var.  An untouched input yields a zero gradient.
    """
    x = tracked(np.asarray(at))
    loss = loss_builder(x)
    if not isinstance(loss, Var):
        raise ParameterError("loss_builder must return a Var")
    if loss.value.size != 1:
        raise ParameterError(
            f"loss must be scalar, got shape {loss.shape}"
        )
    grads = backprop(loss)
    g = grads.get(id(x))
    if g is None:
        return np.zeros_like(x.value)
    return g


# -- finite-difference checking -------------------------------------------

def finite_difference_gradient(
    loss_builder: Callable[[Var], Var], at: Array, h: float = 1e-3
) -> Array:
    """Central differences of the same graph evaluated in float64."""
    base = np.asarray(at, dtype=np.float64)
    flat = base.ravel().copy()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = float(loss_builder(constant(flat.reshape(base.shape))).value)
        flat[i] = keep - h
        lo = float(loss_builder(constant(flat.reshape(base.shape))).value)
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * h)
    return out.reshape(base.shape)


def check_gradient(
    loss_builder: Callable[[Var], Var],
    at: Array,
    rtol: float = 1e-3,
    h: float = 1e-3,
) -> float:
    """Max scaled deviation between analytic and central-difference gradients.

    Coordinates are compared relative to max(|fd_i|, 1e-3 * max|fd|, 1e-8) so
    near-zero entries are judged against the gradient's own scale.  Returns
    the worst ratio; raises AssertionError above rtol.
    """
    analytic = gradient(loss_builder, np.asarray(at, dtype=np.float32))
    fd = finite_difference_gradient(loss_builder, at, h=h)
    scale = max(float(np.max(np.abs(fd))), 1e-12)
    denom = np.maximum(np.abs(fd), max(1e-3 * scale, 1e-8))
    worst = float(np.max(np.abs(analytic.astype(np.float64) - fd) / denom))
    if worst > rtol:
        raise AssertionError(
            f"gradient check failed: worst scaled deviation {worst:.3e} > {rtol:.1e}"
        )
    return worst
