"""Reverse-mode automatic differentiation on float64 numpy arrays.

Every differentiable value in the package is a :class:`Tensor`.  Primitives
record their parents and a vector-Jacobian product; :func:`backward` orders
the recorded graph topologically and runs the products in reverse.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True
_CHECK_FINITE = False


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, where: str = "forward"):
        super().__init__(f"non-finite values produced by primitive '{op}' ({where})")
        self.op = op


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def check_finite():
    """Raise :class:`NonFiniteError` naming the first primitive that emits inf/nan."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "op", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _record(data: np.ndarray, parents: Sequence[Tensor], op: str, vjp: Callable) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _bshape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise binary
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), "add",
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), "sub",
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), "mul",
                   lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                              _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb
    return _record(out, (a, b), "div", vjp)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a constant; gradient flows where ``a > floor``."""
    a = as_tensor(a)
    keep = a.data > floor
    return _record(np.where(keep, a.data, floor), (a,), "maximum", lambda g: (g * keep,))


# ----------------------------------------------------------------------------
# elementwise unary
# ----------------------------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), "neg", lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(ad ** p, (a,), "power", lambda g: (g * p * ad ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.log(ad), (a,), "log", lambda g: (g / ad,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _record(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return _record(np.abs(a.data), (a,), "abs", lambda g: (g * sgn,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def scale_gradient(a, factor: float) -> Tensor:
    """Identity in the forward pass; multiplies the incoming gradient by ``factor``."""
    a = as_tensor(a)
    return _record(a.data, (a,), "scale_gradient", lambda g: (g * factor,))


# ----------------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum",
                   lambda g: (_expand_reduced(g, shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    return _record(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), "mean",
                   lambda g: (_expand_reduced(g, shape, axis, keepdims) / n,))


def var(a, axis=None, keepdims=False) -> Tensor:
    """Population (biased) variance."""
    a = as_tensor(a)
    shape = a.shape
    n = a.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    centered = a.data - np.mean(a.data, axis=axis, keepdims=True)
    out = np.mean(centered * centered, axis=axis, keepdims=keepdims)
    return _record(out, (a,), "var",
                   lambda g: (_expand_reduced(g, shape, axis, keepdims) * (2.0 / n) * centered,))


# ----------------------------------------------------------------------------
# linear algebra and structure
# ----------------------------------------------------------------------------

def matmul(a, b, stable: bool = False) -> Tensor:
    """2-D matrix product.

    ``stable=True`` evaluates through einsum, whose per-row result does not
    depend on how many rows are batched together (BLAS gemm does not promise
    that). The decoder relies on it for loop/parallel bit-equality.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = np.einsum("ij,jk->ik", ad, bd) if stable else ad @ bd
    return _record(out, (a, b), "matmul",
                   lambda g: (g @ bd.T if a.requires_grad else None,
                              ad.T @ g if b.requires_grad else None))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data.T, (a,), "transpose", lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _record(out, (a,), "reshape", lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in ts)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _record(out, ts, "concat", vjp)


def getitem(a, idx) -> Tensor:
    """Basic slicing (ints, slices); gradient scatters back into a zero buffer."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)
    return _record(a.data[idx], (a,), "slice", vjp)


def take_rows(a, index) -> Tensor:
    """Gather rows by integer index; repeated indices accumulate in the VJP."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)
    return _record(a.data[index], (a,), "take_rows", vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    return _record(out, (a,), "softmax", vjp)


def conv1d(x, w, b=None, padding: int | None = None) -> Tensor:
    """1-D convolution over the frame axis.

    x: (frames, in_ch); w: (kernel, in_ch, out_ch); b: (out_ch,).
    ``padding=None`` means same-length output (odd kernels).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    k, cin, cout = w.shape
    pad = (k - 1) // 2 if padding is None else padding
    T = x.shape[0]
    if T + 2 * pad < k:
        raise ShapeError(f"conv1d: kernel {k} larger than padded input {T + 2 * pad}")
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    tout = T + 2 * pad - k + 1
    cols = np.concatenate([xp[j:j + tout] for j in range(k)], axis=1)  # (tout, k*cin)
    wr = w.data.reshape(k * cin, cout)
    out = cols @ wr
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents.append(b)

    def vjp(g):
        gx = gw = None
        if x.requires_grad:
            gcols = (g @ wr.T).reshape(tout, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[j:j + tout] += gcols[:, j]
            gx = gxp[pad:pad + T]
        if w.requires_grad:
            gw = (cols.T @ g).reshape(k, cin, cout)
        if b is not None:
            return gx, gw, g.sum(axis=0)
        return gx, gw
    return _record(out, parents, "conv1d", vjp)


def swish_scan(x1, c0, alpha, beta) -> Tensor:
    """Sequential pooling recurrence ``c[i] = swish(c[i-1] - x1[i]) + x1[i]``.

    ``swish(u) = sigmoid(alpha*u + beta) * u``.  x1: (steps, hidden), c0: (hidden,),
    alpha/beta: scalars.  Returns the stacked states (steps, hidden).
    """
    x1, c0, alpha, beta = as_tensor(x1), as_tensor(c0), as_tensor(alpha), as_tensor(beta)
    if x1.ndim != 2 or c0.shape != (x1.shape[1],):
        raise ShapeError(f"swish_scan: incompatible shapes {x1.shape} and {c0.shape}")
    a, bt = float(alpha.data), float(beta.data)
    xd = x1.data
    n = xd.shape[0]
    us = np.empty_like(xd)
    gs = np.empty_like(xd)
    out = np.empty_like(xd)
    c = c0.data
    for i in range(n):
        u = c - xd[i]
        s = expit(a * u + bt)
        c = s * u + xd[i]
        us[i], gs[i], out[i] = u, s, c

    def vjp(g):
        gx = np.empty_like(xd)
        ga = gb = 0.0
        carry = np.zeros(xd.shape[1])
        for i in range(n - 1, -1, -1):
            d = g[i] + carry
            u, s = us[i], gs[i]
            ds = s * (1.0 - s)
            du = d * (s + a * u * ds)
            gx[i] = d - du
            pre = d * u * ds
            ga += float(np.dot(pre, u))
            gb += float(np.sum(pre))
            carry = du
        return gx, carry, np.array(ga), np.array(gb)
    return _record(out, (x1, c0, alpha, beta), "swish_scan", vjp)


# ----------------------------------------------------------------------------
# backward pass
# ----------------------------------------------------------------------------

@dataclass
class ComputationTape:
    """Recorded nodes reachable from a loss, parents before children."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, root: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, retain_graph: bool = False) -> ComputationTape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad ancestor."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("backward: loss does not depend on any requires_grad tensor")
    tape = ComputationTape.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        grads = node._vjp(g)
        if _CHECK_FINITE:
            for pg in grads:
                if pg is not None and not np.all(np.isfinite(pg)):
                    raise NonFiniteError(node.op, "backward")
        for p, pg in zip(node._parents, grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            prev = pending.get(key)
            pending[key] = np.array(pg, dtype=np.float64) if prev is None else prev + pg
        if not retain_graph:
            node._parents = ()
            node._vjp = None
    return tape


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


# ----------------------------------------------------------------------------
# finite-difference checking
# ----------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    checked: int
    worst: tuple[int, int] | None = None  # (input index, flat element index)
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)

    def __bool__(self):
        return self.passed


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], tol: float = 1e-4,
              eps: float = 1e-5, floor: float = 1e-6, max_checks: int | None = None,
              seed: int = 0) -> GradcheckReport:
    """Compare analytic gradients of ``f(*inputs)`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection.  With
    ``max_checks`` only that many randomly chosen coordinates per input are
    perturbed; the analytic side is always computed in full.
    """
    rng = np.random.default_rng(seed)
    proj: list[np.ndarray | None] = [None]

    def scalar_out():
        out = f(*inputs)
        if out.data.size == 1:
            return tsum(out)
        if proj[0] is None:
            proj[0] = rng.uniform(-1.0, 1.0, size=out.shape)
        return tsum(mul(out, proj[0]))

    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with check_finite():
        loss = scalar_out()
        backward(loss)

    worst_err, worst_at, per_input, checked = 0.0, None, [], 0
    for k, t in enumerate(inputs):
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = rng.choice(flat.size, size=max_checks, replace=False)
        errs = []
        for i in idx:
            orig = flat[i]
            with no_grad(), check_finite():
                flat[i] = orig + eps
                fp = float(scalar_out().data)
                flat[i] = orig - eps
                fm = float(scalar_out().data)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            err = float(relative_error(analytic.reshape(-1)[i], num, floor))
            errs.append(err)
            if err > worst_err:
                worst_err, worst_at = err, (k, int(i))
        checked += len(idx)
        per_input.append(max(errs) if errs else 0.0)
    return GradcheckReport(worst_err, tol, checked, worst_at, per_input)
