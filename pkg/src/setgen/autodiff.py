"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Tensors wrap numpy arrays of rank <= 3. Every operation records its parents
and a backward closure; calling :func:`backward` on a scalar walks the trace
in reverse topological order. Gradients accumulate into ``.grad`` until
zeroed, so two backward passes without zeroing yield exactly twice the grad.

Tie rule: max/min reductions split the incoming gradient equally among all
tied extrema. This keeps gradients permutation equivariant.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericsError, ShapeError

# When True, every op output is checked for NaN/Inf.
DEBUG_CHECKS = False

_MAX_RANK = 3


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > _MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds supported rank {_MAX_RANK}")
    return arr


class Tensor:
    """Dense real array carrying an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _traced(*inputs: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in inputs)


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None] | None) -> Tensor:
    if DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError("non-finite value produced")
    out = Tensor(data)
    if backward is not None and _traced(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach ``grad.shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# -- elementwise primitives -----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bwd(g):
        if _traced(a):
            a._accumulate(_unbroadcast(g, a.shape))
        if _traced(b):
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bwd(g):
        if _traced(a):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if _traced(b):
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0
    return _make(a.data * mask, (a,), lambda g: a._accumulate(g * mask))


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def reciprocal(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: a._accumulate(-g * out * out))


def square(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _make(a.data ** 2, (a,), lambda g: a._accumulate(2.0 * g * a.data))


def sqrt(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)

    def bwd(g):
        safe = np.where(out > 0.0, out, 1.0)
        a._accumulate(np.where(out > 0.0, g / (2.0 * safe), 0.0))

    return _make(out, (a,), bwd)


# -- structural primitives ------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bwd(g):
        if a.ndim == 1 and b.ndim == 1:
            if _traced(a):
                a._accumulate(g * b.data)
            if _traced(b):
                b._accumulate(g * a.data)
            return
        ad = a.data if a.ndim > 1 else a.data[None, :]
        bd = b.data if b.ndim > 1 else b.data[:, None]
        gd = g
        if a.ndim == 1:
            gd = gd[..., None, :]
        if b.ndim == 1:
            gd = gd[..., :, None]
        if _traced(a):
            ga = gd @ np.swapaxes(bd, -1, -2)
            a._accumulate(_unbroadcast(ga, ad.shape).reshape(a.shape))
        if _traced(b):
            gb = np.swapaxes(ad, -1, -2) @ gd
            b._accumulate(_unbroadcast(gb, bd.shape).reshape(b.shape))

    return _make(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    a = _wrap(a)
    if a.ndim < 2:
        raise ShapeError("transpose needs rank >= 2")
    data = np.swapaxes(a.data, -1, -2)
    return _make(data, (a,), lambda g: a._accumulate(np.swapaxes(g, -1, -2)))


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    if data.ndim > _MAX_RANK:
        raise ShapeError(f"rank {data.ndim} exceeds supported rank {_MAX_RANK}")
    return _make(data, (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def broadcast(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _make(data, (a,), lambda g: a._accumulate(_unbroadcast(g, a.shape)))


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows by index.

    rank-2 input with 1-D idx selects rows; rank-3 input with 2-D idx
    selects per-batch rows along axis 1.
    """
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim == 2 and idx.ndim == 1:
        data = a.data[idx]

        def bwd(g):
            gin = np.zeros_like(a.data)
            np.add.at(gin, idx, g)
            a._accumulate(gin)

    elif a.ndim == 3 and idx.ndim == 2:
        data = np.take_along_axis(a.data, idx[:, :, None], axis=1)

        def bwd(g):
            gin = np.zeros_like(a.data)
            for b in range(a.shape[0]):
                np.add.at(gin[b], idx[b], g[b])
            a._accumulate(gin)

    else:
        raise ShapeError(f"gather_rows: rank {a.ndim} with idx rank {idx.ndim}")
    return _make(data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if _traced(t):
                sl = [slice(None)] * g.ndim
                sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(data, tuple(tensors), bwd)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=0)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack rank-2 tensors into a rank-3 batch."""
    return concat([reshape(t, (1,) + tuple(t.shape)) for t in tensors], axis=0)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    a = _wrap(a)
    axis = axis if axis >= 0 else a.ndim + axis
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ShapeError(f"narrow out of range on axis {axis}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    data = a.data[sl].copy()

    def bwd(g):
        gin = np.zeros_like(a.data)
        gin[sl] = g
        a._accumulate(gin)

    return _make(data, (a,), bwd)


# -- reductions -----------------------------------------------------------


def _norm_axis(a: Tensor, axis):
    if axis is None:
        return None
    return axis if axis >= 0 else a.ndim + axis


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _wrap(a)
    axis = _norm_axis(a, axis)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axis = _norm_axis(a, axis)
    count = a.data.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape) / count)

    return _make(data, (a,), bwd)


def max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum with the equal-split tie rule."""
    a = _wrap(a)
    axis = _norm_axis(a, axis)
    data = a.data.max(axis=axis, keepdims=keepdims)
    full = a.data.max(axis=axis, keepdims=True)
    mask = a.data == full
    counts = mask.sum(axis=axis, keepdims=True)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None:
            g = np.broadcast_to(g, a.shape)
        a._accumulate(mask * (g / counts))

    return _make(data, (a,), bwd)


def min(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return neg(max(neg(a), axis=axis, keepdims=keepdims))


def std(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation (divide by n); zero for a single element."""
    a = _wrap(a)
    axis = _norm_axis(a, axis)
    count = a.data.size if axis is None else a.shape[axis]
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    s_keep = np.sqrt((centered ** 2).mean(axis=axis, keepdims=True))
    data = s_keep if keepdims or axis is None else np.squeeze(s_keep, axis)
    if axis is None and not keepdims:
        data = data.reshape(())

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None:
            g = np.broadcast_to(g, s_keep.shape)
        safe = np.where(s_keep > 0.0, s_keep, 1.0)
        a._accumulate(np.where(s_keep > 0.0, g * centered / (count * safe), 0.0))

    return _make(data, (a,), bwd)


def softmax_lastdim(a: Tensor) -> Tensor:
    a = _wrap(a)
    if a.ndim < 1:
        raise ShapeError("softmax input must have rank >= 1")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        a._accumulate(out * (g - dot))

    return _make(out, (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp built from relu; gradient is 1 strictly inside [lo, hi]."""
    return add(lo, add(relu(a - lo), neg(relu(a - hi))))


# -- backward pass --------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the recorded trace."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    # per-call gradient buffers; persistent .grad accumulates across calls
    call_grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(topo):
        g = call_grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node._accumulate(g)
        if node._backward is None:
            continue
        _run_node_backward(node, g, call_grads)


def _run_node_backward(node: Tensor, g: np.ndarray,
                       call_grads: dict[int, np.ndarray]) -> None:
    # temporarily swap each parent's _accumulate target
    grabbed: list[tuple[Tensor, np.ndarray | None]] = []
    for p in node._parents:
        grabbed.append((p, p.grad))
        p.grad = None
    node._backward(g)
    for p, old in grabbed:
        if p.grad is not None:
            key = id(p)
            if key in call_grads:
                call_grads[key] = call_grads[key] + p.grad
            else:
                call_grads[key] = p.grad
        p.grad = old


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# -- deterministic RNG ----------------------------------------------------


class Rng:
    """Seeded random stream; identical seeds give identical streams."""

    def __init__(self, seed: int, _gen: np.random.Generator | None = None):
        self.seed = int(seed)
        self._gen = _gen or np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream; deterministic in (seed, key)."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        return Rng(self.seed, np.random.Generator(np.random.PCG64(ss)))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def poisson(self, lam: float) -> int:
        return int(self._gen.poisson(lam))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


# -- finite-difference gradient checking ----------------------------------


class GradcheckReport:
    def __init__(self, max_rel_error: float, rtol: float):
        self.max_rel_error = max_rel_error
        self.rtol = rtol
        self.passed = max_rel_error < rtol

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return f"GradcheckReport({status}, max_rel_error={self.max_rel_error:.3e})"


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor,
              h: float = 1e-6, rtol: float = 1e-4,
              atol: float = 1e-5) -> GradcheckReport:
    """Compare analytic gradients to central finite differences.

    An element passes when |analytic - numeric| <= max(atol, rtol * scale):
    central differences of an O(1) function at step h carry ~|f| * eps / h of
    cancellation noise, so near-zero gradients need an absolute floor.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise ContractError("gradcheck needs a scalar-valued function")
    backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(Tensor(x.data)).data)
        flat[i] = orig - h
        lo = float(f(Tensor(x.data)).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(atol / rtol,
                       np.maximum(np.abs(analytic), np.abs(numeric)))
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return GradcheckReport(max_rel, rtol)


def check_finite(t: Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericsError("tensor contains NaN or Inf")
