"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only what the graph models in this package need: elementwise ops without
broadcasting, 2-D matmul, row gathers, segment sums for message passing, and
a handful of reductions. Every forward result is checked for NaN/Inf.

Each result that depends on a differentiable input is recorded with a
monotonically increasing sequence number. ``backward`` collects the nodes
reachable from the loss and replays them in reverse execution order.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Parameter",
    "Tape",
    "tensor",
    "zeros",
    "tensor_apply",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "scale",
    "matmul",
    "add_bias",
    "const_matmul",
    "reshape",
    "segment_sum",
    "gather_rows",
    "concat",
    "sum_all",
    "mean_all",
    "softplus",
    "log",
    "row_norm",
    "layer_norm",
    "backward",
    "grad_check",
    "no_grad",
]

_seq = itertools.count()
_state = threading.local()


class NonFiniteError(FloatingPointError):
    """A forward or gradient computation produced NaN or Inf."""


def _recording() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = _recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(s <= 0 for s in arr.shape) and arr.size != 0:
            raise ValueError(f"non-positive extent in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = -1
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf; ``grad`` always exists and has the value's shape."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)

    @property
    def value(self) -> np.ndarray:
        return self.data


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a sum is NaN/Inf whenever an element is; only then look elementwise
    if arr.size and not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


def _make(out: np.ndarray, parents: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    _check_finite(out, op)
    res = Tensor.__new__(Tensor)
    res.data = out
    res.name = None
    res._seq = -1
    if _recording() and any(p.requires_grad for p in parents):
        res.requires_grad = True
        res.grad = None
        res._parents = parents
        res._backward = grad_fn
        res._seq = next(_seq)
    else:
        res.requires_grad = False
        res.grad = None
        res._parents = ()
        res._backward = None
    return res


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


_UNARY = {"relu": relu, "sigmoid": sigmoid}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def tensor_apply(op_kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise op by name.

    ``scale`` takes a Python scalar (or a one-element tensor, treated as a
    constant) as ``b``; binary ops need identical shapes.
    """
    a = _as_tensor(a)
    if op_kind in _UNARY:
        if b is not None:
            raise TypeError(f"{op_kind} takes one operand")
        return _UNARY[op_kind](a)
    if op_kind in _BINARY:
        if b is None:
            raise TypeError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, _as_tensor(b))
    if op_kind == "scale":
        if isinstance(b, Tensor):
            if b.data.size != 1:
                raise ValueError("scale factor must be a scalar")
            b = b.data.reshape(-1)[0]
        return scale(a, b)
    raise ValueError(f"unknown op kind {op_kind!r}")


# -- linear algebra and indexing -------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), grad_fn, "matmul")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[n, d] + bias[d] added to every row (the one sanctioned row broadcast)."""
    if x.data.ndim != 2 or bias.shape != (x.shape[1],):
        raise ValueError(f"add_bias: shapes {x.shape} and {bias.shape}")
    return _make(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)), "add_bias")


def const_matmul(m, x: Tensor) -> Tensor:
    """``m @ x`` for a constant matrix ``m`` (dense array or scipy sparse)."""
    if x.data.ndim != 2 or m.shape[1] != x.shape[0]:
        raise ValueError(f"const_matmul: incompatible shapes {m.shape} and {x.shape}")
    mt = m.T
    return _make(np.asarray(m @ x.data), (x,), lambda g: (np.asarray(mt @ g),), "const_matmul")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def _scatter_add(ids: np.ndarray, vals: np.ndarray, num: int) -> np.ndarray:
    """out[i] = sum of vals[j] with ids[j] == i, as a sparse 0/1 matrix product."""
    n = ids.shape[0]
    if n == 0:
        return np.zeros((num,) + vals.shape[1:])
    flat = vals.reshape(n, -1)
    m = sp.csr_matrix((np.ones(n), (ids, np.arange(n))), shape=(num, n))
    return np.asarray(m @ flat).reshape((num,) + vals.shape[1:])


def segment_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``values`` that share a segment id; empty segments are zero."""
    ids = np.asarray(segment_ids, dtype=np.int64).reshape(-1)
    vals = values.data
    if vals.ndim == 1 and vals.size == 0:
        vals = vals.reshape(0, 1)
    if vals.shape[0] != ids.shape[0]:
        raise ValueError(f"segment_sum: {vals.shape[0]} rows but {ids.shape[0]} ids")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError("segment_sum: segment id out of range")
    out = _scatter_add(ids, vals, num_segments)
    return _make(out, (values,), lambda g: (g[ids].reshape(values.shape),), "segment_sum")


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("gather_rows: index out of range")
    n = a.shape[0]

    def grad_fn(g):
        return (_scatter_add(idx, g, n),)

    return _make(a.data[idx], (a,), grad_fn, "gather_rows")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(out, tensors, grad_fn, "concat")


# -- reductions and scalar-valued helpers ----------------------------------

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, max(a.data.size, 1)
    return _make(np.array(a.data.mean() if a.data.size else 0.0), (a,),
                 lambda g: (np.full(shape, float(g) / n),), "mean")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make(out, (a,), lambda g: (g * sig,), "softplus")


def log(a: Tensor, clamp: float = 0.0) -> Tensor:
    """Natural log; with ``clamp`` > 0 the input is floored at ``clamp`` first."""
    x = a.data
    if clamp > 0:
        live = x > clamp
        xc = np.where(live, x, clamp)
    else:
        live = np.ones_like(x, dtype=bool)
        xc = x
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xc)
    return _make(out, (a,), lambda g: (np.where(live, g / xc, 0.0),), "log")


def row_norm(x: Tensor, p: int = 2, eps: float = 1e-12) -> Tensor:
    """Per-row p-norm (p in {1, 2}) of a 2-D tensor."""
    d = x.data
    if p == 1:
        out = np.abs(d).sum(axis=1)
        sign = np.sign(d)
        return _make(out, (x,), lambda g: (g[:, None] * sign,), "row_norm")
    if p == 2:
        out = np.sqrt((d * d).sum(axis=1) + eps)
        return _make(out, (x,), lambda g: (g[:, None] * d / out[:, None],), "row_norm")
    raise ValueError("p must be 1 or 2")



def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each row of x[n, d] to zero mean and unit variance, then
    apply the per-feature ``gain`` and ``bias``."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ValueError(f"layer_norm: shapes {x.shape}, {gain.shape}, {bias.shape}")
    d = x.data
    centered = d - d.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv
    gd = gain.data

    def grad_fn(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gd + bias.data, (x, gain, bias), grad_fn, "layer_norm")

# -- reverse mode ------------------------------------------------------------

class Tape:
    """The recorded operations reachable from one output, in execution order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def collect(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._backward is None:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, out: Tensor, seed: np.ndarray, on_visit=None) -> None:
        grads: dict[int, np.ndarray] = {id(out): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if on_visit is not None:
                on_visit(node)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
                if parent._backward is None:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += pg
                else:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every differentiable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached: no recorded operation leads to it")
    seed = np.ones_like(loss.data)
    if loss._backward is None:
        loss.grad = (loss.grad if loss.grad is not None else np.zeros_like(loss.data)) + seed
        return
    Tape.collect(loss).replay(loss, seed)
    for leaf_grad in _iter_leaf_grads(loss):
        _check_finite(leaf_grad, "backward")


def _iter_leaf_grads(loss: Tensor) -> Iterable[np.ndarray]:
    stack, seen = [loss], set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is None and t.grad is not None:
            yield t.grad
        stack.extend(t._parents)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               coords: Sequence[int] | None = None) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``x`` must be a differentiable leaf that ``f`` reads. Its ``.grad`` is
    overwritten. ``coords`` restricts the check to flat indices.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    if not x.requires_grad:
        raise ValueError("x must require grad")
    x.grad = np.zeros_like(x.data)
    out = f(x)
    _check_finite(out.data, "grad_check")
    if out.requires_grad:
        backward(out)
    analytic = x.grad.reshape(-1).copy()
    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            if not np.isfinite(numeric):
                raise NonFiniteError("non-finite finite difference")
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst
