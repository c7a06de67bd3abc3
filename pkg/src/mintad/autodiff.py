"""Minimal reverse-mode automatic differentiation over numpy arrays.

Forward computation happens eagerly. While a :class:`Graph` is active, every
primitive whose inputs include a tensor with ``requires_grad`` appends a node
to the graph's tape; :meth:`Graph.backward` walks the tape in reverse.

Broadcasting rule: binary elementwise primitives accept operands whose shapes
are equal, or where one shape is a suffix of the other (the shorter operand
is repeated over the *leading* dimensions, e.g. ``(B, P, D)`` with ``(D,)``
or ``(P, D)``). Any other combination raises :class:`ShapeError`. The same
rule governs the leading dimensions of ``matmul``.

ReLU and leaky-ReLU use subgradient 0 at exactly 0 (leaky: slope ``alpha``
is not applied at 0 either, the derivative there is taken from the negative
branch only for strictly negative inputs).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import Stream


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class GraphError(AutodiffError, RuntimeError):
    pass


class Tensor:
    """Dense real array plus a ``requires_grad`` flag.

    Tensors hash by identity so they can key gradient tables.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

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

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """Trainable leaf. Setting ``requires_grad = False`` freezes it."""

    def __init__(self, data, name: str | None = None, dtype=None, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad, name=name, dtype=dtype)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    adjoints: tuple[Callable[[np.ndarray], np.ndarray] | None, ...]


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


def active_graph() -> "Graph | None":
    stack = _stack()
    return stack[-1] if stack else None


class Graph:
    """Tape of primitive applications, in topological (execution) order.

    Use as a context manager around the forward pass, then call
    :meth:`backward` exactly once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._consumed = False
        self._closed = False

    def __enter__(self) -> "Graph":
        if self._closed:
            raise GraphError("a Graph records a single forward pass; create a new one")
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise GraphError("graph context exited out of order")
        stack.pop()
        self._closed = True

    def append(self, node: Node) -> None:
        if self._consumed:
            raise GraphError("cannot record into a graph after backward")
        self.nodes.append(node)

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
        """Gradient of scalar ``loss`` w.r.t. every ``requires_grad`` leaf.

        Leaves listed in ``wrt`` that the loss does not reach get zeros.
        """
        if self._consumed:
            raise GraphError("backward already called on this graph; re-run the forward pass")
        if loss.size != 1 or loss.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        adj: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        produced: set[int] = set()
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            produced.add(id(node.output))
            g = adj.pop(id(node.output), None)
            if g is None:
                continue
            for inp, fn in zip(node.inputs, node.adjoints):
                if fn is None or not inp.requires_grad:
                    continue
                gi = fn(g)
                key = id(inp)
                if key in adj:
                    adj[key] = adj[key] + gi
                else:
                    adj[key] = gi
                leaves.setdefault(key, inp)

        grads: dict[Tensor, np.ndarray] = {}
        for key, t in leaves.items():
            if key in produced:
                continue
            grads[t] = adj[key]
        if id(loss) not in produced and loss.requires_grad:
            grads[loss] = adj.get(id(loss), np.ones((), dtype=loss.dtype))
        if wrt is not None:
            for t in wrt:
                if t not in grads:
                    grads[t] = np.zeros_like(t.data)
        return grads


def backward(graph: Graph, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    return graph.backward(loss, wrt)


# ---------------------------------------------------------------------------
# helpers

def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def _all_finite(data: np.ndarray) -> bool:
    # one reduction instead of a boolean temporary; NaN/Inf propagate through the sum
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(np.add.reduce(data, axis=None)):
            return True
    return bool(np.all(np.isfinite(data)))


def _emit(kind: str, data: np.ndarray, inputs: Sequence[Tensor], adjoints) -> Tensor:
    if not _all_finite(data):
        shapes = ", ".join(str(t.shape) for t in inputs)
        raise NonFiniteError(f"{kind}: non-finite output (input shapes {shapes})")
    out = Tensor(data)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.append(Node(kind, tuple(inputs), out, tuple(adjoints)))
    return out


def _broadcast_shape(kind: str, sa: tuple, sb: tuple) -> tuple:
    if sa == sb:
        return sa
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise ShapeError(f"{kind}: incompatible shapes {sa} and {sb} (only leading-batch broadcast is supported)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# ---------------------------------------------------------------------------
# elementwise binary

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a.shape, b.shape)
    return _emit("add", a.data + b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a.shape, b.shape)
    return _emit("sub", a.data - b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 (lambda g: _unbroadcast(g * bd, a.shape), lambda g: _unbroadcast(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", out, (a, b),
                 (lambda g: _unbroadcast(g / bd, a.shape),
                  lambda g: _unbroadcast(-g * out / bd, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim == 1 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
        ad, bd = a.data, b.data
        return _emit("matmul", ad @ bd, (a, b),
                     (lambda g: bd @ g, lambda g: np.outer(ad, g)))
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def grad_a(g):
        return _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape)

    def grad_b(g):
        if b.ndim == 2 and ad.ndim > 2:
            k, m = b.shape
            return ad.reshape(-1, k).T @ g.reshape(-1, m)
        return _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape)

    return _emit("matmul", ad @ bd, (a, b), (grad_a, grad_b))


# ---------------------------------------------------------------------------
# elementwise unary

def sin(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("sin", np.sin(xd), (x,), (lambda g: g * np.cos(xd),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _emit("relu", np.maximum(x.data, 0), (x,), (lambda g: g * pos,))


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    xd = x.data
    a = x.dtype.type(alpha)
    out = np.where(xd > 0, xd, a * xd)
    slope = np.where(xd > 0, x.dtype.type(1), np.where(xd < 0, a, x.dtype.type(0)))
    return _emit("leaky_relu", out, (x,), (lambda g: g * slope,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _emit("exp", out, (x,), (lambda g: g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _emit("log", out, (x,), (lambda g: g / xd,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("square", xd * xd, (x,), (lambda g: 2 * g * xd,))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0, xd).astype(x.dtype, copy=False)
    sig = 0.5 * (1 + np.tanh(0.5 * xd))
    return _emit("softplus", out, (x,), (lambda g: g * sig,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    keep = x.data > floor
    out = np.where(keep, x.data, x.dtype.type(floor))
    return _emit("clamp_min", out, (x,), (lambda g: g * keep,))


# ---------------------------------------------------------------------------
# reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)
    shape = x.shape

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, shape).copy()

    return _emit("sum", np.asarray(out), (x,), (grad,))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = np.mean(x.data, axis=axes, keepdims=keepdims)
    shape = x.shape
    scale = x.dtype.type(1.0 / count)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g * scale, shape).copy()

    return _emit("mean", np.asarray(out, dtype=x.dtype), (x,), (grad,))


# ---------------------------------------------------------------------------
# last-dimension structured ops

def softmax(x: Tensor) -> Tensor:
    out = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def grad(g):
        dot = np.einsum("...i,...i->...", g, out)[..., None]
        res = g - dot
        res *= out
        return res

    return _emit("softmax", out, (x,), (grad,))


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def grad(g):
        return g - np.exp(out) * g.sum(axis=-1, keepdims=True)

    return _emit("log_softmax", out, (x,), (grad,))


def layer_norm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize over the last axis (population variance), no affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    out = xc * inv

    def grad(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * out).mean(axis=-1, keepdims=True)
        return inv * (g - gm - out * gy)

    return _emit("layer_norm", out, (x,), (grad,))


def concat(xs: Sequence[Tensor]) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ, {xs[0].shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[-1] for t in xs])
    out = np.concatenate([t.data for t in xs], axis=-1)
    adjoints = [
        (lambda g, lo=lo, hi=hi: g[..., lo:hi].copy()) for lo, hi in zip(bounds[:-1], bounds[1:])
    ]
    return _emit("concat", out, xs, adjoints)


def take_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``x[..., start:stop]``."""
    n = x.shape[-1]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"take_last: bad range [{start}, {stop}) for last extent {n}")
    shape, dtype = x.shape, x.dtype

    def grad(g):
        full = np.zeros(shape, dtype=dtype)
        full[..., start:stop] = g
        return full

    return _emit("take_last", x.data[..., start:stop].copy(), (x,), (grad,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from err
    src = x.shape
    return _emit("reshape", out, (x,), (lambda g: g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 (lambda g: g.transpose(inv),))


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``x`` ``n`` times along it."""
    axis = axis % (x.ndim + 1)
    out = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _emit("expand", out, (x,), (lambda g: g.sum(axis=axis),))


# ---------------------------------------------------------------------------
# stochastic

def dropout(x: Tensor, p: float, train: bool, rng: Stream | None) -> Tensor:
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = rng.random(x.shape, dtype=x.dtype) >= p
    scale = x.dtype.type(1.0 / (1.0 - p))
    mask = keep * scale
    return _emit("dropout", x.data * mask, (x,), (lambda g: g * mask,))


def gaussian_noise(x: Tensor, std, train: bool, rng: Stream | None) -> Tensor:
    """Add N(0, std^2) noise; ``std`` may be a scalar or a constant array
    broadcastable to ``x`` (e.g. per-sample ``(B, 1, 1)``). Noise carries no
    gradient."""
    std = np.asarray(std, dtype=x.dtype)
    if not train or not np.any(std):
        return x
    if np.any(std < 0):
        raise ValueError("gaussian_noise: std must be nonnegative")
    noise = rng.normal(x.shape, dtype=x.dtype) * std
    return _emit("gaussian_noise", x.data + noise, (x,), (lambda g: g,))


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "sin": sin,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "exp": exp,
    "log": log,
    "square": square,
    "softplus": softplus,
    "clamp_min": clamp_min,
    "mean": mean,
    "sum": sum_,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "layer_norm": layer_norm,
    "concat": lambda *xs: concat(xs),
    "take_last": take_last,
    "reshape": reshape,
    "transpose": transpose,
    "expand": expand,
    "dropout": dropout,
    "gaussian_noise": gaussian_noise,
}


def apply_primitive(kind: str, *inputs, **attrs) -> Tensor:
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **attrs)


def finite_difference_check(
    f: Callable[[], Tensor],
    x: Tensor,
    eps: float = 1e-6,
    coords: Iterable[tuple[int, ...]] | None = None,
) -> float:
    """Max relative error between the tape gradient of ``f`` w.r.t. ``x``
    and central differences.

    ``f`` takes no arguments and must read ``x`` (which is perturbed in
    place). ``coords`` restricts the sweep to a subset of indices.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    was = x.requires_grad
    x.requires_grad = True
    try:
        with Graph() as g:
            out = f()
        grads = g.backward(out, wrt=[x])
        analytic = grads[x]
    finally:
        x.requires_grad = was

    if coords is None:
        coords = np.ndindex(*x.shape)
    worst = 0.0
    for idx in coords:
        orig = x.data[idx]
        x.data[idx] = orig + eps
        fp = float(f().data)
        x.data[idx] = orig - eps
        fm = float(f().data)
        x.data[idx] = orig
        num = (fp - fm) / (2 * eps)
        a = float(analytic[idx])
        err = abs(a - num) / (abs(a) + abs(num) + 1e-12)
        worst = max(worst, err)
    return worst
