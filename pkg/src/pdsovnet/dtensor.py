"""Dense float64 arrays with a tape-based reverse-mode differentiator.

Values are numpy arrays.  Every op is dispatched through :func:`apply`, which
computes the forward value and, when a :class:`Graph` is active and any input
requires a gradient, appends a node to the tape.  :func:`backward` walks the
tape once in reverse recording order, which is a valid reverse topological
order because nodes are only appended after their inputs exist.

Only the op kinds the model needs are provided; see ``OPS``.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Input shapes do not conform to an op's contraction/broadcast rules."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class DomainError(ValueError):
    """An op was evaluated outside its guarded domain (div by 0, log/sqrt of bad values)."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class Tensor:
    """A float64 array plus an optional handle into the active graph."""

    __slots__ = ("data", "requires_grad", "node_id", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name

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
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return apply("add", [self, other])

    def __radd__(self, other):
        return apply("add", [other, self])

    def __sub__(self, other):
        return apply("sub", [self, other])

    def __rsub__(self, other):
        return apply("sub", [other, self])

    def __mul__(self, other):
        return apply("mul", [self, other])

    def __rmul__(self, other):
        return apply("mul", [other, self])

    def __truediv__(self, other):
        return apply("div", [self, other])

    def __rtruediv__(self, other):
        return apply("div", [other, self])

    def __neg__(self):
        return apply("mul", [self, -1.0])

    def __matmul__(self, other):
        return apply("matmul", [self, other])

    def __pow__(self, p: float):
        return apply("power", [self], {"p": float(p)})

    def __getitem__(self, index):
        return apply("slice", [self], {"index": index})

    @property
    def T(self):
        return apply("transpose", [self])

    def transpose(self, *axes):
        return apply("transpose", [self], {"axes": axes or None})

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", [self], {"shape": shape})

    def sum(self, axis=None, keepdims: bool = False):
        return apply("sum", [self], {"axis": axis, "keepdims": keepdims})

    def mean(self, axis=None, keepdims: bool = False):
        return apply("mean", [self], {"axis": axis, "keepdims": keepdims})


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: list[Tensor]
    output_id: int
    output_shape: tuple[int, ...]
    ctx: dict


@dataclass
class Graph:
    """Dynamic tape.  Use as a context manager around one forward pass."""

    nodes: list[Node] = field(default_factory=list)
    _prev: "Graph | None" = field(default=None, repr=False)

    def __enter__(self) -> "Graph":
        self._prev = getattr(_local, "graph", None)
        _local.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _local.graph = self._prev
        self._prev = None

    def backward(self, loss: Tensor) -> "Gradients":
        return _run_backward(self, loss)


class no_grad:
    """Suspend recording (e.g. for evaluation)."""

    def __enter__(self):
        self._prev = getattr(_local, "graph", None)
        _local.graph = None

    def __exit__(self, *exc):
        _local.graph = self._prev


def active_graph() -> Graph | None:
    return getattr(_local, "graph", None)


class Gradients:
    """Gradient map keyed by node id; lookups of unreachable tensors give zeros."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.node_id)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t.node_id in self._grads

    def __len__(self) -> int:
        return len(self._grads)


def backward(loss: Tensor, graph: Graph | None = None) -> Gradients:
    graph = graph or active_graph()
    if graph is None:
        raise RuntimeError("backward: no active graph")
    return _run_backward(graph, loss)


def _run_backward(graph: Graph, loss: Tensor) -> Gradients:
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        # every consumer of this output was recorded later, so its gradient is final
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        in_grads = OPS[node.kind].backward(node.ctx, g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.data.shape:
                raise ShapeError(node.kind, f"gradient shape {gi.shape} != input shape {t.data.shape}")
            prev = grads.get(t.node_id)
            grads[t.node_id] = gi if prev is None else prev + gi
    return Gradients(grads)


# ---------------------------------------------------------------------------
# op registry


@dataclass(frozen=True)
class Op:
    forward: Callable  # (values, attrs) -> (out, ctx)
    backward: Callable  # (ctx, grad_out) -> list of input grads (or None)


OPS: dict[str, Op] = {}


def _register(name):
    def deco(cls):
        OPS[name] = Op(cls.forward, cls.backward)
        return cls

    return deco


def apply(kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Evaluate op ``kind`` on ``inputs`` and record it if a graph is active."""
    op = OPS.get(kind)
    if op is None:
        raise KeyError(f"unknown op kind {kind!r}")
    tensors = [as_tensor(x) for x in inputs]
    attrs = attrs or {}
    out_val, ctx = op.forward([t.data for t in tensors], attrs)
    needs = any(t.requires_grad for t in tensors)
    graph = active_graph()
    out = Tensor.__new__(Tensor)
    out.data = out_val
    out.node_id = next(_ids)
    out.name = None
    out.requires_grad = needs and graph is not None
    if out.requires_grad:
        ctx["needs"] = tuple(t.requires_grad for t in tensors)
        graph.nodes.append(Node(kind, tensors, out.node_id, out_val.shape, ctx))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}") from None


@_register("add")
class _Add:
    @staticmethod
    def forward(v, attrs):
        a, b = v
        _check_broadcast("add", a, b)
        return a + b, {"sa": a.shape, "sb": b.shape}

    @staticmethod
    def backward(ctx, g):
        na, nb = ctx["needs"]
        return [_unbroadcast(g, ctx["sa"]) if na else None, _unbroadcast(g, ctx["sb"]) if nb else None]


@_register("sub")
class _Sub:
    @staticmethod
    def forward(v, attrs):
        a, b = v
        _check_broadcast("sub", a, b)
        return a - b, {"sa": a.shape, "sb": b.shape}

    @staticmethod
    def backward(ctx, g):
        na, nb = ctx["needs"]
        return [_unbroadcast(g, ctx["sa"]) if na else None, _unbroadcast(-g, ctx["sb"]) if nb else None]


@_register("mul")
class _Mul:
    @staticmethod
    def forward(v, attrs):
        a, b = v
        _check_broadcast("mul", a, b)
        return a * b, {"a": a, "b": b}

    @staticmethod
    def backward(ctx, g):
        a, b = ctx["a"], ctx["b"]
        na, nb = ctx["needs"]
        return [_unbroadcast(g * b, a.shape) if na else None, _unbroadcast(g * a, b.shape) if nb else None]


@_register("div")
class _Div:
    @staticmethod
    def forward(v, attrs):
        a, b = v
        _check_broadcast("div", a, b)
        if np.any(b == 0):
            raise DomainError("div", "division by zero")
        out = a / b
        return out, {"a": a, "b": b, "out": out}

    @staticmethod
    def backward(ctx, g):
        a, b, out = ctx["a"], ctx["b"], ctx["out"]
        na, nb = ctx["needs"]
        return [_unbroadcast(g / b, a.shape) if na else None,
                _unbroadcast(-g * out / b, b.shape) if nb else None]


@_register("matmul")
class _Matmul:
    @staticmethod
    def forward(v, attrs):
        a, b = v
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul", f"operands must be at least 2-D, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", f"contraction mismatch {a.shape} @ {b.shape}")
        try:
            out = a @ b
        except ValueError:
            raise ShapeError("matmul", f"batch dims do not broadcast: {a.shape} @ {b.shape}") from None
        return out, {"a": a, "b": b}

    @staticmethod
    def backward(ctx, g):
        a, b = ctx["a"], ctx["b"]
        na, nb = ctx["needs"]
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape) if na else None
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape) if nb else None
        return [ga, gb]


@_register("transpose")
class _Transpose:
    @staticmethod
    def forward(v, attrs):
        (a,) = v
        axes = attrs.get("axes")
        if axes is None:
            if a.ndim < 2:
                raise ShapeError("transpose", f"needs rank >= 2, got {a.shape}")
            axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
        axes = tuple(axes)
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError("transpose", f"axes {axes} invalid for shape {a.shape}")
        return np.transpose(a, axes), {"inv": tuple(np.argsort(axes))}

    @staticmethod
    def backward(ctx, g):
        return [np.transpose(g, ctx["inv"])]


@_register("reshape")
class _Reshape:
    @staticmethod
    def forward(v, attrs):
        (a,) = v
        try:
            out = a.reshape(attrs["shape"])
        except ValueError:
            raise ShapeError("reshape", f"cannot reshape {a.shape} to {attrs['shape']}") from None
        return out, {"shape": a.shape}

    @staticmethod
    def backward(ctx, g):
        return [g.reshape(ctx["shape"])]


@_register("slice")
class _Slice:
    @staticmethod
    def forward(v, attrs):
        (a,) = v
        idx = attrs["index"]
        try:
            out = a[idx]
        except IndexError as e:
            raise ShapeError("slice", f"{e} for shape {a.shape}") from None
        return np.array(out), {"shape": a.shape, "index": idx}

    @staticmethod
    def backward(ctx, g):
        full = np.zeros(ctx["shape"])
        idx = ctx["index"]
        parts = idx if isinstance(idx, tuple) else (idx,)
        if any(isinstance(p, (list, np.ndarray)) for p in parts):
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return [full]


@_register("select-rows")
class _SelectRows:
    """Gather along axis 0 with an integer index array (repeats allowed)."""

    @staticmethod
    def forward(v, attrs):
        (a,) = v
        rows = np.asarray(attrs["rows"], dtype=np.int64)
        if rows.size and (rows.min() < -a.shape[0] or rows.max() >= a.shape[0]):
            raise ShapeError("select-rows", f"row index out of range for {a.shape[0]} rows")
        return a[rows], {"shape": a.shape, "rows": rows}

    @staticmethod
    def backward(ctx, g):
        full = np.zeros(ctx["shape"])
        np.add.at(full, ctx["rows"], g)
        return [full]


@_register("concat")
class _Concat:
    @staticmethod
    def forward(v, attrs):
        axis = attrs.get("axis", 0)
        try:
            out = np.concatenate(v, axis=axis)
        except ValueError as e:
            raise ShapeError("concat", f"{e}; shapes {[x.shape for x in v]}") from None
        sizes = [x.shape[axis] for x in v]
        return out, {"axis": axis, "splits": np.cumsum(sizes)[:-1]}

    @staticmethod
    def backward(ctx, g):
        return list(np.split(g, ctx["splits"], axis=ctx["axis"]))


@_register("broadcast")
class _Broadcast:
    @staticmethod
    def forward(v, attrs):
        (a,) = v
        try:
            out = np.broadcast_to(a, attrs["shape"]).copy()
        except ValueError:
            raise ShapeError("broadcast", f"cannot broadcast {a.shape} to {attrs['shape']}") from None
        return out, {"shape": a.shape}

    @staticmethod
    def backward(ctx, g):
        return [_unbroadcast(g, ctx["shape"])]


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


@_register("sum")
class _Sum:
    @staticmethod
    def forward(v, attrs):
        (a,) = v
        axis, keep = attrs.get("axis"), attrs.get("keepdims", False)
        return np.asarray(a.sum(axis=axis, keepdims=keep)), {"shape": a.shape, "axis": axis, "keep": keep}

    @staticmethod
    def backward(ctx, g):
        return [np.array(_expand_reduced(g, ctx["shape"], ctx["axis"], ctx["keep"]))]


@_register("mean")
class _Mean:
    @staticmethod
    def forward(v, attrs):
        (a,) = v
        axis, keep = attrs.get("axis"), attrs.get("keepdims", False)
        out = np.asarray(a.mean(axis=axis, keepdims=keep))
        count = a.size // max(out.size, 1) if a.size else 1
        return out, {"shape": a.shape, "axis": axis, "keep": keep, "count": count}

    @staticmethod
    def backward(ctx, g):
        return [np.array(_expand_reduced(g, ctx["shape"], ctx["axis"], ctx["keep"])) / ctx["count"]]


def _unary(name, fwd, dfdx, domain=None):
    """Register an elementwise op. ``dfdx(x, out)`` gives the local derivative."""

    class _U:
        @staticmethod
        def forward(v, attrs):
            (a,) = v
            if domain is not None:
                msg = domain(a)
                if msg:
                    raise DomainError(name, msg)
            out = fwd(a)
            return out, {"x": a, "out": out}

        @staticmethod
        def backward(ctx, g):
            return [g * dfdx(ctx["x"], ctx["out"])]

    OPS[name] = Op(_U.forward, _U.backward)


def _softplus(x):
    # log1p(exp(x)) without overflow for large x
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_unary("abs", np.abs, lambda x, o: np.sign(x))
_unary("square", np.square, lambda x, o: 2.0 * x)
_unary("sqrt", np.sqrt, lambda x, o: 0.5 / o,
       domain=lambda x: "argument must be > 0" if np.any(x <= 0) else None)
_unary("exp", np.exp, lambda x, o: o)
_unary("log", np.log, lambda x, o: 1.0 / x,
       domain=lambda x: "argument must be > 0" if np.any(x <= 0) else None)
_unary("sigmoid", _sigmoid, lambda x, o: o * (1.0 - o))
_unary("softplus", _softplus, lambda x, o: _sigmoid(x))
_unary("tanh", np.tanh, lambda x, o: 1.0 - o * o)
_unary("relu", lambda x: np.maximum(x, 0.0), lambda x, o: (x > 0).astype(np.float64))


@_register("power")
class _Power:
    @staticmethod
    def forward(v, attrs):
        (a,) = v
        p = attrs["p"]
        if p != int(p) and np.any(a < 0):
            raise DomainError("power", "non-integer power of negative value")
        if p < 0 and np.any(a == 0):
            raise DomainError("power", "negative power of zero")
        out = np.power(a, p)
        return out, {"x": a, "p": p}

    @staticmethod
    def backward(ctx, g):
        x, p = ctx["x"], ctx["p"]
        return [g * p * np.power(x, p - 1.0)]


@_register("conv1d-same")
class _Conv1dSame:
    """Stride-1 zero-padded 1-D convolution, channels last.

    x: (..., L, C_in), w: (K, C_in, C_out) with K odd -> (..., L, C_out).
    out[l, o] = sum_k sum_i x[l + k - K//2, i] * w[k, i, o]
    """

    @staticmethod
    def forward(v, attrs):
        x, w = v
        if w.ndim != 3 or x.ndim < 2 or x.shape[-1] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ShapeError("conv1d-same", f"x {x.shape} incompatible with kernel {w.shape} (need odd K, C_in match)")
        K, cin, cout = w.shape
        L = x.shape[-2]
        pad = K // 2
        widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
        xp = np.pad(x, widths)
        cols = np.concatenate([xp[..., k:k + L, :] for k in range(K)], axis=-1)
        out = cols @ w.reshape(K * cin, cout)
        return out, {"cols": cols, "w": w, "xshape": x.shape}

    @staticmethod
    def backward(ctx, g):
        cols, w = ctx["cols"], ctx["w"]
        K, cin, cout = w.shape
        xshape = ctx["xshape"]
        L = xshape[-2]
        pad = K // 2
        flat_cols = cols.reshape(-1, K * cin)
        gw = (flat_cols.T @ g.reshape(-1, cout)).reshape(K, cin, cout)
        gcols = g @ w.reshape(K * cin, cout).T
        gxp = np.zeros(xshape[:-2] + (L + 2 * pad, cin))
        for k in range(K):
            gxp[..., k:k + L, :] += gcols[..., k * cin:(k + 1) * cin]
        return [gxp[..., pad:pad + L, :], gw]


@_register("scan-linear")
class _ScanLinear:
    """First-order recurrence h_t = a_t * h_{t-1} + b_t with h_{-1} = 0.

    a and b share one shape; the recurrence runs along ``axis`` (default 1).
    Returns every state h_t.
    """

    @staticmethod
    def forward(v, attrs):
        a, b = v
        if a.shape != b.shape:
            raise ShapeError("scan-linear", f"a {a.shape} and b {b.shape} must match")
        axis = attrs.get("axis", 1) % a.ndim
        a_t = np.ascontiguousarray(np.moveaxis(a, axis, 0))
        b_t = np.ascontiguousarray(np.moveaxis(b, axis, 0))
        h = np.empty_like(b_t)
        state = np.zeros(b_t.shape[1:])
        for t in range(b_t.shape[0]):
            state = a_t[t] * state + b_t[t]
            h[t] = state
        return np.moveaxis(h, 0, axis), {"a": a_t, "h": h, "axis": axis}

    @staticmethod
    def backward(ctx, g):
        a_t, h, axis = ctx["a"], ctx["h"], ctx["axis"]
        g_t = np.ascontiguousarray(np.moveaxis(g, axis, 0))
        T = g_t.shape[0]
        lam = np.empty_like(g_t)
        acc = np.zeros(g_t.shape[1:])
        for t in range(T - 1, -1, -1):
            acc = g_t[t] + acc
            lam[t] = acc
            acc = a_t[t] * acc
        ga = np.zeros_like(lam)
        ga[1:] = lam[1:] * h[:-1]
        return [np.moveaxis(ga, 0, axis), np.moveaxis(lam, 0, axis)]


# ---------------------------------------------------------------------------
# functional helpers


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return apply("concat", list(tensors), {"axis": axis})


def broadcast_to(x, shape) -> Tensor:
    return apply("broadcast", [x], {"shape": tuple(shape)})


def select_rows(x, rows) -> Tensor:
    return apply("select-rows", [x], {"rows": rows})


def scan_linear(a, b, axis: int = 1) -> Tensor:
    return apply("scan-linear", [a, b], {"axis": axis})


def conv1d_same(x, w) -> Tensor:
    return apply("conv1d-same", [x, w])


def exp(x):
    return apply("exp", [x])


def log(x):
    return apply("log", [x])


def sqrt(x):
    return apply("sqrt", [x])


def square(x):
    return apply("square", [x])


def abs_(x):
    return apply("abs", [x])


def sigmoid(x):
    return apply("sigmoid", [x])


def softplus(x):
    return apply("softplus", [x])


def tanh(x):
    return apply("tanh", [x])


def relu(x):
    return apply("relu", [x])


def param(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def value_and_grad(f: Callable[[], Tensor], params: Iterable[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Run ``f`` under a fresh graph; return the scalar value and grads for ``params``."""
    params = list(params)
    with Graph() as g:
        loss = f()
    grads = g.backward(loss)
    return loss.item(), [grads[p] for p in params]


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max over entries of |analytic - central FD| / max(1, |central FD|).

    ``f`` must read the current ``.data`` of ``params``.  With ``max_entries``
    set, a random subset of that many entries per parameter is probed.
    A non-finite probe returns ``inf``.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    _, analytic = value_and_grad(f, params)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                fp = f().item()
                flat[i] = orig - step
                fm = f().item()
                flat[i] = orig
                fd = (fp - fm) / (2.0 * step)
                if not (math.isfinite(fd) and math.isfinite(ga.reshape(-1)[i])):
                    return math.inf
                err = abs(ga.reshape(-1)[i] - fd) / max(1.0, abs(fd))
                worst = max(worst, err)
    return worst
