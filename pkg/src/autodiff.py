"""Reverse-mode differentiation over dense float64 arrays.

Graphs are built lazily from ``Node`` objects and evaluated on demand:

    x = leaf([1.0, 2.0])
    y = const([0.0, 0.0])
    loss = reduce_mean(square(x - y))
    evaluate(loss)                 # -> array(2.5)
    backward(loss, [x])[x.id]      # -> array([1.0, 2.0])

The op set is closed. STFT and mel projections go through ``affine`` (a framed
fixed-matrix map) so no transform-specific gradient rules exist. ``checkpoint``
wraps a sub-graph builder whose intermediates are recomputed during backward.
"""

import contextlib
import contextvars
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numpy as np
from scipy.special import expit

from src.errors import NumericalError, ShapeError

_node_ids = itertools.count()
_current_step: contextvars.ContextVar[Optional[int]] = contextvars.ContextVar(
    "autodiff_step", default=None
)

OP_KINDS = (
    "leaf", "add", "sub", "mul", "div", "scale", "matmul", "tanh", "silu",
    "sum", "mean", "square", "sqrt", "log", "abs", "affine", "checkpoint",
)


class Node:
    """One vertex of an expression graph. Leaves hold a bound value."""

    __slots__ = ("id", "op", "parents", "attrs", "value", "step", "name")

    def __init__(self, op: str, parents: tuple = (), attrs: Optional[dict] = None,
                 value: Optional[np.ndarray] = None, name: Optional[str] = None):
        if op != "leaf" and not parents:
            raise ValueError(f"op '{op}' needs at least one parent")
        self.id = next(_node_ids)
        self.op = op
        self.parents = parents
        self.attrs = attrs or {}
        self.value = value
        self.step = _current_step.get()
        self.name = name

    @property
    def shape(self) -> tuple:
        if self.value is None:
            raise ValueError("node has not been evaluated")
        return self.value.shape

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(_lift(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        return f"Node(id={self.id}, op={self.op}, shape={shape})"


GradientMap = dict[int, np.ndarray]


@dataclass
class FiniteDifferenceResult:
    max_rel_error: float
    checked: int
    excluded: list[int] = field(default_factory=list)


@contextlib.contextmanager
def step_scope(t: int):
    """Tag every node built inside the block with reverse step ``t``."""
    token = _current_step.set(t)
    try:
        yield
    finally:
        _current_step.reset(token)


# ── construction ──

def _as_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


def leaf(value, name: Optional[str] = None) -> Node:
    return Node("leaf", value=_as_array(value), name=name)


def const(value) -> Node:
    return Node("leaf", value=_as_array(value), name="const")


def bind(node: Node, value) -> None:
    """Rebind a leaf to a fresh array. The previous array is not touched."""
    if node.op != "leaf":
        raise ValueError("only leaves can be bound")
    node.value = _as_array(value)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def add(a: Node, b: Node) -> Node:
    return Node("add", (a, b))


def sub(a: Node, b: Node) -> Node:
    return Node("sub", (a, b))


def mul(a: Node, b: Node) -> Node:
    return Node("mul", (a, b))


def div(a: Node, b: Node) -> Node:
    return Node("div", (a, b))


def scale(a: Node, c: float) -> Node:
    return Node("scale", (a,), {"c": float(c)})


def matmul(a: Node, b: Node) -> Node:
    return Node("matmul", (a, b))


def tanh(a: Node) -> Node:
    return Node("tanh", (a,))


def silu(a: Node) -> Node:
    return Node("silu", (a,))


def reduce_sum(a: Node) -> Node:
    return Node("sum", (a,))


def reduce_mean(a: Node) -> Node:
    return Node("mean", (a,))


def square(a: Node) -> Node:
    return Node("square", (a,))


def sqrt(a: Node) -> Node:
    return Node("sqrt", (a,))


def log(a: Node) -> Node:
    return Node("log", (a,))


def absolute(a: Node) -> Node:
    return Node("abs", (a,))


def affine(a: Node, matrix: np.ndarray, offset: Optional[np.ndarray] = None,
           frame: Optional[tuple[int, int]] = None) -> Node:
    """``frames(a) @ matrix + offset``; ``frame=(length, hop)`` frames a 1-D input."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if offset is not None:
        offset = np.asarray(offset, dtype=np.float64)
    return Node("affine", (a,), {"matrix": matrix, "offset": offset, "frame": frame})


def checkpoint(fn: Callable[[Node], Node], a: Node) -> Node:
    """Apply ``fn`` to ``a`` without retaining its intermediates."""
    return Node("checkpoint", (a,), {"fn": fn})


# ── forward rules ──

def _check_binary(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim == 2 and b.shape[1] == a.shape[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _frames(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    if x.ndim != 1:
        raise ShapeError(f"affine framing needs a 1-D input, got {x.shape}")
    if x.shape[0] < length:
        raise ShapeError(f"affine framing: input length {x.shape[0]} < frame {length}")
    return np.lib.stride_tricks.sliding_window_view(x, length)[::hop].copy()


def _forward_affine(x: np.ndarray, attrs: dict) -> np.ndarray:
    matrix, offset, frame = attrs["matrix"], attrs["offset"], attrs["frame"]
    rows = _frames(x, *frame) if frame else x
    if rows.shape[-1] != matrix.shape[0]:
        raise ShapeError(f"affine: input width {rows.shape[-1]} vs matrix {matrix.shape}")
    out = rows @ matrix
    return out + offset if offset is not None else out


def _forward_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    return a @ b


def _forward(node: Node, vals: list[np.ndarray]) -> np.ndarray:
    op = node.op
    if op in ("add", "sub", "mul", "div"):
        _check_binary(op, vals[0], vals[1])
        a, b = vals
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b
    if op == "scale":
        return node.attrs["c"] * vals[0]
    if op == "matmul":
        return _forward_matmul(*vals)
    if op == "tanh":
        return np.tanh(vals[0])
    if op == "silu":
        return vals[0] * expit(vals[0])
    if op == "sum":
        return np.array(np.sum(vals[0]))
    if op == "mean":
        return np.array(np.mean(vals[0]))
    if op == "square":
        return np.square(vals[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        if op == "sqrt":
            return np.sqrt(vals[0])
        if op == "log":
            return np.log(vals[0])
    if op == "abs":
        return np.abs(vals[0])
    if op == "affine":
        return _forward_affine(vals[0], node.attrs)
    if op == "checkpoint":
        inner_in = leaf(vals[0])
        return evaluate(node.attrs["fn"](inner_in))
    raise ValueError(f"unknown op kind '{op}'")


# ── backward rules ──

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.array(np.sum(grad))
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


def _backward_matmul(g, a, b, need):
    a2 = a if a.ndim == 2 else a[None, :]
    b2 = b if b.ndim == 2 else b[:, None]
    g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
    ga = (g2 @ b2.T).reshape(a.shape) if need[0] else None
    gb = (a2.T @ g2).reshape(b.shape) if need[1] else None
    return ga, gb


def _backward_affine(g, x, attrs):
    matrix, frame = attrs["matrix"], attrs["frame"]
    g_rows = g @ matrix.T
    if not frame:
        return g_rows
    length, hop = frame
    out = np.zeros_like(x)
    starts = np.arange(g_rows.shape[0]) * hop
    np.add.at(out, starts[:, None] + np.arange(length)[None, :], g_rows)
    return out


def _backward(node: Node, g: np.ndarray, vals: list[np.ndarray], need: tuple) -> tuple:
    op, out = node.op, node.value
    if op in ("add", "sub", "mul", "div"):
        a, b = vals
        if op == "add":
            ga, gb = g, g
        elif op == "sub":
            ga, gb = g, -g
        elif op == "mul":
            ga, gb = g * b, g * a
        else:
            ga, gb = g / b, -g * a / (b * b)
        return (_unbroadcast(ga, a.shape) if need[0] else None,
                _unbroadcast(gb, b.shape) if need[1] else None)
    x = vals[0]
    if op == "scale":
        return (node.attrs["c"] * g,)
    if op == "matmul":
        return _backward_matmul(g, vals[0], vals[1], need)
    if op == "tanh":
        return (g * (1.0 - out * out),)
    if op == "silu":
        s = expit(x)
        return (g * (s + x * s * (1.0 - s)),)
    if op == "sum":
        return (np.full_like(x, g),)
    if op == "mean":
        return (np.full_like(x, g / x.size),)
    if op == "square":
        return (2.0 * x * g,)
    with np.errstate(divide="ignore", invalid="ignore"):
        if op == "sqrt":
            return (g * 0.5 / out,)
        if op == "log":
            return (g / x,)
    if op == "abs":
        return (g * np.sign(x),)
    if op == "affine":
        return (_backward_affine(g, x, node.attrs),)
    if op == "checkpoint":
        inner_in = leaf(x)
        inner_out = node.attrs["fn"](inner_in)
        evaluate(inner_out)
        return (_backprop(inner_out, g, {inner_in.id})[inner_in.id],)
    raise ValueError(f"unknown op kind '{op}'")


# ── traversal ──

def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.id not in seen:
                stack.append((parent, False))
    return order


def _raise_non_finite(node: Node, what: str) -> None:
    raise NumericalError(f"non-finite {what} produced by '{node.op}'", op=node.op, step=node.step)


def evaluate(root: Node) -> np.ndarray:
    """Compute the forward value of ``root``, caching every intermediate."""
    for node in _topo_order(root):
        if node.op == "leaf":
            if node.value is None:
                raise ValueError(f"leaf {node.id} is not bound")
            if not np.all(np.isfinite(node.value)):
                _raise_non_finite(node, "leaf value")
            continue
        value = _forward(node, [p.value for p in node.parents])
        if not np.all(np.isfinite(value)):
            _raise_non_finite(node, "value")
        node.value = value
    return root.value


def _backprop(root: Node, seed: np.ndarray, wanted: set[int],
              check_finite: bool = True) -> GradientMap:
    order = _topo_order(root)
    relevant: set[int] = set()
    for node in order:
        if node.id in wanted or any(p.id in relevant for p in node.parents):
            relevant.add(node.id)
    missing = wanted - {n.id for n in order}
    if missing:
        raise ValueError(f"leaves not in graph: {sorted(missing)}")

    grads: dict[int, np.ndarray] = {root.id: np.broadcast_to(seed, root.value.shape).astype(np.float64)}
    for node in reversed(order):
        g = grads.get(node.id)
        if g is None or node.op == "leaf":
            continue
        need = tuple(p.id in relevant for p in node.parents)
        if not any(need):
            continue
        parent_grads = _backward(node, g, [p.value for p in node.parents], need)
        for parent, pg, needed in zip(node.parents, parent_grads, need):
            if not needed or pg is None:
                continue
            if check_finite and not np.all(np.isfinite(pg)):
                _raise_non_finite(node, "gradient")
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    by_id = {n.id: n for n in order}
    return {
        leaf_id: grads.get(leaf_id, np.zeros_like(by_id[leaf_id].value))
        for leaf_id in wanted
    }


def backward(root: Node, wrt: Iterable[Union[Node, int]]) -> GradientMap:
    """Exact gradients of a scalar ``root`` with respect to the requested leaves."""
    if root.value is None:
        raise ValueError("evaluate(root) must run before backward")
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.value.shape}")
    wanted = {w.id if isinstance(w, Node) else int(w) for w in wrt}
    return _backprop(root, np.ones(root.value.shape), wanted)


def value_and_grad(root: Node, wrt: Node) -> tuple[float, np.ndarray]:
    value = evaluate(root)
    return float(value), backward(root, [wrt])[wrt.id]


def finite_difference_check(root: Node, wrt: Node, step: float = 1e-5,
                            floor: float = 1e-12) -> FiniteDifferenceResult:
    """Compare the analytic gradient against central differences coordinate by coordinate.

    Coordinates where either probe leaves the op domain, or where the analytic
    derivative is singular, are reported in ``excluded`` and skipped.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    evaluate(root)
    analytic = _backprop(root, np.ones(root.value.shape), {wrt.id}, check_finite=False)[wrt.id]
    base = wrt.value
    worst, checked, excluded = 0.0, 0, []
    try:
        for i in range(base.size):
            if not np.isfinite(analytic.flat[i]):
                excluded.append(i)
                continue
            probes = []
            for sign in (1.0, -1.0):
                shifted = base.copy()
                shifted.flat[i] += sign * step
                bind(wrt, shifted)
                try:
                    probes.append(float(evaluate(root)))
                except NumericalError:
                    break
            if len(probes) < 2:
                excluded.append(i)
                continue
            central = (probes[0] - probes[1]) / (2.0 * step)
            a = float(analytic.flat[i])
            worst = max(worst, abs(a - central) / (abs(a) + abs(central) + floor))
            checked += 1
    finally:
        bind(wrt, base)
        evaluate(root)
    return FiniteDifferenceResult(max_rel_error=worst, checked=checked, excluded=excluded)
