"""Reverse-mode differentiation over dynamically built graphs.

Every value is a column vector or a matrix held as a 2-D float64 array
(extended precision can be switched on for finite-difference oracles).
A graph is built per tree and thrown away after the update; only
:class:`Parameter` objects persist, and their ``grad`` accumulates
across ``backward`` calls until reset.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_faults: set[str] = set()
_dtype = np.float64


class ShapeMismatch(ValueError):
    def __init__(self, op, expected, got):
        super().__init__(f"{op}: expected shape {expected}, got {got}")
        self.expected = expected
        self.got = got


class NonScalarLoss(ValueError):
    pass


class NonFiniteValue(ValueError):
    pass


class Tensor:
    """A graph node: forward value plus the rule mapping its adjoint to its operands'."""

    __slots__ = ("value", "parents", "rule", "op", "id")

    def __init__(self, value, parents=(), rule=None, op="const"):
        value = np.asarray(value, dtype=_dtype)
        if value.ndim == 1:
            value = value.reshape(-1, 1)
        elif value.ndim == 0:
            value = value.reshape(1, 1)
        if not np.isfinite(value).all():
            raise NonFiniteValue(f"{op} produced a non-finite value")
        self.value = value
        self.parents = parents
        self.rule = rule
        self.op = op
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"


class Parameter(Tensor):
    """A trainable leaf with a named gradient accumulator."""

    __slots__ = ("name", "grad", "_value")

    def __init__(self, name: str, value):
        super().__init__(value, op="param")
        self.name = name
        self.grad = np.zeros_like(self._value)

    @property
    def value(self) -> np.ndarray:
        # storage stays float64; extended-precision graphs read a widened copy
        if _dtype is np.float64:
            return self._value
        return self._value.astype(_dtype)

    @value.setter
    def value(self, v):
        self._value = np.asarray(v, dtype=np.float64)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def constant(value) -> Tensor:
    return Tensor(value)


def zeros(n: int) -> Tensor:
    return Tensor(np.zeros((n, 1)))


@contextlib.contextmanager
def inject_fault(op: str):
    """Flip the sign of ``op``'s backward rule; negative-control hook for gradient checks."""
    _faults.add(op)
    try:
        yield
    finally:
        _faults.discard(op)


@contextlib.contextmanager
def extended_precision():
    """Build graph values in ``np.longdouble`` (80-bit on x86) inside the block."""
    global _dtype
    saved = _dtype
    _dtype = np.longdouble
    try:
        yield
    finally:
        _dtype = saved


def _rule(op, fn):
    if op in _faults:
        return lambda g: [-x for x in fn(g)]
    return fn


def _check_vec(op, t: Tensor, n=None):
    if t.value.shape[1] != 1 or (n is not None and t.value.shape[0] != n):
        raise ShapeMismatch(op, (n if n is not None else "n", 1), t.value.shape)


def matvec(W: Tensor, x: Tensor) -> Tensor:
    if W.value.shape[1] != x.value.shape[0] or x.value.shape[1] != 1:
        raise ShapeMismatch("matvec", (W.value.shape[1], 1), x.value.shape)
    Wv, xv = W.value, x.value
    return Tensor(Wv @ xv, (W, x), _rule("matvec", lambda g: [g @ xv.T, Wv.T @ g]), "matvec")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch("add", a.value.shape, b.value.shape)
    return Tensor(a.value + b.value, (a, b), _rule("add", lambda g: [g, g]), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch("sub", a.value.shape, b.value.shape)
    return Tensor(a.value - b.value, (a, b), _rule("sub", lambda g: [g, -g]), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    if a.value.shape != b.value.shape:
        raise ShapeMismatch("mul", a.value.shape, b.value.shape)
    av, bv = a.value, b.value
    return Tensor(av * bv, (a, b), _rule("mul", lambda g: [g * bv, g * av]), "mul")


def scale(a: Tensor, k: float) -> Tensor:
    return Tensor(a.value * k, (a,), _rule("scale", lambda g: [g * k]), "scale")


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so large |x| never overflows exp
    x = a.value
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(s, (a,), _rule("sigmoid", lambda g: [g * s * (1.0 - s)]), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return Tensor(t, (a,), _rule("tanh", lambda g: [g * (1.0 - t * t)]), "tanh")


def sum_list(items: Sequence[Tensor], shape=None) -> Tensor:
    """Left-to-right sum; an empty list gives zeros of ``shape``."""
    if not items:
        if shape is None:
            raise ShapeMismatch("sum_list", "declared shape for empty list", None)
        return Tensor(np.zeros(shape))
    shape0 = items[0].value.shape
    acc = np.array(items[0].value, dtype=_dtype)
    for t in items[1:]:
        if t.value.shape != shape0:
            raise ShapeMismatch("sum_list", shape0, t.value.shape)
        acc += t.value
    k = len(items)
    return Tensor(acc, tuple(items), _rule("sum_list", lambda g: [g] * k), "sum_list")


def affine(bias: Tensor | None, terms: Sequence[tuple[Tensor, Tensor]]) -> Tensor:
    """``bias + sum_k W_k @ x_k`` as a single graph node, summed in the given order."""
    acc = None
    parents = []
    for W, x in terms:
        if W.value.shape[1] != x.value.shape[0] or x.value.shape[1] != 1:
            raise ShapeMismatch("affine", (W.value.shape[1], 1), x.value.shape)
        y = W.value @ x.value
        acc = y if acc is None else acc + y
        parents.extend((W, x))
    if bias is not None:
        if acc is not None and bias.value.shape != acc.shape:
            raise ShapeMismatch("affine", acc.shape, bias.value.shape)
        acc = bias.value.copy() if acc is None else acc + bias.value
        parents.append(bias)
    if acc is None:
        raise ShapeMismatch("affine", "at least one term", None)
    vals = [(W.value, x.value) for W, x in terms]
    has_bias = bias is not None

    def back(g):
        out = []
        for Wv, xv in vals:
            out.append(g @ xv.T)
            out.append(Wv.T @ g)
        if has_bias:
            out.append(g)
        return out

    return Tensor(acc, tuple(parents), _rule("affine", back), "affine")


def log_softmax(a: Tensor) -> Tensor:
    _check_vec("log_softmax", a)
    x = a.value
    m = x.max()
    lse = m + np.log(np.exp(x - m).sum())
    y = x - lse
    p = np.exp(y)
    return Tensor(y, (a,), _rule("log_softmax", lambda g: [g - p * g.sum()]), "log_softmax")


def concat(items: Sequence[Tensor]) -> Tensor:
    for t in items:
        _check_vec("concat", t)
    sizes = [t.value.shape[0] for t in items]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor(
        np.vstack([t.value for t in items]),
        tuple(items),
        _rule("concat", lambda g: np.split(g, cuts)),
        "concat",
    )


def pick(a: Tensor, index: int) -> Tensor:
    """Entry ``index`` of a vector as a scalar."""
    _check_vec("pick", a)
    n = a.value.shape[0]

    def back(g):
        out = np.zeros((n, 1))
        out[index, 0] = g[0, 0]
        return [out]

    return Tensor(a.value[index, 0], (a,), _rule("pick", back), "pick")


def sum_entries(a: Tensor) -> Tensor:
    shp = a.value.shape
    return Tensor(a.value.sum(), (a,), _rule("sum_entries", lambda g: [np.full(shp, g[0, 0])]), "sum_entries")


def sqnorm(a: Tensor) -> Tensor:
    """Sum of squared entries."""
    av = a.value
    return Tensor((av * av).sum(), (a,), _rule("sqnorm", lambda g: [2.0 * g[0, 0] * av]), "sqnorm")


def mean_list(items: Sequence[Tensor]) -> Tensor:
    return scale(sum_list(items), 1.0 / len(items))


def bce_with_logits(z: Tensor, targets) -> Tensor:
    """Summed binary cross-entropy of ``sigmoid(z)`` against 0/1 targets.

    Computed as ``softplus(z) - y*z`` which equals
    ``-[y ln p + (1-y) ln(1-p)]`` without the log(0) hazard.
    """
    _check_vec("bce_with_logits", z)
    y = np.asarray(targets, dtype=np.float64).reshape(z.value.shape)
    x = z.value
    softplus = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor((softplus - y * x).sum(), (z,), _rule("bce", lambda g: [g[0, 0] * (s - y)]), "bce")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``."""
    if loss.value.shape != (1, 1):
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.id in nodes:
            continue
        nodes[t.id] = t
        stack.extend(t.parents)
    # creation order is a topological order
    adj = {loss.id: np.ones((1, 1))}
    for tid in sorted(nodes, reverse=True):
        g = adj.pop(tid, None)
        if g is None:
            continue
        t = nodes[tid]
        if isinstance(t, Parameter):
            t.grad += g
            continue
        if t.rule is None:
            continue
        for p, pg in zip(t.parents, t.rule(g)):
            prev = adj.get(p.id)
            adj[p.id] = pg if prev is None else prev + pg


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)

    @property
    def worst(self) -> tuple[str, float]:
        if not self.max_rel_error:
            return ("", 0.0)
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]

    @property
    def passed(self) -> bool:
        return self.worst[1] < self.tolerance


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def finite_difference_check(
    build: Callable[[], Tensor],
    params: Iterable[Parameter],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backprop gradients with central differences entry by entry.

    ``build`` must rebuild the loss graph from the current parameter values
    and be deterministic. The analytic pass runs in float64; the perturbed
    forward passes run in extended precision and divide by the perturbation
    actually applied, so roundoff in the oracle stays far below the
    tolerance even for gradient entries near the 1e-8 floor.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(build())
    report = GradCheckReport(step, tolerance)
    for p in params:
        analytic = p.grad.copy()
        numeric = np.zeros_like(analytic)
        flat = p._value.reshape(-1)
        with extended_precision():
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + step
                hi = np.longdouble(flat[i])
                up = build().value[0, 0]
                flat[i] = old - step
                lo = np.longdouble(flat[i])
                down = build().value[0, 0]
                flat[i] = old
                numeric.reshape(-1)[i] = (up - down) / (hi - lo)
        err = relative_error(analytic, numeric)
        report.max_rel_error[p.name] = float(err.max()) if err.size else 0.0
        p.zero_grad()
    return report


def save_parameters(params: Iterable[Parameter], fh, header: str | None = None) -> None:
    """Text checkpoint: one line per parameter, values as hex floats (bit-exact)."""
    if header is not None:
        fh.write(f"#{header}\n")
    for p in params:
        r, c = p.value.shape
        vals = " ".join(float(v).hex() for v in p.value.reshape(-1))
        fh.write(f"{p.name}\t{r}\t{c}\t{vals}\n")


def load_parameters(fh) -> tuple[str | None, dict[str, np.ndarray]]:
    header = None
    out = {}
    for line in fh:
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("#"):
            header = line[1:]
            continue
        name, r, c, vals = line.split("\t")
        arr = np.array([float.fromhex(v) for v in vals.split()], dtype=np.float64)
        out[name] = arr.reshape(int(r), int(c))
    return header, out
