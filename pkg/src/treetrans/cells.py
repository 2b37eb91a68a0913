"""TreeLSTM cells (top-down, Child-Sum, N-ary) and the tree encoder.

All cells share the gate layout::

    r = tanh(W_r x + U_r ctx + b_r)
    i, o, f = sigmoid(W_* x + U_* ctx + b_*)
    c = i * r + sum(f_k * c_k)
    h = o * tanh(c)

and differ only in what ``ctx`` is: the parent's hidden state (top-down),
the sum of the children's (Child-Sum), or position-specific matrices over
each child slot (N-ary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .tree import BOTTOM_UP, TOP_DOWN, NodeLabel, Tree, schedule

GATES = ("r", "i", "o", "f")


class DirectionMismatch(ValueError):
    pass


class ArityExceeded(ValueError):
    pass


@dataclass
class NodeState:
    h: Tensor
    c: Tensor
    node: int | None = None


def zero_state(hidden: int, node: int | None = None) -> NodeState:
    return NodeState(ag.zeros(hidden), ag.zeros(hidden), node)


class CellParams:
    """Named parameter bundle; subclasses fill ``self.params`` in a fixed order."""

    kind = ""
    direction = ""

    def __init__(self, input_dim: int, hidden: int):
        self.input_dim = input_dim
        self.hidden = hidden
        self.params: dict[str, Parameter] = {}

    def _add(self, name, shape, rng):
        if rng is None:
            value = np.zeros(shape)
        elif name.startswith("b_"):
            value = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(self.hidden)
            value = rng.uniform(-bound, bound, size=shape)
        self.params[name] = Parameter(f"{self.kind}.{name}", value)

    def __getitem__(self, name) -> Parameter:
        return self.params[name]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def _init_shared(self, rng):
        H, d = self.hidden, self.input_dim
        for g in GATES:
            self._add(f"W_{g}", (H, d), rng)

    def _init_biases(self, rng):
        for g in GATES:
            self._add(f"b_{g}", (self.hidden, 1), rng)


class TDCellParams(CellParams):
    kind = "td"
    direction = TOP_DOWN

    def __init__(self, input_dim, hidden, rng=None):
        super().__init__(input_dim, hidden)
        self._init_shared(rng)
        for g in GATES:
            self._add(f"U_{g}", (hidden, hidden), rng)
        self._init_biases(rng)


class ChildSumCellParams(CellParams):
    kind = "childsum"
    direction = BOTTOM_UP

    def __init__(self, input_dim, hidden, rng=None):
        super().__init__(input_dim, hidden)
        self._init_shared(rng)
        for g in GATES:
            self._add(f"U_{g}", (hidden, hidden), rng)
        self._init_biases(rng)


class NaryCellParams(CellParams):
    kind = "nary"
    direction = BOTTOM_UP

    def __init__(self, input_dim, hidden, arity, rng=None):
        super().__init__(input_dim, hidden)
        if arity < 1:
            raise ValueError("arity must be positive")
        self.arity = arity
        self._init_shared(rng)
        for g in ("r", "i", "o"):
            for l in range(1, arity + 1):
                self._add(f"U_{g}_{l}", (hidden, hidden), rng)
        # one matrix per (forget gate k, child slot l) pair
        for k in range(1, arity + 1):
            for l in range(1, arity + 1):
                self._add(f"U_f_{k}_{l}", (hidden, hidden), rng)
        self._init_biases(rng)


def make_cell(kind: str, input_dim: int, hidden: int, rng=None, arity: int | None = None) -> CellParams:
    if kind == "td":
        return TDCellParams(input_dim, hidden, rng)
    if kind == "childsum":
        return ChildSumCellParams(input_dim, hidden, rng)
    if kind == "nary":
        if arity is None:
            raise ValueError("the N-ary cell needs the maximum out-degree")
        return NaryCellParams(input_dim, hidden, arity, rng)
    raise ValueError(f"unknown cell {kind!r}")


def _check_input(p: CellParams, x: Tensor):
    if x.shape != (p.input_dim, 1):
        raise ag.ShapeMismatch("cell input", (p.input_dim, 1), x.shape)


def _check_state(p: CellParams, s: NodeState):
    if s.h.shape != (p.hidden, 1) or s.c.shape != (p.hidden, 1):
        raise ag.ShapeMismatch("cell state", (p.hidden, 1), s.h.shape)


def _finish(i, r, o, forget_terms, node):
    c = ag.mul(i, r)
    if forget_terms:
        c = ag.sum_list([c] + [ag.mul(f, ck) for f, ck in forget_terms])
    h = ag.mul(o, ag.tanh(c))
    return NodeState(h, c, node)


def td_cell(p: TDCellParams, x: Tensor, parent: NodeState | None, node=None) -> NodeState:
    _check_input(p, x)
    if parent is None:
        parent = zero_state(p.hidden)
    _check_state(p, parent)
    hp = parent.h

    def pre(g):
        return ag.affine(p[f"b_{g}"], [(p[f"W_{g}"], x), (p[f"U_{g}"], hp)])

    r = ag.tanh(pre("r"))
    i = ag.sigmoid(pre("i"))
    o = ag.sigmoid(pre("o"))
    f = ag.sigmoid(pre("f"))
    return _finish(i, r, o, [(f, parent.c)], node)


def _canonical(children: Sequence[NodeState]) -> list[NodeState]:
    # ascending node id; unlabeled states keep list order after labeled ones
    keyed = [(s.node is None, s.node if s.node is not None else 0, k) for k, s in enumerate(children)]
    return [children[k] for *_, k in sorted(keyed)]


def childsum_cell(p: ChildSumCellParams, x: Tensor, children: Sequence[NodeState], node=None) -> NodeState:
    _check_input(p, x)
    children = _canonical(children)
    for s in children:
        _check_state(p, s)
    hsum = ag.sum_list([s.h for s in children], (p.hidden, 1))

    def pre(g, ctx):
        return ag.affine(p[f"b_{g}"], [(p[f"W_{g}"], x), (p[f"U_{g}"], ctx)])

    r = ag.tanh(pre("r", hsum))
    i = ag.sigmoid(pre("i", hsum))
    o = ag.sigmoid(pre("o", hsum))
    forget = [(ag.sigmoid(pre("f", s.h)), s.c) for s in children]
    return _finish(i, r, o, forget, node)


def nary_cell(p: NaryCellParams, x: Tensor, children: Sequence[NodeState | None], node=None) -> NodeState:
    """``children`` is positional; ``None`` marks an empty slot.

    Empty slots contribute nothing, which is the same as a zero state.
    """
    _check_input(p, x)
    if len(children) > p.arity:
        raise ArityExceeded(f"{len(children)} children for arity {p.arity}")
    slots = [(l, s) for l, s in enumerate(children, start=1) if s is not None]
    for _, s in slots:
        _check_state(p, s)

    def pre(g):
        terms = [(p[f"W_{g}"], x)] + [(p[f"U_{g}_{l}"], s.h) for l, s in slots]
        return ag.affine(p[f"b_{g}"], terms)

    r = ag.tanh(pre("r"))
    i = ag.sigmoid(pre("i"))
    o = ag.sigmoid(pre("o"))
    forget = []
    for k, sk in slots:
        terms = [(p["W_f"], x)] + [(p[f"U_f_{k}_{l}"], s.h) for l, s in slots]
        forget.append((ag.sigmoid(ag.affine(p["b_f"], terms)), sk.c))
    return _finish(i, r, o, forget, node)


def encode(
    tree: Tree,
    cell: CellParams,
    input_map: Callable[[int, NodeLabel], Tensor],
    direction: str | None = None,
) -> dict[int, NodeState]:
    """Unfold ``cell`` over ``tree`` and return every node's state.

    ``input_map(node_id, label)`` produces the input vector of a node.
    """
    if direction is None:
        direction = cell.direction
    if direction != cell.direction:
        raise DirectionMismatch(f"{cell.kind} cells run {cell.direction}, not {direction}")
    if isinstance(cell, NaryCellParams) and tree.max_outdegree > cell.arity:
        raise ArityExceeded(f"tree out-degree {tree.max_outdegree} exceeds arity {cell.arity}")

    states: dict[int, NodeState] = {}
    for u in schedule(tree, direction):
        x = input_map(u, tree.labels[u])
        if isinstance(cell, TDCellParams):
            pa = tree.parent[u]
            states[u] = td_cell(cell, x, states[pa] if pa is not None else None, node=u)
        elif isinstance(cell, ChildSumCellParams):
            states[u] = childsum_cell(cell, x, [states[v] for v in tree.children[u]], node=u)
        else:
            states[u] = nary_cell(cell, x, [states[v] for v in tree.children[u]], node=u)
    return states
