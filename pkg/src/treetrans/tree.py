"""Labeled rooted ordered trees.

Trees are immutable once built. Node ids are dense integers ``1..n`` with
the root always at id 1; children keep their stored order, which is what
positional (N-ary) cells consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

BOTTOM_UP = "bottom_up"
TOP_DOWN = "top_down"


class TreeError(ValueError):
    pass


class MultipleRoots(TreeError):
    pass


class CycleDetected(TreeError):
    pass


class OutdegreeExceeded(TreeError):
    def __init__(self, node, degree, limit):
        super().__init__(f"node {node} has {degree} children (max {limit})")
        self.node = node
        self.degree = degree


class InconsistentEdges(TreeError):
    pass


class NullLabelNotAllowed(TreeError):
    pass


@dataclass(frozen=True, eq=False)
class NodeLabel:
    """A node label: dense vector, categorical symbol, or the NULL marker.

    Categorical payloads are symbols (usually strings); mapping them to
    alphabet indices is done by the input encoder.
    """

    kind: str
    value: Any = None

    @classmethod
    def dense(cls, vector) -> "NodeLabel":
        return cls("dense", np.asarray(vector, dtype=np.float64).reshape(-1))

    @classmethod
    def categorical(cls, symbol) -> "NodeLabel":
        return cls("categorical", symbol)

    @classmethod
    def null(cls) -> "NodeLabel":
        return _NULL

    @property
    def is_null(self) -> bool:
        return self.kind == "null"

    def __eq__(self, other):
        if not isinstance(other, NodeLabel) or other.kind != self.kind:
            return False
        if self.kind == "dense":
            return self.value.shape == other.value.shape and bool(np.all(self.value == other.value))
        return self.value == other.value

    def __hash__(self):
        if self.kind == "dense":
            return hash((self.kind, self.value.tobytes()))
        return hash((self.kind, self.value))

    def __repr__(self):
        if self.kind == "null":
            return "NodeLabel.null()"
        return f"NodeLabel.{self.kind}({self.value!r})"


_NULL = NodeLabel("null")


def as_label(value) -> NodeLabel:
    if isinstance(value, NodeLabel):
        return value
    if value is None:
        return _NULL
    if isinstance(value, np.ndarray):
        return NodeLabel.dense(value)
    return NodeLabel.categorical(value)


@dataclass(frozen=True)
class Skeleton:
    nodes: frozenset
    edges: tuple  # (parent, child) pairs, children in stored order

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True, eq=False)
class Tree:
    """Validated ordered tree; build through :func:`validate` or helpers."""

    parent: Mapping[int, int | None]
    children: Mapping[int, tuple]
    labels: Mapping[int, NodeLabel]
    _preorder: tuple = field(default=(), repr=False)

    root = 1

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def nodes(self) -> range:
        return range(1, self.size + 1)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in self._preorder for v in self.children[u]]

    @property
    def max_outdegree(self) -> int:
        return max(len(c) for c in self.children.values())

    def is_leaf(self, u: int) -> bool:
        return not self.children[u]

    def leaves(self) -> list[int]:
        """Leaves in left-to-right order."""
        return [u for u in self._preorder if not self.children[u]]

    def internal_nodes(self) -> list[int]:
        return [u for u in self._preorder if self.children[u]]

    def preorder(self) -> tuple:
        return self._preorder

    def depth(self, u: int) -> int:
        d = 0
        while self.parent[u] is not None:
            u = self.parent[u]
            d += 1
        return d

    def subtree(self, u: int) -> list[int]:
        out, stack = [], [u]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return out

    def relabel(self, labels: Mapping[int, Any], allow_null: bool = False) -> "Tree":
        """Same skeleton, labels replaced for the given nodes."""
        new = dict(self.labels)
        for u, lab in labels.items():
            if u not in new:
                raise InconsistentEdges(f"unknown node {u}")
            lab = as_label(lab)
            if lab.is_null and not allow_null:
                raise NullLabelNotAllowed("NULL labels are only legal in prune outputs")
            new[u] = lab
        return Tree(self.parent, self.children, new, self._preorder)

    def permute_children(self, orders: Mapping[int, Sequence[int]]) -> "Tree":
        """Reorder children lists while keeping node ids."""
        children = dict(self.children)
        for u, order in orders.items():
            if sorted(order) != sorted(children[u]):
                raise InconsistentEdges(f"order for node {u} is not a permutation")
            children[u] = tuple(order)
        return Tree(self.parent, children, self.labels, _compute_preorder(children))

    def __eq__(self, other):
        return (
            isinstance(other, Tree)
            and dict(self.children) == dict(other.children)
            and dict(self.labels) == dict(other.labels)
        )

    def __hash__(self):
        return hash(tuple(self.children[u] for u in self.nodes))


def _compute_preorder(children) -> tuple:
    out, stack = [], [1]
    while stack:
        u = stack.pop()
        out.append(u)
        stack.extend(reversed(children[u]))
    return tuple(out)


def validate(
    nodes: Iterable[Hashable],
    edges: Iterable[tuple[Hashable, Hashable]],
    labels: Mapping[Hashable, Any] | None = None,
    max_outdegree: int | None = None,
    allow_null: bool = False,
) -> Tree:
    """Check raw node/edge/label collections and build a :class:`Tree`.

    ``edges`` are (parent, child) pairs; the order in which a parent's edges
    appear is the children order. Ids are renumbered so the root is 1 and the
    remaining nodes follow ascending original id (the numbering therefore
    does not depend on sibling order).
    """
    nodes = list(nodes)
    node_set = set(nodes)
    if len(node_set) != len(nodes):
        raise InconsistentEdges("duplicate node ids")
    if not nodes:
        raise InconsistentEdges("tree has no nodes")
    labels = dict(labels or {})

    parent: dict = {}
    children: dict = {u: [] for u in nodes}
    for p, c in edges:
        if p not in node_set or c not in node_set:
            raise InconsistentEdges(f"edge ({p}, {c}) references an unknown node")
        if c in parent:
            raise InconsistentEdges(f"node {c} has more than one parent")
        if p == c:
            raise CycleDetected(f"self loop on {p}")
        parent[c] = p
        children[p].append(c)

    if max_outdegree is not None:
        for u in nodes:
            if len(children[u]) > max_outdegree:
                raise OutdegreeExceeded(u, len(children[u]), max_outdegree)

    roots = [u for u in nodes if u not in parent]
    if len(roots) > 1:
        raise MultipleRoots(f"{len(roots)} roots: {roots[:5]}")
    if not roots:
        raise CycleDetected("every node has a parent")
    root = roots[0]

    seen = {root}
    stack = [root]
    while stack:
        u = stack.pop()
        for v in children[u]:
            seen.add(v)
            stack.append(v)
    if len(seen) != len(nodes):
        raise CycleDetected("some nodes are unreachable from the root")

    rest = [u for u in nodes if u != root]
    try:
        rest.sort()
    except TypeError:
        rest.sort(key=repr)
    newid = {root: 1}
    for i, u in enumerate(rest, start=2):
        newid[u] = i

    t_parent = {newid[u]: (newid[parent[u]] if u in parent else None) for u in nodes}
    t_children = {newid[u]: tuple(newid[v] for v in children[u]) for u in nodes}
    # unlabeled nodes get the NULL marker; an explicit NULL needs allow_null
    if not allow_null and any(as_label(v).is_null for v in labels.values()):
        raise NullLabelNotAllowed("NULL labels are only legal in prune outputs")
    t_labels = {newid[u]: as_label(labels.get(u)) for u in nodes}
    return Tree(t_parent, t_children, t_labels, _compute_preorder(t_children))


def from_parents(parents: Sequence[int | None], labels: Sequence[Any] | None = None, **kw) -> Tree:
    """Build from a parent array; ``parents[i]`` is the parent of node ``i + 1``.

    Children are ordered by ascending id.
    """
    n = len(parents)
    nodes = range(1, n + 1)
    edges = [(p, i) for i, p in enumerate(parents, start=1) if p is not None]
    edges.sort()
    lab = {i: labels[i - 1] for i in nodes} if labels is not None else {i: "x" for i in nodes}
    return validate(nodes, edges, lab, **kw)


def from_nested(spec) -> Tree:
    """Build from ``(label, [child, ...])`` tuples; bare values are leaves.

    Ids follow preorder.
    """
    nodes, edges, labels = [], [], {}

    def visit(item, parent):
        nid = len(nodes) + 1
        nodes.append(nid)
        if isinstance(item, tuple):
            label, kids = item
        else:
            label, kids = item, []
        labels[nid] = label
        if parent is not None:
            edges.append((parent, nid))
        for k in kids:
            visit(k, nid)

    # iterative would be nicer but parse depths here stay small
    visit(spec, None)
    return validate(nodes, edges, labels, allow_null=True)


def skeleton(tree: Tree) -> Skeleton:
    return Skeleton(frozenset(tree.nodes), tuple(tree.edges))


def ordered_code(tree: Tree) -> str:
    """Parenthesis code of the ordered shape, labels ignored."""
    parts = []
    stack = [(1, False)]
    while stack:
        u, closing = stack.pop()
        if closing:
            parts.append(")")
            continue
        parts.append("(")
        stack.append((u, True))
        for v in reversed(tree.children[u]):
            stack.append((v, False))
    return "".join(parts)


def canonical_code(tree: Tree, u: int = 1) -> str:
    """Unordered canonical code: children codes sorted at every node."""
    codes: dict[int, str] = {}
    for v in reversed(tree.preorder()):
        if v in codes:
            continue
        codes[v] = "(" + "".join(sorted(codes[c] for c in tree.children[v])) + ")"
    return codes[u]


def is_isomorphic(a: Tree, b: Tree, ordered: bool = True) -> bool:
    if a.size != b.size:
        return False
    if ordered:
        return ordered_code(a) == ordered_code(b)
    return canonical_code(a) == canonical_code(b)


def schedule(tree: Tree, direction: str) -> list[int]:
    """Processing order: parents first for top-down, children first for bottom-up."""
    order = list(tree.preorder())
    if direction == TOP_DOWN:
        return order
    if direction == BOTTOM_UP:
        order.reverse()
        return order
    raise ValueError(f"unknown direction {direction!r}")
