"""Output heads and the encode-then-output pipeline for the three task kinds.

* ``supersource``: one class per tree, read from the root state (bottom-up)
  or from the mean of all node states (top-down).
* ``relabel``: one class per masked node.
* ``prune``: a keep probability per node; nodes below 0.5 get NULL labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .cells import CellParams, NodeState, encode
from .tree import BOTTOM_UP, TOP_DOWN, NodeLabel, Tree

SUPERSOURCE = "supersource"
RELABEL = "relabel"
PRUNE = "prune"
TASK_KINDS = (SUPERSOURCE, RELABEL, PRUNE)
KEEP_THRESHOLD = 0.5


class EmptyMask(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    num_classes: int = 2
    mask: str = "internal"  # relabel targets: "internal" or "all"
    subtree_consistent: bool = False  # prune: drop descendants of dropped nodes

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind != PRUNE and self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.mask not in ("internal", "all"):
            raise ValueError(f"unknown mask policy {self.mask!r}")

    @property
    def threshold(self) -> float:
        return KEEP_THRESHOLD

    @property
    def output_dim(self) -> int:
        return 1 if self.kind == PRUNE else self.num_classes

    def target_nodes(self, tree: Tree) -> list[int]:
        if self.mask == "all":
            return list(tree.preorder())
        internal = tree.internal_nodes()
        # a single-node tree has no internal node; fall back to the root
        return internal or [tree.root]


class HeadParams:
    def __init__(self, out_dim: int, hidden: int, rng=None, name: str = "head"):
        self.out_dim = out_dim
        self.hidden = hidden
        if rng is None:
            W = np.zeros((out_dim, hidden))
        else:
            bound = 1.0 / math.sqrt(hidden)
            W = rng.uniform(-bound, bound, size=(out_dim, hidden))
        self.W = Parameter(f"{name}.W", W)
        self.b = Parameter(f"{name}.b", np.zeros((out_dim, 1)))

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    def scores(self, h: Tensor) -> Tensor:
        return ag.affine(self.b, [(self.W, h)])


@dataclass
class Prediction:
    kind: str
    tree: Tree
    # supersource
    label: int | None = None
    log_prob: Tensor | None = None
    # relabel
    node_labels: dict = field(default_factory=dict)
    node_log_probs: dict = field(default_factory=dict)
    # prune
    keep_logits: Tensor | None = None
    keep_order: tuple = ()
    keep_prob: dict = field(default_factory=dict)
    keep: dict = field(default_factory=dict)
    compressed: list = field(default_factory=list)
    output_tree: Tree | None = None


def _argmax(v: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class index
    return int(np.argmax(v.reshape(-1)))


def readout(states: Mapping[int, NodeState], direction: str) -> Tensor:
    if direction == BOTTOM_UP:
        return states[1].h
    if direction == TOP_DOWN:
        return ag.mean_list([states[u].h for u in sorted(states)])
    raise ValueError(f"unknown direction {direction!r}")


def supersource_head(tree: Tree, states, direction: str, head: HeadParams) -> Prediction:
    lp = ag.log_softmax(head.scores(readout(states, direction)))
    return Prediction(SUPERSOURCE, tree, label=_argmax(lp.value), log_prob=lp)


def relabel_head(tree: Tree, states, head: HeadParams, mask: Sequence[int], class_names=None) -> Prediction:
    if not mask:
        raise EmptyMask("relabel needs at least one target node")
    pred = Prediction(RELABEL, tree)
    for u in mask:
        lp = ag.log_softmax(head.scores(states[u].h))
        pred.node_log_probs[u] = lp
        pred.node_labels[u] = _argmax(lp.value)
    pred.output_tree = tree.relabel(
        {u: NodeLabel.categorical(class_names[c] if class_names else c) for u, c in pred.node_labels.items()}
    )
    return pred


def token_of(label: NodeLabel, node: int):
    if label.kind == "categorical":
        return label.value
    return node


def prune_head(tree: Tree, states, head: HeadParams, subtree_consistent: bool = False) -> Prediction:
    order = tuple(tree.preorder())
    logits = ag.concat([head.scores(states[u].h) for u in order])
    z = logits.value.reshape(-1)
    pred = Prediction(PRUNE, tree, keep_logits=logits, keep_order=order)
    for u, zu in zip(order, z):
        p = 1.0 / (1.0 + math.exp(-zu)) if zu >= 0 else math.exp(zu) / (1.0 + math.exp(zu))
        pred.keep_prob[u] = p
        pred.keep[u] = p >= KEEP_THRESHOLD
    if subtree_consistent:
        for u in order:  # preorder: parents are settled first
            pa = tree.parent[u]
            if pa is not None and not pred.keep[pa]:
                pred.keep[u] = False
    pred.output_tree = tree.relabel({u: None for u in order if not pred.keep[u]}, allow_null=True)
    pred.compressed = [token_of(tree.labels[u], u) for u in tree.leaves() if pred.keep[u]]
    return pred


def compose(
    tree: Tree,
    cell: CellParams,
    head: HeadParams,
    task: TaskSpec,
    input_map: Callable[[int, NodeLabel], Tensor],
    class_names=None,
) -> Prediction:
    states = encode(tree, cell, input_map)
    if task.kind == SUPERSOURCE:
        return supersource_head(tree, states, cell.direction, head)
    if task.kind == RELABEL:
        return relabel_head(tree, states, head, task.target_nodes(tree), class_names)
    return prune_head(tree, states, head, task.subtree_consistent)


def format_prediction(pred: Prediction, tree_id) -> str:
    """One tab-separated record: kind, tree id, then ``node:value`` fields."""
    fields = [pred.kind, str(tree_id)]
    if pred.kind == SUPERSOURCE:
        fields.append(f"1:{pred.label}")
    elif pred.kind == RELABEL:
        fields.extend(f"{u}:{c}" for u, c in sorted(pred.node_labels.items()))
    else:
        fields.extend(f"{u}:{int(pred.keep[u])}" for u in sorted(pred.keep))
    return "\t".join(fields)
