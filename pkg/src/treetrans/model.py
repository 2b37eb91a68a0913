"""Input encoding plus a cell and a head bundled into a trainable model."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .cells import CellParams, make_cell
from .data import BracketedRecord, EmbeddingTable
from .transduction import RELABEL, SUPERSOURCE, HeadParams, Prediction, TaskSpec, compose, token_of
from .tree import NodeLabel, Tree


class CheckpointMismatch(ValueError):
    pass


class InputEncoder:
    """Maps node labels to input vectors of a common dimension.

    Categorical symbols are one-hot coded (index 0 is the unknown symbol);
    dense labels are used as-is. With embeddings, leaf tokens are looked
    up in the table. When both kinds occur, each kind gets its own affine
    projection into ``input_dim``.
    """

    def __init__(self, symbols=(), dense_dim=None, embeddings: EmbeddingTable | None = None,
                 input_dim=None, rng=None):
        self.symbols = list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols, start=1)}
        self.embeddings = embeddings
        if embeddings is not None:
            if dense_dim is not None and dense_dim != embeddings.dim:
                raise ag.ShapeMismatch("embeddings", dense_dim, embeddings.dim)
            dense_dim = embeddings.dim
        self.dense_dim = dense_dim
        self.mixed = bool(self.symbols) and dense_dim is not None
        self.params: dict[str, Parameter] = {}
        if self.mixed:
            self.input_dim = input_dim or dense_dim
            for kind, n in (("cat", len(self.symbols) + 1), ("dense", dense_dim)):
                bound = 1.0 / math.sqrt(n)
                W = rng.uniform(-bound, bound, (self.input_dim, n)) if rng is not None else np.zeros((self.input_dim, n))
                self.params[f"P_{kind}"] = Parameter(f"input.P_{kind}", W)
                self.params[f"b_{kind}"] = Parameter(f"input.b_{kind}", np.zeros((self.input_dim, 1)))
        elif dense_dim is not None:
            self.input_dim = dense_dim
        else:
            self.input_dim = len(self.symbols) + 1
        self._onehot: dict[int, Tensor] = {}

    @classmethod
    def fit(cls, trees: Sequence[Tree], embeddings=None, input_dim=None, rng=None) -> "InputEncoder":
        symbols, seen = [], set()
        dense_dim = None
        for t in trees:
            for u in t.preorder():
                lab = t.labels[u]
                if lab.kind == "dense":
                    if dense_dim is None:
                        dense_dim = lab.value.size
                    elif lab.value.size != dense_dim:
                        raise ag.ShapeMismatch("dense label", dense_dim, lab.value.size)
                elif lab.kind == "categorical":
                    if embeddings is not None and not t.children[u]:
                        continue
                    if lab.value not in seen:
                        seen.add(lab.value)
                        symbols.append(lab.value)
        return cls(symbols, dense_dim, embeddings, input_dim, rng)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def config(self) -> dict:
        return {
            "symbols": self.symbols,
            "dense_dim": self.dense_dim,
            "input_dim": self.input_dim,
            "embeddings": self.embeddings is not None,
        }

    def _categorical(self, symbol) -> Tensor:
        k = self.index.get(symbol, 0)
        t = self._onehot.get(k)
        if t is None:
            v = np.zeros((len(self.symbols) + 1, 1))
            v[k, 0] = 1.0
            t = self._onehot[k] = ag.constant(v)
        return t

    def vector(self, label: NodeLabel, is_leaf: bool) -> Tensor:
        if label.kind == "categorical" and not (self.embeddings is not None and is_leaf):
            x, kind = self._categorical(label.value), "cat"
        elif label.kind == "categorical":
            x, kind = ag.constant(self.embeddings.lookup(label.value)), "dense"
        elif label.kind == "dense":
            x, kind = ag.constant(label.value), "dense"
        else:
            raise ValueError("NULL labels cannot be encoded as inputs")
        if self.mixed:
            return ag.affine(self.params[f"b_{kind}"], [(self.params[f"P_{kind}"], x)])
        return x

    def input_map(self, tree: Tree):
        return lambda u, label: self.vector(label, not tree.children[u])


@dataclass
class Example:
    tree: Tree
    target: object  # class index, {node: class index}, or {node: 0/1}
    reference: list | None = None  # prune: tokens of the gold compression


class Model:
    def __init__(self, task: TaskSpec, encoder: InputEncoder, cell: CellParams, head: HeadParams, class_names=None):
        self.task = task
        self.encoder = encoder
        self.cell = cell
        self.head = head
        self.class_names = list(class_names) if class_names is not None else None

    @classmethod
    def build(cls, task: TaskSpec, cell_kind: str, hidden: int, encoder: InputEncoder,
              seed: int = 0, arity: int | None = None, class_names=None) -> "Model":
        rng = np.random.default_rng(seed)
        # re-create the encoder so its projections are drawn from this seed
        enc = InputEncoder(encoder.symbols, encoder.dense_dim if encoder.embeddings is None else None,
                           encoder.embeddings, encoder.input_dim if encoder.mixed else None, rng)
        cell = make_cell(cell_kind, enc.input_dim, hidden, rng, arity)
        head = HeadParams(task.output_dim, hidden, rng)
        return cls(task, enc, cell, head, class_names)

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.cell.parameters() + self.head.parameters()

    def forward(self, tree: Tree) -> Prediction:
        return compose(tree, self.cell, self.head, self.task, self.encoder.input_map(tree), self.class_names)

    def config(self) -> dict:
        return {
            "task": self.task.kind,
            "num_classes": self.task.num_classes,
            "mask": self.task.mask,
            "cell": self.cell.kind,
            "hidden": self.cell.hidden,
            "arity": getattr(self.cell, "arity", None),
            "input": self.encoder.config(),
            "class_names": self.class_names,
        }

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        names = {p.name for p in params}
        if names != set(values):
            raise CheckpointMismatch(f"parameter sets differ: {sorted(names ^ set(values))[:5]}")
        for p in params:
            if p.value.shape != values[p.name].shape:
                raise CheckpointMismatch(f"{p.name}: shape {values[p.name].shape}, expected {p.value.shape}")
            p.value[...] = values[p.name]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            ag.save_parameters(self.parameters(), fh, header=json.dumps(self.config(), sort_keys=True))

    @classmethod
    def load(cls, path, embeddings: EmbeddingTable | None = None) -> "Model":
        with open(path, encoding="utf-8") as fh:
            header, values = ag.load_parameters(fh)
        if header is None:
            raise CheckpointMismatch(f"{path} has no model header")
        cfg = json.loads(header)
        inp = cfg["input"]
        if inp["embeddings"] and embeddings is None:
            raise CheckpointMismatch("checkpoint was trained with embeddings; pass the same table")
        enc = InputEncoder(inp["symbols"], None if inp["embeddings"] else inp["dense_dim"],
                           embeddings if inp["embeddings"] else None, inp["input_dim"],
                           rng=np.random.default_rng(0))
        if enc.input_dim != inp["input_dim"]:
            raise CheckpointMismatch("input dimension differs from the checkpoint")
        task = TaskSpec(cfg["task"], cfg["num_classes"], cfg["mask"])
        model = cls.build(task, cfg["cell"], cfg["hidden"], enc, 0, cfg["arity"], cfg["class_names"])
        model.load_state(values)
        model.header = cfg
        return model


def class_alphabet(records: Sequence[BracketedRecord], task: TaskSpec) -> list:
    """Sorted target symbols of a corpus (numeric symbols sort numerically)."""
    symbols = set()
    for rec in records:
        if task.kind == SUPERSOURCE:
            symbols.add(rec.target_class)
        elif task.kind == RELABEL:
            for u in task.target_nodes(rec.target_tree):
                symbols.add(rec.target_tree.labels[u].value)

    def key(s):
        s = str(s)
        return (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s)

    return sorted(symbols, key=key)


def to_examples(records: Sequence[BracketedRecord], task: TaskSpec, class_names=None) -> list[Example]:
    index = {str(s): i for i, s in enumerate(class_names)} if class_names is not None else None
    out = []
    for rec in records:
        if task.kind == SUPERSOURCE:
            target = rec.target_class if index is None else index.get(str(rec.target_class), -1)
            out.append(Example(rec.tree, target))
        elif task.kind == RELABEL:
            labels = rec.target_tree.labels
            target = {}
            for u in task.target_nodes(rec.tree):
                sym = labels[u].value
                target[u] = index.get(str(sym), -1) if index is not None else int(sym)
            out.append(Example(rec.tree, target))
        else:
            keep = {u: int(not rec.target_tree.labels[u].is_null) for u in rec.tree.nodes}
            ref = [token_of(rec.tree.labels[u], u) for u in rec.tree.leaves() if keep[u]]
            out.append(Example(rec.tree, keep, ref))
    return out
