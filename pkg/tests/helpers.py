"""Shared builders and independent reference implementations for the tests."""

import numpy as np

from treetrans import autograd as ag
from treetrans.cells import make_cell
from treetrans.tree import NodeLabel, from_parents

CELL_KINDS = ("td", "childsum", "nary")
TASK_KINDS = ("supersource", "relabel", "prune")


def random_parents(rng, n, max_outdegree=3):
    """Parent array (1-based, root first) with bounded out-degree."""
    parents = [None]
    degree = {1: 0}
    for v in range(2, n + 1):
        open_nodes = [u for u in range(1, v) if degree[u] < max_outdegree]
        p = open_nodes[int(rng.integers(len(open_nodes)))]
        parents.append(p)
        degree[p] += 1
        degree[v] = 0
    return parents


def random_tree(rng, n, max_outdegree=3, dim=None, symbols=("a", "b", "c", "d")):
    """Random tree with dense labels of size ``dim`` or random categorical symbols."""
    if dim is not None:
        labels = [NodeLabel.dense(rng.uniform(-2, 2, dim)) for _ in range(n)]
    else:
        labels = [symbols[int(rng.integers(len(symbols)))] for _ in range(n)]
    return from_parents(random_parents(rng, n, max_outdegree), labels)


def chain_tree(xs):
    """Path 1 -> 2 -> ... with dense labels ``xs`` from root to leaf."""
    return from_parents([None] + list(range(1, len(xs))), [NodeLabel.dense(x) for x in xs])


def dense_map(u, label):
    return ag.constant(label.value)


def random_cell(kind, d, H, rng, arity=3, bias_scale=0.5):
    cell = make_cell(kind, d, H, rng, arity)
    for name, p in cell.params.items():
        if name.startswith("b_"):
            p.value[...] = rng.uniform(-bias_scale, bias_scale, p.value.shape)
        else:
            p.value[...] = rng.uniform(-1, 1, p.value.shape)
    return cell


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def reference_lstm(W, U, b, xs):
    """Plain sequence LSTM; ``W``, ``U``, ``b`` are dicts keyed by gate r/i/o/f.

    Returns the list of (h, c) after each step.
    """
    H = b["r"].shape[0]
    h = np.zeros((H, 1))
    c = np.zeros((H, 1))
    out = []
    for x in xs:
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        g = np.tanh(W["r"] @ x + U["r"] @ h + b["r"])
        i = _sig(W["i"] @ x + U["i"] @ h + b["i"])
        o = _sig(W["o"] @ x + U["o"] @ h + b["o"])
        f = _sig(W["f"] @ x + U["f"] @ h + b["f"])
        c = i * g + f * c
        h = o * np.tanh(c)
        out.append((h, c))
    return out


def lstm_weights(cell):
    """Pull sequence-LSTM weights out of a cell (N-ary must have arity 1)."""
    P = {k: p.value for k, p in cell.params.items()}
    W = {g: P[f"W_{g}"] for g in "riof"}
    b = {g: P[f"b_{g}"] for g in "riof"}
    if cell.kind == "nary":
        U = {g: P[f"U_{g}_1"] for g in "rio"}
        U["f"] = P["U_f_1_1"]
    else:
        U = {g: P[f"U_{g}"] for g in "riof"}
    return W, U, b


# acceptance verdicts, printed by the terminal-summary hook in conftest.py
ACCEPTANCE: dict = {}


class criterion:
    """Record PASS/FAIL for one acceptance criterion around a ``with`` block."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail or (str(exc).splitlines()[0] if exc is not None and str(exc) else "")
        ACCEPTANCE[self.number] = f"{status} criterion {self.number} ({self.title}): {detail}".rstrip(": ")
        return False
