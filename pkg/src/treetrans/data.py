"""Corpus formats, embedding tables, splits and synthetic tasks.

Bracketed trees follow::

    tree := '(' label tree* ')' | token

Labels and tokens are runs of non-whitespace; literal parentheses and
backslashes are written ``\\(``, ``\\)`` and ``\\\\``. A node written
``(X)`` with no children is read as the leaf ``X``.

Corpus files are UTF-8, one record per line, tab-separated:

* class-labeled (INEX style): ``<class>\\t<tree>``
* parallel trees (relabel/prune): ``<tree>\\t<target tree>``; in prune
  targets, dropped nodes carry the label ``__NULL__``.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tree import NodeLabel, Tree, from_nested, is_isomorphic, validate

log = logging.getLogger(__name__)

NULL_TOKEN = "__NULL__"


class ParseError(ValueError):
    pass


class UnbalancedParens(ParseError):
    def __init__(self, position, msg="unbalanced parentheses"):
        super().__init__(f"{msg} at position {position}")
        self.position = position


class EmptyTree(ParseError):
    pass


class EscapeError(ParseError):
    pass


class CorpusError(ValueError):
    pass


class EmptyCorpus(CorpusError):
    pass


class BadClass(CorpusError):
    pass


class DimensionMismatch(CorpusError):
    def __init__(self, line, expected, got):
        super().__init__(f"line {line}: expected {expected} values, got {got}")
        self.line = line


class DuplicateToken(CorpusError):
    pass


_ESCAPABLE = {"(", ")", "\\"}


def _tokenize(text: str):
    """Yield ``(kind, value, position)`` with kind in ``( ) sym``."""
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            yield ch, ch, i
            i += 1
        else:
            start = i
            buf = []
            while i < n and not text[i].isspace() and text[i] not in "()":
                if text[i] == "\\":
                    if i + 1 >= n or text[i + 1] not in _ESCAPABLE:
                        raise EscapeError(f"bad escape at position {i}")
                    buf.append(text[i + 1])
                    i += 2
                else:
                    buf.append(text[i])
                    i += 1
            yield "sym", "".join(buf), start


def _label_of(symbol: str):
    return None if symbol == NULL_TOKEN else symbol


def parse_bracketed(text: str, allow_null: bool = False) -> Tree:
    toks = list(_tokenize(text))
    if not toks:
        raise EmptyTree("no tree in input")
    depth = 0
    for kind, _, pos in toks:
        depth += {"(": 1, ")": -1}.get(kind, 0)
        if depth < 0:
            raise UnbalancedParens(pos)
    if depth:
        raise UnbalancedParens(len(text))
    nodes, edges, labels = [], [], {}
    stack: list[int] = []  # open nodes
    pending_label = False
    done = False
    for kind, value, pos in toks:
        if done:
            raise UnbalancedParens(pos, "trailing input after tree")
        if pending_label:
            if kind != "sym":
                raise ParseError(f"expected a label at position {pos}")
            labels[stack[-1]] = _label_of(value)
            pending_label = False
            continue
        if kind == "(":
            nid = len(nodes) + 1
            nodes.append(nid)
            if stack:
                edges.append((stack[-1], nid))
            stack.append(nid)
            pending_label = True
        elif kind == ")":
            if not stack:
                raise UnbalancedParens(pos)
            stack.pop()
            done = not stack
        else:
            nid = len(nodes) + 1
            nodes.append(nid)
            labels[nid] = _label_of(value)
            if stack:
                edges.append((stack[-1], nid))
            else:
                done = True
    if stack or pending_label:
        raise UnbalancedParens(len(text))
    if any(v is None for v in labels.values()) and not allow_null:
        raise ParseError(f"{NULL_TOKEN} is only allowed in prune targets")
    return validate(nodes, edges, labels, allow_null=True)


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("(", "\\(").replace(")", "\\)")


def _symbol(label: NodeLabel) -> str:
    if label.is_null:
        return NULL_TOKEN
    if label.kind != "categorical":
        raise ValueError("dense labels have no bracketed form")
    s = str(label.value)
    if not s or any(ch.isspace() for ch in s):
        raise ValueError(f"label {s!r} is empty or contains whitespace")
    return _escape(s)


def serialize(tree: Tree) -> str:
    out = []
    stack = [(1, False)]
    while stack:
        u, closing = stack.pop()
        if closing:
            out.append(")")
            continue
        kids = tree.children[u]
        if not kids:
            out.append(_symbol(tree.labels[u]))
            continue
        out.append("(" + _symbol(tree.labels[u]))
        stack.append((u, True))
        for v in reversed(kids):
            stack.append((v, False))
    # join with spaces, then drop the space after an opening label group
    text = " ".join(out)
    return text.replace(" )", ")")


def canonical(tree: Tree) -> Tree:
    """Same tree with ids renumbered in preorder."""
    newid = {u: i for i, u in enumerate(tree.preorder(), start=1)}
    edges = [(newid[u], newid[v]) for u, v in tree.edges]
    labels = {newid[u]: tree.labels[u] for u in tree.nodes}
    return validate(range(1, tree.size + 1), edges, labels, allow_null=True)


@dataclass
class BracketedRecord:
    tree: Tree
    target_class: int | None = None
    target_tree: Tree | None = None

    def __post_init__(self):
        if self.target_tree is not None and not is_isomorphic(self.tree, self.target_tree, ordered=True):
            raise CorpusError("target tree is not ordered-isomorphic to the input tree")


def _read_lines(path) -> list[tuple[int, str]]:
    text = Path(path).read_text(encoding="utf-8")
    return [(i, line) for i, line in enumerate(text.splitlines(), start=1) if line.strip()]


def load_inex_style(path) -> list[tuple[int, Tree]]:
    lines = _read_lines(path)
    if not lines:
        raise EmptyCorpus(f"{path} has no records")
    out = []
    for lineno, line in lines:
        head, sep, body = line.partition("\t")
        if not sep:
            raise CorpusError(f"{path}:{lineno}: expected <class><TAB><tree>")
        try:
            cls = int(head)
        except ValueError:
            raise BadClass(f"{path}:{lineno}: class {head!r} is not an integer") from None
        if cls < 0:
            raise BadClass(f"{path}:{lineno}: negative class {cls}")
        out.append((cls, parse_bracketed(body)))
    sizes = alphabet_sizes([t for _, t in out])
    log.info(
        "%s: %d trees, %d classes, %d node labels",
        path, len(out), len({c for c, _ in out}), sizes["labels"],
    )
    return out


def load_parallel(path, allow_null: bool = False) -> list[BracketedRecord]:
    lines = _read_lines(path)
    if not lines:
        raise EmptyCorpus(f"{path} has no records")
    out = []
    for lineno, line in lines:
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected <tree><TAB><target tree>")
        try:
            out.append(BracketedRecord(parse_bracketed(parts[0]), target_tree=parse_bracketed(parts[1], allow_null)))
        except CorpusError as e:
            raise CorpusError(f"{path}:{lineno}: {e}") from None
    return out


def load_corpus(path, kind: str) -> list[BracketedRecord]:
    if kind == "supersource":
        return [BracketedRecord(t, target_class=c) for c, t in load_inex_style(path)]
    return load_parallel(path, allow_null=(kind == "prune"))


def format_record(rec: BracketedRecord) -> str:
    if rec.target_class is not None:
        return f"{rec.target_class}\t{serialize(rec.tree)}"
    return f"{serialize(rec.tree)}\t{serialize(rec.target_tree)}"


def alphabet_sizes(trees: Iterable[Tree]) -> dict:
    leaf, internal = set(), set()
    for t in trees:
        for u in t.nodes:
            lab = t.labels[u]
            if lab.kind != "categorical":
                continue
            (internal if t.children[u] else leaf).add(lab.value)
    return {"leaf_tokens": len(leaf), "categories": len(internal), "labels": len(leaf | internal)}


class EmbeddingTable:
    """Token vectors; unknown tokens map to the zero vector."""

    def __init__(self, vectors: dict, dim: int):
        self.vectors = vectors
        self.dim = dim

    def __contains__(self, token):
        return token in self.vectors

    def __len__(self):
        return len(self.vectors)

    def lookup(self, token) -> np.ndarray:
        v = self.vectors.get(token)
        return np.zeros(self.dim) if v is None else v


def load_embeddings(path) -> EmbeddingTable:
    vectors: dict = {}
    dim = None
    for lineno, line in _read_lines(path):
        parts = line.split()
        if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
            dim = int(parts[1])
            continue
        token, vals = parts[0], parts[1:]
        if dim is None:
            dim = len(vals)
        if len(vals) != dim:
            raise DimensionMismatch(lineno, dim, len(vals))
        if token in vectors:
            raise DuplicateToken(f"line {lineno}: duplicate token {token!r}")
        vectors[token] = np.array([float(v) for v in vals])
    if dim is None:
        raise EmptyCorpus(f"{path} has no embeddings")
    return EmbeddingTable(vectors, dim)


@dataclass
class SplitSpec:
    subsets: dict
    stratified: bool = False

    @property
    def train(self) -> list[int]:
        return self.subsets["train"]

    @property
    def validation(self) -> list[int]:
        return self.subsets["validation"]


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(classes: Sequence[int], fraction: float = 0.10, seed: int = 0) -> SplitSpec:
    """Move ``fraction`` of every class to validation (half-up, at least one if the class has two)."""
    if len(classes) == 0:
        raise EmptyCorpus("nothing to split")
    rng = np.random.default_rng(seed)
    by_class: dict = {}
    for i, c in enumerate(classes):
        by_class.setdefault(c, []).append(i)
    val = []
    for c in sorted(by_class):
        idx = by_class[c]
        n = len(idx)
        k = _round_half_up(fraction * n)
        if n >= 2:
            k = max(k, 1)
        k = min(k, n - 1)
        chosen = rng.permutation(n)[:k]
        val.extend(idx[j] for j in chosen)
    val.sort()
    val_set = set(val)
    train = [i for i in range(len(classes)) if i not in val_set]
    return SplitSpec({"train": train, "validation": val}, stratified=True)


# synthetic tasks

SYNTH_KINDS = ("depth_relabel", "subtree_parity_relabel", "keyword_prune", "class_by_root_arity")
CATEGORIES = ("S", "NP", "VP", "PP", "ADJP", "SBAR")
VOCAB = tuple(f"w{i}" for i in range(20))
MAX_DEPTH = 6
MAX_OUTDEGREE = 3
# children-count distribution for non-root nodes
_BRANCHING = (0.4, 0.2, 0.2, 0.2)


@dataclass
class SynthCorpus:
    kind: str
    records: list
    num_classes: int
    keywords: frozenset = field(default_factory=frozenset)


def random_shape(rng, max_nodes: int = 20, root_arity: int | None = None):
    """Random nested shape (list of child shapes), out-degree <= 3, depth <= 6."""
    root: list = []
    count = 1
    queue = [(root, 0)]
    while queue:
        node, depth = queue.pop(0)
        if depth >= MAX_DEPTH:
            continue
        if depth == 0 and root_arity is not None:
            k = root_arity
        elif depth == 0:
            k = int(rng.integers(1, MAX_OUTDEGREE + 1))
        else:
            k = int(rng.choice(4, p=_BRANCHING))
        k = min(k, max_nodes - count)
        for _ in range(k):
            child: list = []
            node.append(child)
            queue.append((child, depth + 1))
        count += k
    return root


def label_shape(shape, rng):
    if not shape:
        return VOCAB[int(rng.integers(len(VOCAB)))]
    return (CATEGORIES[int(rng.integers(len(CATEGORIES)))], [label_shape(c, rng) for c in shape])


def depth_targets(tree: Tree) -> dict:
    return {u: min(tree.depth(u), 5) for u in tree.nodes}


def parity_targets(tree: Tree) -> dict:
    return {u: len(tree.subtree(u)) % 2 for u in tree.nodes}


def keyword_targets(tree: Tree, keywords) -> dict:
    keep = {u: False for u in tree.nodes}
    for leaf in tree.leaves():
        if tree.labels[leaf].value in keywords:
            u = leaf
            while u is not None:
                keep[u] = True
                u = tree.parent[u]
    return keep


def synth_task(kind: str, size: int, seed: int = 0, max_nodes: int = 20) -> SynthCorpus:
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic task {kind!r}")
    if size <= 0:
        raise ValueError("size must be positive")
    rng = np.random.default_rng(seed)
    keywords = frozenset()
    if kind == "keyword_prune":
        keywords = frozenset(VOCAB[i] for i in rng.choice(len(VOCAB), size=5, replace=False))
    records = []
    for _ in range(size):
        root_arity = int(rng.integers(0, MAX_OUTDEGREE + 1)) if kind == "class_by_root_arity" else None
        shape = random_shape(rng, max_nodes, root_arity)
        tree = from_nested(label_shape(shape, rng))
        if kind == "class_by_root_arity":
            records.append(BracketedRecord(tree, target_class=len(tree.children[1])))
            continue
        if kind == "keyword_prune":
            leaves = tree.leaves()
            if not any(tree.labels[u].value in keywords for u in leaves):
                # every sentence needs a non-empty reference compression
                leaf = leaves[int(rng.integers(len(leaves)))]
                kw = sorted(keywords)[int(rng.integers(len(keywords)))]
                tree = tree.relabel({leaf: kw})
            keep = keyword_targets(tree, keywords)
            target = tree.relabel({u: None for u, k in keep.items() if not k}, allow_null=True)
        else:
            targets = depth_targets(tree) if kind == "depth_relabel" else parity_targets(tree)
            target = tree.relabel({u: str(v) for u, v in targets.items()})
        records.append(BracketedRecord(tree, target_tree=target))
    num_classes = {"depth_relabel": 6, "subtree_parity_relabel": 2, "keyword_prune": 2, "class_by_root_arity": 4}[kind]
    return SynthCorpus(kind, records, num_classes, keywords)


def write_corpus(records: Iterable[BracketedRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")


def class_histogram(classes: Iterable[int]) -> dict:
    return dict(sorted(Counter(classes).items()))
