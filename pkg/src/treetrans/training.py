"""Losses, L2 penalty, Adam, early stopping and model selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .metrics import classification_accuracy, compression_rate, node_label_accuracy, ssa
from .model import Example, Model
from .transduction import PRUNE, RELABEL, SUPERSOURCE, Prediction, TaskSpec

log = logging.getLogger(__name__)

HIDDEN_GRID = (100, 150, 200, 250, 300, 350, 400)
L2_WEIGHT = 1e-4


class LabelOutOfRange(ValueError):
    pass


class ZeroCompression(ValueError):
    pass


class EmptySplit(ValueError):
    pass


@dataclass
class Hyperparams:
    hidden: int = 100
    l2: float = L2_WEIGHT
    lr: float = 1e-3
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    batch_size: int = 1

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 weight must be non-negative")


def loss(task: TaskSpec, pred: Prediction, target) -> Tensor:
    """Summed NLL (supersource, relabel) or binary cross-entropy (prune)."""
    if task.kind == SUPERSOURCE:
        if not 0 <= target < task.num_classes:
            raise LabelOutOfRange(f"class {target} outside [0, {task.num_classes})")
        return ag.scale(ag.pick(pred.log_prob, target), -1.0)
    if task.kind == RELABEL:
        terms = []
        for u, lp in pred.node_log_probs.items():
            c = target[u]
            if not 0 <= c < task.num_classes:
                raise LabelOutOfRange(f"node {u}: class {c} outside [0, {task.num_classes})")
            terms.append(ag.pick(lp, c))
        return ag.scale(ag.sum_list(terms), -1.0)
    y = [target[u] for u in pred.keep_order]
    if any(v not in (0, 1) for v in y):
        raise LabelOutOfRange("prune targets must be 0 or 1")
    return ag.bce_with_logits(pred.keep_logits, y)


def is_bias(p: Parameter) -> bool:
    last = p.name.rsplit(".", 1)[-1]
    return last == "b" or last.startswith("b_")


def regularized_loss(base: Tensor, params: Iterable[Parameter], l2: float) -> Tensor:
    """``base + l2 * sum(w**2)`` over weight matrices; biases are not penalized."""
    if l2 == 0:
        return base
    weights = [p for p in params if not is_bias(p)]
    if not weights:
        return base
    penalty = ag.sum_list([ag.sqnorm(p) for p in weights])
    return ag.add(base, ag.scale(penalty, l2))


class Adam:
    def __init__(self, params: Sequence[Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        """Apply one bias-corrected update from the accumulated grads, then zero them."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.zero_grad()


def hybrid_metric(accuracy: float, compression: float) -> float:
    """``accuracy**2 / compression``: higher is better."""
    if compression <= 0:
        raise ZeroCompression("compression rate must be positive")
    return accuracy * accuracy / compression


def evaluate(model: Model, examples: Sequence[Example]) -> dict:
    """Task metrics on a set of examples (no gradients are kept)."""
    if not examples:
        raise EmptySplit("nothing to evaluate")
    task = model.task
    preds = [model.forward(ex.tree) for ex in examples]
    if task.kind == SUPERSOURCE:
        return {"accuracy": classification_accuracy([p.label for p in preds], [ex.target for ex in examples])}
    if task.kind == RELABEL:
        return {
            "accuracy": node_label_accuracy(
                [p.node_labels for p in preds], [ex.target for ex in examples],
                [list(p.node_labels) for p in preds],
            )
        }
    acc = float(np.mean([ssa(p.compressed, ex.reference) for p, ex in zip(preds, examples)]))
    comp = float(np.mean([compression_rate(len(p.compressed), len(p.tree.leaves())) for p in preds]))
    # an all-dropping model has zero accuracy too; score it 0 instead of failing
    t = hybrid_metric(acc, comp) if comp > 0 else 0.0
    return {"accuracy": acc, "compression": comp, "t": t}


def selection_metric(task: TaskSpec, metrics: dict) -> float:
    return metrics["t"] if task.kind == PRUNE else metrics["accuracy"]


def total_loss(model: Model, examples: Sequence[Example]) -> float:
    return sum(loss(model.task, model.forward(ex.tree), ex.target).item() for ex in examples)


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")
    best_metrics: dict = field(default_factory=dict)


def train(model: Model, train_set: Sequence[Example], val_set: Sequence[Example], hyper: Hyperparams,
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Epochs of per-batch Adam updates with early stopping on validation.

    Returns the model restored to its best-validation parameters.
    """
    if not train_set or not val_set:
        raise EmptySplit("training and validation sets must be non-empty")
    rng = np.random.default_rng(hyper.seed)
    params = model.parameters()
    for p in params:
        p.zero_grad()
    opt = Adam(params, lr=hyper.lr)
    result = TrainResult(model)
    best_state = model.state()
    since = 0
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = [train_set[i] for i in order[start:start + hyper.batch_size]]
            terms = [loss(model.task, model.forward(ex.tree), ex.target) for ex in batch]
            base = terms[0] if len(terms) == 1 else ag.sum_list(terms)
            epoch_loss += base.item()
            ag.backward(regularized_loss(base, params, hyper.l2))
            opt.step()
        metrics = evaluate(model, val_set)
        row = {"epoch": epoch, "train_loss": epoch_loss / len(train_set)}
        row.update({f"val_{k}": v for k, v in metrics.items()})
        result.history.append(row)
        if callback is not None:
            callback(row)
        log.debug("epoch %d %s", epoch, row)
        score = selection_metric(model.task, metrics)
        if score > result.best_metric:
            result.best_metric = score
            result.best_epoch = epoch
            result.best_metrics = metrics
            best_state = model.state()
            since = 0
        else:
            since += 1
        if since >= hyper.patience:
            break
    model.load_state(best_state)
    return result


def format_history(history: Sequence[dict]) -> str:
    if not history:
        return ""
    keys = list(history[0])
    lines = ["\t".join(keys)]
    for row in history:
        lines.append("\t".join(str(row[k]) if k == "epoch" else repr(float(row[k])) for k in keys))
    return "\n".join(lines) + "\n"


@dataclass
class SelectionReport:
    best_hidden: int
    scores: dict  # hidden -> validation score
    results: dict  # hidden -> TrainResult


def model_select(build: Callable[[int], Model], train_set, val_set, hyper: Hyperparams,
                 grid: Sequence[int] = HIDDEN_GRID) -> SelectionReport:
    """Train one model per hidden size; best validation score wins, ties go to the smaller size."""
    if not grid:
        raise ValueError("empty hidden-size grid")
    scores, results = {}, {}
    for H in sorted(grid):
        res = train(build(H), train_set, val_set, replace(hyper, hidden=H))
        scores[H] = res.best_metric
        results[H] = res
        log.info("hidden %d: validation %.4f", H, res.best_metric)
    best = min(scores, key=lambda H: (-scores[H], H))
    return SelectionReport(best, scores, results)
