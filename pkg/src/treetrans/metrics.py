"""Evaluation metrics: accuracies, Simple String Accuracy, compression rate."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

# compression rate of the gold-standard compressions in the written
# compression corpus; used only as a caption constant in reports
GOLD_COMPRESSION_RATE = 0.7041


class MetricError(ValueError):
    pass


class EmptyInput(MetricError):
    pass


class LengthMismatch(MetricError):
    pass


class SkeletonMismatch(MetricError):
    pass


class EmptyReference(MetricError):
    pass


class EmptyOriginal(MetricError):
    pass


def classification_accuracy(predictions: Sequence, targets: Sequence) -> float:
    if len(predictions) != len(targets):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(targets)} targets")
    if not targets:
        raise EmptyInput("no predictions")
    return sum(p == t for p, t in zip(predictions, targets)) / len(targets)


def node_label_accuracy(
    predicted: Sequence[Mapping], targets: Sequence[Mapping], masks: Sequence[Sequence[int]]
) -> float:
    """Per-tree fraction of correct labels over the masked nodes, averaged over trees."""
    if not (len(predicted) == len(targets) == len(masks)):
        raise LengthMismatch("predicted, target and mask lists differ in length")
    if not targets:
        raise EmptyInput("no trees")
    total = 0.0
    for pred, gold, mask in zip(predicted, targets, masks):
        if not mask:
            raise EmptyInput("empty mask")
        missing = [u for u in mask if u not in pred or u not in gold]
        if missing:
            raise SkeletonMismatch(f"nodes {missing[:5]} missing from a labeling")
        total += sum(pred[u] == gold[u] for u in mask) / len(mask)
    return total / len(targets)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Token-level Levenshtein distance with unit costs."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def ssa(candidate: Sequence, reference: Sequence) -> float:
    """Simple String Accuracy: ``1 - edits / len(reference)``, clipped at 0."""
    if not reference:
        raise EmptyReference("reference must be non-empty")
    return max(0.0, 1.0 - edit_distance(candidate, reference) / len(reference))


def compression_rate(compressed: int, original: int) -> float:
    if original <= 0:
        raise EmptyOriginal("original length must be positive")
    return compressed / original


@dataclass
class EvalReport:
    metric: str
    per_run: list = field(default_factory=list)
    samples: int = 0

    @property
    def value(self) -> float:
        return self.mean

    @property
    def mean(self) -> float:
        if not self.per_run:
            raise EmptyInput(f"no runs recorded for {self.metric}")
        return sum(self.per_run) / len(self.per_run)


def format_report(reports: Sequence[EvalReport]) -> str:
    """TSV table: one row per run, then a ``mean`` row."""
    names = [r.metric for r in reports]
    runs = len(reports[0].per_run)
    if any(len(r.per_run) != runs for r in reports):
        raise LengthMismatch("reports have different run counts")
    lines = ["run\t" + "\t".join(names)]
    for k in range(runs):
        lines.append(f"{k}\t" + "\t".join(f"{r.per_run[k]:.6f}" for r in reports))
    lines.append("mean\t" + "\t".join(f"{r.mean:.6f}" for r in reports))
    return "\n".join(lines) + "\n"


def format_plot_data(history: Sequence[Mapping]) -> str:
    """Long-format ``metric<TAB>epoch<TAB>value`` rows for external plotting."""
    lines = ["metric\tepoch\tvalue"]
    for row in history:
        for key, value in row.items():
            if key != "epoch":
                lines.append(f"{key}\t{row['epoch']}\t{value!r}")
    return "\n".join(lines) + "\n"
