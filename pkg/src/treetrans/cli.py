"""Command-line entry points: ``train``, ``eval``, ``gradcheck``, ``synth``.

Options may also come from a ``key=value`` file given with ``--config``;
flags on the command line override it. Exit codes: 0 success, 1 runtime
failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data import (
    CorpusError,
    ParseError,
    SYNTH_KINDS,
    load_corpus,
    load_embeddings,
    random_shape,
    stratified_split,
    synth_task,
    write_corpus,
    label_shape,
)
from .metrics import EvalReport, format_plot_data, format_report
from .model import CheckpointMismatch, InputEncoder, Model, class_alphabet, to_examples
from .training import Hyperparams, evaluate, format_history, loss, model_select, regularized_loss, train
from .transduction import PRUNE, RELABEL, SUPERSOURCE, TASK_KINDS, TaskSpec, format_prediction
from .tree import from_nested

log = logging.getLogger("treetrans")

CELLS = ("td", "childsum", "nary")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    task: str = SUPERSOURCE
    cell: str = "childsum"
    hidden: int = 100
    grid: tuple = ()
    train: str | None = None
    val: str | None = None
    test: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    seed: int = 0
    runs: int = 10
    epochs: int = 50
    patience: int = 10
    max_outdegree: int | None = None
    out: str | None = None
    lr: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 1
    mask: str = "internal"
    kind: str | None = None
    size: int = 100
    inject_fault: str | None = None

    @property
    def direction(self) -> str:
        return "top_down" if self.cell == "td" else "bottom_up"


def _grid(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treetrans", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--task", choices=TASK_KINDS)
    common.add_argument("--cell", choices=CELLS)
    common.add_argument("--hidden", type=int)
    common.add_argument("--grid", type=_grid, help="comma-separated hidden sizes for model selection")
    common.add_argument("--train")
    common.add_argument("--val")
    common.add_argument("--test")
    common.add_argument("--embeddings")
    common.add_argument("--checkpoint")
    common.add_argument("--seed", type=int)
    common.add_argument("--runs", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--patience", type=int)
    common.add_argument("--max-outdegree", type=int)
    common.add_argument("--out")
    common.add_argument("--lr", type=float)
    common.add_argument("--l2", type=float)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--mask", choices=("internal", "all"))
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("train", parents=[common], help="train one or more models")
    sub.add_parser("eval", parents=[common], help="evaluate checkpoints on a test corpus")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gc.add_argument("--inject-fault", help=argparse.SUPPRESS)
    sy = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    sy.add_argument("--kind", choices=SYNTH_KINDS)
    sy.add_argument("--size", type=int)
    return parser


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


_CASTS = {
    "hidden": int, "seed": int, "runs": int, "epochs": int, "patience": int, "max_outdegree": int,
    "size": int, "batch_size": int, "lr": float, "l2": float, "grid": _grid,
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        for key, raw in read_config_file(args.config).items():
            if key not in RunConfig.__dataclass_fields__ or key == "command":
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[key] = _CASTS.get(key, str)(raw)
            except (ValueError, argparse.ArgumentTypeError):
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
    for key, value in vars(args).items():
        if key in RunConfig.__dataclass_fields__ and value is not None and key != "command":
            values[key] = value
    cfg = RunConfig(command=args.command, **values)
    if cfg.task not in TASK_KINDS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.cell not in CELLS:
        raise ConfigError(f"unknown cell {cfg.cell!r}")
    if cfg.runs < 1 or cfg.epochs < 1 or cfg.patience < 0 or cfg.hidden < 1:
        raise ConfigError("runs, epochs and hidden must be positive; patience non-negative")
    return cfg


def _need_file(path, what):
    if not path:
        raise ConfigError(f"--{what} is required")
    if not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return path


def checkpoint_path(base: str, run: int, runs: int) -> str:
    return base if runs == 1 else f"{base}.run{run}"


def _outdir(cfg) -> Path:
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _embeddings(cfg):
    return load_embeddings(_need_file(cfg.embeddings, "embeddings")) if cfg.embeddings else None


def cmd_train(cfg: RunConfig) -> int:
    task = TaskSpec(cfg.task, 2, cfg.mask)
    train_records = load_corpus(_need_file(cfg.train, "train"), cfg.task)
    if cfg.val:
        val_records = load_corpus(_need_file(cfg.val, "val"), cfg.task)
    else:
        classes = [r.target_class if cfg.task == SUPERSOURCE else 0 for r in train_records]
        split = stratified_split(classes, 0.10, cfg.seed)
        val_records = [train_records[i] for i in split.validation]
        train_records = [train_records[i] for i in split.train]
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint is required")
    names = class_alphabet(train_records, task) if cfg.task != PRUNE else None
    if names is not None:
        task = TaskSpec(cfg.task, max(len(names), 2), cfg.mask)
    train_set = to_examples(train_records, task, names)
    val_set = to_examples(val_records, task, names)

    arity = None
    if cfg.cell == "nary":
        observed = max(ex.tree.max_outdegree for ex in train_set + val_set)
        arity = cfg.max_outdegree or observed
        if observed > arity:
            raise ConfigError(f"corpus out-degree {observed} exceeds --max-outdegree {arity}")
    encoder = InputEncoder.fit([ex.tree for ex in train_set], _embeddings(cfg))

    out = _outdir(cfg)
    reports: dict[str, EvalReport] = {}
    for k in range(cfg.runs):
        seed = cfg.seed + k
        hyper = Hyperparams(cfg.hidden, cfg.l2, cfg.lr, cfg.epochs, cfg.patience, seed, cfg.batch_size)

        def build(H, seed=seed):
            return Model.build(task, cfg.cell, H, encoder, seed, arity, names)

        if cfg.grid:
            sel = model_select(build, train_set, val_set, hyper, cfg.grid)
            result = sel.results[sel.best_hidden]
            log.info("run %d: selected hidden size %d", k, sel.best_hidden)
        else:
            result = train(build(cfg.hidden), train_set, val_set, hyper)
        suffix = "" if cfg.runs == 1 else f".run{k}"
        result.model.save(checkpoint_path(cfg.checkpoint, k, cfg.runs))
        (out / f"history{suffix}.tsv").write_text(format_history(result.history), encoding="utf-8")
        (out / f"plot{suffix}.tsv").write_text(format_plot_data(result.history), encoding="utf-8")
        for name, value in result.best_metrics.items():
            reports.setdefault(f"val_{name}", EvalReport(f"val_{name}", samples=len(val_set))).per_run.append(value)
        log.info("run %d: best epoch %d, %s", k, result.best_epoch, result.best_metrics)
    table = format_report(list(reports.values()))
    (out / "train_report.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    test_path = _need_file(cfg.test, "test")
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint is required")
    emb = _embeddings(cfg)
    records = load_corpus(test_path, cfg.task)
    reports: dict[str, EvalReport] = {}
    dumps = []
    for k in range(cfg.runs):
        path = checkpoint_path(cfg.checkpoint, k, cfg.runs)
        if not Path(path).is_file():
            raise ConfigError(f"checkpoint not found: {path}")
        model = Model.load(path, emb)
        if model.header["task"] != cfg.task or model.header["cell"] != cfg.cell:
            raise CheckpointMismatch(
                f"{path} holds a {model.header['cell']}/{model.header['task']} model, "
                f"config asks for {cfg.cell}/{cfg.task}"
            )
        examples = to_examples(records, model.task, model.class_names)
        for name, value in evaluate(model, examples).items():
            reports.setdefault(name, EvalReport(name, samples=len(examples))).per_run.append(value)
        if k == 0:
            dumps = [format_prediction(model.forward(ex.tree), i) for i, ex in enumerate(examples)]
    table = format_report(list(reports.values()))
    if cfg.out:
        out = _outdir(cfg)
        (out / "report.tsv").write_text(table, encoding="utf-8")
        (out / "predictions.tsv").write_text("\n".join(dumps) + "\n", encoding="utf-8")
    sys.stdout.write(table)
    return 0


def gradcheck_instance(cfg: RunConfig, size: int = 6):
    """A small random model + tree + target for finite-difference checks."""
    rng = np.random.default_rng(cfg.seed)
    tree = None
    while tree is None or tree.size > 8:
        tree = from_nested(label_shape(random_shape(rng, max_nodes=size), rng))
    num_classes = 3
    task = TaskSpec(cfg.task, num_classes, "all")
    encoder = InputEncoder.fit([tree])
    model = Model.build(task, cfg.cell, 3, encoder, cfg.seed, arity=max(tree.max_outdegree, 1))
    # nudge biases off zero so every gate is exercised
    for p in model.parameters():
        if p.name.rsplit(".", 1)[-1].startswith("b"):
            p.value[...] = rng.uniform(-0.5, 0.5, p.value.shape)
    if cfg.task == SUPERSOURCE:
        target = int(rng.integers(num_classes))
    elif cfg.task == RELABEL:
        target = {u: int(rng.integers(num_classes)) for u in tree.nodes}
    else:
        target = {u: int(rng.integers(2)) for u in tree.nodes}
    return model, tree, target


def cmd_gradcheck(cfg: RunConfig) -> int:
    model, tree, target = gradcheck_instance(cfg)
    params = model.parameters()

    def build():
        return regularized_loss(loss(model.task, model.forward(tree), target), params, cfg.l2)

    if cfg.inject_fault:
        with ag.inject_fault(cfg.inject_fault):
            report = ag.finite_difference_check(build, params, 1e-5, 1e-4)
    else:
        report = ag.finite_difference_check(build, params, 1e-5, 1e-4)
    for name, err in report.max_rel_error.items():
        print(f"{name}\t{err:.3e}")
    worst, err = report.worst
    status = "PASS" if report.passed else "FAIL"
    print(f"{status}\tcell={cfg.cell}\ttask={cfg.task}\tmax_rel_error={err:.3e}\tworst={worst}")
    return 0 if report.passed else 1


def cmd_synth(cfg: RunConfig) -> int:
    if not cfg.kind:
        raise ConfigError("--kind is required")
    if not cfg.out:
        raise ConfigError("--out is required")
    if cfg.size < 1:
        raise ConfigError("--size must be positive")
    corpus = synth_task(cfg.kind, cfg.size, cfg.seed)
    write_corpus(corpus.records, cfg.out)
    if corpus.keywords:
        Path(cfg.out + ".keywords").write_text("\n".join(sorted(corpus.keywords)) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus.records)} records to {cfg.out}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, CheckpointMismatch, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CorpusError, ParseError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
