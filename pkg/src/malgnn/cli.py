"""Command-line entry point: ``malgnn train | eval | embed | stats``.

Exit codes: 0 success, 1 configuration or checkpoint error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .baselines import KernelFeatureClassifier, LinearConfig, MLPBaseline, MLPConfig
from .dataset import (
    LabeledGraphSet,
    family_stats,
    format_family_stats,
    load_malnet_dir,
    stratified_split,
    synth_families,
)
from .errors import CheckpointError, ConfigError, DatasetError, NumericalError, ShapeError
from .features import LdpScaler
from .gnn import ARCHITECTURES, GNNModel, ModelConfig
from .numerics import derive_seed
from .persistence import load_classifier, save_classifier
from .training import GNNClassifier, evaluate, node_features, train_gnn

log = logging.getLogger("malgnn")

BASELINES = ("mlp", "wl", "feather")

# best grid values per architecture: (layers, hidden, learning rate)
ARCH_DEFAULTS = {
    "gcn": (6, 128, 1e-3),
    "sage": (6, 64, 1e-3),
    "gin": (6, 64, 1e-3),
    "sgc": (5, 128, 1e-3),
    "jk-gcn": (6, 128, 1e-3),
    "jk-sage": (6, 128, 1e-3),
    "jk-gin": (6, 128, 1e-3),
    "mlp": (5, 64, 1e-3),
    "wl": (None, None, 1e-2),
    "feather": (None, None, 1e-2),
}

# values tried in the reference grid search for every message-passing model
GNN_GRID = {"layers": (5, 6), "hidden": (64, 128), "lr": (1e-3, 1e-4)}

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


@dataclass
class RunConfig:
    command: str = "train"
    data: Optional[str] = None
    synthetic: Optional[int] = None
    arch: Optional[str] = None
    layers: Optional[int] = None
    hidden: Optional[int] = None
    lr: Optional[float] = None
    wd: float = 0.0
    dropout: float = 0.5
    epochs: Optional[int] = None
    batch: int = 32
    split: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    out: Optional[str] = None
    iterations: int = 6
    order: int = 2
    bins: int = 32

    def resolve(self) -> "RunConfig":
        """Fill architecture defaults and validate."""
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("give exactly one dataset source: --data DIR or --synthetic N")
        if self.synthetic is not None and self.synthetic < 1:
            raise ConfigError(f"--synthetic must be at least 1, got {self.synthetic}")
        if self.command == "train":
            if self.arch not in ARCH_DEFAULTS:
                raise ConfigError(f"--arch must be one of {sorted(ARCH_DEFAULTS)}, got {self.arch!r}")
            layers, hidden, lr = ARCH_DEFAULTS[self.arch]
            self.layers = layers if self.layers is None else self.layers
            self.hidden = hidden if self.hidden is None else self.hidden
            self.lr = lr if self.lr is None else self.lr
            if self.epochs is None:
                self.epochs = 50 if self.arch == "mlp" else 500 if self.arch in ("wl", "feather") else 200
            if not self.lr > 0:
                raise ConfigError(f"--lr must be positive, got {self.lr}")
            if self.wd < 0:
                raise ConfigError(f"--wd must be non-negative, got {self.wd}")
            if not 0 <= self.dropout < 1:
                raise ConfigError(f"--dropout must lie in [0, 1), got {self.dropout}")
            if self.epochs < 0 or self.batch < 1:
                raise ConfigError("--epochs must be >= 0 and --batch >= 1")
        self.split = tuple(float(r) for r in self.split)
        if len(self.split) != 3 or min(self.split) <= 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError(f"--split needs three positive ratios summing to 1, got {self.split}")
        if self.out is None:
            raise ConfigError("--out DIR is required")
        return self

    def seeds(self) -> dict:
        return {
            "base": self.seed,
            "split": derive_seed(self.seed, "split"),
            "synth": derive_seed(self.seed, "synth"),
            "model": self.seed,
        }


# ---------------------------------------------------------------------------
# argument handling

def _split_arg(text: str) -> Tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ratios, got {text!r}")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ratios, got {text!r}")
    return parts


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="malgnn", description="Function-call-graph family classification.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_flags(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--data", metavar="DIR", help="MalNet-style root: <root>/<family>/*.edgelist")
        src.add_argument("--synthetic", metavar="N", type=int, help="synthetic corpus, N graphs per family")
        sp.add_argument("--split", type=_split_arg, metavar="R,R,R")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR", help="output directory (required except for stats)")
        sp.add_argument("--config", metavar="FILE", help="JSON file with flag values; flags win")
        sp.add_argument("-v", "--verbose", action="store_true")

    t = sub.add_parser("train", help="train a GNN or baseline")
    data_flags(t)
    t.add_argument("--arch", choices=ARCHITECTURES + BASELINES)
    t.add_argument("--layers", type=int, help="message-passing layers / SGC depth / MLP layers")
    t.add_argument("--hidden", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--wd", type=float, help="decoupled weight decay")
    t.add_argument("--dropout", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--iterations", type=int, help="WL refinement iterations")
    t.add_argument("--order", type=int, help="FEATHER random-walk order")
    t.add_argument("--bins", type=int, help="MLP histogram bins per LDP channel")

    for name, helptext in (("eval", "evaluate a checkpoint"), ("embed", "export graph embeddings")):
        e = sub.add_parser(name, help=helptext)
        data_flags(e)
        e.add_argument("--checkpoint", required=True, metavar="FILE")
        e.add_argument("--arch", help="expected architecture; mismatch is an error")
        if name == "eval":
            e.add_argument("--subset", choices=("train", "val", "test"), default="test")

    s = sub.add_parser("stats", help="per-family graph statistics")
    data_flags(s)
    return p


def _load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for k, v in raw.items():
        key = k.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown key {k!r} in config file {path}")
        out[key] = v
    return out


def run_config_from_args(args, base: Optional[dict] = None) -> RunConfig:
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update(_load_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if values.get("data") is not None and getattr(args, "synthetic", None) is None and args.data is not None:
        values["synthetic"] = None
    if getattr(args, "synthetic", None) is not None:
        values["data"] = None
    values["command"] = args.command
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# helpers

def _out_dir(path) -> Path:
    out = Path(path)
    if not out.parent.exists():
        raise ConfigError(f"output directory {out} cannot be created: parent does not exist")
    try:
        out.mkdir(exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _dataset(cfg: RunConfig) -> LabeledGraphSet:
    if cfg.data is not None:
        return load_malnet_dir(cfg.data)
    return synth_families(cfg.synthetic, cfg.seeds()["synth"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_confusion(path: Path, confusion, class_names) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\predicted", *class_names])
        for name, row in zip(class_names, confusion):
            w.writerow([name, *row])


def _manifest(cfg: RunConfig, data: LabeledGraphSet, extra: Optional[dict] = None) -> dict:
    m = {
        "version": __version__,
        "config": asdict(cfg),
        "seeds": cfg.seeds(),
        "dataset": {
            "source": cfg.data if cfg.data is not None else f"synthetic:{cfg.synthetic}",
            "num_graphs": len(data),
            "class_names": data.class_names,
        },
    }
    m.update(extra or {})
    return m


def _build(cfg: RunConfig, data: LabeledGraphSet):
    seed = cfg.seeds()["model"]
    if cfg.arch == "mlp":
        return MLPBaseline(
            MLPConfig(cfg.layers, cfg.hidden, cfg.lr, cfg.dropout, cfg.epochs, cfg.batch, cfg.bins, cfg.wd, seed),
            data.num_classes, data.class_names,
        )
    if cfg.arch in ("wl", "feather"):
        return KernelFeatureClassifier(
            LinearConfig(cfg.arch, cfg.iterations, cfg.order, cfg.lr, max_epochs=cfg.epochs, seed=seed),
            data.num_classes, data.class_names,
        )
    mc = ModelConfig(cfg.arch, cfg.layers, cfg.hidden, cfg.lr, cfg.wd, cfg.dropout, cfg.epochs, cfg.batch, seed)
    return GNNModel(mc, 5, data.num_classes)


# ---------------------------------------------------------------------------
# commands

def cmd_train(cfg: RunConfig) -> int:
    cfg.resolve()
    out = _out_dir(cfg.out)
    t0 = time.perf_counter()
    data = _dataset(cfg)
    split = stratified_split(data, cfg.split, cfg.seeds()["split"])
    model = _build(cfg, data)
    history_rows: List[list] = []
    if isinstance(model, GNNModel):
        scaler = LdpScaler.fit(data.graphs[i] for i in split.train_idx)
        feats = node_features(data.graphs, scaler)
        _, history = train_gnn(
            model, data, split, feats,
            progress=lambda r: log.info("epoch %d loss %.4f val %.4f", r.epoch, r.train_loss, r.val_accuracy),
        )
        clf = GNNClassifier(model, scaler, data.class_names)
        history_rows = [[r.epoch, repr(r.train_loss), repr(r.val_accuracy)] for r in history]
        off_grid = [k for k, vals in GNN_GRID.items() if getattr(cfg, k) not in vals]
    else:
        clf = model
        hist = clf.fit(data, split)
        if isinstance(clf, MLPBaseline):
            history_rows = [[r.epoch, repr(r.train_loss), repr(r.val_accuracy)] for r in hist]
        else:
            history_rows = [[i + 1, repr(loss), ""] for i, loss in enumerate(hist)]
        off_grid = clf.off_grid()
    reports = {part: evaluate(clf, data, split.part(part)) for part in ("train", "val", "test")}
    runtime = time.perf_counter() - t0
    reports["test"].runtime_seconds = runtime

    manifest = _manifest(cfg, data, {"off_grid_hyperparameters": off_grid})
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "metrics.json", {k: r.to_dict(include_runtime=False) for k, r in reports.items()})
    _write_json(out / "timing.json", {"runtime_seconds": runtime})
    _write_confusion(out / "confusion.csv", reports["test"].confusion, data.class_names)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_accuracy"])
        w.writerows(history_rows)
    run = asdict(cfg)
    run.pop("out")  # keep the checkpoint independent of where it was written
    save_classifier(out / "model.ckpt", clf, run=run)
    t = reports["test"]
    print(f"{cfg.arch}: test accuracy {t.accuracy:.4f}, macro-F1 {t.macro_f1:.4f}, {runtime:.1f}s")
    return 0


def _checkpoint_run(args) -> Tuple[object, dict, RunConfig]:
    clf, meta = load_classifier(args.checkpoint)
    stored = dict(meta.get("run") or {})
    stored["split"] = tuple(stored.get("split", (0.7, 0.1, 0.2)))
    for k in ("out", "command"):
        stored.pop(k, None)
    cfg = run_config_from_args(args, stored)
    kind = meta["model"]["kind"]
    arch = meta["model"]["config"]["architecture"] if kind == "gnn" else kind
    if args.arch is not None and args.arch != arch:
        raise CheckpointError(f"checkpoint holds architecture {arch!r}, not {args.arch!r}")
    cfg.arch = arch
    return clf, meta, cfg.resolve()


def _check_classes(clf, data: LabeledGraphSet) -> None:
    if list(clf.class_names) != list(data.class_names):
        raise CheckpointError(
            f"checkpoint classes {clf.class_names} differ from dataset classes {data.class_names}"
        )


def cmd_eval(args) -> int:
    clf, meta, cfg = _checkpoint_run(args)
    out = _out_dir(cfg.out)
    data = _dataset(cfg)
    _check_classes(clf, data)
    split = stratified_split(data, cfg.split, cfg.seeds()["split"])
    idx = split.part(args.subset)
    if idx.size == 0:
        raise DatasetError(f"the {args.subset} split is empty")
    t0 = time.perf_counter()
    report = evaluate(clf, data, idx)
    report.runtime_seconds = time.perf_counter() - t0
    _write_json(out / "manifest.json", _manifest(cfg, data, {"checkpoint": str(args.checkpoint), "subset": args.subset}))
    _write_json(out / "metrics.json", {args.subset: report.to_dict(include_runtime=False)})
    _write_json(out / "timing.json", {"runtime_seconds": report.runtime_seconds})
    _write_confusion(out / "confusion.csv", report.confusion, data.class_names)
    print(f"{args.subset}: accuracy {report.accuracy:.4f}, macro-F1 {report.macro_f1:.4f}")
    return 0


def cmd_embed(args) -> int:
    clf, meta, cfg = _checkpoint_run(args)
    if not isinstance(clf, GNNClassifier):
        raise ConfigError("embedding export needs a GNN checkpoint")
    out = _out_dir(cfg.out)
    data = _dataset(cfg)
    _check_classes(clf, data)
    if len(data) == 0:
        raise DatasetError("dataset is empty")
    emb = clf.embed(data.graphs)
    with open(out / "embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graph_id", "label", *(f"e_{j}" for j in range(emb.shape[1]))])
        for i, row in enumerate(emb):
            w.writerow([i, data.class_names[data.labels[i]], *(repr(float(v)) for v in row)])
    _write_json(out / "manifest.json", _manifest(cfg, data, {"checkpoint": str(args.checkpoint)}))
    print(f"wrote {emb.shape[0]} embeddings of width {emb.shape[1]} to {out / 'embeddings.csv'}")
    return 0


def cmd_stats(args) -> int:
    cfg = run_config_from_args(args)
    if (cfg.data is None) == (cfg.synthetic is None):
        raise ConfigError("give exactly one dataset source: --data DIR or --synthetic N")
    data = _dataset(cfg)
    table = format_family_stats(family_stats(data))
    print(table)
    if cfg.out is not None:
        out = _out_dir(cfg.out)
        (out / "stats.tsv").write_text(table + "\n")
        _write_json(out / "manifest.json", _manifest(cfg, data))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(message)s",
        )
        # overflow is detected explicitly and reported as a numerical failure
        with np.errstate(over="ignore", invalid="ignore"):
            if args.command == "train":
                return cmd_train(run_config_from_args(args))
            return {"eval": cmd_eval, "embed": cmd_embed, "stats": cmd_stats}[args.command](args)
    except (ConfigError, CheckpointError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
