"""Non-GNN classifiers: an MLP on LDP histograms and multinomial logistic
regression over WL subtree features or FEATHER embeddings."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .dataset import DatasetSplit, LabeledGraphSet
from .errors import ConfigError, DatasetError, NumericalError
from .features import (
    DEFAULT_EVAL_POINTS,
    HistogramRanges,
    WlLabelTable,
    feather_embed,
    feather_node_values,
    ldp_graph_histogram,
    wl_feature_matrix,
    wl_refine,
)
from .graph import Graph
from .numerics import (
    Param,
    adam_step,
    affine_backward,
    affine_forward,
    derive_seed,
    dropout_backward,
    dropout_forward,
    glorot_init,
    make_rng,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from .training import EpochRecord

# tested values of the reference grid search
GRIDS = {
    "mlp": {"num_layers": (5, 6), "hidden_dim": (64, 128), "learning_rate": (0.001, 0.0001)},
    "wl": {"iterations": (5, 6)},
    "feather": {"order": (2, 5, 10)},
}


class FeedForward:
    """Stack of affine layers with ReLU and dropout between them.

    ``num_layers=1`` is plain multinomial logistic regression.
    """

    def __init__(self, in_dim, num_classes, num_layers, hidden_dim, dropout_rate, seed):
        rng = make_rng(derive_seed(seed, "init"))
        self.dropout_rng = make_rng(derive_seed(seed, "dropout"))
        self.dropout_rate = dropout_rate
        dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [num_classes]
        self.layers = [
            (Param(f"fc{i}.weight", glorot_init(a, b, rng)), Param(f"fc{i}.bias", np.zeros((1, b))))
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    @property
    def params(self) -> List[Param]:
        return [p for pair in self.layers for p in pair]

    def forward(self, x, training=False):
        caches = []
        h = x
        for i, (w, b) in enumerate(self.layers):
            h, c = affine_forward(h, w, b)
            caches.append(c)
            if i < len(self.layers) - 1:
                h, cr = relu_forward(h)
                h, cd = dropout_forward(h, self.dropout_rate, self.dropout_rng, training)
                caches.append((cr, cd))
        self._caches = caches
        return h

    def backward(self, d):
        caches = list(self._caches)
        for i in reversed(range(len(self.layers))):
            if i < len(self.layers) - 1:
                cr, cd = caches.pop()
                d = relu_backward(dropout_backward(d, cd), cr)
            d = affine_backward(d, caches.pop())
        return d

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params}

    def load_state_dict(self, state) -> None:
        for p in self.params:
            p.value[...] = state[p.name]


def _check_labels(labels: np.ndarray) -> None:
    if np.unique(labels).size < 2:
        raise DatasetError("training set contains a single class")


# ---------------------------------------------------------------------------
# MLP on LDP histograms

@dataclass
class MLPConfig:
    num_layers: int = 5
    hidden_dim: int = 64
    learning_rate: float = 1e-3
    dropout_rate: float = 0.5
    epochs: int = 50
    batch_size: int = 32
    bins: int = 32
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.bins < 2:
            raise ConfigError("MLP needs num_layers >= 1, hidden_dim >= 1 and bins >= 2")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


class MLPBaseline:
    kind = "mlp"

    def __init__(self, config: MLPConfig, num_classes: int, class_names=None):
        self.config = config
        self.num_classes = num_classes
        self.class_names = list(class_names or [])
        self.ranges: Optional[HistogramRanges] = None
        self.net = FeedForward(
            5 * config.bins, num_classes, config.num_layers, config.hidden_dim,
            config.dropout_rate, config.seed,
        )
        self.epochs_run = 0

    def off_grid(self) -> List[str]:
        c = asdict(self.config)
        return [k for k, vals in GRIDS["mlp"].items() if c[k] not in vals]

    def features(self, graphs: Sequence[Graph]) -> np.ndarray:
        return np.stack([ldp_graph_histogram(g, self.config.bins, self.ranges) for g in graphs])

    def fit(self, data: LabeledGraphSet, split: DatasetSplit) -> List[EpochRecord]:
        cfg = self.config
        y = data.labels
        _check_labels(y[split.train_idx])
        self.ranges = HistogramRanges.fit(data.graphs[i] for i in split.train_idx)
        x = self.features(data.graphs)
        rng = make_rng(derive_seed(cfg.seed, "shuffle"))
        history, best_acc, best = [], -1.0, None
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(split.train_idx)
            losses = []
            for s in range(0, order.size, cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                loss, d = softmax_cross_entropy(self.net.forward(x[idx], training=True), y[idx])
                if not np.isfinite(loss):
                    raise NumericalError(f"NaN loss at epoch {epoch}")
                self.net.backward(d)
                adam_step(self.net.params, cfg.learning_rate, weight_decay=cfg.weight_decay)
                losses.append(loss * idx.size)
            val = float(np.mean(self.net.forward(x[split.val_idx]).argmax(1) == y[split.val_idx]))
            history.append(EpochRecord(epoch, float(np.sum(losses) / order.size), val))
            if val > best_acc:
                best_acc, best = val, self.net.state_dict()
        if best is not None:
            self.net.load_state_dict(best)
        self.epochs_run = len(history)
        return history

    def predict(self, graphs: Sequence[Graph]) -> np.ndarray:
        return self.net.forward(self.features(list(graphs))).argmax(axis=1)

    def state(self) -> Tuple[dict, Dict[str, np.ndarray]]:
        meta = {
            "model": {"kind": "mlp", "config": asdict(self.config), "num_classes": self.num_classes},
            "class_names": self.class_names,
            "epochs_run": self.epochs_run,
            "log_scale": self.ranges.log_scale,
        }
        tensors = {f"param/{k}": v for k, v in self.net.state_dict().items()}
        tensors["ranges/low"] = self.ranges.low.reshape(1, -1)
        tensors["ranges/high"] = self.ranges.high.reshape(1, -1)
        return meta, tensors

    @classmethod
    def from_state(cls, meta, tensors) -> "MLPBaseline":
        m = meta["model"]
        obj = cls(MLPConfig(**m["config"]), m["num_classes"], meta["class_names"])
        obj.net.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
        obj.ranges = HistogramRanges(
            tensors["ranges/low"].reshape(-1), tensors["ranges/high"].reshape(-1), meta["log_scale"]
        )
        obj.epochs_run = int(meta.get("epochs_run", 0))
        return obj


# ---------------------------------------------------------------------------
# logistic regression on WL / FEATHER features

@dataclass
class LinearConfig:
    kind: str = "feather"
    iterations: int = 6
    order: int = 2
    learning_rate: float = 0.01
    l2: float = 1e-4
    max_epochs: int = 500
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("wl", "feather"):
            raise ConfigError(f"kernel baseline kind must be 'wl' or 'feather', got {self.kind!r}")
        if self.iterations < 0 or self.order < 1:
            raise ConfigError("WL iterations must be >= 0 and FEATHER order >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


class KernelFeatureClassifier:
    """Multinomial logistic regression (L2-penalized, full-batch Adam).

    WL label frequencies stay sparse and unscaled; FEATHER embeddings are
    standardized with training-set statistics.
    """

    def __init__(self, config: LinearConfig, num_classes: int, class_names=None):
        self.config = config
        self.kind = config.kind
        self.num_classes = num_classes
        self.class_names = list(class_names or [])
        self.table: Optional[WlLabelTable] = None
        self.mean = self.scale = None
        self.weight: Optional[Param] = None
        self.bias: Optional[Param] = None
        self.epochs_run = 0

    def off_grid(self) -> List[str]:
        key = "iterations" if self.kind == "wl" else "order"
        value = getattr(self.config, key)
        return [] if value in GRIDS[self.kind][key] else [key]

    def features(self, graphs: Sequence[Graph]):
        if self.kind == "wl":
            vecs = [wl_refine(g, self.config.iterations, self.table) for g in graphs]
            return sp.csr_matrix(wl_feature_matrix(vecs, len(self.table)))
        raw = np.stack(
            [feather_embed(g, feather_node_values(g), DEFAULT_EVAL_POINTS, self.config.order) for g in graphs]
        )
        if self.mean is None:
            return raw
        return (raw - self.mean) / self.scale

    def _logits(self, x) -> np.ndarray:
        return np.asarray(x @ self.weight.value) + self.bias.value

    def fit_arrays(self, graphs: Sequence[Graph], labels: np.ndarray) -> List[float]:
        """Train on ``graphs``; returns the per-epoch penalized loss."""
        cfg = self.config
        labels = np.asarray(labels, dtype=np.int64)
        _check_labels(labels)
        self.mean = self.scale = None
        if self.kind == "wl":
            self.table = WlLabelTable()
        x = self.features(graphs)
        if self.kind == "wl":
            self.table.frozen = True
            if x.nnz == 0:
                raise DatasetError("feature matrix is all zeros")
        else:
            if not np.any(x):
                raise DatasetError("feature matrix is all zeros")
            self.mean = x.mean(axis=0, keepdims=True)
            std = x.std(axis=0, keepdims=True)
            self.scale = np.where(std > 0, std, 1.0)
            x = (x - self.mean) / self.scale
        rng = make_rng(derive_seed(cfg.seed, "init"))
        self.weight = Param("linear.weight", glorot_init(x.shape[1], self.num_classes, rng))
        self.bias = Param("linear.bias", np.zeros((1, self.num_classes)))
        xt = x.T
        losses: List[float] = []
        for epoch in range(cfg.max_epochs):
            loss, d = softmax_cross_entropy(self._logits(x), labels)
            loss += 0.5 * cfg.l2 * float(np.sum(self.weight.value ** 2))
            if not np.isfinite(loss):
                raise NumericalError(f"NaN loss at epoch {epoch + 1}")
            self.weight.grad += np.asarray(xt @ d) + cfg.l2 * self.weight.value
            self.bias.grad += d.sum(axis=0, keepdims=True)
            adam_step([self.weight, self.bias], cfg.learning_rate)
            losses.append(loss)
            if len(losses) > 1 and abs(losses[-2] - losses[-1]) < cfg.tol:
                break
        self.epochs_run = len(losses)
        return losses

    def fit(self, data: LabeledGraphSet, split: DatasetSplit) -> List[float]:
        return self.fit_arrays([data.graphs[i] for i in split.train_idx], data.labels[split.train_idx])

    def predict(self, graphs: Sequence[Graph]) -> np.ndarray:
        return self._logits(self.features(list(graphs))).argmax(axis=1)

    def state(self) -> Tuple[dict, Dict[str, np.ndarray]]:
        meta = {
            "model": {"kind": self.kind, "config": asdict(self.config), "num_classes": self.num_classes},
            "class_names": self.class_names,
            "epochs_run": self.epochs_run,
        }
        tensors = {"param/linear.weight": self.weight.value, "param/linear.bias": self.bias.value}
        if self.table is not None:
            meta["wl_table"] = self.table.to_json()
        if self.mean is not None:
            tensors["features/mean"] = self.mean
            tensors["features/scale"] = self.scale
        return meta, tensors

    @classmethod
    def from_state(cls, meta, tensors) -> "KernelFeatureClassifier":
        m = meta["model"]
        obj = cls(LinearConfig(**m["config"]), m["num_classes"], meta["class_names"])
        if "wl_table" in meta:
            obj.table = WlLabelTable.from_json(meta["wl_table"])
        if "features/mean" in tensors:
            obj.mean = tensors["features/mean"]
            obj.scale = tensors["features/scale"]
        obj.weight = Param("linear.weight", tensors["param/linear.weight"])
        obj.bias = Param("linear.bias", tensors["param/linear.bias"])
        obj.epochs_run = int(meta.get("epochs_run", 0))
        return obj
