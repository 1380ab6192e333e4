"""Training loops, model selection and evaluation metrics."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import DatasetSplit, LabeledGraphSet
from .errors import NumericalError
from .features import LdpScaler, ldp_node_features
from .gnn import GNNModel, ModelConfig, batch
from .graph import Graph
from .numerics import adam_step, derive_seed, make_rng, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    per_class_accuracy: List[float]
    confusion: List[List[int]]
    runtime_seconds: float = 0.0
    epochs_run: int = 0

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime_seconds")
        return d


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, np.int64), np.asarray(y_pred, np.int64)), 1)
    return cm


def macro_f1(confusion) -> float:
    """Unweighted mean of per-class F1; classes with no support or predictions score 0."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    if cm.shape[0] == 0:
        return 0.0
    if cm.sum() == 0:
        warnings.warn("macro-F1 of an empty confusion matrix is reported as 0")
        return 0.0
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def metrics_from_predictions(y_true, y_pred, num_classes: int) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    cm = confusion_matrix(y_true, y_pred, num_classes)
    support = cm.sum(axis=1)
    absent = np.flatnonzero(support == 0)
    if absent.size:
        warnings.warn(f"classes {absent.tolist()} absent from the evaluated subset; their F1 counts as 0")
    per_class = np.divide(np.diag(cm), support, out=np.zeros(num_classes), where=support > 0)
    total = int(cm.sum())
    return MetricsReport(
        accuracy=float(np.trace(cm) / total) if total else 0.0,
        macro_f1=macro_f1(cm),
        per_class_accuracy=[float(v) for v in per_class],
        confusion=cm.tolist(),
    )


def evaluate(classifier, data: LabeledGraphSet, idx: Optional[Sequence[int]] = None) -> MetricsReport:
    """Metrics of ``classifier.predict`` on ``data`` (or the subset ``idx``)."""
    idx = np.arange(len(data)) if idx is None else np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot evaluate on an empty subset")
    pred = classifier.predict([data.graphs[i] for i in idx])
    report = metrics_from_predictions(data.labels[idx], pred, data.num_classes)
    report.epochs_run = int(getattr(classifier, "epochs_run", 0))
    return report


# ---------------------------------------------------------------------------
# GNN training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


def _predict_logits(model: GNNModel, graphs, feats, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
    logits, embs = [], []
    for s in range(0, len(graphs), batch_size):
        bg, x = batch(graphs[s:s + batch_size], feats[s:s + batch_size])
        lg, emb = model.forward(bg, x, training=False)
        logits.append(lg)
        embs.append(emb)
    if not logits:
        return np.zeros((0, model.num_classes)), np.zeros((0, model.embedding_dim))
    return np.concatenate(logits), np.concatenate(embs)


def node_features(graphs: Sequence[Graph], scaler: LdpScaler) -> List[np.ndarray]:
    return [ldp_node_features(g, scaler) for g in graphs]


def train_gnn(
    model: GNNModel,
    data: LabeledGraphSet,
    split: DatasetSplit,
    features: Optional[List[np.ndarray]] = None,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[GNNModel, List[EpochRecord]]:
    """Mini-batch Adam for ``model.config.epochs`` epochs.

    After every epoch the validation accuracy is recorded; the parameters of
    the best epoch (earliest on ties) are restored at the end. ``features``
    holds one node feature matrix per graph of ``data``; by default LDP
    features standardized on the training graphs.
    """
    cfg = model.config
    if features is None:
        scaler = LdpScaler.fit(data.graphs[i] for i in split.train_idx)
        features = node_features(data.graphs, scaler)
    rng = make_rng(derive_seed(cfg.seed, "shuffle"))
    val_graphs = [data.graphs[i] for i in split.val_idx]
    val_feats = [features[i] for i in split.val_idx]
    val_labels = data.labels[split.val_idx]
    history: List[EpochRecord] = []
    best_acc, best_state = -1.0, None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(split.train_idx)
        losses, weights = [], []
        for b, s in enumerate(range(0, order.size, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            bg, x = batch([data.graphs[i] for i in idx], [features[i] for i in idx])
            logits, _ = model.forward(bg, x, training=True)
            if not np.all(np.isfinite(logits)):
                raise NumericalError(f"non-finite logits at epoch {epoch}, batch {b}")
            loss, dlogits = softmax_cross_entropy(logits, data.labels[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"NaN loss at epoch {epoch}, batch {b}")
            model.backward(dlogits)
            adam_step(model.params, cfg.learning_rate, weight_decay=cfg.weight_decay)
            losses.append(loss)
            weights.append(idx.size)
        logits, _ = _predict_logits(model, val_graphs, val_feats, cfg.batch_size)
        val_acc = float(np.mean(logits.argmax(axis=1) == val_labels)) if len(val_labels) else 0.0
        rec = EpochRecord(epoch, float(np.average(losses, weights=weights)), val_acc)
        history.append(rec)
        if progress is not None:
            progress(rec)
        if val_acc > best_acc:
            best_acc, best_state = val_acc, model.state_dict()
    if best_state is not None:
        model.load_state_dict(best_state)
    model.epochs_run = len(history)
    return model, history


class GNNClassifier:
    """A trained :class:`GNNModel` together with its feature scaler and class names."""

    def __init__(self, model: GNNModel, scaler: LdpScaler, class_names: Sequence[str]):
        self.model = model
        self.scaler = scaler
        self.class_names = list(class_names)
        self.epochs_run = int(getattr(model, "epochs_run", 0))

    def _run(self, graphs):
        graphs = list(graphs)
        return _predict_logits(
            self.model, graphs, node_features(graphs, self.scaler), self.model.config.batch_size
        )

    def predict(self, graphs) -> np.ndarray:
        return self._run(graphs)[0].argmax(axis=1)

    def logits(self, graphs) -> np.ndarray:
        return self._run(graphs)[0]

    def embed(self, graphs) -> np.ndarray:
        return self._run(graphs)[1]

    def state(self) -> Tuple[dict, Dict[str, np.ndarray]]:
        meta = {
            "model": self.model.descriptor(),
            "class_names": self.class_names,
            "epochs_run": self.epochs_run,
        }
        tensors = {f"param/{k}": v for k, v in self.model.state_dict().items()}
        tensors["scaler/mean"] = self.scaler.mean.reshape(1, -1)
        tensors["scaler/std"] = self.scaler.std.reshape(1, -1)
        return meta, tensors

    @classmethod
    def from_state(cls, meta: dict, tensors: Dict[str, np.ndarray]) -> "GNNClassifier":
        desc = meta["model"]
        model = GNNModel(ModelConfig(**desc["config"]), desc["in_dim"], desc["num_classes"])
        model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
        model.epochs_run = int(meta.get("epochs_run", 0))
        scaler = LdpScaler(tensors["scaler/mean"].reshape(-1), tensors["scaler/std"].reshape(-1))
        return cls(model, scaler, meta["class_names"])


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
