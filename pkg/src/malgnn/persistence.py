"""Save and restore any trained classifier through the checkpoint container."""
from __future__ import annotations

from typing import Optional, Tuple

from .baselines import KernelFeatureClassifier, MLPBaseline
from .errors import CheckpointError, ConfigError, ShapeError
from .numerics import load_checkpoint, save_checkpoint
from .training import GNNClassifier

_KINDS = {
    "gnn": GNNClassifier,
    "mlp": MLPBaseline,
    "wl": KernelFeatureClassifier,
    "feather": KernelFeatureClassifier,
}


def save_classifier(path, clf, run: Optional[dict] = None) -> None:
    meta, tensors = clf.state()
    if run is not None:
        meta["run"] = run
    save_checkpoint(path, meta, tensors)


def load_classifier(path) -> Tuple[object, dict]:
    meta, tensors = load_checkpoint(path)
    try:
        kind = meta["model"]["kind"]
        cls = _KINDS[kind]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unknown model descriptor") from exc
    try:
        return cls.from_state(meta, tensors), meta
    except (KeyError, TypeError, ShapeError, ConfigError, ValueError) as exc:
        raise CheckpointError(f"{path}: checkpoint does not match its architecture: {exc}") from exc
