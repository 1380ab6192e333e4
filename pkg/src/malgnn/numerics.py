"""Dense float64 tensor engine with hand-written backward passes.

Tensors are plain 2-D ``float64`` numpy arrays. Every differentiable op
comes as a ``*_forward`` returning ``(out, cache)`` and a ``*_backward``
that consumes the upstream gradient and the cache, accumulates parameter
gradients into :class:`Param` objects and returns the input gradient.

Forward products are evaluated canonically: dense products run on the
distinct input rows only and sparse aggregations sum each row's terms in
an order fixed by their values. Outputs therefore depend on the multiset
of inputs, not on node numbering, which makes isomorphic graphs produce
bit-identical results.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import CheckpointError, NumericalError, ShapeError

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, name: str) -> int:
    """Named sub-seed so components draw from independent streams."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(eq=False)
class Param:
    """Trainable tensor with its gradient slot and Adam moment buffers."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64, ndmin=2)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def _as2d(x, name="x") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# canonical products

def unique_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``x`` in byte order plus the inverse index.

    The inverse doubles as a content rank: two rows share a rank iff they
    are bitwise identical, and the ordering of ranks depends only on row
    contents.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[1] == 0:
        return x[:1], np.zeros(x.shape[0], dtype=np.int64)
    keys = x.view(np.dtype((np.void, x.itemsize * x.shape[1]))).ravel()
    _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    return x[first], inv.reshape(-1)


def canonical_matmul(x: np.ndarray, w: np.ndarray, exact: bool = True) -> np.ndarray:
    """``x @ w`` where every output row depends only on the matching input row.

    ``exact=False`` falls back to a plain BLAS product (same values up to
    rounding, cheaper).
    """
    if not exact:
        return x @ w
    if x.shape[0] == 0:
        return np.zeros((0, w.shape[1]))
    u, inv = unique_rows(x)
    return (u @ w)[inv]


class SparseOperator:
    """Sparse ``n_out x n_in`` matrix whose forward products are order-canonical."""

    def __init__(self, indptr, indices, data, shape):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self.shape = (int(shape[0]), int(shape[1]))

    @cached_property
    def _rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def apply(self, h: np.ndarray, exact: bool = True) -> np.ndarray:
        """``self @ h`` summing each row's terms in a content-determined order."""
        if h.shape[0] != self.shape[1]:
            raise ShapeError(f"operator {self.shape} cannot act on {h.shape}")
        if not exact:
            return np.asarray(self.csr @ h)
        if self.indices.size == 0:
            return np.zeros((self.shape[0], h.shape[1]))
        _, rank = unique_rows(h)
        order = np.lexsort((rank[self.indices], self.data, self._rows))
        m = sp.csr_matrix(
            (self.data[order], self.indices[order], self.indptr), shape=self.shape
        )
        return np.asarray(m @ h)

    def apply_transpose(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(self.csr_t @ d)


# ---------------------------------------------------------------------------
# layers

def affine_forward(x: np.ndarray, w: Param, b: Param, exact: bool = True):
    x = _as2d(x)
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise ShapeError(
            f"affine shapes do not agree: x {x.shape}, W {w.shape}, b {b.shape}"
        )
    out = canonical_matmul(x, w.value, exact) + b.value
    return out, (x, w, b)


def affine_backward(dout: np.ndarray, cache) -> np.ndarray:
    x, w, b = cache
    w.grad += x.T @ dout
    b.grad += dout.sum(axis=0, keepdims=True)
    return dout @ w.value.T


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout * cache


def dropout_forward(x: np.ndarray, rate: float, rng: Optional[Rng], training: bool):
    """Inverted dropout; identity in eval mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout if cache is None else dout * cache


class BatchNorm:
    """Per-column batch normalization with running statistics."""

    def __init__(self, dim: int, name: str = "bn", momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Param(f"{name}.gamma", np.ones((1, dim)))
        self.beta = Param(f"{name}.beta", np.zeros((1, dim)))
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.momentum = momentum
        self.eps = eps

    @property
    def params(self) -> List[Param]:
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, training: bool):
        if x.shape[1] != self.gamma.shape[1]:
            raise ShapeError(f"batch norm over {self.gamma.shape[1]} columns got {x.shape}")
        if training:
            n = x.shape[0]
            if n < 2:
                raise ShapeError("batch norm in training mode needs at least 2 rows")
            mean = x.mean(axis=0, keepdims=True)
            var = x.var(axis=0, keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var * n / (n - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        out = self.gamma.value * xhat + self.beta.value
        return out, (xhat, inv_std, training)

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        xhat, inv_std, training = cache
        self.gamma.grad += (dout * xhat).sum(axis=0, keepdims=True)
        self.beta.grad += dout.sum(axis=0, keepdims=True)
        dxhat = dout * self.gamma.value
        if not training:
            return dxhat * inv_std
        n = dout.shape[0]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logits = _as2d(logits, "logits")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if n < 1 or t.shape[0] != n:
        raise ShapeError(f"{t.shape[0]} targets for {n} logit rows")
    if np.any((t < 0) | (t >= c)):
        raise ValueError(f"target outside [0, {c})")
    check_finite(logits, "logits")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, t]))
    d = np.exp(z - lse[:, None])
    d[rows, t] -= 1.0
    return loss, d / n


# ---------------------------------------------------------------------------
# optimisation

def adam_step(
    params: Sequence[Param],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Bias-corrected Adam with decoupled weight decay; zeroes the gradients."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {p.name!r}")
    for p in params:
        if weight_decay:
            p.value *= 1.0 - lr * weight_decay
        p.step_count += 1
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * p.grad
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * p.grad ** 2
        m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


def glorot_init(rows: int, cols: int, rng: Rng) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs positive dimensions, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def grad_check(
    closure: Callable[[], float],
    params: Sequence[Param],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[Rng] = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``closure`` must compute the loss deterministically and accumulate
    gradients into ``params``. Without ``max_entries`` every entry is checked
    when there are at most 2000 of them, otherwise a 1% sample.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    closure()
    analytic = [p.grad.copy() for p in params]
    slots = [(i, j) for i, p in enumerate(params) for j in range(p.value.size)]
    if not slots:
        return 0.0
    limit = max_entries
    if limit is None and len(slots) > 2000:
        limit = max(1, len(slots) // 100)
    if limit is not None and limit < len(slots):
        rng = rng if rng is not None else make_rng(0)
        picks = rng.choice(len(slots), size=limit, replace=False)
        slots = [slots[k] for k in np.sort(picks)]
    worst = 0.0
    for i, j in slots:
        flat = params[i].value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        plus = closure()
        flat[j] = orig - step
        minus = closure()
        flat[j] = orig
        fd = (plus - minus) / (2.0 * step)
        a = analytic[i].reshape(-1)[j]
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return float(worst)


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout (all integers little-endian):
#   b"MGNNCKPT"  magic
#   uint32       format version
#   uint64       header length in bytes
#   header       UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
#   payload      float64 little-endian values of each tensor, in header order

CHECKPOINT_MAGIC = b"MGNNCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, meta: dict, tensors: Dict[str, np.ndarray]) -> None:
    index = []
    chunks = []
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != CHECKPOINT_MAGIC or len(blob) < 20:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[20:20 + hlen].decode())
        pos = 20 + hlen
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            end = pos + 8 * count
            if end > len(blob):
                raise CheckpointError(f"{path} is truncated")
            tensors[entry["name"]] = (
                np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
            )
            pos = end
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError(f"{path} has trailing bytes")
    return header["meta"], tensors
