"""Message-passing graph classifiers on top of the numerics engine.

Layers follow the ``*_forward`` / ``*_backward`` convention of
:mod:`malgnn.numerics`. :class:`GNNModel` stacks them for one of the
architectures in :data:`ARCHITECTURES` and owns all parameters.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import Graph, disjoint_union
from .numerics import (
    BatchNorm,
    Param,
    SparseOperator,
    affine_backward,
    affine_forward,
    canonical_matmul,
    derive_seed,
    dropout_backward,
    dropout_forward,
    glorot_init,
    make_rng,
    relu_backward,
    relu_forward,
)

ARCHITECTURES = ("gcn", "sage", "gin", "sgc", "jk-gcn", "jk-sage", "jk-gin")


@dataclass
class ModelConfig:
    architecture: str = "gcn"
    num_layers: int = 6
    hidden_dim: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    dropout_rate: float = 0.5
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.num_layers < 1 and self.architecture != "sgc":
            raise ConfigError(f"num_layers must be at least 1, got {self.num_layers}")
        if self.num_layers < 0:
            raise ConfigError(f"propagation depth must be non-negative, got {self.num_layers}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be at least 1, got {self.hidden_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# adjacency operators

def normalized_adjacency(g: Graph) -> SparseOperator:
    """Symmetric-normalized adjacency with self-loops, D^-1/2 (A + I) D^-1/2."""
    n = g.num_nodes
    loops = np.arange(n, dtype=np.int64)
    rows = np.concatenate([g.row_ids, loops])
    cols = np.concatenate([g.col_indices, loops])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    d = g.degrees + 1.0
    data = 1.0 / np.sqrt(d[rows] * d[cols])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(g.degrees + 1, out=indptr[1:])
    return SparseOperator(indptr, cols, data, (n, n))


def mean_adjacency(g: Graph) -> SparseOperator:
    """Neighbour averaging; isolated nodes receive a zero row."""
    deg = np.maximum(g.degrees, 1)
    data = 1.0 / deg[g.row_ids]
    return SparseOperator(g.row_offsets, g.col_indices, data, (g.num_nodes, g.num_nodes))


def sum_adjacency(g: Graph) -> SparseOperator:
    return SparseOperator(
        g.row_offsets, g.col_indices, np.ones(g.col_indices.size), (g.num_nodes, g.num_nodes)
    )


# ---------------------------------------------------------------------------
# batching

@dataclass(eq=False)
class BatchedGraph:
    """Block-diagonal union of several graphs."""

    graph: Graph
    graph_id: np.ndarray
    num_graphs: int

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.graph_id, minlength=self.num_graphs)

    @cached_property
    def gcn_adjacency(self) -> SparseOperator:
        return normalized_adjacency(self.graph)

    @cached_property
    def mean_adjacency(self) -> SparseOperator:
        return mean_adjacency(self.graph)

    @cached_property
    def sum_adjacency(self) -> SparseOperator:
        return sum_adjacency(self.graph)

    @cached_property
    def pool_operator(self) -> SparseOperator:
        sizes = self.sizes
        if np.any(sizes == 0):
            raise ShapeError("batch contains a graph without nodes")
        indptr = np.concatenate([[0], np.cumsum(sizes)])
        n = self.graph.num_nodes
        return SparseOperator(
            indptr, np.arange(n), 1.0 / sizes[self.graph_id], (self.num_graphs, n)
        )


def batch(graphs: Sequence[Graph], features: Optional[Sequence[np.ndarray]] = None):
    """Merge graphs block-diagonally; returns ``(BatchedGraph, stacked features)``."""
    graphs = list(graphs)
    if features is not None:
        if len(features) != len(graphs):
            raise ShapeError(f"{len(features)} feature matrices for {len(graphs)} graphs")
        widths = {np.shape(f)[1] for f in features}
        if len(widths) > 1:
            raise ShapeError(f"feature matrices disagree on width: {sorted(widths)}")
        for g, f in zip(graphs, features):
            if np.shape(f)[0] != g.num_nodes:
                raise ShapeError(f"{np.shape(f)[0]} feature rows for a {g.num_nodes}-node graph")
    merged = disjoint_union(graphs)
    gid = np.repeat(np.arange(len(graphs)), [g.num_nodes for g in graphs])
    bg = BatchedGraph(merged, gid, len(graphs))
    if features is None:
        return bg, None
    if graphs:
        x = np.concatenate([np.asarray(f, dtype=np.float64) for f in features])
    else:
        x = np.zeros((0, 0))
    return bg, x


def as_batch(g) -> BatchedGraph:
    if isinstance(g, BatchedGraph):
        return g
    return batch([g])[0]


# ---------------------------------------------------------------------------
# layers

def gcn_forward(
    h, adj: SparseOperator, w: Param, b: Param, activation: bool = True, exact: bool = True
):
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"GCN layer expects width {w.shape[0]}, got {h.shape}")
    hw = canonical_matmul(h, w.value, exact)
    pre = adj.apply(hw, exact) + b.value
    if activation:
        out, mask = relu_forward(pre)
    else:
        out, mask = pre, None
    return out, (h, adj, w, b, mask)


def gcn_backward(dout, cache):
    h, adj, w, b, mask = cache
    dpre = dout if mask is None else relu_backward(dout, mask)
    b.grad += dpre.sum(axis=0, keepdims=True)
    dhw = adj.apply_transpose(dpre)
    w.grad += h.T @ dhw
    return dhw @ w.value.T


def sage_forward(
    h,
    adj: SparseOperator,
    w_self: Param,
    w_neigh: Param,
    b: Param,
    bn: Optional[BatchNorm] = None,
    training: bool = False,
    activation: bool = True,
    exact: bool = True,
):
    """``relu(bn(h W_self + mean_nbr(h) W_neigh + b))``; empty neighbourhoods add zero."""
    if h.shape[1] != w_self.shape[0] or w_neigh.shape != w_self.shape:
        raise ShapeError(f"SAGE layer expects width {w_self.shape[0]}, got {h.shape}")
    nb = adj.apply(h, exact)
    pre = (
        canonical_matmul(h, w_self.value, exact)
        + canonical_matmul(nb, w_neigh.value, exact)
        + b.value
    )
    bn_cache = None
    if bn is not None:
        pre, bn_cache = bn.forward(pre, training)
    mask = None
    out = pre
    if activation:
        out, mask = relu_forward(pre)
    return out, (h, nb, adj, w_self, w_neigh, b, bn, bn_cache, mask)


def sage_backward(dout, cache):
    h, nb, adj, w_self, w_neigh, b, bn, bn_cache, mask = cache
    d = dout if mask is None else relu_backward(dout, mask)
    if bn is not None:
        d = bn.backward(d, bn_cache)
    b.grad += d.sum(axis=0, keepdims=True)
    w_self.grad += h.T @ d
    w_neigh.grad += nb.T @ d
    dnb = d @ w_neigh.value.T
    return d @ w_self.value.T + adj.apply_transpose(dnb)


def gin_forward(
    h,
    adj: SparseOperator,
    eps: Param,
    w1: Param,
    b1: Param,
    w2: Param,
    b2: Param,
    activation: bool = True,
    exact: bool = True,
):
    """``mlp((1 + eps) h_v + sum of neighbour h_u)`` with a two-layer MLP."""
    if h.shape[1] != w1.shape[0]:
        raise ShapeError(f"GIN layer expects width {w1.shape[0]}, got {h.shape}")
    z = (1.0 + eps.value[0, 0]) * h + adj.apply(h, exact)
    a1, c1 = affine_forward(z, w1, b1, exact)
    r, cr = relu_forward(a1)
    out, c2 = affine_forward(r, w2, b2, exact)
    mask = None
    if activation:
        out, mask = relu_forward(out)
    return out, (h, adj, eps, c1, cr, c2, mask)


def gin_backward(dout, cache):
    h, adj, eps, c1, cr, c2, mask = cache
    d = dout if mask is None else relu_backward(dout, mask)
    d = affine_backward(d, c2)
    d = relu_backward(d, cr)
    dz = affine_backward(d, c1)
    eps.grad += np.sum(dz * h)
    return (1.0 + eps.value[0, 0]) * dz + adj.apply_transpose(dz)


def jk_concat(per_layer: Sequence[np.ndarray]) -> np.ndarray:
    rows = {m.shape[0] for m in per_layer}
    if len(rows) != 1:
        raise ShapeError(f"layer outputs disagree on row count: {sorted(rows)}")
    return np.concatenate(list(per_layer), axis=1)


def jk_split(d: np.ndarray, widths: Sequence[int]) -> List[np.ndarray]:
    return np.split(d, np.cumsum(widths)[:-1], axis=1)


def global_mean_pool(h: np.ndarray, bg: BatchedGraph, exact: bool = True):
    if h.shape[0] != bg.graph.num_nodes:
        raise ShapeError(f"{h.shape[0]} node rows for a batch of {bg.graph.num_nodes} nodes")
    op = bg.pool_operator
    return op.apply(h, exact), op


def global_mean_pool_backward(dout: np.ndarray, op: SparseOperator) -> np.ndarray:
    return op.apply_transpose(dout)


def propagate(x: np.ndarray, adj: SparseOperator, k: int, exact: bool = True) -> np.ndarray:
    """``adj^k x`` as ``k`` successive sparse products."""
    for _ in range(k):
        x = adj.apply(x, exact)
    return x


def sgc_forward(x, bg: BatchedGraph, k: int, w: Param, b: Param, exact: bool = True):
    """``pool(A_hat^k x) W + b``: propagation, readout and one linear map."""
    pooled, _ = global_mean_pool(propagate(x, bg.gcn_adjacency, k, exact), bg, exact)
    logits, cache = affine_forward(pooled, w, b, exact)
    return logits, pooled, cache


# ---------------------------------------------------------------------------
# model

class GNNModel:
    """Graph classifier: message passing, mean readout and a two-layer head."""

    def __init__(self, config: ModelConfig, in_dim: int, num_classes: int):
        self.config = config
        self.in_dim = in_dim
        self.num_classes = num_classes
        arch = config.architecture
        self.jk = arch.startswith("jk-")
        self.base = arch[3:] if self.jk else arch
        rng = make_rng(derive_seed(config.seed, "init"))
        self.dropout_rng = make_rng(derive_seed(config.seed, "dropout"))
        self.layers: List[Dict[str, Param]] = []
        self.norms: List[Optional[BatchNorm]] = []
        H = config.hidden_dim
        self._params: List[Param] = []

        def param(name, value):
            p = Param(name, value)
            self._params.append(p)
            return p

        if self.base == "sgc":
            self.out = {
                "w": param("sgc.weight", glorot_init(in_dim, num_classes, rng)),
                "b": param("sgc.bias", np.zeros((1, num_classes))),
            }
            return

        for i in range(config.num_layers):
            fan_in = in_dim if i == 0 else H
            pre = f"layer{i}"
            if self.base == "gcn":
                layer = {
                    "w": param(f"{pre}.weight", glorot_init(fan_in, H, rng)),
                    "b": param(f"{pre}.bias", np.zeros((1, H))),
                }
                self.norms.append(None)
            elif self.base == "sage":
                layer = {
                    "w_self": param(f"{pre}.weight_self", glorot_init(fan_in, H, rng)),
                    "w_neigh": param(f"{pre}.weight_neigh", glorot_init(fan_in, H, rng)),
                    "b": param(f"{pre}.bias", np.zeros((1, H))),
                }
                bn = BatchNorm(H, name=f"{pre}.bn")
                self._params.extend(bn.params)
                self.norms.append(bn)
            else:
                layer = {
                    "eps": param(f"{pre}.eps", np.zeros((1, 1))),
                    "w1": param(f"{pre}.mlp0.weight", glorot_init(fan_in, H, rng)),
                    "b1": param(f"{pre}.mlp0.bias", np.zeros((1, H))),
                    "w2": param(f"{pre}.mlp1.weight", glorot_init(H, H, rng)),
                    "b2": param(f"{pre}.mlp1.bias", np.zeros((1, H))),
                }
                self.norms.append(None)
            self.layers.append(layer)
        if self.jk:
            L = config.num_layers
            self.jk_proj = {
                "w": param("jk.weight", glorot_init(L * H, H, rng)),
                "b": param("jk.bias", np.zeros((1, H))),
            }
        self.head = {
            "w1": param("head0.weight", glorot_init(H, H, rng)),
            "b1": param("head0.bias", np.zeros((1, H))),
            "w2": param("head1.weight", glorot_init(H, num_classes, rng)),
            "b2": param("head1.bias", np.zeros((1, num_classes))),
        }

    @property
    def params(self) -> List[Param]:
        return list(self._params)

    @property
    def embedding_dim(self) -> int:
        return self.in_dim if self.base == "sgc" else self.config.hidden_dim

    def zero_grad(self) -> None:
        for p in self._params:
            p.zero_grad()

    # -- forward / backward -------------------------------------------------

    def _layer_forward(self, i, h, bg, training, activation):
        p = self.layers[i]
        exact = not training
        if self.base == "gcn":
            return gcn_forward(h, bg.gcn_adjacency, p["w"], p["b"], activation, exact)
        if self.base == "sage":
            return sage_forward(
                h, bg.mean_adjacency, p["w_self"], p["w_neigh"], p["b"],
                self.norms[i], training, activation, exact,
            )
        return gin_forward(
            h, bg.sum_adjacency, p["eps"], p["w1"], p["b1"], p["w2"], p["b2"], activation, exact
        )

    def _layer_backward(self, d, cache):
        if self.base == "gcn":
            return gcn_backward(d, cache)
        if self.base == "sage":
            return sage_backward(d, cache)
        return gin_backward(d, cache)

    def forward(self, bg, x: np.ndarray, training: bool = False):
        """Returns ``(logits, pooled embeddings)`` and keeps caches for :meth:`backward`.

        Eval mode evaluates every product canonically, so isomorphic graphs get
        bit-identical outputs; training mode uses plain products.
        """
        bg = as_batch(bg)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"model expects {self.in_dim} input channels, got {x.shape}")
        if x.shape[0] != bg.graph.num_nodes:
            raise ShapeError(f"{x.shape[0]} feature rows for {bg.graph.num_nodes} nodes")
        if self.base == "sgc":
            logits, pooled, cache = sgc_forward(
                x, bg, self.config.num_layers, self.out["w"], self.out["b"], not training
            )
            self._cache = ("sgc", cache)
            return logits, pooled

        L = self.config.num_layers
        h = x
        layer_caches, outputs = [], []
        for i in range(L):
            act = self.jk or i < L - 1
            h, c = self._layer_forward(i, h, bg, training, act)
            layer_caches.append(c)
            outputs.append(h)
        exact = not training
        jk_cache = None
        if self.jk:
            h, jk_cache = affine_forward(
                jk_concat(outputs), self.jk_proj["w"], self.jk_proj["b"], exact
            )
        pooled, pool_op = global_mean_pool(h, bg, exact)
        a1, c1 = affine_forward(pooled, self.head["w1"], self.head["b1"], exact)
        r, cr = relu_forward(a1)
        dr, cd = dropout_forward(r, self.config.dropout_rate, self.dropout_rng, training)
        logits, c2 = affine_forward(dr, self.head["w2"], self.head["b2"], exact)
        self._cache = ("mp", layer_caches, jk_cache, [o.shape[1] for o in outputs], pool_op, c1, cr, cd, c2)
        return logits, pooled

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients for the last :meth:`forward` call."""
        if self._cache[0] == "sgc":
            affine_backward(dlogits, self._cache[1])
            return
        _, layer_caches, jk_cache, widths, pool_op, c1, cr, cd, c2 = self._cache
        d = affine_backward(dlogits, c2)
        d = dropout_backward(d, cd)
        d = relu_backward(d, cr)
        d = affine_backward(d, c1)
        d = global_mean_pool_backward(d, pool_op)
        if self.jk:
            parts = jk_split(affine_backward(d, jk_cache), widths)
            carry = np.zeros_like(parts[-1])
            for i in reversed(range(len(layer_caches))):
                carry = self._layer_backward(parts[i] + carry, layer_caches[i])
        else:
            for i in reversed(range(len(layer_caches))):
                d = self._layer_backward(d, layer_caches[i])

    # -- state --------------------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {p.name: p.value.copy() for p in self._params}
        for i, bn in enumerate(self.norms):
            if bn is not None:
                state[f"layer{i}.bn.running_mean"] = bn.running_mean.copy()
                state[f"layer{i}.bn.running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ShapeError(f"state mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
        for p in self._params:
            v = np.asarray(state[p.name], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ShapeError(f"{p.name}: expected shape {p.value.shape}, got {v.shape}")
            p.value[...] = v
        for i, bn in enumerate(self.norms):
            if bn is not None:
                bn.running_mean = np.array(state[f"layer{i}.bn.running_mean"], dtype=np.float64)
                bn.running_var = np.array(state[f"layer{i}.bn.running_var"], dtype=np.float64)

    def descriptor(self) -> dict:
        return {
            "kind": "gnn",
            "config": self.config.to_dict(),
            "in_dim": self.in_dim,
            "num_classes": self.num_classes,
        }


def model_forward(model: GNNModel, bg, features, training: bool = False):
    return model.forward(bg, features, training)
