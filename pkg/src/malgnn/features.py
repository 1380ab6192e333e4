"""Node and graph features: Local Degree Profile, LDP histograms,
Weisfeiler-Lehman subtree features and FEATHER embeddings."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GraphError, NumericalError, ShapeError
from .graph import Graph
from .numerics import SparseOperator

LDP_CHANNELS = (
    "degree",
    "min_neighbor_degree",
    "max_neighbor_degree",
    "mean_neighbor_degree",
    "std_neighbor_degree",
)


def ldp(g: Graph) -> np.ndarray:
    """Local Degree Profile, one row ``(d, min, max, mean, std)`` per node.

    Statistics run over the degrees of each node's neighbours; the standard
    deviation is the population one. Isolated nodes get an all-zero row.
    Sums are taken in exact integer arithmetic so rows do not depend on
    neighbour order.
    """
    deg = g.degrees.astype(np.int64)
    out = np.zeros((g.num_nodes, 5))
    out[:, 0] = deg
    has = deg > 0
    if not has.any():
        return out
    nd = deg[g.col_indices]
    starts = g.row_offsets[:-1][has]
    k = deg[has]
    s = np.add.reduceat(nd, starts)
    sq = np.add.reduceat(nd * nd, starts)
    out[has, 1] = np.minimum.reduceat(nd, starts)
    out[has, 2] = np.maximum.reduceat(nd, starts)
    out[has, 3] = s / k
    out[has, 4] = np.sqrt((k * sq - s * s).astype(np.float64)) / k
    return out


@dataclass
class LdpScaler:
    """Per-channel mean/std of ``log(1 + LDP)`` fitted on training graphs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, graphs: Iterable[Graph]) -> "LdpScaler":
        rows = np.log1p(np.concatenate([ldp(g) for g in graphs]))
        if rows.shape[0] == 0:
            raise GraphError("cannot fit LDP statistics on graphs without nodes")
        return cls(rows.mean(axis=0), rows.std(axis=0))

    def transform(self, ldp_rows: np.ndarray) -> np.ndarray:
        scale = np.where(self.std > 0, self.std, 1.0)
        return (np.log1p(ldp_rows) - self.mean) / scale


def ldp_node_features(g: Graph, stats: LdpScaler) -> np.ndarray:
    """Standardized ``log(1 + LDP)`` node features; zero-std channels are only centred."""
    return stats.transform(ldp(g))


# ---------------------------------------------------------------------------
# LDP histograms (graph-level input of the MLP baseline)

@dataclass
class HistogramRanges:
    low: np.ndarray
    high: np.ndarray
    log_scale: bool = True

    @classmethod
    def fit(cls, graphs: Iterable[Graph], log_scale: bool = True) -> "HistogramRanges":
        rows = np.concatenate([ldp(g) for g in graphs])
        if log_scale:
            rows = np.log1p(rows)
        return cls(rows.min(axis=0), rows.max(axis=0), log_scale)


def ldp_graph_histogram(
    g: Graph, bins: int = 32, ranges: Optional[HistogramRanges] = None
) -> np.ndarray:
    """Concatenated per-channel LDP histograms, each normalized to sum 1.

    Bins split ``[low, high]`` of each channel evenly; values outside the
    range land in the edge bins. Without ``ranges`` the graph's own
    log-scaled value range is used.
    """
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    if g.num_nodes == 0:
        raise GraphError("histogram of an empty graph")
    if ranges is None:
        ranges = HistogramRanges.fit([g])
    vals = ldp(g)
    if ranges.log_scale:
        vals = np.log1p(vals)
    width = ranges.high - ranges.low
    safe = np.where(width > 0, width, 1.0)
    idx = np.floor((vals - ranges.low) / safe * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    idx[:, width <= 0] = 0
    hist = np.zeros((5, bins))
    for c in range(5):
        hist[c] = np.bincount(idx[:, c], minlength=bins)
    return (hist / g.num_nodes).reshape(-1)


# ---------------------------------------------------------------------------
# Weisfeiler-Lehman subtree features

UNKNOWN_LABEL = -1


class WlLabelTable:
    """Corpus-wide signature -> label id compression.

    Ids are handed out in first-encounter order. Once frozen, unseen
    signatures map to ``UNKNOWN_LABEL`` instead of growing the table.
    """

    def __init__(self):
        self._ids: Dict[tuple, int] = {}
        self.frozen = False

    def __len__(self) -> int:
        return len(self._ids)

    def lookup(self, signature: tuple) -> int:
        found = self._ids.get(signature)
        if found is not None:
            return found
        if self.frozen:
            return UNKNOWN_LABEL
        new = len(self._ids)
        self._ids[signature] = new
        return new

    def to_json(self) -> list:
        return [[list(_jsonable(sig)), i] for sig, i in self._ids.items()]

    @classmethod
    def from_json(cls, entries: list, frozen: bool = True) -> "WlLabelTable":
        t = cls()
        for sig, i in entries:
            t._ids[_tupled(sig)] = int(i)
        t.frozen = frozen
        return t


def _jsonable(sig):
    return [list(s) if isinstance(s, tuple) else s for s in sig]


def _tupled(sig):
    return tuple(tuple(s) if isinstance(s, list) else s for s in sig)


@dataclass
class WlFeatureVector:
    """Sparse label counts keyed by ``(iteration, label id)``."""

    counts: Dict[Tuple[int, int], int]
    iterations: int

    def dot(self, other: "WlFeatureVector") -> int:
        a, b = (self, other) if len(self.counts) <= len(other.counts) else (other, self)
        return sum(c * b.counts.get(k, 0) for k, c in a.counts.items())

    @property
    def num_nodes(self) -> int:
        return sum(c for (it, _), c in self.counts.items() if it == 0)


def wl_refine(g: Graph, iterations: int, table: Optional[WlLabelTable] = None) -> WlFeatureVector:
    """Run ``iterations`` rounds of WL relabelling starting from node degrees."""
    if iterations < 0:
        raise ValueError(f"iterations must be non-negative, got {iterations}")
    table = table if table is not None else WlLabelTable()
    labels = np.array([table.lookup((0, int(d))) for d in g.degrees], dtype=np.int64)
    counts: Dict[Tuple[int, int], int] = {}
    _count(counts, 0, labels)
    rows = g.row_ids
    offs = g.row_offsets
    for it in range(1, iterations + 1):
        nbr = labels[g.col_indices]
        nbr = nbr[np.lexsort((nbr, rows))]
        labels = np.array(
            [
                table.lookup((it, int(labels[v]), tuple(nbr[offs[v]:offs[v + 1]].tolist())))
                for v in range(g.num_nodes)
            ],
            dtype=np.int64,
        )
        _count(counts, it, labels)
    return WlFeatureVector(counts, iterations)


def _count(counts, it, labels):
    vals, cnt = np.unique(labels, return_counts=True)
    for lab, c in zip(vals.tolist(), cnt.tolist()):
        counts[(it, lab)] = c


def wl_gram(vectors: Sequence[WlFeatureVector]) -> np.ndarray:
    """Dot-product kernel matrix of WL feature vectors."""
    if len({v.iterations for v in vectors}) > 1:
        raise ValueError("WL feature vectors were built with different iteration counts")
    keys: Dict[Tuple[int, int], int] = {}
    for v in vectors:
        for k in v.counts:
            keys.setdefault(k, len(keys))
    x = np.zeros((len(vectors), len(keys)))
    for i, v in enumerate(vectors):
        for k, c in v.counts.items():
            x[i, keys[k]] = c
    return x @ x.T


def wl_feature_matrix(vectors: Sequence[WlFeatureVector], num_labels: int) -> np.ndarray:
    """Dense design matrix of label frequencies (count / node count).

    Column ``j`` is label id ``j`` of the shared table; unknown labels are dropped.
    """
    x = np.zeros((len(vectors), num_labels))
    for i, v in enumerate(vectors):
        n = max(v.num_nodes, 1)
        for (_, lab), c in v.counts.items():
            if 0 <= lab < num_labels:
                x[i, lab] += c / n
    return x


# ---------------------------------------------------------------------------
# FEATHER

DEFAULT_EVAL_POINTS = 5.0 * np.arange(1, 17) / 16.0


def random_walk_operator(g: Graph) -> SparseOperator:
    """Row-normalized adjacency; isolated nodes step to themselves."""
    deg = g.degrees
    lonely = np.flatnonzero(deg == 0)
    rows = np.concatenate([g.row_ids, lonely])
    cols = np.concatenate([g.col_indices, lonely])
    data = np.concatenate([1.0 / deg[g.row_ids], np.ones(lonely.size)])
    order = np.lexsort((cols, rows))
    indptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=g.num_nodes), out=indptr[1:])
    return SparseOperator(indptr, cols[order], data[order], (g.num_nodes, g.num_nodes))


def node_mean(h: np.ndarray) -> np.ndarray:
    """Column means with a content-determined summation order."""
    n = h.shape[0]
    op = SparseOperator([0, n], np.arange(n), np.full(n, 1.0 / n), (1, n))
    return op.apply(h)[0]


def feather_embed(
    g: Graph,
    node_values: np.ndarray,
    eval_points: Sequence[float] = DEFAULT_EVAL_POINTS,
    scales: int = 2,
) -> np.ndarray:
    """Graph-level FEATHER embedding.

    For every channel ``c``, random-walk scale ``r`` (1..scales) and
    evaluation point ``t``, each node's characteristic function is averaged
    over the graph. The result has length ``2 * len(eval_points) * scales *
    channels`` and is ordered (channel, scale, point, real/imaginary).
    """
    x = np.asarray(node_values, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != g.num_nodes:
        raise ShapeError(f"{x.shape[0]} node value rows for {g.num_nodes} nodes")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite node values")
    theta = np.asarray(eval_points, dtype=np.float64).reshape(-1)
    if theta.size == 0:
        raise ValueError("need at least one evaluation point")
    if scales < 1:
        raise ValueError(f"scales must be at least 1, got {scales}")
    if g.num_nodes == 0:
        raise GraphError("FEATHER embedding of an empty graph")
    k, t = x.shape[1], theta.size
    arg = (x[:, :, None] * theta[None, None, :]).reshape(g.num_nodes, k * t)
    h = np.concatenate([np.cos(arg), np.sin(arg)], axis=1)
    walk = random_walk_operator(g)
    pooled = []
    for _ in range(scales):
        h = walk.apply(h)
        pooled.append(node_mean(h))
    # pooled[r] layout: [re (k, t) | im (k, t)]
    stack = np.stack(pooled).reshape(scales, 2, k, t)
    out = stack.transpose(2, 0, 3, 1).reshape(-1)
    return np.clip(out, -1.0, 1.0)


def feather_node_values(g: Graph) -> np.ndarray:
    """Default FEATHER node channels: ``log(1 + LDP)``."""
    return np.log1p(ldp(g))


# ---------------------------------------------------------------------------

def write_feature_csv(path, rows: np.ndarray, columns: Sequence[str], index_name: str = "id") -> None:
    """One line per node or graph, with a header naming the channels."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != len(columns):
        raise ShapeError(f"{len(columns)} column names for rows of shape {rows.shape}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([index_name, *columns])
        for i, r in enumerate(rows):
            w.writerow([i, *(repr(float(v)) for v in r)])
