"""Immutable undirected simple graphs in CSR form."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import GraphError


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, deduplicated, self-loop-free adjacency in CSR layout.

    ``row_offsets`` has length ``num_nodes + 1`` and ``col_indices`` holds
    each node's neighbours in strictly increasing order. Every undirected
    edge is stored twice. ``original_ids`` optionally keeps the node ids of
    the source file (position ``i`` is the original id of dense node ``i``).
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    original_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.row_offsets.setflags(write=False)
        self.col_indices.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.row_offsets[-1]) // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.diff(self.row_offsets)
        d.setflags(write=False)
        return d

    @cached_property
    def row_ids(self) -> np.ndarray:
        """Source node of every stored CSR entry."""
        r = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)
        r.setflags(write=False)
        return r

    def neighbors(self, v: int) -> np.ndarray:
        _check_node(self, v)
        return self.col_indices[self.row_offsets[v]:self.row_offsets[v + 1]]

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once as ``(u, v)`` with ``u < v``, sorted."""
        rows, cols = self.row_ids, self.col_indices
        keep = rows < cols
        return np.stack([rows[keep], cols[keep]], axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def _check_node(g: Graph, v: int) -> None:
    if not 0 <= v < g.num_nodes:
        raise GraphError(f"node {v} out of range for graph with {g.num_nodes} nodes")


def from_edge_list(
    edges: Iterable[Tuple[int, int]] | np.ndarray,
    num_nodes: int,
    original_ids: Optional[np.ndarray] = None,
) -> Graph:
    """Build a graph from ``(u, v)`` pairs.

    Direction is ignored, duplicate pairs collapse and self-loops are dropped.
    """
    if num_nodes < 0:
        raise GraphError(f"num_nodes must be non-negative, got {num_nodes}")
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError(f"edges must be (u, v) pairs, got array of shape {arr.shape}")
    bad = np.flatnonzero((arr < 0).any(axis=1) | (arr >= num_nodes).any(axis=1))
    if bad.size:
        i = int(bad[0])
        raise GraphError(
            f"edge #{i} ({arr[i, 0]}, {arr[i, 1]}) has an index outside [0, {num_nodes})"
        )
    arr = arr[arr[:, 0] != arr[:, 1]]
    both = np.concatenate([arr, arr[:, ::-1]])
    codes = np.unique(both[:, 0] * max(num_nodes, 1) + both[:, 1])
    rows = codes // max(num_nodes, 1)
    cols = codes % max(num_nodes, 1)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
    return Graph(num_nodes, offsets, cols.astype(np.int64), original_ids)


def degree(g: Graph, v: int) -> int:
    _check_node(g, v)
    return int(g.row_offsets[v + 1] - g.row_offsets[v])


def permute(g: Graph, perm: Sequence[int] | np.ndarray) -> Graph:
    """Relabel node ``v`` as ``perm[v]``."""
    p = np.asarray(perm, dtype=np.int64)
    n = g.num_nodes
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise GraphError(f"perm is not a bijection on [0, {n})")
    ids = None
    if g.original_ids is not None:
        ids = np.empty_like(g.original_ids)
        ids[p] = g.original_ids
    return from_edge_list(p[g.edge_list()], n, ids)


def disjoint_union(graphs: Sequence[Graph]) -> Graph:
    """Block-diagonal union; node ids of graph ``i`` are shifted by the sizes before it."""
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    node_shift = np.concatenate([[0], np.cumsum(sizes)])
    entry_counts = np.array([g.col_indices.size for g in graphs], dtype=np.int64)
    entry_shift = np.concatenate([[0], np.cumsum(entry_counts)])
    offsets = np.concatenate(
        [[0]] + [g.row_offsets[1:] + entry_shift[i] for i, g in enumerate(graphs)]
    ).astype(np.int64)
    cols = np.concatenate(
        [np.zeros(0, np.int64)] + [g.col_indices + node_shift[i] for i, g in enumerate(graphs)]
    ).astype(np.int64)
    return Graph(int(node_shift[-1]), offsets, cols)
