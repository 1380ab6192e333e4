"""Labelled graph corpora: MalNet-Tiny ingestion, stratified splits,
a synthetic five-family generator and per-family graph statistics."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DatasetError
from .graph import Graph, from_edge_list
from .numerics import derive_seed, make_rng


@dataclass
class LabeledGraphSet:
    graphs: List[Graph]
    labels: np.ndarray
    class_names: List[str]
    source_ids: List[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.graphs) == len(self.labels) == len(self.source_ids)):
            raise DatasetError("graphs, labels and source_ids differ in length")
        if list(self.class_names) != sorted(set(self.class_names)):
            raise DatasetError("class names must be unique and sorted")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("label index outside the class list")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx: Sequence[int]) -> "LabeledGraphSet":
        idx = list(idx)
        return LabeledGraphSet(
            [self.graphs[i] for i in idx],
            self.labels[idx],
            list(self.class_names),
            [self.source_ids[i] for i in idx],
        )


@dataclass
class DatasetSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def part(self, name: str) -> np.ndarray:
        return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]


# ---------------------------------------------------------------------------
# MalNet-style directories

_INT = re.compile(r"[0-9]+")


def parse_edgelist(path) -> Graph:
    """Read one ``src dst`` per line; ``#`` lines and blank lines are skipped.

    Node ids are remapped densely in increasing id order; the original ids
    stay on the graph as ``original_ids``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 2 or not all(_INT.fullmatch(p) for p in parts):
            raise DatasetError(f"{path}:{lineno}: expected two non-negative integers, got {line!r}")
        pairs.append((int(parts[0]), int(parts[1])))
    if not pairs:
        raise DatasetError(f"{path}: no edges")
    raw = np.array(pairs, dtype=np.int64)
    ids = np.unique(raw)
    return from_edge_list(np.searchsorted(ids, raw), len(ids), ids)


def load_malnet_dir(root) -> LabeledGraphSet:
    """Load ``<root>/<family>/**/<sample>.edgelist`` into a labelled set.

    Families and files are enumerated in lexicographic order, so the
    resulting ordering is the same on every run.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    families = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not families:
        raise DatasetError(f"dataset root {root} has no family subdirectories")
    graphs, labels, sources = [], [], []
    for label, fam in enumerate(families):
        files = sorted(
            (p for p in fam.rglob("*.edgelist") if p.is_file()),
            key=lambda p: p.relative_to(fam).as_posix(),
        )
        if not files:
            raise DatasetError(f"family directory {fam} holds no .edgelist files")
        for f in files:
            graphs.append(parse_edgelist(f))
            labels.append(label)
            sources.append(f.relative_to(root).as_posix())
    return LabeledGraphSet(graphs, np.array(labels), [f.name for f in families], sources)


# ---------------------------------------------------------------------------
# splits

def _allocate(n: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of ``n`` items, at least one per part."""
    ideal = [r * n for r in ratios]
    sizes = [int(np.floor(x + 1e-9)) for x in ideal]
    rest = n - sum(sizes)
    for i in sorted(range(len(ratios)), key=lambda i: (sizes[i] - ideal[i], i))[:rest]:
        sizes[i] += 1
    for i in range(len(sizes)):
        while sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: (sizes[j] - ideal[j], sizes[j]))
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def stratified_split(
    data: LabeledGraphSet, ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2), seed: int = 0
) -> DatasetSplit:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    rng = make_rng(seed)
    parts: List[List[int]] = [[], [], []]
    for c in range(data.num_classes):
        members = np.flatnonzero(data.labels == c)
        if members.size < 3:
            raise DatasetError(
                f"class {data.class_names[c]!r} has {members.size} samples; need at least 3 to split"
            )
        members = rng.permutation(members)
        a, b, _ = _allocate(members.size, ratios)
        parts[0].extend(members[:a])
        parts[1].extend(members[a:a + b])
        parts[2].extend(members[a + b:])
    tr, va, te = (np.sort(np.array(p, dtype=np.int64)) for p in parts)
    return DatasetSplit(tr, va, te, seed)


# ---------------------------------------------------------------------------
# synthetic corpus
#
# downloader : random recursive tree plus extra edges, 40..117 nodes,
#              edges = round(1.14 * nodes)
# addisplay  : preferential attachment, 2 links per new node, 30..70 nodes
# adware     : preferential attachment, 3 links per new node, 35..80 nodes
# benign     : preferential attachment, 4 links per new node, 25..65 nodes
# trojan     : preferential attachment, 5 links per new node, 20..60 nodes

SYNTH_FAMILIES: Dict[str, dict] = {
    "addisplay": {"kind": "pa", "links": 2, "nodes": (30, 70)},
    "adware": {"kind": "pa", "links": 3, "nodes": (35, 80)},
    "benign": {"kind": "pa", "links": 4, "nodes": (25, 65)},
    "downloader": {"kind": "tree", "edge_ratio": 1.14, "nodes": (40, 117)},
    "trojan": {"kind": "pa", "links": 5, "nodes": (20, 60)},
}


def _near_tree(n: int, edge_ratio: float, rng) -> Graph:
    parents = [int(rng.integers(0, v)) for v in range(1, n)]
    edges = {(p, v) for v, p in zip(range(1, n), parents)}
    target = min(int(round(edge_ratio * n)), n * (n - 1) // 2)
    while len(edges) < target:
        u, v = sorted(int(x) for x in rng.integers(0, n, size=2))
        if u != v:
            edges.add((u, v))
    return from_edge_list(sorted(edges), n)


def _pref_attach(n: int, links: int, rng) -> Graph:
    seed_size = links + 1
    edges = [(u, v) for u in range(seed_size) for v in range(u + 1, seed_size)]
    pool = [x for e in edges for x in e]
    for v in range(seed_size, n):
        chosen = set()
        while len(chosen) < links:
            chosen.add(pool[int(rng.integers(0, len(pool)))])
        for u in sorted(chosen):
            edges.append((u, v))
            pool.extend((u, v))
    return from_edge_list(edges, n)


def synth_families(per_class: int, seed: int = 0) -> LabeledGraphSet:
    """Five synthetic families whose structure is separable by LDP statistics."""
    if per_class < 1:
        raise ConfigError(f"per_class must be at least 1, got {per_class}")
    names = sorted(SYNTH_FAMILIES)
    graphs, labels, sources = [], [], []
    for label, name in enumerate(names):
        spec = SYNTH_FAMILIES[name]
        rng = make_rng(derive_seed(seed, f"synth/{name}"))
        lo, hi = spec["nodes"]
        for i in range(per_class):
            n = int(rng.integers(lo, hi + 1))
            if spec["kind"] == "tree":
                g = _near_tree(n, spec["edge_ratio"], rng)
            else:
                g = _pref_attach(n, spec["links"], rng)
            graphs.append(g)
            labels.append(label)
            sources.append(f"{name}/{i:05d}")
    return LabeledGraphSet(graphs, np.array(labels), names, sources)


# ---------------------------------------------------------------------------
# statistics

def lower_median(values) -> float:
    v = np.sort(np.asarray(values))
    return v[(len(v) - 1) // 2]


@dataclass
class FamilyRow:
    name: str
    vertices_min: int
    vertices_max: int
    vertices_median: int
    vertices_std: float
    edges_min: int
    edges_max: int
    edges_median: int
    edges_std: float
    avg_degree: float
    edges_per_node: float
    count: int


@dataclass
class FamilyStats:
    rows: List[FamilyRow]

    def row(self, name: str) -> FamilyRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def family_stats(data: LabeledGraphSet) -> FamilyStats:
    """Per-family vertex/edge summaries.

    ``avg_degree`` is the mean over graphs of ``2 * edges / nodes``;
    ``edges_per_node`` is the mean of ``edges / nodes``. Medians of
    even-length lists take the lower middle element; ``*_std`` are
    population standard deviations.
    """
    if len(data) == 0:
        raise DatasetError("statistics of an empty dataset")
    rows = []
    for c, name in enumerate(data.class_names):
        members = np.flatnonzero(data.labels == c)
        if members.size == 0:
            raise DatasetError(f"class {name!r} has no graphs")
        nv = np.array([data.graphs[i].num_nodes for i in members])
        ne = np.array([data.graphs[i].num_edges for i in members])
        safe = np.maximum(nv, 1)
        rows.append(
            FamilyRow(
                name,
                int(nv.min()), int(nv.max()), int(lower_median(nv)), float(nv.std()),
                int(ne.min()), int(ne.max()), int(lower_median(ne)), float(ne.std()),
                float(np.mean(2.0 * ne / safe)),
                float(np.mean(ne / safe)),
                int(members.size),
            )
        )
    return FamilyStats(rows)


STATS_COLUMNS = (
    "family", "v_min", "v_max", "v_median", "v_std",
    "e_min", "e_max", "e_median", "e_std", "avg_degree", "edges_per_node",
)


def format_family_stats(stats: FamilyStats) -> str:
    lines = ["\t".join(STATS_COLUMNS)]
    for r in stats.rows:
        lines.append(
            "\t".join(
                [
                    r.name,
                    str(r.vertices_min), str(r.vertices_max), str(r.vertices_median),
                    f"{r.vertices_std:.1f}",
                    str(r.edges_min), str(r.edges_max), str(r.edges_median),
                    f"{r.edges_std:.1f}",
                    f"{r.avg_degree:.3f}", f"{r.edges_per_node:.3f}",
                ]
            )
        )
    return "\n".join(lines)
