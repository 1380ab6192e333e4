"""Shared generators for the test suite."""
import numpy as np
from hypothesis import strategies as st

from malgnn.graph import Graph, from_edge_list


def random_graph(rng, n_max=32, n_min=1, p=None) -> Graph:
    n = int(rng.integers(n_min, n_max + 1))
    p = rng.uniform(0.05, 0.4) if p is None else p
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return from_edge_list(np.stack([iu[keep], ju[keep]], axis=1), n)


@st.composite
def graphs(draw, max_nodes=32, min_nodes=1):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = draw(
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n)
    )
    return from_edge_list(pairs, n)


@st.composite
def graphs_with_perm(draw, max_nodes=32, min_nodes=1):
    g = draw(graphs(max_nodes, min_nodes))
    perm = draw(st.permutations(range(g.num_nodes)))
    return g, np.array(perm, dtype=np.int64)


def path3():
    return from_edge_list([(0, 1), (1, 2)], 3)


def triangle():
    return from_edge_list([(0, 1), (1, 2), (0, 2)], 3)


def star(leaves=3):
    return from_edge_list([(0, i) for i in range(1, leaves + 1)], leaves + 1)
