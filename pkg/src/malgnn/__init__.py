"""Graph classification of Android call graphs with message-passing networks
and non-GNN baselines, built on a small numpy training engine."""

__version__ = "0.1.0"

from .dataset import LabeledGraphSet, load_malnet_dir, stratified_split, synth_families
from .graph import Graph, from_edge_list

__all__ = [
    "Graph",
    "LabeledGraphSet",
    "from_edge_list",
    "load_malnet_dir",
    "stratified_split",
    "synth_families",
]
