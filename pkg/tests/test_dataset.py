import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from malgnn.dataset import (
    LabeledGraphSet,
    family_stats,
    format_family_stats,
    load_malnet_dir,
    lower_median,
    parse_edgelist,
    stratified_split,
    synth_families,
)
from malgnn.errors import ConfigError, DatasetError
from malgnn.features import ldp
from malgnn.graph import from_edge_list

from helpers import path3


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def test_single_family_single_file(tmp_path):
    _write(tmp_path / "fam" / "a.edgelist", "0 1\n1 2")
    data = load_malnet_dir(tmp_path)
    assert len(data) == 1 and data.class_names == ["fam"]
    assert data.graphs[0] == path3()


def test_comment_only_file_rejected(tmp_path):
    _write(tmp_path / "fam" / "a.edgelist", "# nothing\n#here\n")
    with pytest.raises(DatasetError, match="no edges"):
        load_malnet_dir(tmp_path)


def test_bad_line_names_file_and_line(tmp_path):
    f = tmp_path / "fam" / "a.edgelist"
    _write(f, "0 1\n1 x\n")
    with pytest.raises(DatasetError, match=r"a\.edgelist:2"):
        parse_edgelist(f)


def test_ids_remapped_densely(tmp_path):
    f = tmp_path / "x.edgelist"
    _write(f, "# header\n100 7\n\n7 42\n")
    g = parse_edgelist(f)
    assert g.num_nodes == 3
    assert g.original_ids.tolist() == [7, 42, 100]
    assert g.edge_list().tolist() == [[0, 1], [0, 2]]


def test_empty_root_and_missing_root(tmp_path):
    with pytest.raises(DatasetError):
        load_malnet_dir(tmp_path)
    with pytest.raises(DatasetError):
        load_malnet_dir(tmp_path / "missing")


def test_lexicographic_ordering(tmp_path):
    for fam in ("b", "a"):
        for name in ("2", "10", "1"):
            _write(tmp_path / fam / f"{name}.edgelist", "0 1\n")
    data = load_malnet_dir(tmp_path)
    assert data.class_names == ["a", "b"]
    assert data.source_ids[:3] == ["a/1.edgelist", "a/10.edgelist", "a/2.edgelist"]
    assert data.labels.tolist() == [0, 0, 0, 1, 1, 1]
    again = load_malnet_dir(tmp_path)
    assert again.source_ids == data.source_ids


def _balanced(per_class, classes=5):
    g = path3()
    labels = np.repeat(np.arange(classes), per_class)
    names = [f"c{i}" for i in range(classes)]
    return LabeledGraphSet([g] * labels.size, labels, names, [str(i) for i in range(labels.size)])


def test_split_sizes_1000_per_family():
    data = _balanced(1000)
    s = stratified_split(data, (0.7, 0.1, 0.2), seed=0)
    for c in range(5):
        counts = [int(np.sum(data.labels[s.part(p)] == c)) for p in ("train", "val", "test")]
        assert counts == [700, 100, 200]


def test_split_determinism_and_bad_ratios():
    data = _balanced(30)
    a, b = stratified_split(data, seed=1), stratified_split(data, seed=1)
    for p in ("train", "val", "test"):
        assert np.array_equal(a.part(p), b.part(p))
    with pytest.raises(ConfigError):
        stratified_split(data, (0.5, 0.5, 0.5))
    with pytest.raises(DatasetError):
        stratified_split(_balanced(2), seed=0)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(3, 40))
def test_split_partition_property(seed, per_class):
    data = _balanced(per_class, classes=3)
    ratios = (0.7, 0.1, 0.2)
    s = stratified_split(data, ratios, seed)
    parts = [s.part(p) for p in ("train", "val", "test")]
    merged = np.concatenate(parts)
    assert merged.size == len(data) and np.unique(merged).size == len(data)
    for c in range(3):
        for part, r in zip(parts, ratios):
            assert abs(np.sum(data.labels[part] == c) - r * per_class) <= 1


def test_synth_examples():
    data = synth_families(100, seed=7)
    assert len(data) == 500 and data.num_classes == 5
    dl = data.class_names.index("downloader")
    sizes = [data.graphs[i].num_nodes for i in np.flatnonzero(data.labels == dl)]
    assert 40 <= min(sizes) and max(sizes) <= 117
    assert len(synth_families(1, seed=0)) == 5
    other = synth_families(100, seed=7)
    for g, h in zip(data.graphs, other.graphs):
        assert g.edge_list().tobytes() == h.edge_list().tobytes()


def test_synth_downloader_degree_near_table_value():
    data = synth_families(50, seed=0)
    row = family_stats(data).row("downloader")
    assert abs(row.edges_per_node - 1.14) < 0.01


def test_synth_families_separate_on_degree_channel():
    data = synth_families(100, seed=3)
    means, stds = [], []
    for c in range(5):
        v = np.array([ldp(data.graphs[i])[:, 0].mean() for i in np.flatnonzero(data.labels == c)])
        means.append(v.mean())
        stds.append(v.std())
    pooled = np.sqrt(np.mean(np.square(stds)))
    gaps = [abs(a - b) for i, a in enumerate(means) for b in means[i + 1:]]
    assert min(gaps) > 3 * pooled


def test_stats_single_p3():
    data = LabeledGraphSet([path3()], [0], ["p"], ["p/0"])
    r = family_stats(data).row("p")
    assert r.vertices_min == r.vertices_median == r.vertices_max == 3
    assert r.avg_degree == pytest.approx(4 / 3)
    assert r.edges_per_node == pytest.approx(2 / 3)


def test_stats_two_graphs_lower_median():
    gs = [from_edge_list([(0, 1)], 2), from_edge_list([(0, 1), (1, 2), (2, 3)], 4)]
    data = LabeledGraphSet(gs, [0, 0], ["f"], ["a", "b"])
    r = family_stats(data).row("f")
    assert r.vertices_median == 2
    assert r.vertices_std == pytest.approx(1.0)
    assert r.edges_std == pytest.approx(1.0)


def test_lower_median():
    assert lower_median([4, 2]) == 2
    assert lower_median([3, 1, 2]) == 2


def test_stats_empty_class_rejected():
    data = LabeledGraphSet([path3()], [0], ["a", "b"], ["x"])
    with pytest.raises(DatasetError):
        family_stats(data)


def test_stats_min_le_median_le_max():
    stats = family_stats(synth_families(20, seed=5))
    for r in stats.rows:
        assert r.vertices_min <= r.vertices_median <= r.vertices_max
        assert r.edges_min <= r.edges_median <= r.edges_max
    text = format_family_stats(stats)
    assert len(text.splitlines()) == 6
