import numpy as np
import pytest

from malgnn.baselines import (
    FeedForward,
    KernelFeatureClassifier,
    LinearConfig,
    MLPBaseline,
    MLPConfig,
)
from malgnn.dataset import LabeledGraphSet, stratified_split, synth_families
from malgnn.errors import ConfigError, DatasetError
from malgnn.graph import permute
from malgnn.numerics import adam_step, softmax_cross_entropy
from malgnn.persistence import load_classifier, save_classifier
from malgnn.training import evaluate


@pytest.fixture(scope="module")
def synth():
    data = synth_families(100, seed=1)
    return data, stratified_split(data, (0.7, 0.1, 0.2), seed=1)


@pytest.fixture(scope="module")
def small():
    data = synth_families(12, seed=2)
    return data, stratified_split(data, seed=2)


def test_mlp_synthetic_accuracy(synth):
    data, split = synth
    clf = MLPBaseline(MLPConfig(), data.num_classes, data.class_names)
    clf.fit(data, split)
    assert evaluate(clf, data, split.test_idx).accuracy >= 0.90


def test_feedforward_separable_toy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    x[y == 1] += 0.5
    x[y == 0] -= 0.5
    net = FeedForward(2, 2, 1, 8, 0.0, seed=0)
    for _ in range(500):
        _, d = softmax_cross_entropy(net.forward(x, training=True), y)
        net.backward(d)
        adam_step(net.params, 0.05)
    assert np.all(net.forward(x).argmax(1) == y)


def test_mlp_determinism(small):
    data, split = small
    cfg = MLPConfig(epochs=5)
    h1 = MLPBaseline(cfg, 5).fit(data, split)
    h2 = MLPBaseline(cfg, 5).fit(data, split)
    assert h1[-1].train_loss == h2[-1].train_loss
    assert h1 == h2


def test_single_class_training_rejected():
    data = synth_families(3, seed=0)
    one = data.subset(np.flatnonzero(data.labels == 0))
    one = LabeledGraphSet(one.graphs, one.labels, ["addisplay"], one.source_ids)
    split = stratified_split(one, seed=0)
    with pytest.raises(DatasetError):
        MLPBaseline(MLPConfig(epochs=1), 1).fit(one, split)
    with pytest.raises(DatasetError):
        KernelFeatureClassifier(LinearConfig("wl"), 1).fit(one, split)


@pytest.mark.parametrize("kind", ["wl", "feather"])
def test_train_set_as_test_set(kind, small):
    data, split = small
    clf = KernelFeatureClassifier(LinearConfig(kind, iterations=2), 5, data.class_names)
    clf.fit(data, split)
    train = evaluate(clf, data, split.train_idx)
    dup = data.subset(np.concatenate([split.train_idx, split.train_idx]))
    assert evaluate(clf, dup).accuracy == train.accuracy


def test_wl_h2_synthetic(synth):
    data, split = synth
    clf = KernelFeatureClassifier(LinearConfig("wl", iterations=2), 5, data.class_names)
    clf.fit(data, split)
    assert evaluate(clf, data, split.test_idx).accuracy >= 0.85
    assert clf.off_grid() == ["iterations"]


def test_feather_r2_synthetic(synth):
    data, split = synth
    clf = KernelFeatureClassifier(LinearConfig("feather", order=2), 5, data.class_names)
    clf.fit(data, split)
    assert evaluate(clf, data, split.test_idx).accuracy >= 0.85
    assert clf.off_grid() == []


def test_all_zero_features_rejected(small, monkeypatch):
    data, split = small
    clf = KernelFeatureClassifier(LinearConfig("feather"), 5)
    monkeypatch.setattr(clf, "features", lambda graphs: np.zeros((len(graphs), 4)))
    with pytest.raises(DatasetError, match="all zeros"):
        clf.fit(data, split)


def test_wl_more_iterations_never_fit_worse(small):
    data, split = small
    accs = []
    for h in range(4):
        clf = KernelFeatureClassifier(LinearConfig("wl", iterations=h), 5)
        clf.fit(data, split)
        accs.append(evaluate(clf, data, split.train_idx).accuracy)
    assert accs == sorted(accs)


@pytest.mark.parametrize("kind", ["mlp", "wl", "feather"])
def test_predictions_invariant_to_relabelling(kind, small):
    data, split = small
    if kind == "mlp":
        clf = MLPBaseline(MLPConfig(epochs=3), 5)
    else:
        clf = KernelFeatureClassifier(LinearConfig(kind, iterations=3, max_epochs=50), 5)
    clf.fit(data, split)
    rng = np.random.default_rng(0)
    moved = [permute(g, rng.permutation(g.num_nodes)) for g in data.graphs]
    assert np.array_equal(clf.predict(moved), clf.predict(data.graphs))


@pytest.mark.parametrize("kind", ["mlp", "wl", "feather"])
def test_checkpoint_roundtrip(kind, small, tmp_path):
    data, split = small
    if kind == "mlp":
        clf = MLPBaseline(MLPConfig(epochs=3), 5, data.class_names)
    else:
        clf = KernelFeatureClassifier(LinearConfig(kind, iterations=2, max_epochs=50), 5, data.class_names)
    clf.fit(data, split)
    save_classifier(tmp_path / "b.ckpt", clf)
    back, _ = load_classifier(tmp_path / "b.ckpt")
    assert np.array_equal(back.predict(data.graphs), clf.predict(data.graphs))


def test_config_validation_and_grid_flags():
    with pytest.raises(ConfigError):
        MLPConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        LinearConfig("rf")
    assert MLPBaseline(MLPConfig(), 5).off_grid() == []
    assert MLPBaseline(MLPConfig(hidden_dim=32), 5).off_grid() == ["hidden_dim"]
    assert KernelFeatureClassifier(LinearConfig("feather", order=3), 5).off_grid() == ["order"]
