import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from malgnn.errors import CheckpointError, NumericalError, ShapeError
from malgnn.numerics import (
    BatchNorm,
    Param,
    SparseOperator,
    adam_step,
    affine_backward,
    affine_forward,
    canonical_matmul,
    derive_seed,
    dropout_backward,
    dropout_forward,
    glorot_init,
    grad_check,
    load_checkpoint,
    make_rng,
    relu_backward,
    relu_forward,
    save_checkpoint,
    softmax,
    softmax_cross_entropy,
)


def input_grad_check(f, df, x, step=1e-5):
    """Max relative error of an input gradient against central differences."""
    analytic = df(x)
    worst = 0.0
    flat = x.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        plus = f(x)
        flat[j] = orig - step
        minus = f(x)
        flat[j] = orig
        fd = (plus - minus) / (2 * step)
        a = analytic.reshape(-1)[j]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst


# -- affine ------------------------------------------------------------------

def test_affine_identity_and_zero_weights():
    out, _ = affine_forward(np.eye(2), Param("w", [[1, 2], [3, 4]]), Param("b", np.zeros((1, 2))))
    assert out.tolist() == [[1, 2], [3, 4]]
    x = np.random.default_rng(0).normal(size=(4, 3))
    out, _ = affine_forward(x, Param("w", np.zeros((3, 2))), Param("b", [[5.0, -1.0]]))
    assert np.all(out == [5.0, -1.0])


def test_affine_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\)"):
        affine_forward(np.ones((2, 3)), Param("w", np.ones((2, 2))), Param("b", np.zeros((1, 2))))


def test_affine_grad_3x4_4x2():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    w, b = Param("w", rng.normal(size=(4, 2))), Param("b", rng.normal(size=(1, 2)))
    t = rng.normal(size=(3, 2))

    def closure():
        out, c = affine_forward(x, w, b)
        affine_backward(t, c)
        return float(np.sum(out * t))

    assert grad_check(closure, [w, b]) < 1e-6
    dx = lambda xx: affine_backward(t, affine_forward(xx, Param("w", w.value), Param("b", b.value))[1])
    f = lambda xx: float(np.sum(affine_forward(xx, w, b)[0] * t))
    assert input_grad_check(f, dx, x.copy()) < 1e-6


# -- relu / dropout ------------------------------------------------------------

def test_relu_examples():
    out, mask = relu_forward(np.array([[-1.0, 2.0]]))
    assert out.tolist() == [[0, 2]]
    neg = -np.ones((2, 3))
    out, mask = relu_forward(neg)
    assert np.all(out == 0) and np.all(relu_backward(np.ones_like(neg), mask) == 0)


def test_relu_grad_off_kink():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 0.05] = 0.5
    t = rng.normal(size=x.shape)
    f = lambda xx: float(np.sum(relu_forward(xx)[0] * t))
    df = lambda xx: relu_backward(t, relu_forward(xx)[1])
    assert input_grad_check(f, df, x) < 1e-6


def test_dropout_modes():
    rng = make_rng(0)
    x = np.random.default_rng(0).normal(size=(5, 5))
    assert dropout_forward(x, 0.0, rng, True)[0] is x
    assert dropout_forward(x, 0.9, rng, False)[0] is x
    with pytest.raises(ValueError):
        dropout_forward(x, 1.0, rng, True)


def test_dropout_mean_and_backward():
    out, mask = dropout_forward(np.ones((100, 1000)), 0.5, make_rng(4), True)
    assert abs(out.mean() - 1) < 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert np.array_equal(dropout_backward(np.ones_like(out), mask), out)


# -- batch norm ----------------------------------------------------------------

def test_batchnorm_example_and_constant_column():
    bn = BatchNorm(2)
    out, _ = bn.forward(np.array([[1.0, 7.0], [3.0, 7.0]]), training=True)
    assert out[:, 0] == pytest.approx([-1, 1], abs=1e-5)
    assert np.allclose(out[:, 1], 0)


def test_batchnorm_running_stats_and_eval():
    bn = BatchNorm(1)
    bn.forward(np.array([[1.0], [3.0]]), training=True)
    assert bn.running_mean[0, 0] == pytest.approx(0.2)
    assert bn.running_var[0, 0] == pytest.approx(0.9 + 0.1 * 2.0)
    out, _ = bn.forward(np.array([[0.2]]), training=False)
    assert out[0, 0] == pytest.approx(0.0)


def test_batchnorm_single_row_training_rejected():
    with pytest.raises(ShapeError):
        BatchNorm(3).forward(np.ones((1, 3)), training=True)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(training):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 3))
    t = rng.normal(size=(6, 3))
    bn = BatchNorm(3)
    bn.gamma.value[...] = rng.normal(size=(1, 3))
    bn.beta.value[...] = rng.normal(size=(1, 3))
    bn.running_mean = rng.normal(size=(1, 3))
    bn.running_var = rng.uniform(0.5, 2, size=(1, 3))
    saved = (bn.running_mean.copy(), bn.running_var.copy())

    def run(xx):
        bn.running_mean, bn.running_var = saved[0].copy(), saved[1].copy()
        return bn.forward(xx, training)

    def closure():
        out, c = run(x)
        bn.backward(t, c)
        return float(np.sum(out * t))

    assert grad_check(closure, bn.params) < 1e-5
    f = lambda xx: float(np.sum(run(xx)[0] * t))
    df = lambda xx: bn.backward(t, run(xx)[1])
    assert input_grad_check(f, df, x.copy()) < 1e-5


# -- softmax cross-entropy -----------------------------------------------------

def test_ce_uniform_and_saturated():
    loss, _ = softmax_cross_entropy(np.zeros((3, 5)), [0, 2, 4])
    assert loss == pytest.approx(math.log(5))
    logits = np.zeros((1, 4))
    logits[0, 2] = 1000
    assert softmax_cross_entropy(logits, [2])[0] < 1e-6


def test_ce_errors():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(NumericalError):
        softmax_cross_entropy(np.array([[np.nan, 0.0]]), [0])


def test_ce_gradient():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(4, 5))
    y = rng.integers(0, 5, size=4)
    f = lambda zz: softmax_cross_entropy(zz, y)[0]
    df = lambda zz: softmax_cross_entropy(zz, y)[1]
    assert input_grad_check(f, df, z) < 1e-6


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_softmax_rows_sum_to_one(n, c, seed):
    z = np.random.default_rng(seed).normal(scale=50, size=(n, c))
    assert np.all(np.abs(softmax(z).sum(axis=1) - 1) < 1e-12)


# -- adam ----------------------------------------------------------------------

def test_adam_first_step_closed_form():
    p = Param("p", [[1.0]])
    p.grad[...] = 2.0
    adam_step([p], lr=0.001)
    expected = 1.0 - 0.001 * 2.0 / (2.0 + 1e-8)
    assert p.value[0, 0] == pytest.approx(expected, abs=1e-15)
    assert p.step_count == 1 and p.grad[0, 0] == 0


def test_adam_zero_grad_and_decay():
    p = Param("p", [[3.0, -2.0]])
    adam_step([p], lr=0.001)
    assert p.value.tolist() == [[3.0, -2.0]]
    q = Param("q", [[3.0, -2.0]])
    adam_step([q], lr=0.001, weight_decay=0.001)
    assert q.value[0] == pytest.approx(np.array([3.0, -2.0]) * (1 - 1e-6), abs=1e-15)


def test_adam_lr_zero_noop():
    p = Param("p", np.random.default_rng(0).normal(size=(3, 3)))
    before = p.value.copy()
    p.grad[...] = 5.0
    adam_step([p], lr=0.0)
    assert np.array_equal(p.value, before)


def test_adam_rejects_non_finite_grad():
    good, bad = Param("good", [[1.0]]), Param("layer.weight", [[1.0]])
    bad.grad[...] = np.inf
    with pytest.raises(NumericalError, match="layer.weight"):
        adam_step([good, bad], lr=0.1)
    assert good.value[0, 0] == 1.0


# -- glorot / rng ------------------------------------------------------------

def test_glorot_bounds_and_determinism():
    w = glorot_init(4, 4, make_rng(1))
    assert np.all(np.abs(w) <= math.sqrt(6 / 8))
    assert np.array_equal(w, glorot_init(4, 4, make_rng(1)))
    big = glorot_init(100, 100, make_rng(2))
    assert abs(big.mean()) < 0.02


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, "split") == derive_seed(1, "split")
    assert derive_seed(1, "split") != derive_seed(1, "init")
    assert derive_seed(1, "split") != derive_seed(2, "split")


# -- grad_check harness ----------------------------------------------------------

def _toy_model(corrupt=False):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    w1, b1 = Param("w1", rng.normal(size=(4, 6))), Param("b1", rng.normal(size=(1, 6)))
    w2, b2 = Param("w2", rng.normal(size=(6, 3))), Param("b2", np.zeros((1, 3)))

    def closure():
        h, c1 = affine_forward(x, w1, b1)
        r, m = relu_forward(h)
        z, c2 = affine_forward(r, w2, b2)
        loss, d = softmax_cross_entropy(z, y)
        d = affine_backward(d, c2)
        if corrupt:
            d = d * 1.5
        affine_backward(relu_backward(d, m), c1)
        return loss

    return closure, [w1, b1, w2, b2]


def test_grad_check_toy_model():
    closure, params = _toy_model()
    assert grad_check(closure, params) < 1e-5


def test_grad_check_zero_params():
    assert grad_check(lambda: 1.0, []) == 0.0


def test_grad_check_catches_corrupted_backward():
    closure, params = _toy_model(corrupt=True)
    assert grad_check(closure, params) > 1e-2


@settings(max_examples=25)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_chain_gradients_random_shapes(n, k, m, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, k))
    y = rng.integers(0, m, size=n)
    w, b = Param("w", rng.normal(size=(k, m))), Param("b", rng.normal(size=(1, m)))
    bn = BatchNorm(m)

    def closure():
        h, c = affine_forward(x, w, b)
        h2, cb = bn.forward(h, training=False)
        loss, d = softmax_cross_entropy(h2, y)
        affine_backward(bn.backward(d, cb), c)
        return loss

    assert grad_check(closure, [w, b] + bn.params) < 1e-5


# -- canonical products ----------------------------------------------------------

def test_canonical_matmul_row_order_independent():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(50, 30))
    w = rng.normal(size=(30, 20))
    perm = rng.permutation(50)
    assert np.array_equal(canonical_matmul(x, w)[perm], canonical_matmul(x[perm], w))
    assert np.allclose(canonical_matmul(x, w), x @ w, rtol=1e-12, atol=1e-12)


def test_sparse_operator_apply_and_transpose():
    op = SparseOperator([0, 2, 3], [0, 2, 1], [1.0, 2.0, 3.0], (2, 3))
    dense = op.toarray()
    h = np.arange(6.0).reshape(3, 2)
    assert np.allclose(op.apply(h), dense @ h)
    d = np.ones((2, 2))
    assert np.allclose(op.apply_transpose(d), dense.T @ d)


# -- checkpoint container --------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    tensors = {"a": rng.normal(size=(3, 4)), "b": np.array([[np.pi, -0.0, 1e-300]])}
    meta = {"kind": "test", "nested": {"x": [1, 2]}}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, meta, tensors)
    meta2, t2 = load_checkpoint(path)
    assert meta2 == meta
    for k in tensors:
        assert t2[k].tobytes() == tensors[k].tobytes()
    save_checkpoint(tmp_path / "n.ckpt", meta, tensors)
    assert (tmp_path / "n.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_corrupt(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"junk")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    save_checkpoint(path, {}, {"a": np.ones((10, 10))})
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
