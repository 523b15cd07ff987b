"""The numba loop kernels and the numpy kernels must agree."""

import numpy as np
import pytest

from dualsource import kernels

pytestmark = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")


def both(name, *args):
    np_out = kernels._NUMPY_IMPLS[name](*args)
    nb_out = kernels._compile()[name](*args)
    if not isinstance(np_out, tuple):
        np_out, nb_out = (np_out,), (nb_out,)
    return np_out, nb_out


def assert_same(a, b):
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_softmax_rows(rng):
    x = rng.normal(size=(7, 11))
    x[2, :5] = -np.inf
    x[3, :] = -np.inf  # fully masked row
    a, b = both("softmax_rows", x)
    assert_same(a, b)
    np.testing.assert_allclose(a[0].sum(axis=1)[[0, 1, 2, 4]], 1.0)
    assert np.all(a[0][3] == 0)


def test_softmax_backward(rng):
    y = kernels._NUMPY_IMPLS["softmax_rows"](rng.normal(size=(5, 6)))
    assert_same(*both("softmax_backward_rows", y, rng.normal(size=(5, 6))))


def test_layer_norm_forward_backward(rng):
    x, g, bta = rng.normal(size=(6, 8)), rng.normal(size=8), rng.normal(size=8)
    fwd = both("layer_norm_rows", x, g, bta, 1e-9)
    assert_same(*fwd)
    y, xhat, rstd = fwd[0]
    np.testing.assert_allclose(xhat.mean(axis=1), 0, atol=1e-12)
    gy = rng.normal(size=(6, 8))
    assert_same(*both("layer_norm_backward_rows", gy, xhat, rstd, g))


def test_cross_entropy_rows(rng):
    logits = rng.normal(size=(9, 5))
    t = rng.integers(0, 5, size=9)
    w = (rng.random(9) < 0.7).astype(np.float64)
    for s in (0.0, 0.1):
        assert_same(*both("cross_entropy_rows", logits, t, w, s))


def test_cross_entropy_confident_row():
    # log(1 + 2 e^-10) for logits [10, 0, 0] and target 0
    loss, _ = kernels.cross_entropy_rows(np.array([[10.0, 0.0, 0.0]]), np.array([0]), np.ones(1), 0.0)
    assert loss[0] == pytest.approx(np.log1p(2 * np.exp(-10.0)), rel=1e-12)
    assert loss[0] == pytest.approx(9.0796e-5, rel=1e-4)


def test_embedding_backward(rng):
    g = rng.normal(size=(10, 4))
    ids = rng.integers(0, 6, size=10)
    a, b = both("embedding_backward", g, ids, 6)
    assert_same(a, b)
    np.testing.assert_allclose(a[0][ids[0]], g[ids == ids[0]].sum(axis=0))


def test_lstm_pointwise_and_backward(rng):
    gates, c, h = rng.normal(size=(4, 12)), rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    mask = np.array([1.0, 0.0, 1.0, 1.0])
    fwd = both("lstm_pointwise", gates, c, h, mask)
    assert_same(*fwd)
    h1, c1, acts = fwd[0]
    np.testing.assert_array_equal(h1[1], h[1])
    np.testing.assert_array_equal(c1[1], c[1])
    gh, gc = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    assert_same(*both("lstm_pointwise_backward", gh, gc, acts, c, mask))


def test_set_backend_switches_dispatch():
    before = kernels.get_backend()
    try:
        kernels.set_backend("numpy")
        assert kernels.softmax_rows is kernels._NUMPY_IMPLS["softmax_rows"]
        kernels.set_backend("numba")
        assert kernels.softmax_rows is kernels._compile()["softmax_rows"]
        with pytest.raises(ValueError):
            kernels.set_backend("cuda")
    finally:
        kernels.set_backend(before)
