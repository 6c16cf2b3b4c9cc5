"""Kernel correctness against scalar oracles, plus backend parity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigseq import kernels
from rigseq.kernels import _numpy

import oracles


def all_backends():
    return kernels.available_backends()


@pytest.fixture(params=all_backends())
def backend(request):
    previous = kernels.backend_name
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def test_sigmoid_matches_scalar(backend):
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(scale=3, size=(4, 7)), [[-50.0, 0.0, 50.0, 1e-12, -1e-12, 700.0, -700.0]]])
    y = kernels.sigmoid(x)
    expect = np.vectorize(oracles.sigmoid_scalar)(x)
    assert np.allclose(y, expect, rtol=0, atol=1e-15)
    assert np.all(np.isfinite(y))


def test_tanh_matches_numpy(backend):
    rng = np.random.default_rng(1)
    x = rng.normal(scale=4, size=(5, 6))
    assert np.allclose(kernels.tanh(x), np.tanh(x), rtol=0, atol=1e-15)


def test_softmax_rows_matches_scalar(backend):
    rng = np.random.default_rng(2)
    x = rng.normal(scale=5, size=(6, 4))
    x[0] = [1000.0, 1000.0, -1000.0, 0.0]  # stability under huge logits
    y = kernels.softmax_rows(x)
    for r in range(x.shape[0]):
        expect = oracles.softmax_list(list(x[r]))
        assert np.allclose(y[r], expect, rtol=0, atol=1e-14)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_lstm_point_fwd_matches_scalar(backend):
    rng = np.random.default_rng(3)
    for _ in range(100):
        b, d = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        z = rng.normal(scale=2, size=(b, 4 * d))
        c_prev = rng.normal(size=(b, d))
        h, c, saved = kernels.lstm_point_fwd(z, c_prev)
        for s in range(b):
            eh, ec = oracles.lstm_cell_scalar(list(z[s]), list(c_prev[s]))
            assert np.allclose(h[s], eh, rtol=0, atol=1e-14)
            assert np.allclose(c[s], ec, rtol=0, atol=1e-14)
        assert saved.shape == (b, 5 * d)


def test_lstm_point_bwd_matches_finite_differences(backend):
    rng = np.random.default_rng(4)
    b, d = 3, 4
    z = rng.normal(size=(b, 4 * d))
    c_prev = rng.normal(size=(b, d))
    wh = rng.normal(size=(b, d))
    wc = rng.normal(size=(b, d))

    def loss(zv, cv):
        h, c, _ = kernels.lstm_point_fwd(zv, cv)
        return float((wh * h).sum() + (wc * c).sum())

    _, _, saved = kernels.lstm_point_fwd(z, c_prev)
    dz, dc_prev = kernels.lstm_point_bwd(saved, c_prev, wh, wc)
    eps = 1e-6
    for arr, grad in ((z, dz), (c_prev, dc_prev)):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss(z, c_prev)
            flat[idx] = orig - eps
            down = loss(z, c_prev)
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - gflat[idx]) < 1e-7


def test_activation_grads_match_finite_differences(backend):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 5))
    dy = rng.normal(size=(3, 5))
    eps = 1e-6
    for fwd, grad in (
        (kernels.sigmoid, kernels.sigmoid_grad),
        (kernels.tanh, kernels.tanh_grad),
    ):
        y = fwd(x)
        dx = grad(y, dy)
        fd = (fwd(x + eps) - fwd(x - eps)) / (2 * eps)
        assert np.allclose(dx, fd * dy, atol=1e-9)


def test_softmax_rows_grad_matches_finite_differences(backend):
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 5))
    dy = rng.normal(size=(4, 5))
    y = kernels.softmax_rows(x)
    dx = kernels.softmax_rows_grad(y, dy)
    eps = 1e-6
    fd = np.empty_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            orig = x[i, j]
            x[i, j] = orig + eps
            up = float((kernels.softmax_rows(x) * dy).sum())
            x[i, j] = orig - eps
            down = float((kernels.softmax_rows(x) * dy).sum())
            x[i, j] = orig
            fd[i, j] = (up - down) / (2 * eps)
    assert np.allclose(dx, fd, atol=1e-9)


def test_topk_rows_matches_sort_oracle(backend):
    rng = np.random.default_rng(7)
    for _ in range(300):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, n + 1))
        # quantized scores force frequent ties
        scores = rng.integers(-2, 3, size=(4, n)).astype(float)
        mask = kernels.topk_rows(scores, k)
        assert mask.dtype == bool
        for r in range(scores.shape[0]):
            assert set(np.flatnonzero(mask[r])) == oracles.topk_indices_sorted(
                list(scores[r]), k
            )


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(min_value=-3, max_value=3), min_size=1, max_size=10),
    st.data(),
)
def test_topk_rows_property(values, data):
    k = data.draw(st.integers(min_value=1, max_value=len(values)))
    scores = np.asarray([values], dtype=float)
    mask = kernels.topk_rows(scores, k)[0]
    assert int(mask.sum()) == k
    assert set(np.flatnonzero(mask)) == oracles.topk_indices_sorted(values, k)


def test_adam_update_matches_scalar_loop(backend):
    rng = np.random.default_rng(8)
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p = rng.normal(size=(2, 3))
    grads = [rng.normal(size=(2, 3)) for _ in range(100)]
    expect = np.empty_like(p)
    for i in range(2):
        for j in range(3):
            hist = oracles.adam_scalar_run(
                [g[i, j] for g in grads], lr, b1, b2, eps, p[i, j]
            )
            expect[i, j] = hist[-1]
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        kernels.adam_update(p, g, m, v, t, lr, b1, b2, eps)
    assert np.allclose(p, expect, rtol=0, atol=1e-13)


def test_adam_first_step_magnitude(backend):
    p = np.array([[1.0, -2.0]])
    g = np.array([[0.5, -3.0]])
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    lr = 0.003
    kernels.adam_update(p, g, m, v, 1, lr, 0.9, 0.999, 1e-8)
    # first step moves each coordinate by ~lr against the gradient sign
    delta = p - np.array([[1.0, -2.0]])
    assert np.allclose(np.abs(delta), lr, rtol=1e-6)
    assert np.all(np.sign(delta) == -np.sign(g))


def test_backend_parity():
    if "compiled" not in kernels.available_backends():
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(9)
    x = rng.normal(scale=3, size=(5, 8))
    z = rng.normal(size=(5, 16))
    c = rng.normal(size=(5, 4))
    dy = rng.normal(size=(5, 8))
    from rigseq.kernels import _core

    assert np.allclose(_core.sigmoid(x), _numpy.sigmoid(x), atol=1e-15)
    assert np.allclose(_core.tanh(x), _numpy.tanh(x), atol=1e-15)
    assert np.allclose(_core.softmax_rows(x), _numpy.softmax_rows(x), atol=1e-14)
    y = _numpy.softmax_rows(x)
    assert np.allclose(
        _core.softmax_rows_grad(y, dy), _numpy.softmax_rows_grad(y, dy), atol=1e-14
    )
    h1, c1, s1 = _core.lstm_point_fwd(z, c)
    h2, c2, s2 = _numpy.lstm_point_fwd(z, c)
    assert np.allclose(h1, h2, atol=1e-14) and np.allclose(c1, c2, atol=1e-14)
    dz1, dc1 = _core.lstm_point_bwd(s1, c, dy[:, :4], dy[:, 4:])
    dz2, dc2 = _numpy.lstm_point_bwd(s2, c, dy[:, :4], dy[:, 4:])
    assert np.allclose(dz1, dz2, atol=1e-14) and np.allclose(dc1, dc2, atol=1e-14)
    scores = rng.integers(-2, 3, size=(20, 6)).astype(float)
    assert np.array_equal(_core.topk_rows(scores, 3), _numpy.topk_rows(scores, 3))
    p1 = rng.normal(size=(3, 3))
    p2 = p1.copy()
    g = rng.normal(size=(3, 3))
    m1, v1 = np.zeros_like(p1), np.zeros_like(p1)
    m2, v2 = np.zeros_like(p2), np.zeros_like(p2)
    _core.adam_update(p1, g, m1, v1, 1, 0.01, 0.9, 0.999, 1e-8)
    _numpy.adam_update(p2, g, m2, v2, 1, 0.01, 0.9, 0.999, 1e-8)
    assert np.allclose(p1, p2, atol=1e-16)


def test_use_backend_rejects_unknown():
    with pytest.raises(ValueError, match="unknown kernel backend"):
        kernels.use_backend("cuda")


def test_lstm_zero_params_closed_forms(backend):
    # all gate pre-activations zero: f=i=o=1/2, candidate=0
    z = np.zeros((1, 8))
    h, c, _ = kernels.lstm_point_fwd(z, np.zeros((1, 2)))
    assert np.array_equal(h, np.zeros((1, 2)))
    assert np.array_equal(c, np.zeros((1, 2)))
    h, c, _ = kernels.lstm_point_fwd(z, np.full((1, 2), 2.0))
    assert np.allclose(c, 1.0, rtol=0, atol=1e-15)
    assert np.allclose(h, 0.5 * np.tanh(1.0), rtol=0, atol=1e-15)


def test_adam_zero_gradient_is_fixed_point(backend):
    p = np.array([[1.5, -2.5]])
    before = p.copy()
    m, v = np.zeros_like(p), np.zeros_like(p)
    for t in range(1, 4):
        kernels.adam_update(p, np.zeros_like(p), m, v, t, 0.1, 0.9, 0.999, 1e-8)
    assert np.array_equal(p, before)


def test_adam_step_magnitude_approaches_lr(backend):
    # with eps -> 0 and sign-constant gradients, every step moves by lr
    lr = 0.003
    p = np.array([[5.0, -4.0]])
    m, v = np.zeros_like(p), np.zeros_like(p)
    g = np.array([[3.7, -0.02]])
    for t in range(1, 11):
        before = p.copy()
        kernels.adam_update(p, g, m, v, t, lr, 0.9, 0.999, 1e-12)
        delta = p - before
        assert np.all(np.abs(np.abs(delta) - lr) < 1e-6), (t, delta)
        assert np.all(np.sign(delta) == -np.sign(g))
