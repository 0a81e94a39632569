import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from edhkd import _pykernels, kernels

BACKENDS = kernels.available_backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def test_backend_reported():
    assert kernels.BACKEND in BACKENDS


def _bn_inputs(draw_shape, rng):
    pre, n, post = draw_shape
    x = rng.normal(size=(pre, n, post)) * 3
    gamma = rng.uniform(0.2, 2.0, size=(pre, 1, post))
    beta = rng.normal(size=(pre, 1, post))
    return x, gamma, beta


shapes = st.tuples(st.integers(1, 4), st.integers(2, 30), st.integers(1, 9))


@needs_cython
@given(shapes, st.integers(0, 2**32 - 1))
def test_bn_kernels_identical_across_backends(shape, seed):
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    rng = np.random.default_rng(seed)
    x, gamma, beta = _bn_inputs(shape, rng)
    a = py.bn_train_forward(x, 1e-5)
    b = cy.bn_train_forward(x, 1e-5)
    for u, v in zip(a, b):
        np.testing.assert_allclose(np.asarray(v), u, rtol=1e-13, atol=1e-13)
    fa = py.bn_relu6_forward(x, gamma, beta, 1e-5)
    fb = cy.bn_relu6_forward(x, gamma, beta, 1e-5)
    for u, v in zip(fa, fb):
        np.testing.assert_allclose(np.asarray(v), u, rtol=1e-13, atol=1e-13)
    g = rng.normal(size=x.shape)
    ga = py.bn_relu6_backward(g, fa[0], fa[1], gamma, fa[4])
    gb = cy.bn_relu6_backward(g, fa[0], fa[1], gamma, fa[4])
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(np.asarray(v), u, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(np.asarray(cy.bn_backward(g, a[0], a[3])), py.bn_backward(g, a[0], a[3]),
                               rtol=1e-11, atol=1e-12)


@needs_cython
@given(hnp.arrays(np.float64, st.integers(1, 50), elements=st.floats(-20, 20)))
def test_relu6_identical_across_backends(x):
    cy = BACKENDS["cython"]
    np.testing.assert_array_equal(np.asarray(cy.relu6_forward(x)), _pykernels.relu6_forward(x))
    g = np.arange(len(x), dtype=np.float64)
    np.testing.assert_array_equal(np.asarray(cy.relu6_backward(x, g)), _pykernels.relu6_backward(x, g))


@needs_cython
def test_nan_propagates_like_numpy():
    cy = BACKENDS["cython"]
    x = np.array([np.nan, -1.0, 7.0])
    np.testing.assert_array_equal(np.asarray(cy.relu6_forward(x)), np.clip(x, 0, 6))


def _ar_signal(rng, coefs, n=4000):
    x = np.zeros(n)
    e = rng.normal(size=n)
    p = len(coefs)
    for t in range(p, n):
        x[t] = np.dot(coefs, x[t - p:t][::-1]) + e[t]
    return x


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_levinson_matches_toeplitz_solve(rng, backend):
    lev = BACKENDS[backend].levinson_durbin
    x = rng.normal(size=500)
    x = np.convolve(x, [1.0, 0.6, -0.3, 0.1], mode="same")
    n = len(x)
    r = np.array([np.dot(x[: n - k], x[k:]) / n for k in range(7)])
    expect = scipy.linalg.solve_toeplitz(r[:6], r[1:7])
    np.testing.assert_allclose(np.asarray(lev(r, 6)), expect, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_levinson_zero_energy(backend):
    np.testing.assert_array_equal(np.asarray(BACKENDS[backend].levinson_durbin(np.zeros(7), 6)), np.zeros(6))


def test_levinson_recovers_ar2_process(rng):
    x = _ar_signal(rng, [0.5, -0.3], n=20000)
    n = len(x)
    r = np.array([np.dot(x[: n - k], x[k:]) / n for k in range(3)])
    np.testing.assert_allclose(kernels.levinson_durbin(r, 2), [0.5, -0.3], atol=0.03)
