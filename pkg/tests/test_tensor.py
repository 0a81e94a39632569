import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from edhkd import tensor as T


def _param(rng, *shape):
    return T.Tensor(rng.normal(size=shape), requires_grad=True)


@pytest.mark.parametrize("name,fn", [
    ("add", lambda a, b: (a + b).sum()),
    ("sub_bcast", lambda a, b: (a - b[0:1]).sum()),
    ("mul", lambda a, b: (a * b * a).sum()),
    ("matmul", lambda a, b: (a @ b.reshape(4, 3)).mean()),
    ("softmax", lambda a, b: (T.softmax(a) * b).sum()),
    ("log_softmax", lambda a, b: (T.log_softmax(a) * b).sum()),
    ("log", lambda a, b: T.log(T.exp(a) + 1.0).sum()),
    ("exp", lambda a, b: (T.exp(a) * b).mean()),
    ("getitem", lambda a, b: (a[1:, ::2] * 3.0).sum()),
    ("concat", lambda a, b: (T.concat([a, b], axis=0) * T.concat([b, a], axis=0)).sum()),
    ("mean_axis", lambda a, b: (a.mean(axis=0, keepdims=True) * b).sum()),
])
def test_primitive_gradients(rng, name, fn):
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    assert T.grad_check(lambda: fn(a, b), [a, b]) < 1e-7


def test_abs_and_relu6_gradients_away_from_kinks(rng):
    a = T.Tensor(rng.uniform(0.1, 5.0, size=(4, 5)) * rng.choice([-1, 1], size=(4, 5)), requires_grad=True)
    assert T.grad_check(lambda: (T.tabs(a) * 2.0).sum(), [a]) < 1e-7
    assert T.grad_check(lambda: (T.relu6(a * 2.0) * a).sum(), [a]) < 1e-7


def test_relu6_values_and_mask():
    x = T.Tensor(np.array([-1.0, 0.0, 3.0, 6.0, 7.5]), requires_grad=True)
    y = T.relu6(x)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 3.0, 6.0, 6.0])
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0, 0.0, 0.0])


def test_kink_straddling_coordinates_are_skipped():
    a = T.Tensor(np.array([1e-7, 1.0]), requires_grad=True)
    res = T.grad_check(lambda: T.tabs(a).sum(), [a], details=True)
    assert res.skipped_kinks == 1 and res.checked == 1


def test_batch_norm_train_matches_formula(rng):
    x = rng.normal(2.0, 3.0, size=(7, 5))
    s = T.BatchNormState.create((1, 5), axis=0)
    s.gamma.data[:] = rng.normal(size=(1, 5))
    s.beta.data[:] = rng.normal(size=(1, 5))
    y = T.batch_norm(x, s)
    mu, var = x.mean(0), x.var(0)
    expect = (x - mu) / np.sqrt(var + 1e-5) * s.gamma.data + s.beta.data
    np.testing.assert_allclose(y.data, expect, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s.running_mean, 0.1 * mu[None], rtol=1e-12)
    np.testing.assert_allclose(s.running_var, 0.9 + 0.1 * x.var(0, ddof=1)[None], rtol=1e-12)


def test_batch_norm_eval_uses_running_stats_and_never_writes(rng):
    s = T.BatchNormState.create((1, 3), axis=0)
    s.running_mean = np.array([[1.0, 2.0, 3.0]])
    s.running_var = np.array([[4.0, 1.0, 0.25]])
    s.training = False
    x = rng.normal(size=(5, 3))
    y = T.batch_norm(x, s)
    np.testing.assert_allclose(y.data, (x - s.running_mean) / np.sqrt(s.running_var + 1e-5))
    np.testing.assert_array_equal(s.running_mean, [[1.0, 2.0, 3.0]])


def test_batch_norm_needs_two_rows():
    s = T.BatchNormState.create((1, 3), axis=0)
    with pytest.raises(ValueError):
        T.batch_norm(np.zeros((1, 3)), s)


@pytest.mark.parametrize("fused", [False, True])
def test_batch_norm_gradient(rng, fused):
    x = _param(rng, 2, 9, 4)
    s = T.BatchNormState.create((2, 1, 4), axis=1)
    s.gamma.data[:] = rng.uniform(0.5, 1.5, size=(2, 1, 4))
    s.beta.data[:] = rng.uniform(0.5, 2.0, size=(2, 1, 4))
    w = rng.normal(size=(2, 9, 4))
    op = T.bn_relu6 if fused else T.batch_norm
    err = T.grad_check(lambda: (op(x, s, update_stats=False) * w).sum(), [x, s.gamma, s.beta])
    assert err < 1e-6


def test_fused_bn_relu6_equals_composition(rng):
    x = rng.normal(size=(3, 11, 5)) * 4
    s1 = T.BatchNormState.create((3, 1, 5), axis=1)
    s2 = T.BatchNormState.create((3, 1, 5), axis=1)
    a = T.bn_relu6(x, s1)
    b = T.relu6(T.batch_norm(x, s2))
    np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s1.running_var, s2.running_var, rtol=1e-14)


def test_no_grad_builds_no_graph(rng):
    a = _param(rng, 3)
    with T.no_grad():
        y = a * 2.0
    assert not y.requires_grad and y._parents == ()


def test_frozen_blocks_gradient_and_restores(rng):
    a, b = _param(rng, 3), _param(rng, 3)
    with T.frozen([b]):
        (a * b).sum().backward()
    assert b.grad is None and a.grad is not None
    assert b.requires_grad


def test_gradients_accumulate_over_shared_nodes(rng):
    a = _param(rng, 4)
    (a + a + a).sum().backward()
    np.testing.assert_array_equal(a.grad, np.full(4, 3.0))


def test_division_by_tensor_rejected(rng):
    with pytest.raises(TypeError):
        _param(rng, 2) / _param(rng, 2)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=4),
                  elements=st.floats(-10, 10)))
def test_unbroadcast_inverts_broadcast_sum(x):
    # sum over broadcast axes must equal the gradient of sum(broadcast(b))
    shape = tuple(1 if i % 2 else s for i, s in enumerate(x.shape))
    b = T.Tensor(np.zeros(shape), requires_grad=True)
    (T.Tensor(x) * b).sum().backward()
    expect = x.sum(axis=tuple(i for i, s in enumerate(shape) if s == 1 and x.shape[i] != 1), keepdims=True)
    np.testing.assert_allclose(b.grad, expect.reshape(shape), rtol=1e-12, atol=1e-12)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
                  elements=st.floats(-300, 300)))
def test_softmax_rows_are_distributions(x):
    p = T.softmax(x).data
    assert np.all(p >= 0) and np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(np.exp(T.log_softmax(x).data), p, rtol=1e-9, atol=1e-300)
