import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from edhkd import theorems as th


@pytest.mark.parametrize("alpha", [0.0, 0.1, 0.4, 0.7, 0.95])
def test_single_learner_exact_accuracy(alpha):
    r = th.simulate_single_learner(alpha)
    assert r.accuracy == pytest.approx(1.0 - (1.0 - alpha) / 3.0, abs=1e-12)
    assert np.any(r.k == 0.0)
    np.testing.assert_array_equal(r.k, [0.01, 0.0, 0.01])
    k, acc = r
    assert acc == r.accuracy


def _loop_minimize(c1, c2, alpha, n):
    # brute force over the grid with plain loops; ties to the lexicographically smallest k
    w = (1 + 2 * alpha) / 3
    best, best_k = math.inf, None
    for i, j, l in itertools.product(range(n + 1), repeat=3):
        k = (i / n, j / n, l / n)
        if sum(a * b for a, b in zip(k, c1)) <= 0 or sum(a * b for a, b in zip(k, c2)) <= 0:
            continue
        v = w * sum(a * abs(b - c) for a, b, c in zip(k, c1, c2))
        if v < best - 1e-12:
            best, best_k = v, k
    return np.array(best_k), best


@pytest.mark.parametrize("alpha", [0.1, 0.4, 0.7])
def test_generator_minimizer_matches_loop_oracle(alpha):
    for c1, c2 in th.max_discrepancy_pairs(np.ones(3), alpha)[1]:
        k, v = th.minimize_generator(c1, c2, alpha, resolution=0.1)
        k_ref, v_ref = _loop_minimize(c1, c2, alpha, 10)
        np.testing.assert_allclose(k, k_ref, atol=1e-12)
        assert v == pytest.approx(v_ref, abs=1e-12)


def test_extremal_pair_counts():
    best, extremal = th.max_discrepancy_pairs(np.ones(3), 0.4)
    # disjoint nonempty supports over 3 directions: 3^3 - 2*2^3 + 1 = 12
    assert len(extremal) == 12
    # maximizers are the complementary pairs: 2^3 - 2 = 6
    assert len(best) == 6
    assert all(np.array_equal(a + b, np.ones(3)) for a, b in best)


def test_every_branch_keeps_a_zero_and_misses_a_slice():
    r = th.simulate_single_learner(0.4)
    for b in r.branches:
        assert 0.0 in b.k
        assert b.accuracy < 1.0
    assert {b.zero_count for b in r.branches} == {3, 4}


def test_maximal_columns_spread():
    cols, top = th.maximal_columns()
    assert top == pytest.approx(4.0 / 3.0)
    assert sorted(map(tuple, cols)) == sorted(
        [p for p in itertools.product((0.0, 1.0), repeat=3) if 0 < sum(p) < 3])


def test_ensemble_configuration_count_matches_enumeration():
    cols = [p for p in itertools.product((0, 1), repeat=3) if 0 < sum(p) < 3]
    count = 0
    for trip in itertools.product(cols, repeat=3):
        K = np.array(trip).T
        count += bool(np.all(K.sum(axis=1) >= 2))
    assert len(th.ensemble_configurations()) == count == 6


@pytest.mark.parametrize("alpha", [0.1, 0.4, 0.7])
def test_ensemble_is_perfect(alpha):
    e = th.simulate_ensemble(alpha)
    assert e.accuracy == 1.0 and e.min_accuracy == 1.0
    assert all(v > 0 for v in e.column_max) and all(v == 0 for v in e.column_min)


def _symmetric_student_loss(kc, soft, w):
    # with k = c the student's score is k^2 per direction and 3 k^2 on the full slice
    s = np.array([3 * kc ** 2, kc ** 2, kc ** 2, kc ** 2])
    p = 1 - np.exp(-s)
    return -np.sum(w * (soft * np.log(p) + (1 - soft) * np.log(1 - p)))


FROZEN_STUDENT = {0.1: 0.50425137, 0.4: 0.54017735, 0.7: 0.5622571}


@pytest.mark.parametrize("alpha", [0.1, 0.4, 0.7])
def test_distilled_student(alpha):
    d = th.simulate_distilled(alpha)
    assert d.accuracy == 1.0 and d.agreement == 1.0
    assert np.all(d.k > 0) and np.all(d.c > 0)
    soft = th.teacher_soft_labels(th.simulate_ensemble(alpha))
    ref = minimize_scalar(_symmetric_student_loss, bounds=(0.01, 5), args=(soft, th.slice_weights(alpha)),
                          method="bounded", options={"xatol": 1e-12})
    np.testing.assert_allclose(d.k, ref.x, rtol=1e-5)
    np.testing.assert_allclose(d.c, ref.x, rtol=1e-5)
    np.testing.assert_allclose(d.k, FROZEN_STUDENT[alpha], rtol=1e-6)
    assert d.loss == pytest.approx(ref.fun, rel=1e-9)


def test_distilled_gradient_descent_agrees():
    a, b = th.simulate_distilled(0.4), th.simulate_distilled(0.4, method="gd")
    np.testing.assert_allclose(a.k, b.k, rtol=1e-6)
    assert b.accuracy == 1.0
    with pytest.raises(ValueError):
        th.simulate_distilled(0.4, method="newton")


def test_student_gradient_is_exact():
    soft = np.array([0.9, 0.6, 0.6, 0.6])
    w = th.slice_weights(0.4)
    theta = np.array([0.3, 0.7, 1.1, 0.5, 0.2, 0.9])
    g = th._student_ce_grad(theta, soft, w)
    h = 1e-6
    num = [(th._student_ce(theta + h * e, soft, w) - th._student_ce(theta - h * e, soft, w)) / (2 * h)
           for e in np.eye(6)]
    np.testing.assert_allclose(g, num, rtol=1e-6)


def test_slice_weights_validation():
    with pytest.raises(ValueError):
        th.slice_weights(1.0)
    np.testing.assert_allclose(th.slice_weights(0.4).sum(), 1.0)


def _loop_decomposition(P, y):
    K, n = len(P), len(y)
    hbar = [sum(P[k][i] for k in range(K)) / K for i in range(n)]
    e_bar = sum((hbar[i] - y[i]) ** 2 for i in range(n)) / n
    e_mean = sum((P[k][i] - y[i]) ** 2 for k in range(K) for i in range(n)) / (K * n)
    d_mean = sum((P[k][i] - hbar[i]) ** 2 for k in range(K) for i in range(n)) / (K * n)
    return e_bar, e_mean, d_mean


@given(st.integers(1, 20), st.integers(10, 200), st.integers(0, 10**6))
def test_decomposition_identity(K, n, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    P = rng.normal(size=(K, n)) * rng.uniform(0.1, 10) + y
    rep = th.verify_decomposition(P, None, y)
    assert rep.holds(1e-9)
    ref = _loop_decomposition(P.tolist(), y.tolist())
    np.testing.assert_allclose([rep.ensemble_error, rep.mean_error, rep.mean_discrepancy], ref, rtol=1e-10)


def test_decomposition_accepts_callables_and_vectors():
    x = np.linspace(0, 1, 11)
    y = x ** 2
    rep = th.verify_decomposition([lambda v: v, lambda v: v ** 3, x * 0.5], x, y)
    assert rep.holds()
    with pytest.raises(TypeError):
        th.verify_decomposition(lambda v: v, x, y)
    with pytest.raises(ValueError):
        th.verify_decomposition(np.zeros((2, 3)), None, np.zeros(4))


def test_bound_hand_example():
    # two classifiers on two source and two target points
    P = np.array([[0, 1, 1, 1],
                  [0, 0, 0, 1]], dtype=float)
    ys, yt = [0, 1], [0, 1]
    rep = th.verify_bound(P, (np.zeros(2), ys), (np.zeros(2), yt))
    # source errors (0, 0.5), target errors (0.5, 0); lambda = min(0.5, 0.5)
    # disagreement source 0.5, target 0.5 -> CdC distance 0
    assert (rep.source_error, rep.target_error, rep.lam, rep.d_cdc) == (0.0, 0.5, 0.5, 0.0)
    assert rep.bound == 0.5 and rep.holds


def test_pairwise_gap_binary_and_general_paths_agree(rng):
    Ps = rng.integers(0, 2, size=(30, 40)).astype(float)
    Pt = rng.integers(0, 2, size=(30, 50)).astype(float)
    fast = th._pairwise_gap(Ps, Pt)
    slow = th._pairwise_gap(Ps, Pt, chunk=7, binary=False)
    ref = max(abs(np.abs(Pt[a] - Pt[b]).mean() - np.abs(Ps[a] - Ps[b]).mean())
              for a in range(30) for b in range(30))
    assert fast == pytest.approx(slow, abs=1e-12) and slow == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("i", range(5))
def test_bound_holds_on_threshold_spaces(i):
    s, t = th.shifted_gaussians(i, n=200, shift=1.5 - i * 0.7)
    rep = th.verify_bound(th.threshold_space(n=51), s, t)
    assert rep.holds and rep.n_classifiers == 51
    assert rep.target_error <= rep.bound


def test_bound_rejects_oversized_space():
    with pytest.raises(ValueError):
        th.verify_bound(np.zeros((th.MAX_CLASSIFIER_SPACE + 1, 2)), (np.zeros(1), [0]), (np.zeros(1), [0]))


def test_run_all_report_is_json_ready():
    import json
    rep = th.run_all(alphas=(0.4,), n_decomposition=5, n_bound=2)
    assert rep["pass"] is True
    assert set(rep) == {"single_learner", "ensemble", "distilled", "decomposition", "bound", "pass"}
    json.dumps(rep)
