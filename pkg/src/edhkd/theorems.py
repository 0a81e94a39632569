"""Executable versions of the multi-view thought experiment and numerical
checks of the error-discrepancy decomposition and the target-error bound.

The thought experiment works with exact linear learners: a generator emits
``k1 v1 + k2 v2 + k3 v3`` with ``k >= 0`` over orthonormal hidden directions
and a classifier is described by its nonnegative responses ``c(v_j)``. A
positive target example is one of four slices: all three directions (weight
``alpha``) or exactly one direction (weight ``(1 - alpha) / 3`` each). Because
everything is linear the slice scores are exact, so accuracies are computed
from slice weights rather than sampled.
"""
import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from edhkd import tensor as T

MAX_CLASSIFIER_SPACE = 10_000


def slice_weights(alpha):
    """Weights of the full slice and the three single-direction slices."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    r = (1.0 - alpha) / 3.0
    return np.array([alpha, r, r, r])


def _slice_scores(k, c):
    """Classifier score per slice for coefficient vector k and responses c."""
    k, c = np.asarray(k, float), np.asarray(c, float)
    per_dir = k * c
    return np.r_[per_dir.sum(), per_dir]


def _grid(resolution):
    n = int(round(1.0 / resolution))
    if n < 1 or abs(n * resolution - 1.0) > 1e-9:
        raise ValueError("resolution must divide 1")
    return np.arange(n + 1) / n


def _binary_responses():
    return [np.array(b, float) for b in itertools.product((0, 1), repeat=3)]


# -- single learner ----------------------------------------------------------


@dataclass
class BranchOutcome:
    c1: list
    c2: list
    zero_count: int
    k: list
    discrepancy: float
    accuracy: float


@dataclass
class SingleLearnerResult:
    k: np.ndarray
    accuracy: float
    c1: np.ndarray
    c2: np.ndarray
    branches: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.k, self.accuracy))


def max_discrepancy_pairs(k, alpha):
    """Binary classifier pairs that maximize target discrepancy at ``k`` while
    both still classify the full (source-like) example as positive.

    Returns the pairs and the list of all pairs meeting the extremal condition
    ``c1(v_j) c2(v_j) = 0`` for every j, which is the condition the proof derives
    for any maximizer.
    """
    w = (1.0 + 2.0 * alpha) / 3.0
    k = np.asarray(k, float)
    best, best_val, extremal = [], -np.inf, []
    for c1 in _binary_responses():
        for c2 in _binary_responses():
            if k @ c1 <= 0 or k @ c2 <= 0:
                continue
            if np.all(c1 * c2 == 0):
                extremal.append((c1, c2))
            val = w * float(np.sum(k * np.abs(c1 - c2)))
            if val > best_val + 1e-12:
                best, best_val = [(c1, c2)], val
            elif abs(val - best_val) <= 1e-12:
                best.append((c1, c2))
    return best, extremal


def minimize_generator(c1, c2, alpha, resolution=0.01):
    """Grid search of ``k`` minimizing the classifier discrepancy subject to the
    source constraints ``k.c1 > 0`` and ``k.c2 > 0``. Ties go to the
    lexicographically smallest ``k``."""
    g = _grid(resolution)
    K = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    w = (1.0 + 2.0 * alpha) / 3.0
    obj = w * (K @ np.abs(np.asarray(c1) - np.asarray(c2)))
    ok = (K @ c1 > 0) & (K @ c2 > 0)
    if not ok.any():
        raise ValueError("no feasible generator on the grid")
    obj = np.where(ok, obj, np.inf)
    best = np.flatnonzero(obj <= obj.min() + 1e-12)
    # meshgrid order is already lexicographic, so the first hit is the smallest
    return K[best[0]], float(obj[best[0]])


def slice_accuracy(positive, alpha):
    """Accuracy on the positive target slices: one minus the weight of missed slices
    (so a clean sweep is exactly 1.0)."""
    return float(1.0 - slice_weights(alpha) @ ~np.asarray(positive, bool))


def pair_accuracy(k, c1, c2, alpha):
    """Target accuracy when an example is called positive if either classifier fires."""
    return slice_accuracy((_slice_scores(k, c1) + _slice_scores(k, c2)) > 0, alpha)


def simulate_single_learner(alpha, resolution=0.01):
    """One generator and two classifiers under the max/min discrepancy game.

    Both proof branches are enumerated: complementary classifier pairs (three
    zero responses in total) and pairs sharing a zero direction (four zeros).
    The reported ``k`` comes from the canonical complementary pair
    ``c1 = (1,0,0)``, ``c2 = (0,1,1)``.
    """
    w = slice_weights(alpha)
    _, extremal = max_discrepancy_pairs(np.ones(3), alpha)
    branches = []
    for c1, c2 in extremal:
        k, val = minimize_generator(c1, c2, alpha, resolution)
        branches.append(BranchOutcome(c1.tolist(), c2.tolist(), int(np.sum(c1 == 0) + np.sum(c2 == 0)),
                                      k.tolist(), val, pair_accuracy(k, c1, c2, alpha)))
    c1, c2 = np.array([1.0, 0, 0]), np.array([0.0, 1, 1])
    k, _ = minimize_generator(c1, c2, alpha, resolution)
    acc = pair_accuracy(k, c1, c2, alpha)
    if not np.any(k == 0):
        raise AssertionError(f"expected a zero coefficient, got k={k}")
    if abs(acc - (1.0 - w[1])) > 1e-9:
        raise AssertionError(f"accuracy {acc} differs from 1 - (1 - alpha)/3")
    return SingleLearnerResult(k, acc, c1, c2, branches)


# -- ensemble ----------------------------------------------------------------


def column_discrepancy(col):
    col = np.asarray(col, float)
    return float(np.abs(col - col.mean(axis=-1, keepdims=True)).sum(axis=-1))


def maximal_columns(resolution=0.01):
    """All grid columns (k_1j, k_2j, k_3j) maximizing the L1 spread about their mean."""
    g = _grid(resolution)
    C = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    spread = np.abs(C - C.mean(axis=1, keepdims=True)).sum(axis=1)
    top = spread.max()
    return C[spread >= top - 1e-12], float(top)


@dataclass
class EnsembleResult:
    accuracy: float
    k: np.ndarray  # (generator, direction)
    classifiers: list  # per generator: (c1, c2)
    column_max: list
    column_min: list
    n_configurations: int
    min_accuracy: float

    def __float__(self):
        return self.accuracy


def _pair_for_generator(k):
    best, _ = max_discrepancy_pairs(k, 0.0)
    # lexicographically smallest c1 among the maximizers keeps runs reproducible
    best.sort(key=lambda p: (tuple(p[0]), tuple(p[1])))
    return best[0]


def _ensemble_scores(K, pairs):
    """Mean over the six hypotheses of the score on each slice."""
    s = [_slice_scores(K[i], c) for i, (c1, c2) in enumerate(pairs) for c in (c1, c2)]
    return np.mean(s, axis=0)


def ensemble_configurations(resolution=0.01):
    """Generator coefficient matrices built from spread-maximizing columns where
    every generator keeps at least two directions (its source constraint)."""
    cols, _ = maximal_columns(resolution)
    out = []
    for trip in itertools.product(range(len(cols)), repeat=3):
        K = np.stack([cols[t] for t in trip], axis=1)
        if np.all((K > 0).sum(axis=1) >= 2):
            out.append(K)
    return out


def simulate_ensemble(alpha, resolution=0.01):
    """Three generators with two classifiers each. Feature discrepancy is
    maximized column by column; each generator's classifier pair then maximizes
    its own discrepancy. Every admissible configuration is scored and the
    first (lexicographic) one is reported."""
    configs = ensemble_configurations(resolution)
    if not configs:
        raise AssertionError("no admissible generator configuration")
    accs = []
    for K in configs:
        pairs = [_pair_for_generator(K[i]) for i in range(3)]
        accs.append(slice_accuracy(_ensemble_scores(K, pairs) > 0, alpha))
    K = configs[0]
    pairs = [_pair_for_generator(K[i]) for i in range(3)]
    col_max, col_min = K.max(axis=0), K.min(axis=0)
    if not (np.all(col_max > 0) and np.all(col_min == 0)):
        raise AssertionError("spread maximum should give max > 0 and min = 0 per direction")
    return EnsembleResult(accs[0], K, pairs, col_max.tolist(), col_min.tolist(), len(configs), min(accs))


# -- distillation ------------------------------------------------------------


def _prob(score):
    """Probability of the positive class from a nonnegative ReLU score."""
    return 1.0 - np.exp(-score)


def teacher_soft_labels(ens):
    """Average over hypotheses of each hypothesis' positive-class probability per slice."""
    probs = [_prob(_slice_scores(ens.k[i], c)) for i, (c1, c2) in enumerate(ens.classifiers) for c in (c1, c2)]
    return np.mean(probs, axis=0)


def _student_ce(theta, soft, w):
    k, c = theta[:3], theta[3:]
    s = _slice_scores(k, c)
    p = np.clip(_prob(s), 1e-12, 1.0 - 1e-12)
    return float(-np.sum(w * (soft * np.log(p) + (1.0 - soft) * np.log(1.0 - p))))


def _student_ce_grad(theta, soft, w):
    k, c = theta[:3], theta[3:]
    s = _slice_scores(k, c)
    p = np.clip(_prob(s), 1e-12, 1.0 - 1e-12)
    # d/ds of -[y ln p + (1-y) ln(1-p)] with p = 1 - exp(-s)
    ds = w * (-(soft * (1.0 - p) / p) + (1.0 - soft))
    dw = ds[0] + ds[1:]  # score of slice j and of the full slice both use k_j c_j
    return np.r_[dw * c, dw * k]


@dataclass
class DistilledResult:
    accuracy: float
    k: np.ndarray
    c: np.ndarray
    loss: float
    agreement: float
    method: str

    def __float__(self):
        return self.accuracy


def _fit_student_gd(soft, w, steps=20000, lr=0.05, init=0.5):
    theta = T.Tensor(np.full(6, init), requires_grad=True)
    lw = T.Tensor(w)
    for _ in range(steps):
        k, c = theta[:3], theta[3:]
        per_dir = k * c
        s = T.concat([per_dir.sum().reshape(1), per_dir])
        q = T.exp(-s)
        p = 1.0 - q
        loss = -(lw * (T.Tensor(soft) * T.log(p) + T.Tensor(1.0 - soft) * T.log(q))).sum()
        theta.grad = None
        T.backward(loss)
        theta.data = np.maximum(theta.data - lr * theta.grad, 0.0)
    return theta.data, float(loss.data)


def simulate_distilled(alpha, resolution=0.01, method="lbfgs", init=0.5):
    """Fit one nonnegative student (k_s, c_s) to the teacher's soft labels by
    cross-entropy. ``method='gd'`` uses projected gradient descent through the
    autodiff engine instead of L-BFGS-B, as a looser secondary check."""
    ens = simulate_ensemble(alpha, resolution)
    w = slice_weights(alpha)
    soft = teacher_soft_labels(ens)
    if method == "lbfgs":
        res = minimize(_student_ce, np.full(6, init), args=(soft, w), jac=_student_ce_grad,
                       method="L-BFGS-B", bounds=[(0.0, 50.0)] * 6,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
        theta, loss = res.x, float(res.fun)
    elif method == "gd":
        theta, loss = _fit_student_gd(soft, w, init=init)
    else:
        raise ValueError(f"unknown method {method!r}")
    k, c = theta[:3], theta[3:]
    if not (np.all(k > 0) and np.all(c > 0)):
        raise AssertionError(f"student coefficients must be positive, got k={k}, c={c}")
    student_pos = _slice_scores(k, c) > 0
    teacher_pos = _ensemble_scores(ens.k, ens.classifiers) > 0
    acc = slice_accuracy(student_pos, alpha)
    agree = float(np.mean(student_pos == teacher_pos))
    return DistilledResult(acc, k, c, loss, agree, method)


# -- decomposition -----------------------------------------------------------


@dataclass
class DecompositionReport:
    ensemble_error: float
    mean_error: float
    mean_discrepancy: float

    @property
    def residual(self):
        return self.ensemble_error - (self.mean_error - self.mean_discrepancy)

    def holds(self, rtol=1e-9):
        rhs = self.mean_error - self.mean_discrepancy
        return abs(self.residual) <= rtol * max(1.0, abs(rhs))


def _predictions(hypotheses, x):
    if callable(hypotheses):
        raise TypeError("pass a list of hypotheses or a 2-D prediction array")
    if isinstance(hypotheses, np.ndarray):
        P = np.asarray(hypotheses, float)
    else:
        P = np.stack([np.asarray(h(x) if callable(h) else h, float).reshape(-1) for h in hypotheses])
    if P.ndim != 2 or P.shape[0] < 1:
        raise ValueError("need at least one hypothesis")
    return P


def verify_decomposition(hypotheses, x, y):
    """Squared-error decomposition of the mean hypothesis.

    ``hypotheses`` is a list of callables (or prediction vectors) or an array of
    shape (n_hypotheses, n_samples).
    """
    P = _predictions(hypotheses, x)
    y = np.asarray(y, float).reshape(-1)
    if P.shape[1] != len(y):
        raise ValueError("predictions and labels differ in length")
    hbar = P.mean(axis=0)
    return DecompositionReport(
        ensemble_error=float(np.mean((hbar - y) ** 2)),
        mean_error=float(np.mean((P - y) ** 2)),
        mean_discrepancy=float(np.mean((P - hbar) ** 2)),
    )


# -- target error bound ------------------------------------------------------


@dataclass
class BoundReport:
    source_error: float
    target_error: float
    lam: float
    d_cdc: float
    bound: float
    chosen: int
    n_classifiers: int
    n_violations: int
    max_slack_violation: float

    @property
    def holds(self):
        return self.n_violations == 0


def _pairwise_gap(Ps, Pt, chunk=256, binary=None):
    """max over pairs (a, b) of |E_t|a-b| - E_s|a-b||.

    0/1 predictions take a matmul shortcut unless ``binary=False``.
    """
    m = Ps.shape[0]
    if binary is None:
        binary = np.all((Ps == 0) | (Ps == 1)) and np.all((Pt == 0) | (Pt == 1))
    if binary:
        def dis(P):
            s = P.sum(axis=1)
            return (s[:, None] + s[None, :] - 2.0 * (P @ P.T)) / P.shape[1]
        return float(np.max(np.abs(dis(Pt) - dis(Ps))))
    best = 0.0
    for i in range(0, m, chunk):
        a_s, a_t = Ps[i:i + chunk, None, :], Pt[i:i + chunk, None, :]
        gap = np.abs(np.abs(a_t - Pt[None]).mean(axis=2) - np.abs(a_s - Ps[None]).mean(axis=2))
        best = max(best, float(gap.max()))
    return best


def verify_bound(classifiers, source, target, generator=None, chosen=None):
    """Check the target-error bound for every member of a finite classifier space.

    ``classifiers`` is a list of callables on generated features or an array of
    predictions with shape (n_classifiers, n_source + n_target) ordered source
    first. ``source`` and ``target`` are ``(x, y)`` pairs. ``chosen`` selects the
    classifier whose quantities are reported (default: lowest source error).
    """
    xs, ys = source
    xt, yt = target
    ys, yt = np.asarray(ys, float), np.asarray(yt, float)
    g = generator or (lambda v: v)
    fs, ft = g(np.asarray(xs)), g(np.asarray(xt))
    if isinstance(classifiers, np.ndarray):
        m = classifiers.shape[0]
    else:
        m = len(classifiers)
    if m > MAX_CLASSIFIER_SPACE:
        raise ValueError(f"classifier space of {m} exceeds the enumeration limit {MAX_CLASSIFIER_SPACE}")
    if m == 0:
        raise ValueError("empty classifier space")
    if isinstance(classifiers, np.ndarray):
        P = np.asarray(classifiers, float)
        Ps, Pt = P[:, :len(ys)], P[:, len(ys):]
    else:
        Ps = np.stack([np.asarray(c(fs), float).reshape(-1) for c in classifiers])
        Pt = np.stack([np.asarray(c(ft), float).reshape(-1) for c in classifiers])
    eps_s = np.abs(Ps - ys).mean(axis=1)
    eps_t = np.abs(Pt - yt).mean(axis=1)
    lam = float(np.min(eps_s + eps_t))
    d = 2.0 * _pairwise_gap(Ps, Pt)
    bounds = eps_s + lam + d / 2.0
    slack = eps_t - bounds
    bad = slack > 1e-12
    i = int(np.argmin(eps_s)) if chosen is None else int(chosen)
    return BoundReport(float(eps_s[i]), float(eps_t[i]), lam, d, float(bounds[i]), i, m,
                       int(bad.sum()), float(slack.max()) if bad.any() else 0.0)


def threshold_space(lo=-5.0, hi=5.0, n=201):
    """1-D threshold classifiers ``x > t`` on an even grid of thresholds."""
    return [(lambda x, t=t: (np.asarray(x).reshape(-1) > t).astype(float)) for t in np.linspace(lo, hi, n)]


def shifted_gaussians(seed, n=400, shift=1.0, scale=1.0):
    """Two-class 1-D Gaussians (means -1, +1) for source; target shifted by ``shift``."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    xs = rng.normal(2.0 * y - 1.0, scale)
    yt = rng.integers(0, 2, size=n)
    xt = rng.normal(2.0 * yt - 1.0 + shift, scale)
    return (xs, y), (xt, yt)


# -- report ------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(u) for u in v]
    if isinstance(v, dict):
        return {k: _jsonable(u) for k, u in v.items()}
    return v


def run_all(alphas=(0.1, 0.4, 0.7), seed=0, n_decomposition=100, n_bound=20):
    """Evaluate every check and return a JSON-ready dict keyed by theorem."""
    out = {}
    rows = []
    for a in alphas:
        r = simulate_single_learner(a)
        expected = 1.0 - (1.0 - a) / 3.0
        rows.append({"alpha": a, "k": r.k, "accuracy": r.accuracy, "expected": expected,
                     "pass": bool(abs(r.accuracy - expected) <= 1e-6 and np.any(r.k == 0)),
                     "branches": [asdict(b) for b in r.branches]})
    out["single_learner"] = {"pass": all(x["pass"] for x in rows), "runs": rows}

    rows = []
    for a in alphas:
        e = simulate_ensemble(a)
        rows.append({"alpha": a, "accuracy": e.accuracy, "min_accuracy_over_configurations": e.min_accuracy,
                     "k": e.k, "column_max": e.column_max, "column_min": e.column_min,
                     "pass": e.accuracy == 1.0 and e.min_accuracy == 1.0})
    out["ensemble"] = {"pass": all(x["pass"] for x in rows), "runs": rows}

    rows = []
    for a in alphas:
        d = simulate_distilled(a)
        rows.append({"alpha": a, "accuracy": d.accuracy, "k": d.k, "c": d.c, "loss": d.loss,
                     "agreement": d.agreement,
                     "pass": d.accuracy == 1.0 and bool(np.all(d.k > 0) and np.all(d.c > 0))})
    out["distilled"] = {"pass": all(x["pass"] for x in rows), "runs": rows}

    rng = np.random.default_rng([seed, 4])
    worst = 0.0
    for _ in range(n_decomposition):
        K = int(rng.integers(1, 21))
        n = int(rng.integers(10, 1001))
        y = rng.normal(size=n)
        rep = verify_decomposition(rng.normal(size=(K, n)) * rng.uniform(0.1, 10) + y, None, y)
        rhs = rep.mean_error - rep.mean_discrepancy
        worst = max(worst, abs(rep.residual) / max(1.0, abs(rhs)))
    out["decomposition"] = {"pass": worst <= 1e-9, "instances": n_decomposition, "max_relative_residual": worst}

    total_viol, rows = 0, []
    for i in range(n_bound):
        s, t = shifted_gaussians([seed, 5, i], shift=float(rng.uniform(-2, 2)), scale=float(rng.uniform(0.3, 2)))
        rep = verify_bound(threshold_space(), s, t)
        total_viol += rep.n_violations
        rows.append(asdict(rep))
    out["bound"] = {"pass": total_viol == 0, "instances": n_bound, "violations": total_viol, "reports": rows}
    out["pass"] = all(v["pass"] for v in out.values() if isinstance(v, dict))
    return _jsonable(out)
