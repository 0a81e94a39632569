import hashlib
from dataclasses import replace

import numpy as np
import pytest

from edhkd import tensor as T
from edhkd.datasets import DomainDataset, moon_domains, train_test_split
from edhkd.training import (BatchPair, Trainer, TrainConfig, distill, evaluate, make_ensemble, moon_profile,
                            paired_batches, signal_profile, train_baseline, train_edh)


def _small_domains(n=60, seed=0):
    s, t = moon_domains(seed, points_per_moon=n)
    return s, t


def _digest(params):
    h = hashlib.sha256()
    for p in params:
        h.update(p.data.tobytes())
    return h.hexdigest()


def _batch(rng, n=16):
    return BatchPair(rng.normal(size=(n, 2)), rng.integers(0, 2, size=n), rng.normal(size=(n, 2)))


@pytest.mark.parametrize("domain_bn", ["split", "joint"])
def test_step_B_freezes_generators_and_step_C_freezes_classifiers(rng, domain_bn):
    cfg = moon_profile(n_g=2, n_c=3, domain_bn=domain_bn)
    m = make_ensemble(cfg, 2, 2)
    tr = Trainer(m.train(), cfg)
    b = _batch(rng)
    tr.step_A(b)
    g0, c0 = _digest(m.generator_params()), _digest(m.classifier_params())
    tr.step_B(b)
    assert _digest(m.generator_params()) == g0 and _digest(m.classifier_params()) != c0
    c1 = _digest(m.classifier_params())
    tr.step_C(b)
    assert _digest(m.classifier_params()) == c1 and _digest(m.generator_params()) != g0


def test_step_A_updates_everything(rng):
    cfg = moon_profile(n_g=2, n_c=2)
    m = make_ensemble(cfg, 2, 2)
    g0, c0 = _digest(m.generator_params()), _digest(m.classifier_params())
    Trainer(m.train(), cfg).step_A(_batch(rng))
    assert _digest(m.generator_params()) != g0 and _digest(m.classifier_params()) != c0


def test_loss_scaling_is_per_hypothesis(rng):
    b = _batch(rng)
    reps = {}
    for hm in (True, False):
        cfg = moon_profile(n_g=2, n_c=3, hypothesis_mean=hm)
        tr = Trainer(make_ensemble(cfg, 2, 2).train(), cfg)
        reps[hm] = tr._report(tr._terms(b))
    assert reps[True]["L_s"] == pytest.approx(reps[False]["L_s"])
    assert reps[True]["L_dc"] == pytest.approx(reps[False]["L_dc"] / 6)
    assert reps[True]["L_e"] == pytest.approx(reps[False]["L_e"] / 6)
    assert reps[True]["L_dg"] == pytest.approx(reps[False]["L_dg"] / (2 * 32))


def test_split_bn_only_target_feeds_running_stats(rng):
    cfg = moon_profile(n_g=1, n_c=1)
    m = make_ensemble(cfg, 2, 2).train()
    tr = Trainer(m, cfg)
    x_t = rng.normal(size=(16, 2))
    b1 = BatchPair(rng.normal(size=(16, 2)), np.zeros(16, int), x_t)
    b2 = BatchPair(rng.normal(size=(16, 2)) + 5, np.zeros(16, int), x_t)
    tr._terms(b1)
    s1 = m.generator_bn_states()[0].running_mean.copy()
    m2 = make_ensemble(cfg, 2, 2).train()
    Trainer(m2, cfg)._terms(b2)
    np.testing.assert_array_equal(s1, m2.generator_bn_states()[0].running_mean)


@pytest.mark.parametrize("ns,nt,bs", [(10, 25, 4), (30, 7, 10), (5, 5, 5)])
def test_paired_batches_cover_longer_domain(ns, nt, bs):
    rng = np.random.default_rng(0)
    pairs = list(paired_batches(ns, nt, bs, rng))
    s = np.concatenate([a for a, _ in pairs])
    t = np.concatenate([b for _, b in pairs])
    assert all(len(a) == len(b) == bs for a, b in pairs)
    longer = s if ns >= nt else t
    assert set(longer.tolist()) == set(range(max(ns, nt)))
    assert set(s.tolist()) <= set(range(ns)) and set(t.tolist()) <= set(range(nt))


def test_train_edh_is_deterministic_and_never_reads_target_labels():
    s, t = _small_domains()
    cfg = moon_profile(n_g=2, n_c=2, epochs=2, batch_size=32)
    m1, c1 = train_edh(s, t, cfg)
    scrambled = DomainDataset(t.features, np.zeros(len(t), int), role="target", n_classes=2)
    m2, _ = train_edh(s, scrambled, cfg)
    assert _digest(m1.parameters()) == _digest(m2.parameters())
    assert len(c1) == 2 and np.isnan(c1.target_test_acc[0])


def test_test_sets_do_not_influence_training():
    s, t = _small_domains()
    cfg = moon_profile(n_g=1, n_c=2, epochs=2, batch_size=32)
    a, curve = train_edh(s, t, cfg, s, t)
    b, _ = train_edh(s, t, cfg)
    assert _digest(a.parameters()) == _digest(b.parameters())
    assert 0.0 <= curve.target_test_acc[-1] <= 1.0
    rows = list(curve.rows())
    assert len(rows[0]) == 7


def test_baselines():
    s, t = _small_domains()
    cfg = moon_profile(epochs=1, batch_size=32)
    mcd, _ = train_baseline("mcd", s, t, cfg)
    assert (mcd.n_g, mcd.n_c) == (1, 2)
    so, _ = train_baseline("source-only", s, None, cfg)
    assert (so.n_g, so.n_c) == (1, 1)
    with pytest.raises(ValueError):
        train_baseline("dann", s, t, cfg)


def test_distill_produces_single_hypothesis_student():
    s, t = _small_domains()
    cfg = moon_profile(n_g=2, n_c=2, epochs=2, batch_size=32)
    teacher, _ = train_edh(s, t, cfg)
    student, curve = distill(teacher, t, cfg, target_test=t)
    assert student.n_hypotheses == 1 and len(curve) == 2
    ev = evaluate(student, t, timing_repeats=2)
    assert np.array(ev["confusion"]).sum() == len(t)
    assert ev["forward_time_per_sample"] > 0


def test_empty_inputs_rejected():
    s, t = _small_domains()
    empty = s.subset(np.array([], dtype=int))
    with pytest.raises(ValueError):
        train_edh(empty, t, moon_profile(epochs=1))


def test_config_validation_and_profiles():
    with pytest.raises(ValueError):
        TrainConfig(n_g=0)
    with pytest.raises(ValueError):
        TrainConfig(domain_bn="other")
    sp = signal_profile()
    assert (sp.lr, sp.xi_g, sp.xi_e, sp.epochs, sp.batch_size, sp.generator_updates, sp.feature_len) == \
        (2e-4, 5.0, 0.01, 100, 256, 4, 256)
    mp = moon_profile()
    assert (mp.lr, mp.xi_g, mp.xi_c, mp.xi_e, mp.epochs, mp.batch_size, mp.generator_updates, mp.feature_len) == \
        (1e-3, 3.0, 3.0, 1.0, 50, 200, 3, 32)
    assert replace(mp, seed=3).to_dict()["seed"] == 3
