import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edhkd import datasets as D
from edhkd.datasets import (DatasetFormatError, DomainDataset, HiddenLabelsError, MoonSpec, MultiViewSpec,
                            load_feature_csv, make_moons, make_multiview, moon_domains, split_by_subject,
                            split_loso, train_test_split, write_feature_csv)


def test_moon_shapes_and_labels():
    ds = make_moons(MoonSpec(100, 0.0))
    assert ds.features.shape == (200, 2)
    np.testing.assert_array_equal(np.bincount(ds.labels), [100, 100])
    up, low = ds.features[ds.labels == 0], ds.features[ds.labels == 1]
    np.testing.assert_allclose(np.hypot(up[:, 0], up[:, 1]), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.hypot(low[:, 0] - 1, low[:, 1] - 0.5), 1.0, atol=1e-12)


def test_moon_transform_is_rigid():
    a = make_moons(MoonSpec(50, 0.0))
    b = make_moons(MoonSpec(50, 0.0, 90.0, (1.0, 2.0)))
    np.testing.assert_allclose(b.features, a.features @ np.array([[0, 1], [-1, 0]]) + [1.0, 2.0], atol=1e-12)


def test_moon_domains_roles_and_independence():
    s, t = moon_domains(0)
    assert s.role == "source" and t.role == "target"
    with pytest.raises(HiddenLabelsError):
        _ = t.labels
    s2, _ = moon_domains(0)
    np.testing.assert_array_equal(s.features, s2.features)
    assert not np.array_equal(s.features, moon_domains(1)[0].features)


def test_split_is_stratified_deterministic_and_disjoint():
    s, _ = moon_domains(0)
    tr, te = train_test_split(s, seed=4)
    assert len(tr) == 2100 and len(te) == 900
    assert len(np.intersect1d(tr, te)) == 0
    np.testing.assert_array_equal(np.bincount(s.labels[tr]), [1050, 1050])
    tr2, _ = train_test_split(s, seed=4)
    np.testing.assert_array_equal(tr, tr2)
    assert not np.array_equal(tr, train_test_split(s, seed=5)[0])


@given(st.integers(2, 60), st.integers(1, 4), st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_partitions_every_class(n, k, frac, seed):
    y = np.arange(n) % k
    ds = DomainDataset(np.zeros((n, 1)), y)
    tr, te = train_test_split(ds, seed, frac)
    np.testing.assert_array_equal(np.sort(np.concatenate([tr, te])), np.arange(n))


def _subject_data(rng, subjects=(1, 2, 3), n=30):
    out = {}
    for s in subjects:
        out[s] = DomainDataset(rng.normal(size=(n, 4)) + s, np.arange(n) % 3, np.full(n, s))
    return out


def test_loso_split_holds_out_one_subject(rng):
    per = _subject_data(rng)
    src, tt, te, st_ = split_loso(per, 2, seed=0, with_source_test=True)
    assert set(src.subjects) == {1, 3} and set(tt.subjects) == {2} and set(te.subjects) == {2}
    assert tt.role == "target" and te.role == "target"
    assert len(src) + len(st_) == 60 and len(tt) + len(te) == 30
    with pytest.raises(KeyError):
        split_loso(per, 9, 0)


def test_feature_csv_round_trip(tmp_path, rng):
    ds = DomainDataset(rng.normal(size=(5, 3)), [0, 1, 2, 1, 0], [4, 4, 5, 5, 5])
    p = tmp_path / "f.csv"
    write_feature_csv(p, ds)
    back = load_feature_csv(p)
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert set(split_by_subject(back)) == {4, 5}
    assert p.read_bytes().count(b"\r") == 0


@pytest.mark.parametrize("text,line", [
    ("subject,label,f0\n1,0,0.5\n1,x,2\n", 3),
    ("subject,label,f0\n1,0,0.5,9\n", 2),
    ("subject,label,g0\n", 1),
])
def test_feature_csv_errors_name_the_line(tmp_path, text, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DatasetFormatError, match=f":{line}:"):
        load_feature_csv(p)


def test_multiview_groups(rng):
    src, tgt = make_multiview(MultiViewSpec(alpha=0.4, n_samples=600))
    assert np.all(src.features[src.labels == 0] == 0)
    g = tgt.groups
    # 300 positives: round(300 * 0.6 / 3) = 60 per single-view group, the rest carry all views
    assert np.sum(g == 0) == 120 and all(np.sum(g == j) == 60 for j in (1, 2, 3))
    v = tgt.directions
    row = tgt.features[np.flatnonzero(g == 2)[0]]
    np.testing.assert_allclose(row @ v.T, [0, 1, 0], atol=1e-12)


def test_multiview_validation():
    with pytest.raises(ValueError):
        MultiViewSpec(alpha=1.5)
    with pytest.raises(ValueError):
        MultiViewSpec(feature_dim=2)


def _write_dsads(root, rng, subjects=(1, 2)):
    for a in range(1, D.DSADS_ACTIVITIES + 1):
        for p in subjects:
            d = root / f"a{a:02d}" / f"p{p}"
            d.mkdir(parents=True)
            for s in range(1, D.DSADS_SEGMENTS + 1):
                np.savetxt(d / f"s{s:02d}.txt", rng.normal(a, 1, size=(125, 45)), delimiter=",", fmt="%.4f")


def test_dsads_reader_on_miniature_tree(tmp_path, rng, monkeypatch):
    monkeypatch.setattr(D, "DSADS_ACTIVITIES", 3)
    monkeypatch.setattr(D, "DSADS_SEGMENTS", 2)
    _write_dsads(tmp_path, rng)
    per = D.load_dsads(tmp_path, subjects=[1, 2])
    assert set(per) == {1, 2}
    assert per[1].features.shape == (6, 45 * 6)
    np.testing.assert_array_equal(per[2].labels, [0, 0, 1, 1, 2, 2])
    arm = D.load_dsads(tmp_path, sensors=["RA"], subjects=[1])
    assert arm[1].features.shape == (6, 9 * 6)


def test_dsads_reader_errors(tmp_path, rng, monkeypatch):
    monkeypatch.setattr(D, "DSADS_ACTIVITIES", 1)
    monkeypatch.setattr(D, "DSADS_SEGMENTS", 1)
    with pytest.raises(FileNotFoundError):
        D.load_dsads(tmp_path / "nope")
    _write_dsads(tmp_path, rng, subjects=(1,))
    with pytest.raises(FileNotFoundError):
        D.load_dsads(tmp_path, subjects=[2])
    (tmp_path / "a01" / "p1" / "s01.txt").write_text("1,2,3\n")
    with pytest.raises(DatasetFormatError):
        D.load_dsads(tmp_path, subjects=[1])
    with pytest.raises(ValueError):
        D.sensor_channels(["XX"])


def test_default_data_dir_reads_environment(monkeypatch):
    monkeypatch.setenv("EDH_DATA_DIR", "/data/x")
    assert D.default_data_dir() == "/data/x"
    monkeypatch.delenv("EDH_DATA_DIR")
    assert D.default_data_dir() is None
