"""Domain datasets: synthetic moons and multi-view data, DSADS ingestion,
the feature CSV carrier format and leave-one-subject-out splitting."""
import csv
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from edhkd.features import extract_imu_features_batch


class HiddenLabelsError(RuntimeError):
    """Raised when training code reads labels of a target-role dataset."""


class DatasetFormatError(ValueError):
    pass


class DomainDataset:
    """Feature matrix with integer labels and subject ids.

    Target-role datasets refuse ``.labels``; only ``evaluation_labels()`` (used
    by evaluation code) returns them.
    """

    def __init__(self, features, labels, subjects=None, role="source", n_classes=None, groups=None):
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be 2-D (samples x D)")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per row")
        if subjects is None:
            subjects = np.zeros(len(labels), dtype=np.int64)
        subjects = np.asarray(subjects, dtype=np.int64)
        if subjects.shape != labels.shape:
            raise ValueError("subjects must have one entry per row")
        if role not in ("source", "target"):
            raise ValueError(f"unknown role {role!r}")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        self.features = features
        self._labels = labels
        self.subjects = subjects
        self.role = role
        self.n_classes = int(n_classes if n_classes is not None else (labels.max() + 1 if labels.size else 0))
        self.groups = groups

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def labels(self):
        if self.role == "target":
            raise HiddenLabelsError("target labels are reserved for evaluation")
        return self._labels

    def evaluation_labels(self):
        return self._labels

    def with_role(self, role):
        return DomainDataset(self.features, self._labels, self.subjects, role, self.n_classes, self.groups)

    def subset(self, idx):
        idx = np.asarray(idx)
        groups = None if self.groups is None else self.groups[idx]
        return DomainDataset(self.features[idx], self._labels[idx], self.subjects[idx],
                             self.role, self.n_classes, groups)

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.features, self._labels, self.subjects):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    @staticmethod
    def concatenate(parts, role=None):
        if not parts:
            raise ValueError("nothing to concatenate")
        return DomainDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p._labels for p in parts]),
            np.concatenate([p.subjects for p in parts]),
            role or parts[0].role,
            max(p.n_classes for p in parts),
        )


# -- moons ------------------------------------------------------------------


@dataclass
class MoonSpec:
    points_per_moon: int = 1500
    noise: float = 0.05
    rotation_deg: float = 0.0
    translation: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


DEFAULT_TARGET_TRANSFORM = (30.0, (0.5, -0.25))


def rotate_translate(points, rotation_deg, translation):
    th = math.radians(rotation_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    return points @ rot.T + np.asarray(translation, dtype=np.float64)


def make_moons(spec=None, seed=0, role="source"):
    """Two interleaved half circles; upper moon is class 0, lower moon class 1.

    The clean curves are rigidly moved by the MoonSpec rotation (about the
    origin) and translation, then isotropic Gaussian noise is added.
    """
    spec = spec or MoonSpec()
    n = spec.points_per_moon
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, math.pi, n)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    pts = rotate_translate(np.vstack([upper, lower]), spec.rotation_deg, spec.translation)
    pts = pts + rng.normal(0.0, spec.noise, size=pts.shape)
    labels = np.repeat([0, 1], n)
    order = rng.permutation(2 * n)
    return DomainDataset(pts[order], labels[order], role=role, n_classes=2)


def moon_domains(seed=0, rotation_deg=None, translation=None, points_per_moon=1500, noise=0.05):
    """Source moons and a rotated/translated target drawn with independent noise."""
    d_rot, d_tr = DEFAULT_TARGET_TRANSFORM
    rot = d_rot if rotation_deg is None else rotation_deg
    tr = d_tr if translation is None else translation
    source = make_moons(MoonSpec(points_per_moon, noise), seed=2 * seed)
    target = make_moons(MoonSpec(points_per_moon, noise, rot, tuple(tr)), seed=2 * seed + 1, role="target")
    return source, target


# -- multi-view --------------------------------------------------------------


@dataclass
class MultiViewSpec:
    alpha: float = 0.4
    n_samples: int = 600
    feature_dim: int = 3
    coefficients: tuple = (1.0, 1.0, 1.0)
    directions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.feature_dim < 3:
            raise ValueError("feature_dim must be >= 3")
        if min(self.coefficients) < 0:
            raise ValueError("coefficients must be >= 0")


def orthonormal_directions(dim, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(dim, 3)))
    return q.T.copy()


def make_multiview(spec, seed=0):
    """Source where positives carry all three hidden directions; a target where a
    fraction ``alpha`` of positives carries all three and each remaining third
    carries exactly one. Negatives are the zero vector in both domains.

    ``target.groups`` tags each target row: 0 = all features, 1..3 = only v_j,
    -1 = negative.
    """
    v = orthonormal_directions(spec.feature_dim, seed) if spec.directions is None else np.asarray(spec.directions, float)
    if v.shape != (3, spec.feature_dim):
        raise ValueError("directions must be 3 x feature_dim")
    gram = v @ v.T
    if np.max(np.abs(gram - np.eye(3))) > 1e-9:
        raise ValueError("hidden directions must be orthonormal")
    k = np.asarray(spec.coefficients, dtype=np.float64)
    full = k @ v
    n_pos = spec.n_samples // 2
    n_neg = spec.n_samples - n_pos

    src_x = np.vstack([np.tile(full, (n_pos, 1)), np.zeros((n_neg, spec.feature_dim))])
    src_y = np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]

    n_single = int(round(n_pos * (1.0 - spec.alpha) / 3.0))
    n_all = n_pos - 3 * n_single
    rows = [np.tile(full, (n_all, 1))]
    groups = [np.zeros(n_all, int)]
    for j in range(3):
        rows.append(np.tile(k[j] * v[j], (n_single, 1)))
        groups.append(np.full(n_single, j + 1))
    rows.append(np.zeros((n_neg, spec.feature_dim)))
    groups.append(np.full(n_neg, -1))
    tgt_groups = np.concatenate(groups)
    tgt_y = (tgt_groups >= 0).astype(int)
    source = DomainDataset(src_x, src_y, role="source", n_classes=2)
    target = DomainDataset(np.vstack(rows), tgt_y, role="target", n_classes=2, groups=tgt_groups)
    source.directions = v
    target.directions = v
    return source, target


# -- DSADS ---------------------------------------------------------------------

DSADS_ACTIVITIES = 19
DSADS_SUBJECTS = 8
DSADS_SEGMENTS = 60
DSADS_ROWS = 125
DSADS_CHANNELS = 45
DSADS_SENSORS = {"T": 0, "RA": 1, "LA": 2, "RL": 3, "LL": 4}


def sensor_channels(sensors):
    """Channel indices for a subset of the five 9-axis units."""
    out = []
    for s in sensors:
        if s not in DSADS_SENSORS:
            raise ValueError(f"unknown sensor {s!r}; expected one of {sorted(DSADS_SENSORS)}")
        b = DSADS_SENSORS[s] * 9
        out.extend(range(b, b + 9))
    return out


def read_dsads_segment(path):
    try:
        seg = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    if seg.shape != (DSADS_ROWS, DSADS_CHANNELS):
        raise DatasetFormatError(f"{path}: expected {DSADS_ROWS}x{DSADS_CHANNELS} values, got {seg.shape[0]}x{seg.shape[1]}")
    if not np.all(np.isfinite(seg)):
        raise DatasetFormatError(f"{path}: non-finite values")
    return seg


def load_dsads(root, sensors=None, subjects=None):
    """Read ``a{01..19}/p{1..8}/s{01..60}.txt`` into one dataset per subject (1-based id)."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"DSADS directory not found: {root}")
    chans = sensor_channels(sensors) if sensors else list(range(DSADS_CHANNELS))
    subjects = subjects or list(range(1, DSADS_SUBJECTS + 1))
    out = {}
    for p in subjects:
        segs, labels = [], []
        for a in range(1, DSADS_ACTIVITIES + 1):
            for s in range(1, DSADS_SEGMENTS + 1):
                path = root / f"a{a:02d}" / f"p{p}" / f"s{s:02d}.txt"
                if not path.is_file():
                    raise FileNotFoundError(f"missing DSADS file {path}")
                segs.append(read_dsads_segment(path)[:, chans])
                labels.append(a - 1)
        feats = extract_imu_features_batch(np.stack(segs))
        out[p] = DomainDataset(feats, labels, np.full(len(labels), p), n_classes=DSADS_ACTIVITIES)
    return out


# -- feature CSV ------------------------------------------------------------------


def write_feature_csv(path, dataset):
    d = dataset.n_features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "label"] + [f"f{i}" for i in range(d)])
        for s, y, row in zip(dataset.subjects, dataset.evaluation_labels(), dataset.features):
            w.writerow([int(s), int(y)] + [repr(float(v)) for v in row])


def load_feature_csv(path, role="source"):
    """Parse ``subject,label,f0..f{D-1}``; errors carry the 1-based line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise DatasetFormatError(f"{path}:1: duplicate column names")
        d = len(header) - 2
        expected = ["subject", "label"] + [f"f{i}" for i in range(d)]
        if d < 1 or header != expected:
            raise DatasetFormatError(f"{path}:1: header must be subject,label,f0..f{{D-1}}")
        subjects, labels, rows = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 2:
                raise DatasetFormatError(f"{path}:{lineno}: expected {d + 2} fields, got {len(rec)}")
            try:
                subjects.append(int(rec[0]))
                labels.append(int(rec[1]))
                rows.append([float(v) for v in rec[2:]])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return DomainDataset(feats, labels, subjects, role=role)


def split_by_subject(dataset):
    return {int(s): dataset.subset(np.flatnonzero(dataset.subjects == s)) for s in np.unique(dataset.subjects)}


# -- splitting -----------------------------------------------------------------


def train_test_split(dataset, seed, train_frac=0.7, stream=0):
    """Stratified shuffle split per class; returns index arrays (train, test)."""
    labels = dataset.evaluation_labels()
    rng = np.random.default_rng([seed, stream])
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(math.floor(len(idx) * train_frac + 0.5))
        train.append(idx[:n_train])
        test.append(idx[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_loso(datasets, target_subject, seed, train_frac=0.7, with_source_test=False):
    """Leave-one-subject-out split.

    Source is the labeled training part of every other subject; the target
    subject is split into unlabeled train and test parts. Each subject's split
    depends only on ``seed`` and its id.
    """
    if target_subject not in datasets:
        raise KeyError(f"unknown subject {target_subject!r}")
    src_train, src_test = [], []
    for subj in sorted(datasets):
        ds = datasets[subj]
        tr, te = train_test_split(ds, seed, train_frac, stream=int(subj))
        if subj == target_subject:
            target_train = ds.subset(tr).with_role("target")
            target_test = ds.subset(te).with_role("target")
        else:
            src_train.append(ds.subset(tr))
            src_test.append(ds.subset(te))
    source = DomainDataset.concatenate(src_train, role="source")
    if with_source_test:
        return source, target_train, target_test, DomainDataset.concatenate(src_test, role="source")
    return source, target_train, target_test


def default_data_dir():
    return os.environ.get("EDH_DATA_DIR")
