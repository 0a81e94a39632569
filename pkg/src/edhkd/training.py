"""Adversarial three-step schedule, distillation, baselines and evaluation."""
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from edhkd import losses as L
from edhkd import tensor as T
from edhkd.networks import (ClassifierConfig, EnsembleModel, StudentModel, ensemble_predict,
                            moon_generator_config, pseudo_labels, signal_generator_config)
from edhkd.optim import AdamState

LOSS_KEYS = ("L_s", "L_dc", "L_dg", "L_e")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    xi_g: float = 3.0
    xi_c: float = 3.0
    xi_e: float = 1.0
    epochs: int = 50
    batch_size: int = 200
    n_g: int = 5
    n_c: int = 5
    generator_updates: int = 3
    seed: int = 0
    profile: str = "moon"
    feature_len: int = 32
    classifier_hidden: int = 64
    generator_hidden: list = field(default_factory=lambda: [32])
    normalize_dc: bool = True
    hypothesis_mean: bool = True
    domain_bn: str = "split"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.generator_updates < 0:
            raise ValueError("epochs, batch_size and generator_updates must be positive")
        if self.n_g < 1 or self.n_c < 1:
            raise ValueError("n_g and n_c must be >= 1")
        if self.domain_bn not in ("joint", "split"):
            raise ValueError(f"unknown domain_bn {self.domain_bn!r}")
        if self.profile not in ("moon", "signal"):
            raise ValueError(f"unknown profile {self.profile!r}")

    @property
    def weights(self):
        return L.LossWeights(self.xi_g, self.xi_c, self.xi_e)

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


def moon_profile(**overrides):
    return TrainConfig(**overrides)


def signal_profile(**overrides):
    base = dict(lr=2e-4, xi_g=5.0, xi_c=5.0, xi_e=0.01, epochs=100, batch_size=256,
                generator_updates=4, profile="signal", feature_len=256, generator_hidden=[8, 8])
    base.update(overrides)
    return TrainConfig(**base)


def model_configs(cfg, input_dim, n_classes):
    if cfg.profile == "moon":
        g = moon_generator_config()
        g.input_dim = input_dim
        g.hidden_widths = list(cfg.generator_hidden)
        g.feature_len = cfg.feature_len
    else:
        g = signal_generator_config(input_dim, cfg.generator_hidden, cfg.feature_len)
    return g, ClassifierConfig(cfg.feature_len, cfg.classifier_hidden, n_classes)


def make_ensemble(cfg, input_dim, n_classes, n_g=None, n_c=None, seed=None):
    g, c = model_configs(cfg, input_dim, n_classes)
    return EnsembleModel(g, c, n_g or cfg.n_g, n_c or cfg.n_c, cfg.seed if seed is None else seed,
                         cfg.bn_momentum, cfg.bn_eps)


def make_student(cfg, input_dim, n_classes, seed=None):
    g, c = model_configs(cfg, input_dim, n_classes)
    return StudentModel(g, c, cfg.seed if seed is None else seed, cfg.bn_momentum, cfg.bn_eps)


@dataclass
class BatchPair:
    x_s: np.ndarray
    y_s: np.ndarray
    x_t: np.ndarray

    def __post_init__(self):
        if len(self.x_s) != len(self.x_t):
            raise ValueError("source and target batches must have equal size")


@dataclass
class LearningCurve:
    epoch: list = field(default_factory=list)
    source_test_acc: list = field(default_factory=list)
    target_test_acc: list = field(default_factory=list)
    losses: dict = field(default_factory=lambda: {k: [] for k in LOSS_KEYS})

    def __len__(self):
        return len(self.epoch)

    def rows(self):
        for i, e in enumerate(self.epoch):
            yield [e, self.source_test_acc[i], self.target_test_acc[i]] + [self.losses[k][i] for k in LOSS_KEYS]


class Trainer:
    """Holds the ensemble and one Adam state per parameter group."""

    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.weights = cfg.weights
        b1, b2 = cfg.adam_betas
        self.opt_g = AdamState(model.generator_params(), cfg.lr, b1, b2, cfg.adam_eps)
        self.opt_c = AdamState(model.classifier_params(), cfg.lr, b1, b2, cfg.adam_eps)
        n_hyp = model.n_g * model.n_c
        self._dc_scale = 1.0 / n_hyp if cfg.hypothesis_mean else 1.0
        self._e_scale = 1.0 / n_hyp if cfg.hypothesis_mean else 1.0
        self._dg_scale = 1.0 / (model.n_g * model.gcfg.feature_len) if cfg.hypothesis_mean else 1.0

    def _forward(self, x, update_stats):
        feats = self.model.features(x, update_stats=update_stats[0])
        return feats, self.model.classify(feats, update_stats=update_stats[1])

    def _terms(self, batch, freeze_generators=False, freeze_classifiers=False, need=LOSS_KEYS):
        """Forward the source and target batches and compute the losses in ``need``.

        ``cfg.domain_bn='joint'`` normalizes the concatenated batch with shared
        statistics. ``'split'`` forwards each domain on its own, so batch norm
        sees per-domain statistics, and only the target pass feeds the running
        statistics used at evaluation time. In split mode the source batch
        skips the classifiers when ``L_s`` is not needed.
        """
        m = self.model
        n = len(batch.x_s)
        gen_upd = not freeze_generators
        cls_upd = not freeze_classifiers
        if self.cfg.domain_bn == "joint":
            x = np.concatenate([batch.x_s, batch.x_t])
            if freeze_generators:
                with T.no_grad():
                    feats = m.features(x, update_stats=False)
            else:
                feats = m.features(x)
            logits = m.classify(feats, update_stats=cls_upd)
            logits_s, logits_t = logits[:, :, :n, :], logits[:, :, n:, :]
        else:
            if freeze_generators:
                with T.no_grad():
                    f_s = m.features(batch.x_s, update_stats=False)
                    f_t = m.features(batch.x_t, update_stats=False)
            else:
                f_s = m.features(batch.x_s, update_stats=False)
                f_t = m.features(batch.x_t, update_stats=gen_upd)
            logits_s = m.classify(f_s, update_stats=False) if "L_s" in need else None
            logits_t = m.classify(f_t, update_stats=cls_upd)
            feats = T.concat([f_s, f_t], axis=1)
        probs_t = T.softmax(logits_t)
        out = {}
        if "L_s" in need:
            out["L_s"] = L.source_loss_from_logits(logits_s, batch.y_s)
        if "L_dc" in need:
            out["L_dc"] = L.classifier_discrepancy(probs_t, self.cfg.normalize_dc) * self._dc_scale
        if "L_dg" in need:
            out["L_dg"] = L.feature_discrepancy(feats) * self._dg_scale
        if "L_e" in need:
            out["L_e"] = L.entropy_loss(probs_t) * self._e_scale
        return out

    @staticmethod
    def _report(terms):
        return {k: float(v.data) for k, v in terms.items()}

    def _update(self, objective, opts):
        for o in (self.opt_g, self.opt_c):
            o.zero_grad()
        T.backward(objective)
        for o in opts:
            o.step()

    def step_A(self, batch):
        t = self._terms(batch)
        self._update(t["L_s"] - self.weights.xi_g * t["L_dg"], (self.opt_g, self.opt_c))
        return self._report(t)

    def step_B(self, batch):
        t = self._terms(batch, freeze_generators=True, need=("L_s", "L_dc", "L_e"))
        w = self.weights
        self._update(t["L_s"] - w.xi_c * t["L_dc"] + w.xi_e * t["L_e"], (self.opt_c,))
        return self._report(t)

    def step_C(self, batch):
        with T.frozen(self.model.classifier_params()):
            t = self._terms(batch, freeze_classifiers=True, need=("L_dc", "L_dg", "L_e"))
        self._update(t["L_dc"] - t["L_dg"] + self.weights.xi_e * t["L_e"], (self.opt_g,))
        return self._report(t)

    def step_source_only(self, x_s, y_s):
        _, logits = self.model.forward(x_s)
        loss = L.source_loss_from_logits(logits, y_s)
        self._update(loss, (self.opt_g, self.opt_c))
        return float(loss.data)


def step_A(trainer, batch):
    return trainer.step_A(batch)


def step_B(trainer, batch):
    return trainer.step_B(batch)


def step_C(trainer, batch):
    return trainer.step_C(batch)


def _index_stream(n, total, rng):
    """``total`` indices drawn by concatenating fresh permutations of range(n)."""
    reps = math.ceil(total / n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:total]


def paired_batches(n_source, n_target, batch_size, rng):
    """Index pairs for one epoch; the shorter domain is cycled with reshuffling."""
    iters = math.ceil(max(n_source, n_target) / batch_size)
    total = iters * batch_size
    s = _index_stream(n_source, total, rng)
    t = _index_stream(n_target, total, rng)
    for i in range(iters):
        sl = slice(i * batch_size, (i + 1) * batch_size)
        yield s[sl], t[sl]


def _accuracy(model, dataset):
    if dataset is None or len(dataset) == 0:
        return float("nan")
    _, pred = ensemble_predict(model, dataset.features)
    return float(np.mean(pred == dataset.evaluation_labels()))


def _check_nonempty(*datasets):
    for d in datasets:
        if d is None or len(d) == 0:
            raise ValueError("empty dataset")


def _n_classes(source, target=None):
    n = source.n_classes
    if target is not None:
        n = max(n, target.n_classes)
    return n


def train_edh(source, target, cfg, source_test=None, target_test=None, model=None, log=None):
    """Run the three-step schedule for ``cfg.epochs`` epochs.

    Per mini-batch: one step A, one step B and ``cfg.generator_updates`` step C
    updates, all on the same batch pair. Only ``target.features`` is read from
    the target training set. The test sets, when given, are scored once per
    epoch for the learning curve and never influence training.
    """
    _check_nonempty(source, target)
    y_s = source.labels
    model = model or make_ensemble(cfg, source.n_features, _n_classes(source, target))
    trainer = Trainer(model.train(), cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    curve = LearningCurve()
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        acc = {k: 0.0 for k in LOSS_KEYS}
        n_it = 0
        for si, ti in paired_batches(len(source), len(target), cfg.batch_size, rng):
            batch = BatchPair(source.features[si], y_s[si], target.features[ti])
            rep = trainer.step_A(batch)
            trainer.step_B(batch)
            for _ in range(cfg.generator_updates):
                trainer.step_C(batch)
            for k in LOSS_KEYS:
                acc[k] += rep[k]
            n_it += 1
        model.eval()
        _log_epoch(curve, epoch, model, source_test, target_test, {k: v / n_it for k, v in acc.items()})
        if log:
            log(epoch, curve)
    model.eval()
    return model, curve


def _log_epoch(curve, epoch, model, source_test, target_test, loss_means):
    curve.epoch.append(epoch)
    curve.source_test_acc.append(_accuracy(model, source_test))
    curve.target_test_acc.append(_accuracy(model, target_test))
    for k in LOSS_KEYS:
        curve.losses[k].append(loss_means.get(k, float("nan")))


def distill(teacher, target_train, cfg, source_test=None, target_test=None, log=None):
    """Train a fresh single-hypothesis student on the teacher's soft labels of
    the target training features, with the teacher's epoch/batch/optimizer budget."""
    _check_nonempty(target_train)
    x = target_train.features
    soft = pseudo_labels(teacher.eval(), x)
    student = make_student(cfg, target_train.n_features, soft.shape[1], seed=cfg.seed + 7919)
    student.train()
    b1, b2 = cfg.adam_betas
    opt = AdamState(student.parameters(), cfg.lr, b1, b2, cfg.adam_eps)
    rng = np.random.default_rng([cfg.seed, 2])
    curve = LearningCurve()
    n = len(x)
    bs = min(cfg.batch_size, n)
    for epoch in range(1, cfg.epochs + 1):
        student.train()
        perm = rng.permutation(n)
        total, n_it = 0.0, 0
        for i in range(0, n, bs):
            idx = perm[i:i + bs]
            if len(idx) < 2:
                continue
            _, logits = student.forward(x[idx])
            loss = L.distillation_loss(T.softmax(logits[0, 0]), soft[idx])
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            total += float(loss.data)
            n_it += 1
        student.eval()
        _log_epoch(curve, epoch, student, source_test, target_test, {"L_s": total / max(n_it, 1)})
        if log:
            log(epoch, curve)
    student.eval()
    return student, curve


def train_baseline(kind, source, target, cfg, source_test=None, target_test=None, log=None):
    """``source-only``: one hypothesis fit to source labels, target never read.
    ``mcd``: the three-step schedule with one generator and two classifiers."""
    if kind == "mcd":
        mcd_cfg = replace(cfg, n_g=1, n_c=2)
        return train_edh(source, target, mcd_cfg, source_test, target_test, log=log)
    if kind != "source-only":
        raise ValueError(f"unknown baseline {kind!r}")
    _check_nonempty(source)
    so_cfg = replace(cfg, n_g=1, n_c=1, xi_g=0.0)
    model = make_ensemble(so_cfg, source.n_features, source.n_classes)
    trainer = Trainer(model.train(), so_cfg)
    rng = np.random.default_rng([cfg.seed, 3])
    curve = LearningCurve()
    y = source.labels
    n = len(source)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = rng.permutation(n)
        total, n_it = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            if len(idx) < 2:
                continue
            total += trainer.step_source_only(source.features[idx], y[idx])
            n_it += 1
        model.eval()
        _log_epoch(curve, epoch, model, source_test, target_test, {"L_s": total / max(n_it, 1)})
        if log:
            log(epoch, curve)
    model.eval()
    return model, curve


def forward_time(model, x, repeats=10):
    """Median over ``repeats`` full passes of the per-sample eval forward time (seconds)."""
    model.eval()
    times = []
    # single-threaded BLAS so teacher and student timings are comparable
    with threadpool_limits(1):
        for _ in range(repeats):
            t0 = time.perf_counter()
            ensemble_predict(model, x)
            times.append(time.perf_counter() - t0)
    return float(np.median(times)) / max(len(x), 1)


def evaluate(model, dataset, timing_repeats=10):
    model.eval()
    y = dataset.evaluation_labels()
    _, pred = ensemble_predict(model, dataset.features)
    k = max(model.ccfg.n_classes, int(y.max()) + 1 if len(y) else 0)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    per_class = np.array([conf[c, c] / conf[c].sum() if conf[c].sum() else float("nan") for c in range(k)])
    return {
        "accuracy": float(np.mean(pred == y)),
        "per_class_accuracy": per_class.tolist(),
        "confusion": conf.tolist(),
        "forward_time_per_sample": forward_time(model, dataset.features, timing_repeats) if timing_repeats else None,
    }
