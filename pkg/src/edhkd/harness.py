"""Config-driven experiment runner.

A run expands the config into (group, seed) tasks, where a group is a moon
transform or a held-out subject, trains the requested method for each task
and writes one timestamped directory:

    metrics.csv     one deterministic row per task (no timings)
    timing.csv      forward-time measurements
    curves/         learning curves per task and model
    checkpoints/    model files per task (optional)
    report.json     config echo, dataset hashes, per-run rows and aggregates
"""
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path

import numpy as np

from edhkd import kernels, theorems
from edhkd.datasets import (DEFAULT_TARGET_TRANSFORM, default_data_dir, load_dsads, load_feature_csv,
                            moon_domains, split_by_subject, split_loso, train_test_split)
from edhkd.fileio import write_csv, write_json
from edhkd.training import (LOSS_KEYS, TrainConfig, distill, evaluate, moon_profile, signal_profile,
                            train_baseline, train_edh)

EXPERIMENTS = ("moon", "dsads-loso", "feature-csv-loso", "theorems")
METHODS = ("edh", "edhkd", "mcd", "source-only")
METRICS_HEADER = ("experiment", "method", "group", "seed", "source_test_acc", "target_test_acc",
                  "teacher_target_test_acc", "n_parameters")
TIMING_HEADER = ("group", "seed", "model", "forward_time_per_sample")
CURVE_HEADER = ("epoch", "source_test_acc", "target_test_acc") + LOSS_KEYS

# Rotation (degrees) and translation pairs for the moon sweep; the first is the default.
MOON_TRANSFORM_SWEEP = (
    DEFAULT_TARGET_TRANSFORM,
    (15.0, (0.25, 0.0)),
    (45.0, (0.5, -0.5)),
    (60.0, (0.0, 0.0)),
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "moon"
    method: str = "edhkd"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train: dict = field(default_factory=dict)
    data_dir: str = None
    feature_csv: str = None
    subjects: list = None
    sensors: list = None
    transforms: object = None
    output_dir: str = "runs"
    workers: int = 1
    timing_repeats: int = 10
    save_checkpoints: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: expected one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method: expected one of {METHODS}, got {self.method!r}")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds: must be a non-empty list")
        if any(not isinstance(s, int) or isinstance(s, bool) for s in self.seeds):
            raise ConfigError("seeds: entries must be integers")
        if not isinstance(self.train, dict):
            raise ConfigError("train: must be an object of TrainConfig overrides")
        known = {f.name for f in fields(TrainConfig)} - {"seed", "profile"}
        for k in self.train:
            if k not in known:
                raise ConfigError(f"train.{k}: unknown training field")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.experiment == "feature-csv-loso" and not self.feature_csv:
            raise ConfigError("feature_csv: required for feature-csv-loso")
        self.moon_transforms()

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(f"{k}: unknown config field")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)

    def moon_transforms(self):
        t = self.transforms
        if t is None:
            return [DEFAULT_TARGET_TRANSFORM]
        if t == "sweep":
            return list(MOON_TRANSFORM_SWEEP)
        try:
            out = [(float(r), (float(tr[0]), float(tr[1]))) for r, tr in t]
        except (TypeError, ValueError, IndexError):
            raise ConfigError('transforms: expected "sweep" or a list of [rotation, [tx, ty]]') from None
        if not out:
            raise ConfigError("transforms: must not be empty")
        return out

    def train_config(self, seed):
        base = moon_profile if self.experiment == "moon" else signal_profile
        over = dict(self.train)
        if "adam_betas" in over:
            over["adam_betas"] = tuple(over["adam_betas"])
        try:
            return base(seed=seed, **over)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None

    def resolved_data_dir(self):
        d = self.data_dir or default_data_dir()
        return Path(d) if d else None

    def to_dict(self):
        d = asdict(self)
        d["transforms"] = [[r, list(t)] for r, t in self.moon_transforms()] if self.experiment == "moon" else None
        d["resolved_train"] = self.train_config(self.seeds[0]).to_dict()
        d["resolved_train"].pop("seed")
        if self.experiment in ("dsads-loso",):
            d["resolved_data_dir"] = str(self.resolved_data_dir()) if self.resolved_data_dir() else None
        return d


def transform_label(rot, tr):
    return f"rot{rot:g}_tx{tr[0]:g}_ty{tr[1]:g}"


# -- task construction ---------------------------------------------------------


@dataclass
class Task:
    group: str
    seed: int
    source: object
    target_train: object
    target_test: object
    source_test: object


def _moon_tasks(cfg):
    tasks = []
    for rot, tr in cfg.moon_transforms():
        for seed in cfg.seeds:
            src, tgt = moon_domains(seed, rotation_deg=rot, translation=tr)
            a, b = train_test_split(src, seed, stream=0)
            c, d = train_test_split(tgt, seed, stream=1)
            tasks.append(Task(transform_label(rot, tr), seed, src.subset(a), tgt.subset(c), tgt.subset(d), src.subset(b)))
    return tasks


def _loso_tasks(cfg, per_subject):
    subjects = cfg.subjects or sorted(per_subject)
    tasks = []
    for subj in subjects:
        if subj not in per_subject:
            raise ConfigError(f"subjects: unknown subject {subj!r}")
        for seed in cfg.seeds:
            s, tt, te, st = split_loso(per_subject, subj, seed, with_source_test=True)
            tasks.append(Task(f"subject{subj}", seed, s, tt, te, st))
    return tasks


def build_tasks(cfg):
    if cfg.experiment == "moon":
        return _moon_tasks(cfg)
    if cfg.experiment == "dsads-loso":
        root = cfg.resolved_data_dir()
        if root is None or not root.is_dir():
            raise FileNotFoundError(f"DSADS data directory not found: {root} (set --data-dir or EDH_DATA_DIR)")
        return _loso_tasks(cfg, load_dsads(root, cfg.sensors))
    if cfg.experiment == "feature-csv-loso":
        path = Path(cfg.feature_csv)
        root = cfg.resolved_data_dir()
        if not path.is_absolute() and not path.exists() and root is not None:
            path = root / path
        if not path.is_file():
            raise FileNotFoundError(f"feature CSV not found: {path}")
        return _loso_tasks(cfg, split_by_subject(load_feature_csv(path)))
    raise ConfigError(f"experiment {cfg.experiment!r} has no training tasks")


# -- execution -----------------------------------------------------------------


def _curve_rows(curve):
    return list(curve.rows())


def run_task(cfg, task, checkpoint_dir=None):
    """Train and evaluate one (group, seed) task. Returns a plain dict.

    Models are saved under ``checkpoint_dir`` when given, so only plain data
    is returned (and crosses process boundaries when running with workers).
    """
    tcfg = cfg.train_config(task.seed)
    out = {"group": task.group, "seed": task.seed, "curves": {}, "models": {}, "timing": {}}
    src, tt, te, st = task.source, task.target_train, task.target_test, task.source_test
    teacher_acc = None
    if cfg.method in ("edh", "edhkd"):
        model, curve = train_edh(src, tt, tcfg, st, te)
        out["curves"]["teacher"] = _curve_rows(curve)
        out["models"]["teacher"] = model
        if cfg.method == "edhkd":
            ev_t = evaluate(model, te, cfg.timing_repeats)
            teacher_acc = ev_t["accuracy"]
            out["timing"]["teacher"] = ev_t["forward_time_per_sample"]
            model, curve = distill(model, tt, tcfg, st, te)
            out["curves"]["student"] = _curve_rows(curve)
            out["models"]["student"] = model
    else:
        model, curve = train_baseline(cfg.method, src, tt, tcfg, st, te)
        out["curves"][cfg.method] = _curve_rows(curve)
        out["models"][cfg.method] = model
    ev = evaluate(model, te, cfg.timing_repeats)
    out["timing"]["final"] = ev["forward_time_per_sample"]
    out["metrics"] = [cfg.experiment, cfg.method, task.group, task.seed,
                      evaluate(model, st, 0)["accuracy"], ev["accuracy"], teacher_acc, model.n_parameters()]
    out["evaluation"] = {k: v for k, v in ev.items() if k != "forward_time_per_sample"}
    out["hashes"] = {"source": src.fingerprint(), "target_train": tt.fingerprint(),
                     "target_test": te.fingerprint(), "source_test": st.fingerprint()}
    out["checkpoints"] = {}
    models = out.pop("models")
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        for name, m in models.items():
            p = checkpoint_dir / f"{task.group}_seed{task.seed}_{name}.npz"
            m.save(p)
            out["checkpoints"][name] = p.name
    return out


def _run_job(args):
    return run_task(*args)


def _unique_dir(base):
    base = Path(base)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    path = base / stamp
    n = 1
    while path.exists():
        path = base / f"{stamp}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path


def aggregate(rows):
    """Mean and population std of accuracies per (method, group) and overall."""
    out = {}
    by = {}
    for r in rows:
        by.setdefault(r[2], []).append(r)
    by["all"] = rows
    for g, rs in by.items():
        entry = {"n_runs": len(rs)}
        for name, col in (("target_test_acc", 5), ("source_test_acc", 4), ("teacher_target_test_acc", 6)):
            vals = np.array([r[col] for r in rs if r[col] is not None], dtype=np.float64)
            if len(vals):
                entry[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
        out[g] = entry
    return out


def run(cfg, log=print):
    """Execute every task of ``cfg`` and write the run directory. Returns the report dict."""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    kernels.tune_allocator()
    t0 = time.perf_counter()
    if cfg.experiment == "theorems":
        out_dir = _unique_dir(cfg.output_dir)
        rep = theorems.run_all()
        report = {"config": cfg.to_dict(), "theorems": rep, "pass": rep["pass"], "output_dir": str(out_dir)}
        write_json(out_dir / "report.json", report)
        return report
    tasks = build_tasks(cfg)
    out_dir = _unique_dir(cfg.output_dir)
    log(f"{len(tasks)} task(s) -> {out_dir}")
    ckpt_dir = out_dir / "checkpoints" if cfg.save_checkpoints else None
    jobs = [(cfg, t, ckpt_dir) for t in tasks]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = []
        for j in jobs:
            results.append(_run_job(j))
            r = results[-1]
            log(f"{r['group']} seed {r['seed']}: target acc {r['metrics'][5]:.4f}")
    rows = [r["metrics"] for r in results]
    write_csv(out_dir / "metrics.csv", METRICS_HEADER, rows)
    timing_rows = []
    runs = []
    for r in results:
        tag = f"{r['group']}_seed{r['seed']}"
        curve_paths = {}
        for name, crow in r["curves"].items():
            p = write_csv(out_dir / "curves" / f"{tag}_{name}.csv", CURVE_HEADER, crow)
            curve_paths[name] = str(p.relative_to(out_dir))
        ckpts = {k: f"checkpoints/{v}" for k, v in r["checkpoints"].items()}
        for name, t in r["timing"].items():
            timing_rows.append([r["group"], r["seed"], name, t])
        runs.append({"group": r["group"], "seed": r["seed"], "metrics": dict(zip(METRICS_HEADER, r["metrics"])),
                     "evaluation": r["evaluation"], "dataset_hashes": r["hashes"],
                     "curves": curve_paths, "checkpoints": ckpts})
    write_csv(out_dir / "timing.csv", TIMING_HEADER, timing_rows)
    report = {
        "config": cfg.to_dict(),
        "backend": kernels.BACKEND,
        "runs": runs,
        "aggregates": aggregate(rows),
        "wall_time_seconds": time.perf_counter() - t0,
        "output_dir": str(out_dir),
    }
    write_json(out_dir / "report.json", report)
    return report
