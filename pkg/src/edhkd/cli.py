"""Command-line entry point: ``edhkd run|theorems|export-boundary|export-projection``."""
import argparse
import sys
from pathlib import Path

from edhkd import harness, theorems
from edhkd.datasets import DEFAULT_TARGET_TRANSFORM, load_feature_csv, moon_domains
from edhkd.exports import export_decision_boundary, export_projection
from edhkd.fileio import write_json
from edhkd.networks import EnsembleModel


def _err(msg, code=2):
    print(f"edhkd: error: {msg}", file=sys.stderr)
    return code


def cmd_run(args):
    try:
        cfg = harness.ExperimentConfig.from_file(args.config)
    except FileNotFoundError:
        return _err(f"config file not found: {args.config}")
    except harness.ConfigError as exc:
        return _err(f"invalid config: {exc}")
    over = {}
    if args.seed is not None:
        over["seeds"] = list(args.seed)
    if args.method is not None:
        over["method"] = args.method
    if args.data_dir is not None:
        over["data_dir"] = args.data_dir
    if args.output_dir is not None:
        over["output_dir"] = args.output_dir
    if args.workers is not None:
        over["workers"] = args.workers
    d = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    d.update(over)
    if args.epochs is not None:
        d["train"] = dict(d["train"], epochs=args.epochs)
    try:
        cfg = harness.ExperimentConfig.from_dict(d)
        report = harness.run(cfg, log=lambda m: print(m, file=sys.stderr))
    except harness.ConfigError as exc:
        return _err(f"invalid config: {exc}")
    except FileNotFoundError as exc:
        return _err(str(exc))
    print(report["output_dir"])
    if cfg.experiment == "theorems":
        return 0 if report["pass"] else 1
    return 0


def cmd_theorems(args):
    report = theorems.run_all(seed=args.seed)
    if args.output:
        write_json(args.output, report)
    else:
        import json
        print(json.dumps(report, indent=2, sort_keys=True))
    for name in sorted(k for k in report if k != "pass"):
        print(f"{name}: {'PASS' if report[name]['pass'] else 'FAIL'}", file=sys.stderr)
    return 0 if report["pass"] else 1


def _load_model(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return EnsembleModel.load(path)


def cmd_export_boundary(args):
    try:
        model = _load_model(args.checkpoint)
        b = args.bounds
        export_decision_boundary(model, args.output, ((b[0], b[1]), (b[2], b[3])), args.resolution)
    except FileNotFoundError as exc:
        return _err(str(exc))
    except ValueError as exc:
        return _err(str(exc))
    print(args.output)
    return 0


def cmd_export_projection(args):
    try:
        model = _load_model(args.checkpoint)
        if args.feature_csv:
            if not Path(args.feature_csv).is_file():
                raise FileNotFoundError(f"feature CSV not found: {args.feature_csv}")
            data = {"data": load_feature_csv(args.feature_csv)}
        else:
            rot, tr = DEFAULT_TARGET_TRANSFORM
            rot = rot if args.rotation is None else args.rotation
            tr = tr if args.translation is None else tuple(args.translation)
            src, tgt = moon_domains(args.seed, rot, tr)
            data = {"source": src, "target": tgt}
        export_projection(model, data, args.output)
    except FileNotFoundError as exc:
        return _err(str(exc))
    except ValueError as exc:
        return _err(str(exc))
    print(args.output)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="edhkd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, nargs="+", help="override the seed list")
    r.add_argument("--method", choices=harness.METHODS)
    r.add_argument("--epochs", type=int)
    r.add_argument("--data-dir", help="dataset root (default: $EDH_DATA_DIR)")
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("theorems", help="run the theorem checks and emit a JSON report")
    t.add_argument("--output", help="write the report here instead of stdout")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_theorems)

    b = sub.add_parser("export-boundary", help="decision-boundary grid of a 2-D model")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--output", required=True)
    b.add_argument("--resolution", type=int, default=100)
    b.add_argument("--bounds", type=float, nargs=4, default=[-2.0, 3.0, -2.0, 2.0],
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    b.set_defaults(func=cmd_export_boundary)

    e = sub.add_parser("export-projection", help="per-generator PCA of features")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--feature-csv", help="project this feature CSV instead of the moon domains")
    e.add_argument("--seed", type=int, default=0, help="moon data seed")
    e.add_argument("--rotation", type=float)
    e.add_argument("--translation", type=float, nargs=2)
    e.set_defaults(func=cmd_export_projection)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
