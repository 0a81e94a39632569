"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeats 20] [--epochs 2] [--json out.json]

Kernel timings run in-process against both modules. The end-to-end timing
trains a moon ensemble in a subprocess per backend (the backend is fixed at
import time, so ``EDHKD_PURE_PYTHON=1`` selects the fallback).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from edhkd import kernels

SHAPES = {
    "classifier hidden (25, 200, 64)": (25, 200, 64),
    "generator hidden (5, 200, 32)": (5, 200, 32),
    "signal block (5, 256, 2160)": (5, 256, 2160),
}

EPOCH_SNIPPET = """
import time
from edhkd import kernels
from edhkd.datasets import moon_domains
from edhkd.training import moon_profile, train_edh
kernels.tune_allocator()
s, t = moon_domains(0)
t0 = time.process_time()
train_edh(s, t, moon_profile(epochs={epochs}))
print(kernels.BACKEND, (time.process_time() - t0) / {epochs})
"""


def _best(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    rows = []
    for label, shape in SHAPES.items():
        x = rng.normal(size=shape)
        gamma = rng.uniform(0.5, 1.5, size=(shape[0], 1, shape[2]))
        beta = rng.normal(size=gamma.shape)
        g = rng.normal(size=shape)
        ref = backends["python"].bn_relu6_forward(x, gamma, beta, 1e-5)
        for name, mod in sorted(backends.items()):
            fwd = _best(lambda: mod.bn_relu6_forward(x, gamma, beta, 1e-5), repeats)
            bwd = _best(lambda: mod.bn_relu6_backward(g, ref[0], ref[1], gamma, ref[4]), repeats)
            rows.append({"kernel": "bn_relu6", "shape": label, "backend": name,
                         "forward_ms": fwd * 1e3, "backward_ms": bwd * 1e3})
    r = np.array([1.0, 0.6, 0.3, 0.1, 0.05, 0.02, 0.01])
    for name, mod in sorted(backends.items()):
        t = _best(lambda: mod.levinson_durbin(r, 6), repeats * 50)
        rows.append({"kernel": "levinson_durbin", "shape": "order 6", "backend": name,
                     "forward_ms": t * 1e3, "backward_ms": None})
    return rows


def bench_epochs(epochs):
    out = {}
    for forced in (False, True):
        env = dict(os.environ)
        if forced:
            env["EDHKD_PURE_PYTHON"] = "1"
        else:
            env.pop("EDHKD_PURE_PYTHON", None)
        res = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET.format(epochs=epochs)],
                             capture_output=True, text=True, env=env, check=True)
        name, sec = res.stdout.split()
        out[name] = float(sec)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=2, help="moon epochs per backend (0 skips)")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    kernels.tune_allocator()
    rows = bench_kernels(args.repeats)
    print(f"{'kernel':<16} {'shape':<34} {'backend':<8} {'fwd ms':>9} {'bwd ms':>9}")
    for r in rows:
        bwd = f"{r['backward_ms']:9.3f}" if r["backward_ms"] is not None else f"{'-':>9}"
        print(f"{r['kernel']:<16} {r['shape']:<34} {r['backend']:<8} {r['forward_ms']:9.3f} {bwd}")
    epochs = bench_epochs(args.epochs) if args.epochs > 0 else {}
    for name, sec in sorted(epochs.items()):
        print(f"moon EDH epoch, {name:<7} backend: {sec:.2f} s CPU")
    if len(epochs) == 2:
        print(f"speedup: {epochs['python'] / epochs['cython']:.2f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"kernels": rows, "epoch_seconds": epochs}, fh, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    main()
