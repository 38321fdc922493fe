"""Compare the compiled kernels with the numpy fallback.

Run ``python benchmarks/bench_kernels.py``. Each kernel is timed on both
backends with ``timeit``; a full classifier epoch is then timed in two
subprocesses, one with ``DVGE_PURE_PYTHON=1``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dvge import _kernels_py

try:
    from dvge import _kernels
except ImportError:
    _kernels = None

EPOCH_SNIPPET = """
import time, numpy as np
from dvge import kernels
from dvge.nn import FitConfig, Mlp, MlpSpec, fit_classifier, train_rngs
rng = np.random.default_rng(0)
x = rng.normal(size=(4000, 10)); y = (x[:, 0] > 0).astype(np.int64)
init, shuf = train_rngs(0)
m = Mlp.init(MlpSpec.build(10, (64,) * 5, 2), init)
t = time.perf_counter(); fit_classifier(m, x, y, FitConfig(epochs=2), shuf)
print(kernels.BACKEND, (time.perf_counter() - t) / 2)
"""


def cases(batch: int, width: int):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, width))
    g = rng.normal(size=(batch, width))
    logits = rng.normal(size=(batch, 2))
    out = _kernels_py.log_softmax_forward(logits)
    z, fs, ft = (rng.normal(size=(batch, 10)) for _ in range(3))
    p = rng.integers(0, 2, size=batch * 10)
    param = rng.normal(size=(width, width))

    def adam(mod):
        m, v, prm = np.zeros_like(param), np.zeros_like(param), param.copy()
        return lambda: mod.adam_update(prm, param, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)

    return {
        "leaky_relu_forward": lambda mod: (lambda: mod.leaky_relu_forward(x, 0.2)),
        "leaky_relu_backward": lambda mod: (lambda: mod.leaky_relu_backward(x, g, 0.2)),
        "log_softmax_forward": lambda mod: (lambda: mod.log_softmax_forward(logits)),
        "log_softmax_backward": lambda mod: (lambda: mod.log_softmax_backward(out, logits)),
        "adam_update": adam,
        "perturb_clip": lambda mod: (lambda: mod.perturb_clip(z, fs, ft, 0.5, 0.5, 0.1)),
        "confusion_counts": lambda mod: (lambda: mod.confusion_counts(p, p[::-1].copy(), p)),
    }


def best_of(fn, number: int) -> float:
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--number", type=int, default=2000)
    ap.add_argument("--skip-epoch", action="store_true")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels are not built; only the fallback can be timed")
    print(f"{'kernel':24s} {'numpy (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for name, make in cases(args.batch, args.width).items():
        t_py = best_of(make(_kernels_py), args.number) * 1e6
        if _kernels is not None:
            t_cy = best_of(make(_kernels), args.number) * 1e6
            print(f"{name:24s} {t_py:12.2f} {t_cy:12.2f} {t_py / t_cy:8.2f}")
        else:
            print(f"{name:24s} {t_py:12.2f} {'-':>12s} {'-':>8s}")
    if not args.skip_epoch:
        print("\nclassifier epoch (4000 x 10, five hidden layers of 64):")
        for flag in ("0", "1"):
            env = {**os.environ, "DVGE_PURE_PYTHON": flag}
            res = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True, text=True, check=True)
            backend, secs = res.stdout.split()
            print(f"  {backend:8s} {float(secs):.3f} s/epoch")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
