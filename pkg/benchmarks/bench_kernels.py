"""Compare the numba and numpy LSTM kernels, and time one training epoch.

    python3 benchmarks/bench_kernels.py [--batch 64] [--hidden 16 32] [--reps 2000]

The training-epoch timing runs in subprocesses so that the
``TWOBLOCK_DISABLE_NUMBA`` switch takes effect for each backend.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from twoblock import kernels
from twoblock._accel import HAVE_NUMBA

EPOCH_SNIPPET = """
import time, numpy as np
from twoblock.numkit import Rng
from twoblock.datasets import gen_synthetic_cv, fit_norm
from twoblock.model import ModelConfig, build_model
from twoblock.training import train, TrainConfig
tr = gen_synthetic_cv(1000, 8, 8, Rng(0, 0)).windows
norm = fit_norm(tr.obs.reshape(-1, 2))
m = build_model(ModelConfig(kind="twoblock", enc_hidden=16), norm, Rng(0, 0))
train(m, tr, TrainConfig(epochs=1))
t = time.perf_counter()
train(m, tr, TrainConfig(epochs=3))
print((time.perf_counter() - t) / 3)
"""


def timeit(fn, reps):
    fn()
    t = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t) / reps * 1e6


def bench_cell(batch, hidden, din, reps):
    rng = np.random.default_rng(0)
    Wx = rng.normal(size=(4 * hidden, din)) * 0.1
    Wh = rng.normal(size=(4 * hidden, hidden)) * 0.1
    b = np.zeros(4 * hidden)
    x = rng.normal(size=(batch, din))
    h = rng.normal(size=(batch, hidden))
    c = rng.normal(size=(batch, hidden))
    out = {}
    for name, fwd, bwd in (("numpy", kernels.lstm_forward_numpy, kernels.lstm_backward_numpy),
                           ("numba", kernels.lstm_forward_numba, kernels.lstm_backward_numba)):
        if name == "numba" and not HAVE_NUMBA:
            continue
        h2, c2, gates, tc = fwd(Wx, Wh, b, x, h, c)
        dh2, dc2 = np.ones_like(h2), np.ones_like(c2)
        gWx, gWh, gb = np.zeros_like(Wx), np.zeros_like(Wh), np.zeros_like(b)
        out[name] = (timeit(lambda: fwd(Wx, Wh, b, x, h, c), reps),
                     timeit(lambda: bwd(Wx, Wh, x, h, c, gates, tc, dh2, dc2, gWx, gWh, gb), reps))
    return out


def epoch_time(disable: bool) -> float:
    env = dict(os.environ, TWOBLOCK_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True,
                         text=True, check=True)
    return float(res.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 64])
    ap.add_argument("--hidden", type=int, nargs="+", default=[16, 32])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--skip-epoch", action="store_true")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; only the numpy kernels are timed")
    print(f"{'batch':>5} {'hidden':>6} {'backend':>7} {'fwd us':>9} {'bwd us':>9}")
    for batch in args.batch:
        for hidden in args.hidden:
            for name, (f, bw) in bench_cell(batch, hidden, 2, args.reps).items():
                print(f"{batch:>5} {hidden:>6} {name:>7} {f:>9.2f} {bw:>9.2f}")
    if not args.skip_epoch:
        print("\nseconds per training epoch (1000 windows, two-block, H=16)")
        print(f"  numpy: {epoch_time(True):.3f}")
        if HAVE_NUMBA:
            print(f"  numba: {epoch_time(False):.3f}")


if __name__ == "__main__":
    main()
