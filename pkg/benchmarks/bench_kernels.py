"""Numba vs numpy timings for the hot kernels, plus one training run per backend.

    python benchmarks/bench_kernels.py [--repeat N] [--skip-train]

Kernel timings call both implementations in this process after a warm-up
call (so numba compilation is excluded). The training comparison launches
a subprocess per backend, toggled through DUCKSEG_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from duckseg import _kernels as K

TRAIN_SNIPPET = """
import time
from duckseg.gridmath import make_rng
from duckseg.synthpipe import IMBALANCED, SegNet, TrainConfig, gen_scene, train
from duckseg.synthpipe.training import init_rng
from duckseg._kernels import BACKEND
rng = make_rng(0)
data = [gen_scene(IMBALANCED, rng) for _ in range(40)]
net = SegNet.init((16, 32), init_rng(0))
train(net, data, TrainConfig(epochs=1))
t = time.perf_counter()
train(net, data, TrainConfig(epochs=3))
print(BACKEND, time.perf_counter() - t)
"""


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    x = rng.random((16, 32, 32))
    w = rng.normal(size=(32, 16, 3, 3))
    gy = rng.normal(size=(32, 16, 16))
    t = rng.normal(size=(32, 16, 16))
    k = rng.normal(size=(32, 32, 4, 4))
    blobs = rng.random((64, 64)) > 0.6
    return [
        ("conv 16->32 3x3/2 on 32x32", "conv_forward", (x, w, 2, 1)),
        ("conv weight grad", "conv_grad_weight", (x, gy, 2, 1, 3, 3)),
        ("tconv scatter 4x4/4 on 16x16", "tconv_scatter", (t, k, 4, 0)),
        ("label components 64x64", "label_components", (blobs,)),
    ]


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=50)
    p.add_argument("--skip-train", action="store_true")
    args = p.parse_args(argv)
    if not K.HAVE_NUMBA:
        sys.exit("numba is not importable; nothing to compare")

    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, name, a in cases():
        t_np = best_of(lambda: getattr(K, name + "_np")(*a), args.repeat)
        t_nb = best_of(lambda: getattr(K, name + "_nb")(*a), args.repeat)
        print(f"{label:32s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}")

    if args.skip_train:
        return
    print("\ntraining, teacher widths, 40 scenes, 3 epochs")
    for flag in ("0", "1"):
        env = dict(os.environ, DUCKSEG_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:6s} {float(out[1]):7.2f} s")


if __name__ == "__main__":
    main()
