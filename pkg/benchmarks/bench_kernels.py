"""Benchmark the numba kernels against the pure-numpy fallback.

Times the convolution forward/backward kernels, the resampling kernels, and
a full training step of the blur-predictor network under both backends, then
prints a comparison table.  Run from the repository root:

    python3 benchmarks/bench_kernels.py [--reps 5] [--sizes 32,64,96]
"""

import argparse
import time

import numpy as np

from mb2d import backend, models
from mb2d.nn import autograd as ag
from mb2d.nn import ops


def _time(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(size: int, channels: int = 16, batch: int = 2):
    rng = np.random.default_rng(0)
    x = rng.random((batch, channels, size, size), np.float32)
    xp = ops.pad1(x)
    w = rng.random((channels, channels, 3, 3), np.float32)
    b = rng.random(channels, np.float32)
    dy = rng.random((batch, channels, size, size), np.float32)
    dys = rng.random((batch, channels, size // 2, size // 2), np.float32)
    gflop = 2.0 * batch * channels * channels * 9 * size * size / 1e9
    return {
        f"conv3x3 fwd {size}x{size} ({gflop:.2f} GF)": lambda: ops.conv3x3_fwd(xp, w, b, 1),
        f"conv3x3 bwd_input {size}x{size}": lambda: ops.conv3x3_bwd_input(dy, w, 1, size, size),
        f"conv3x3 bwd_weight {size}x{size}": lambda: ops.conv3x3_bwd_weight(xp, dy, 1),
        f"conv3x3 fwd stride2 {size}x{size}": lambda: ops.conv3x3_fwd(xp, w, b, 2),
        f"conv3x3 bwd_input stride2": lambda: ops.conv3x3_bwd_input(dys, w, 2, size, size),
        f"up2 fwd {size}x{size}": lambda: ops.up2_fwd(x),
        f"down2 fwd {size}x{size}": lambda: ops.down2_fwd(x),
    }


def train_step_case(crop: int = 32, batch: int = 2):
    rng = np.random.default_rng(1)
    st = models.make_mbrnn(base_channels=8, levels=3, feature_channels=8, num_input_frames=3, seed=0)
    x = rng.random((batch, 9, crop, crop), np.float32)
    tg = [rng.random((batch, 3, crop, crop), np.float32) for _ in range(3)]

    def step():
        outs, _ = models.mbrnn_unroll(st, x)
        loss = ag.add_scalars([ag.l1_to(o, t) for o, t in zip(outs, tg)])
        loss.backward()
        for p in st.net.params.values():
            p.grad = None

    return {f"mbrnn train step (batch {batch}, crop {crop})": step}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--sizes", default="32,64,96", help="comma-separated square sizes")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    cases = {}
    for s in sizes:
        cases.update(kernel_cases(s))
    cases.update(train_step_case())

    results = {}
    for name in ("numpy", "numba") if backend.HAS_NUMBA else ("numpy",):
        backend.set_backend(name)
        next(iter(cases.values()))()  # warm any jit caches outside the timer
        for label, fn in cases.items():
            fn()
            results.setdefault(label, {})[name] = _time(fn, args.reps)

    width = max(len(label) for label in results) + 2
    header = f"{'case':<{width}}{'numpy':>12}{'numba':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, r in results.items():
        np_ms = r["numpy"] * 1e3
        if "numba" in r:
            nb_ms = r["numba"] * 1e3
            print(f"{label:<{width}}{np_ms:>10.2f}ms{nb_ms:>10.2f}ms{np_ms / nb_ms:>9.1f}x")
        else:
            print(f"{label:<{width}}{np_ms:>10.2f}ms{'n/a':>12}{'':>10}")
    backend.set_backend("auto")


if __name__ == "__main__":
    main()
