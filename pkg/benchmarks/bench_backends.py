"""Timing comparison of the numba kernels vs the pure-numpy fallback.

Run:  python3 benchmarks/bench_backends.py
The first numba call per kernel includes JIT compilation; it is reported
separately and excluded from the per-call averages.
"""

import time

import numpy as np

from attndistill import backend
from attndistill.data import build_toy_fixture
from attndistill.engine import DistillConfig, init_state, step

SHAPES = [
    ("toy 8x8, w32, b32", (32, 3, 8, 8), 32),
    ("toy 8x8, w64, b128", (128, 3, 8, 8), 64),
    ("cifar 32x32, w64, b32", (32, 3, 32, 32), 64),
    ("cifar 32x32, w128, b16", (16, 3, 32, 32), 128),
]


def _time(fn, reps):
    fn()  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps * 1000.0


def bench_kernels():
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'kernel':16s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, xshape, width in SHAPES:
        x = rng.normal(size=xshape).astype(np.float32)
        w = rng.normal(size=(width, xshape[1], 3, 3)).astype(np.float32)
        b = np.zeros(width, dtype=np.float32)
        h, wd = xshape[2], xshape[3]
        ys = rng.uniform(-0.5, h - 0.5, size=(xshape[0], h, wd))
        xs = rng.uniform(-0.5, wd - 0.5, size=(xshape[0], h, wd))
        reps = max(3, int(2e7 / (np.prod(xshape) * width)))
        rows = {}
        for name in ("numpy", "numba"):
            k = backend.set_backend(name)
            dout = k.conv3x3_forward(x, w, b)
            rows.setdefault("conv fwd", {})[name] = _time(
                lambda: k.conv3x3_forward(x, w, b), reps
            )
            rows.setdefault("conv dx", {})[name] = _time(
                lambda: k.conv3x3_input_grad(dout, w), reps
            )
            rows.setdefault("conv dw", {})[name] = _time(
                lambda: k.conv3x3_weight_grad(dout, x), reps
            )
            rows.setdefault("avgpool fwd", {})[name] = _time(
                lambda: k.avgpool3x3s2_forward(x), reps
            )
            rows.setdefault("bilinear gather", {})[name] = _time(
                lambda: k.bilinear_gather(x, ys, xs), reps
            )
            rows.setdefault("bilinear scatter", {})[name] = _time(
                lambda: k.bilinear_scatter(x, ys, xs, h, wd), reps
            )
        for kernel, t in rows.items():
            print(
                f"{label:28s} {kernel:16s} {t['numpy']:10.3f} {t['numba']:10.3f} "
                f"{t['numpy'] / t['numba']:7.2f}x"
            )


def bench_engine_step():
    train, _ = build_toy_fixture()
    names = ("numpy", "numba", "mixed")
    header = "".join(f"{n + ' ms':>12s}" for n in names)
    print(f"\n{'engine step (toy)':28s}{header}")
    for mode in ("channel", "both"):
        times = {}
        for name in names:
            backend.set_backend(name)
            cfg = DistillConfig(
                ipc=1, iterations=40, depth=2, width=64, batch_real=64,
                seed=0, mode=mode,
            )
            state = init_state(cfg, train)
            while state.iteration < 10:  # warm-up
                step(state, cfg, train)
            state.metrics.clear()
            while state.iteration < 40:
                step(state, cfg, train)
            times[name] = float(np.mean([ms for _, _, ms in state.metrics]))
        cells = "".join(f"{times[n]:12.2f}" for n in names)
        print(f"{'mode=' + mode:28s}{cells}")


if __name__ == "__main__":
    print(f"default backend: {backend.backend_name()} "
          f"(override with {backend.ENV_VAR}=numpy|numba)\n")
    bench_kernels()
    bench_engine_step()
    backend.set_backend("auto")
