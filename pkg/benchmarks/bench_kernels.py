"""Compiled versus numpy kernels: per-kernel timings and one MiniCNN training step.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Prints a
table of median wall-clock times and the speedup of the compiled backend.
"""
import argparse
import statistics
import time

import numpy as np

from adagp import kernels
from adagp.model import build_model, zoo_spec
from adagp.optim import MODEL_OPTIMIZER, make_optimizer
from adagp.predictor import PredictorNet
from adagp.trainer import train_batch_bp, train_batch_gp


def median_time(fn, repeat):
    fn()  # warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(rng):
    x = rng.normal(size=(32, 8, 16, 16))
    cols = kernels.get_backend("python").im2col(x, 3, 3, 1, 1)
    pooled, argmax = kernels.get_backend("python").maxpool2d_forward(x, 2, 2)
    dout = rng.normal(size=pooled.shape)
    spec = zoo_spec("minicnn")
    model = build_model(spec, seed=0)
    predictor = PredictorNet.for_model(spec, seed=1)
    opt, popt = make_optimizer(MODEL_OPTIMIZER), make_optimizer(MODEL_OPTIMIZER)
    xb = rng.normal(size=(32, 3, 16, 16))
    yb = rng.integers(0, 4, size=32)
    return {
        "im2col 32x8x16x16 k3": lambda: kernels.im2col(x, 3, 3, 1, 1),
        "col2im 32x8x16x16 k3": lambda: kernels.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool fwd 2x2": lambda: kernels.maxpool2d_forward(x, 2, 2),
        "maxpool bwd 2x2": lambda: kernels.maxpool2d_backward(dout, argmax, x.shape),
        "minicnn BP step (b=32)": lambda: train_batch_bp(model, predictor, xb, yb, opt, popt),
        "minicnn GP step (b=32)": lambda: train_batch_gp(model, predictor, xb, yb, opt),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    results = {}
    for name in backends:
        previous = kernels.use_backend(name)
        try:
            for label, fn in cases(np.random.default_rng(0)).items():
                results.setdefault(label, {})[name] = median_time(fn, args.repeat)
        finally:
            kernels.use_backend(previous)
    header = f"{'case':<26}" + "".join(f"{b + ' ms':>12}" for b in backends)
    if "cython" in backends:
        header += f"{'speedup':>10}"
    print(header)
    for label, row in results.items():
        line = f"{label:<26}" + "".join(f"{row[b] * 1e3:>12.3f}" for b in backends)
        if "cython" in backends:
            line += f"{row['python'] / row['cython']:>9.2f}x"
        print(line)
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
