#!/usr/bin/env python3
"""Benchmark the compiled convolution kernels against the numpy fallback.

Times forward and backward passes at the shapes the training loop actually
hits, plus a full denoiser train step through each backend.  Run with the
package installed:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from bbkd import kernels
from bbkd.kernels import _fallback

try:
    from bbkd.kernels import _core
except ImportError:
    _core = None


def timeit(fn, *args, repeat=50):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat * 1e3


def bench_conv(backend, c_in, c_out, size, k=3):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((c_in, size, size))
    w = rng.standard_normal((c_out, c_in, k, k))
    b = rng.standard_normal(c_out)
    gy = rng.standard_normal((c_out, size, size))
    fwd = timeit(backend.conv2d_forward, x, w, b)
    gx = timeit(backend.conv2d_grad_input, w, gy)
    gw = timeit(backend.conv2d_grad_kernels, x, gy, k, k)
    return fwd, gx, gw


def bench_train_step():
    from bbkd.autodiff import Tensor, backward, mse
    from bbkd.denoiser import DenoiserConfig, forward_graph, init_params, wrap_params
    from bbkd.optim import AdamState, adam_step

    cfg = DenoiserConfig()
    params = init_params(cfg, 0)
    state = AdamState.for_params(params)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 32, 32))
    target = rng.standard_normal((1, 32, 32))

    def step():
        ptensors = wrap_params(params)
        total = None
        for _ in range(8):
            loss = mse(forward_graph(ptensors, Tensor(x), 25, cfg), Tensor(target))
            total = loss if total is None else total + loss
        grads = backward(total, ptensors)
        adam_step(params, grads, state, lr=1e-4)

    return timeit(step, repeat=10)


def main():
    print(f"selected backend: {kernels.BACKEND}")
    if _core is None:
        print("compiled extension not built; benchmarking the fallback only")
    backends = [("numpy", _fallback)] + ([("compiled", _core)] if _core else [])

    shapes = [(1, 32, 32), (32, 32, 32), (32, 1, 32), (32, 32, 64)]
    header = f"{'shape (cin,cout,hw)':<22} {'backend':<9} {'fwd ms':>8} {'gx ms':>8} {'gw ms':>8}"
    print(header)
    print("-" * len(header))
    rows = {}
    for shape in shapes:
        for name, mod in backends:
            fwd, gx, gw = bench_conv(mod, *shape)
            rows[(shape, name)] = (fwd, gx, gw)
            print(f"{str(shape):<22} {name:<9} {fwd:8.3f} {gx:8.3f} {gw:8.3f}")
        if len(backends) == 2:
            f0 = rows[(shape, "numpy")]
            f1 = rows[(shape, "compiled")]
            speedup = sum(f0) / sum(f1)
            print(f"{'':<22} {'speedup':<9} {speedup:7.2f}x")

    print()
    print(f"full denoiser train step (batch 8, 32x32, {kernels.BACKEND} backend): {bench_train_step():.1f} ms")


if __name__ == "__main__":
    main()
