"""Benchmark the numba kernels against the pure-numpy fallback.

Times the convolution forward/backward kernels on the shapes the model
actually runs (desk scale and the full-resolution first stages), plus one
end-to-end training step. Run:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mamafnet import kernels
from mamafnet import tensor as T


def time_call(fn, repeats: int) -> float:
    fn()  # warmup (jit compile, cache touch)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


CASES = [
    # (label, input shape, kernel shape, stride)
    ("conv2d 32px stage1", (25, 32, 32, 3), (3, 3, 3, 64), (2, 2)),
    ("conv2d 32px stage2", (25, 16, 16, 64), (3, 3, 64, 32), (2, 2)),
    ("conv2d 224px stage1", (25, 224, 224, 3), (3, 3, 3, 64), (2, 2)),
    ("conv2d gate 14px", (25, 14, 14, 8), (3, 3, 8, 8), (1, 1)),
]

CASES_3D = [
    ("conv3d reduce", (75, 14, 14, 8), (3, 3, 3, 8, 3), (5, 2, 2)),
]


def bench_conv2d(label, xshape, wshape, stride, repeats):
    rng = np.random.default_rng(0)
    x = rng.random(xshape, dtype=np.float32)
    w = (rng.random(wshape, dtype=np.float32) - 0.5) * 0.2
    b = np.zeros(wshape[-1], dtype=np.float32)
    sh, sw = stride
    xp, wv, bv, sh, sw, ho, wo = T.conv2d_prepare(x, w, b, stride, "same")
    gout = rng.random((xshape[0], ho, wo, wshape[-1]), dtype=np.float32)

    rows = []
    for backend in ("numba", "numpy"):
        try:
            kernels.set_backend(backend)
        except ValueError:
            continue
        fwd = time_call(lambda: kernels.conv2d_forward(xp, wv, bv, sh, sw, ho, wo), repeats)
        dgx = time_call(lambda: kernels.conv2d_input_grad(gout, wv, xp.shape, sh, sw), repeats)
        dgw = time_call(lambda: kernels.conv2d_param_grad(xp, gout, wshape[0], wshape[1], sh, sw), repeats)
        rows.append((backend, fwd, dgx, dgw))
    report(label, rows)


def bench_conv3d(label, xshape, wshape, stride, repeats):
    rng = np.random.default_rng(0)
    x = rng.random(xshape, dtype=np.float32)
    w = (rng.random(wshape, dtype=np.float32) - 0.5) * 0.2
    b = np.zeros(wshape[-1], dtype=np.float32)
    xp, wv, bv, st, sh, sw, to, ho, wo = T.conv3d_prepare(x, w, b, stride, "same")
    gout = rng.random((to, ho, wo, wshape[-1]), dtype=np.float32)

    rows = []
    for backend in ("numba", "numpy"):
        try:
            kernels.set_backend(backend)
        except ValueError:
            continue
        fwd = time_call(lambda: kernels.conv3d_forward(xp, wv, bv, st, sh, sw, to, ho, wo), repeats)
        dgx = time_call(lambda: kernels.conv3d_input_grad(gout, wv, xp.shape, st, sh, sw), repeats)
        dgw = time_call(
            lambda: kernels.conv3d_param_grad(xp, gout, wshape[0], wshape[1], wshape[2], st, sh, sw),
            repeats,
        )
        rows.append((backend, fwd, dgx, dgw))
    report(label, rows)


def bench_train_step(repeats):
    from mamafnet import model as modelmod
    from mamafnet import nn
    from mamafnet import autodiff as ad
    from mamafnet.autodiff import Tape

    rng = np.random.default_rng(0)
    cfg = modelmod.ModelConfig(seq_len=25, input_hw=32)
    weights = modelmod.init_weights(cfg)
    views = [rng.random((25, 32, 32, 3), dtype=np.float32) for _ in range(4)]
    target = np.array([[1.0, 0.0]], dtype=np.float32)

    def step():
        tape = Tape()
        params = weights.as_nodes(tape)
        probs = modelmod.forward_from_params(tape, params, cfg, views)
        loss = nn.cross_entropy(tape, ad.reshape(tape, probs, (1, 2)), target)
        tape.backward(loss)

    rows = []
    for backend in ("numba", "numpy"):
        try:
            kernels.set_backend(backend)
        except ValueError:
            continue
        rows.append((backend, time_call(step, repeats)))
    print("one subject forward+backward (desk scale)")
    for backend, dt in rows:
        print(f"  {backend:<6} {dt * 1e3:9.2f} ms")
    print()


def report(label, rows):
    print(label)
    print(f"  {'backend':<6} {'forward':>10} {'input-grad':>12} {'param-grad':>12}")
    for backend, fwd, dgx, dgw in rows:
        print(f"  {backend:<6} {fwd * 1e3:9.2f}ms {dgx * 1e3:11.2f}ms {dgw * 1e3:11.2f}ms")
    print()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    initial = kernels.active_backend()
    print(f"default backend: {initial} (override with MAMAF_KERNELS)\n")
    for case in CASES:
        bench_conv2d(*case, repeats=args.repeats)
    for case in CASES_3D:
        bench_conv3d(*case, repeats=args.repeats)
    bench_train_step(args.repeats)
    kernels.set_backend(initial)


if __name__ == "__main__":
    main()
