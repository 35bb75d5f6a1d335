"""Compare the compiled (numba) convolution kernels against the pure-numpy
fallback on descriptor-sized workloads.

Run:  python benchmarks/bench_kernels.py

The numba kernels exist only when the package was imported with the default
backend; run with COOPNETS_BACKEND=numpy to confirm the fallback alone.
"""

import time

import numpy as np

from coopnets import kernels

CASES = [
    # (name, batch, in_ch, h, w, out_ch, kernel, stride)
    ("texture L1 15x15/3", 6, 1, 224, 224, 100, 15, 3),
    ("object  L1  4x4/2", 16, 3, 64, 64, 100, 4, 2),
    ("face    L2  5x5/2", 16, 96, 30, 30, 128, 5, 2),
    ("scene   L3  3x3/1", 16, 128, 14, 14, 256, 3, 1),
]

HAVE_NUMBA = kernels.BACKEND == "numba"


def _numba_wrappers():
    """The same padding/shape adaptation the package dispatchers perform."""

    def fwd(x, f, stride, pad):
        n, cin, h, w = x.shape
        kh, kw = f.shape[2], f.shape[3]
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (w + 2 * pad - kw) // stride + 1
        return kernels._conv2d_forward_nb(kernels._pad2d(x, pad), f, stride, ho, wo)

    def bwd_in(gy, f, stride, pad, h, w):
        gxp = kernels._conv2d_backward_input_nb(gy, f, stride, h + 2 * pad, w + 2 * pad)
        return gxp if not pad else np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w])

    def bwd_f(x, gy, stride, pad, kh, kw):
        return kernels._conv2d_backward_filters_nb(kernels._pad2d(x, pad), gy, stride, kh, kw)

    return fwd, bwd_in, bwd_f


def _time(fn, *args, repeat=3):
    fn(*args)  # warm-up (also triggers JIT compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, n, c, h, w, oc, k, stride):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c, h, w))
    f = rng.standard_normal((oc, c, k, k))
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    gy = rng.standard_normal((n, oc, ho, wo))

    impls = [("numpy", kernels._conv2d_forward_np,
              kernels._conv2d_backward_input_np, kernels._conv2d_backward_filters_np)]
    if HAVE_NUMBA:
        impls.append(("numba",) + _numba_wrappers())

    rows = []
    for label, fwd, bwd_in, bwd_f in impls:
        t_f = _time(fwd, x, f, stride, 0)
        t_i = _time(bwd_in, gy, f, stride, 0, h, w)
        t_w = _time(bwd_f, x, gy, stride, 0, k, k)
        rows.append((label, t_f, t_i, t_w))

    if HAVE_NUMBA:
        y_np = impls[0][1](x, f, stride, 0)
        y_nb = impls[1][1](x, f, stride, 0)
        agree = f"max rel diff {np.abs(y_np - y_nb).max() / np.abs(y_np).max():.2e}"
    else:
        agree = "numpy only"

    print(f"\n{name}  x={x.shape} filters={f.shape} stride={stride}  ({agree})")
    print(f"  {'backend':8s} {'forward':>10s} {'bwd_input':>10s} {'bwd_filters':>12s}")
    for label, t_f, t_i, t_w in rows:
        print(f"  {label:8s} {t_f * 1e3:9.2f}ms {t_i * 1e3:9.2f}ms {t_w * 1e3:11.2f}ms")
    if len(rows) == 2:
        print(f"  numba speedup: forward x{rows[0][1] / rows[1][1]:.1f}, "
              f"bwd_input x{rows[0][2] / rows[1][2]:.1f}, "
              f"bwd_filters x{rows[0][3] / rows[1][3]:.1f}")


def main():
    print(f"active backend: {kernels.BACKEND}")
    for case in CASES:
        bench_case(*case)


if __name__ == "__main__":
    main()
