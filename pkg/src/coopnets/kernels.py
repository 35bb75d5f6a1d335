"""Convolution kernels: numba-jitted hot loops with a pure-numpy fallback.

The backend is chosen once at import time.  Set COOPNETS_BACKEND=numpy to
force the fallback (useful on machines without a working numba install and
for the benchmark in benchmarks/bench_kernels.py).  Both backends compute
in float64 and produce identical results up to floating-point associativity
of the accumulation order; the numpy path accumulates per kernel offset,
the numba path per output pixel.

All convolutions are cross-correlations (no kernel flip), zero-padded,
channels-first, batch leading: x is (N, C_in, H, W), filters are
(C_out, C_in, kh, kw).
"""

import os

import numpy as np

BACKEND = os.environ.get("COOPNETS_BACKEND", "numba").lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"COOPNETS_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

if BACKEND == "numba":
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        BACKEND = "numpy"


def _pad2d(x, pad):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------

def _conv2d_forward_np(x, filters, stride, pad):
    n, cin, h, w = x.shape
    cout, _, kh, kw = filters.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = _pad2d(x, pad)
    y = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            # (N, Cin, Ho, Wo) x (Cout, Cin) -> (N, Ho, Wo, Cout)
            y += np.tensordot(patch, filters[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    return y


def _conv2d_backward_input_np(grad_y, filters, stride, pad, h, w):
    n, cout, ho, wo = grad_y.shape
    _, cin, kh, kw = filters.shape
    gxp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(grad_y, filters[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib
    if pad:
        return gxp[:, :, pad:pad + h, pad:pad + w]
    return gxp


def _conv2d_backward_filters_np(x, grad_y, stride, pad, kh, kw):
    n, cin, h, w = x.shape
    _, cout, ho, wo = grad_y.shape
    xp = _pad2d(x, pad)
    gw = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            gw[:, :, i, j] = np.tensordot(grad_y, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if BACKEND == "numba":

    @njit(cache=True)
    def _conv2d_forward_nb(xp, filters, stride, ho, wo):
        n, cin = xp.shape[0], xp.shape[1]
        cout, _, kh, kw = filters.shape
        y = np.zeros((n, cout, ho, wo), dtype=np.float64)
        for b in range(n):
            for o in range(cout):
                yb = y[b, o]
                for ci in range(cin):
                    xc = xp[b, ci]
                    for i in range(kh):
                        for j in range(kw):
                            fv = filters[o, ci, i, j]
                            if fv == 0.0:
                                continue
                            for a in range(ho):
                                row = xc[a * stride + i]
                                for c in range(wo):
                                    yb[a, c] += fv * row[c * stride + j]
        return y

    @njit(cache=True)
    def _conv2d_backward_input_nb(grad_y, filters, stride, hp, wp):
        n, cout, ho, wo = grad_y.shape
        _, cin, kh, kw = filters.shape
        gxp = np.zeros((n, cin, hp, wp), dtype=np.float64)
        for b in range(n):
            for o in range(cout):
                gb = grad_y[b, o]
                for ci in range(cin):
                    gx = gxp[b, ci]
                    for i in range(kh):
                        for j in range(kw):
                            fv = filters[o, ci, i, j]
                            if fv == 0.0:
                                continue
                            for a in range(ho):
                                row = gx[a * stride + i]
                                ga = gb[a]
                                for c in range(wo):
                                    row[c * stride + j] += fv * ga[c]
        return gxp

    @njit(cache=True)
    def _conv2d_backward_filters_nb(xp, grad_y, stride, kh, kw):
        n, cin = xp.shape[0], xp.shape[1]
        _, cout, ho, wo = grad_y.shape
        gw = np.zeros((cout, cin, kh, kw), dtype=np.float64)
        for b in range(n):
            for o in range(cout):
                gb = grad_y[b, o]
                for ci in range(cin):
                    xc = xp[b, ci]
                    for i in range(kh):
                        for j in range(kw):
                            acc = 0.0
                            for a in range(ho):
                                row = xc[a * stride + i]
                                ga = gb[a]
                                for c in range(wo):
                                    acc += ga[c] * row[c * stride + j]
                            gw[o, ci, i, j] += acc
        return gw


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def conv2d_forward(x, filters, stride, pad):
    """Strided, zero-padded cross-correlation (no bias)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    filters = np.ascontiguousarray(filters, dtype=np.float64)
    if BACKEND == "numba":
        n, cin, h, w = x.shape
        kh, kw = filters.shape[2], filters.shape[3]
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (w + 2 * pad - kw) // stride + 1
        return _conv2d_forward_nb(_pad2d(x, pad), filters, stride, ho, wo)
    return _conv2d_forward_np(x, filters, stride, pad)


def conv2d_backward_input(grad_y, filters, stride, pad, h, w):
    """Adjoint of conv2d_forward with respect to the input (shape (h, w))."""
    grad_y = np.ascontiguousarray(grad_y, dtype=np.float64)
    filters = np.ascontiguousarray(filters, dtype=np.float64)
    if BACKEND == "numba":
        gxp = _conv2d_backward_input_nb(grad_y, filters, stride, h + 2 * pad, w + 2 * pad)
        if pad:
            return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w])
        return gxp
    return _conv2d_backward_input_np(grad_y, filters, stride, pad, h, w)


def conv2d_backward_filters(x, grad_y, stride, pad, kh, kw):
    """Gradient of conv2d_forward with respect to the filters, summed over the batch."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad_y = np.ascontiguousarray(grad_y, dtype=np.float64)
    if BACKEND == "numba":
        return _conv2d_backward_filters_nb(_pad2d(x, pad), grad_y, stride, kh, kw)
    return _conv2d_backward_filters_np(x, grad_y, stride, pad, kh, kw)
