"""Dense tensor operations the networks are built from.

Tensors are plain numpy float64 arrays, channels-first, batch leading:
signals are (N, C, H, W).  Convolution here means cross-correlation with
zero padding, the usual ConvNet convention; the adjoint tests in
tests/test_tensor.py pin that convention down.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when tensor shapes do not chain, naming the offending dimension."""


@dataclass(frozen=True)
class ConvSpec:
    """Filter geometry for a 2-d convolution layer."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")
        if self.kernel < 1:
            raise ShapeError(f"kernel must be >= 1, got {self.kernel}")

    def out_size(self, h, w):
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"conv output extent {ho}x{wo} < 1 for input {h}x{w}, "
                f"kernel {self.kernel}, stride {self.stride}, padding {self.padding}")
        return ho, wo


def _check_conv_shapes(x, filters, spec):
    if x.ndim != 4:
        raise ShapeError(f"expected 4-d input (N, C, H, W), got ndim={x.ndim}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input channels {x.shape[1]} != spec.in_channels {spec.in_channels}")
    if filters.shape != (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel):
        raise ShapeError(
            f"filter shape {filters.shape} != expected "
            f"{(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)}")


def convolve2d(x, filters, bias, spec):
    """Strided zero-padded cross-correlation with per-output-channel bias.

    x: (N, C_in, H, W); filters: (C_out, C_in, k, k); bias: (C_out,).
    Returns (N, C_out, H', W').
    """
    _check_conv_shapes(x, filters, spec)
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    spec.out_size(x.shape[2], x.shape[3])
    y = kernels.conv2d_forward(x, filters, spec.stride, spec.padding)
    return y + bias[None, :, None, None]


def transpose_convolve2d(grad_out, filters, spec, target_hw):
    """Exact adjoint of convolve2d (bias excluded) mapping back to (h, w)."""
    h, w = target_hw
    ho, wo = spec.out_size(h, w)
    if grad_out.ndim != 4 or grad_out.shape[1] != spec.out_channels:
        raise ShapeError(f"grad_out shape {grad_out.shape} inconsistent with {spec.out_channels} output channels")
    if grad_out.shape[2] != ho or grad_out.shape[3] != wo:
        raise ShapeError(
            f"grad_out spatial extent {grad_out.shape[2]}x{grad_out.shape[3]} != "
            f"forward output {ho}x{wo} for target {h}x{w}")
    return kernels.conv2d_backward_input(grad_out, filters, spec.stride, spec.padding, h, w)


def conv_filter_gradient(x, grad_out, spec):
    """Gradient of convolve2d w.r.t. filters (summed over the batch)."""
    gw = kernels.conv2d_backward_filters(x, grad_out, spec.stride, spec.padding,
                                         spec.kernel, spec.kernel)
    gb = grad_out.sum(axis=(0, 2, 3))
    return gw, gb


def upsample_zero(x, factor):
    """Zero-insertion upsampling: value at (i, j) moves to (i*factor, j*factor)."""
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h * factor, w * factor), dtype=x.dtype)
    out[:, :, ::factor, ::factor] = x
    return out


def downsample_zero_adjoint(x, factor):
    """Adjoint of upsample_zero: keep every factor-th sample."""
    if factor == 1:
        return x
    return np.ascontiguousarray(x[:, :, ::factor, ::factor])


NONLINEARITIES = ("relu", "tanh", "identity")


def apply_nonlinearity(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown nonlinearity {kind!r}")


def nonlinearity_derivative(x, kind):
    """Element-wise derivative at x.  ReLU's derivative at exactly 0 is 0."""
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown nonlinearity {kind!r}")
