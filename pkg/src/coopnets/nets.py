"""The two ConvNets of opposite directions.

DescriptorNet is bottom-up: it maps a signal Y to a scalar score per batch
item (the sum of its top-layer features) and defines the energy
||Y||^2 / (2 s^2) - score(Y).  GeneratorNet is top-down: it maps latent
factors X to a signal.  Both expose one backward traversal that produces
the input gradient and all parameter gradients together, reusing stored
layer activations.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import (ConvSpec, ShapeError, apply_nonlinearity, conv_filter_gradient,
                     convolve2d, downsample_zero_adjoint, nonlinearity_derivative,
                     transpose_convolve2d, upsample_zero, NONLINEARITIES)


@dataclass(frozen=True)
class LayerSpec:
    """One layer: conv (bottom-up), deconv (top-down), or fully connected.

    Fully connected layers get a dedicated matmul path instead of being
    lowered to whole-map convolutions; on the vector-signal benchmarks the
    matmul is an order of magnitude faster and shares the adjoint tests.
    """

    kind: str  # conv | fc | deconv
    nonlinearity: str = "relu"
    out_channels: int = 0          # conv/deconv
    kernel: int = 0                # conv/deconv
    stride: int = 1                # conv
    padding: int = -1              # conv/deconv; -1 means kernel // 2 for deconv, 0 for conv
    upsample: int = 1              # deconv
    out_dim: int = 0               # fc
    out_shape: tuple = ()          # fc, optional spatial reshape (c, h, w)

    def __post_init__(self):
        if self.kind not in ("conv", "fc", "deconv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @staticmethod
    def conv(out_channels, kernel, stride=1, padding=0, nonlinearity="relu"):
        return LayerSpec("conv", nonlinearity, out_channels=out_channels,
                         kernel=kernel, stride=stride, padding=padding)

    @staticmethod
    def fc(out_dim, nonlinearity="relu", out_shape=()):
        return LayerSpec("fc", nonlinearity, out_dim=out_dim, out_shape=tuple(out_shape))

    @staticmethod
    def deconv(out_channels, kernel, upsample=1, padding=-1, nonlinearity="relu"):
        return LayerSpec("deconv", nonlinearity, out_channels=out_channels,
                         kernel=kernel, upsample=upsample, padding=padding)

    def to_dict(self):
        return {"kind": self.kind, "nonlinearity": self.nonlinearity,
                "out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding,
                "upsample": self.upsample, "out_dim": self.out_dim,
                "out_shape": list(self.out_shape)}

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["out_shape"] = tuple(d.get("out_shape", ()))
        return LayerSpec(**d)


class _Layer:
    """Resolved layer: spec plus concrete input/output shapes."""

    def __init__(self, spec, in_shape):
        self.spec = spec
        self.in_shape = tuple(in_shape)  # (c, h, w)
        c, h, w = in_shape
        if spec.kind == "conv":
            pad = 0 if spec.padding < 0 else spec.padding
            self.conv = ConvSpec(c, spec.out_channels, spec.kernel, spec.stride, pad)
            ho, wo = self.conv.out_size(h, w)
            self.out_shape = (spec.out_channels, ho, wo)
            self.param_shapes = [(spec.out_channels, c, spec.kernel, spec.kernel),
                                 (spec.out_channels,)]
        elif spec.kind == "deconv":
            pad = spec.kernel // 2 if spec.padding < 0 else spec.padding
            self.conv = ConvSpec(c, spec.out_channels, spec.kernel, 1, pad)
            hu, wu = h * spec.upsample, w * spec.upsample
            ho, wo = self.conv.out_size(hu, wu)
            self.up_shape = (hu, wu)
            self.out_shape = (spec.out_channels, ho, wo)
            self.param_shapes = [(spec.out_channels, c, spec.kernel, spec.kernel),
                                 (spec.out_channels,)]
        else:  # fc
            in_dim = c * h * w
            self.in_dim = in_dim
            if spec.out_shape:
                if int(np.prod(spec.out_shape)) != spec.out_dim:
                    raise ShapeError(
                        f"fc out_shape {spec.out_shape} is not a factorization of out_dim {spec.out_dim}")
                self.out_shape = tuple(spec.out_shape)
            else:
                self.out_shape = (spec.out_dim, 1, 1)
            self.param_shapes = [(spec.out_dim, in_dim), (spec.out_dim,)]

    def forward(self, x, params):
        """Returns (activation, cache) where cache holds what backward needs."""
        w, b = params
        spec = self.spec
        if spec.kind == "conv":
            z = convolve2d(x, w, b, self.conv)
            cache = (x, z)
        elif spec.kind == "deconv":
            xu = upsample_zero(x, spec.upsample)
            z = convolve2d(xu, w, b, self.conv)
            cache = (xu, z)
        else:
            n = x.shape[0]
            xf = x.reshape(n, -1)
            if xf.shape[1] != self.in_dim:
                raise ShapeError(f"fc input dim {xf.shape[1]} != expected {self.in_dim}")
            z = (xf @ w.T + b).reshape(n, *self.out_shape)
            cache = (xf, z)
        a = apply_nonlinearity(z, spec.nonlinearity)
        return a, cache

    def backward(self, grad_a, cache, params):
        """Returns (grad_input, [grad_w, grad_b]); grads are batch sums."""
        w, _ = params
        spec = self.spec
        x_or_xu, z = cache
        dz = grad_a * nonlinearity_derivative(z, spec.nonlinearity)
        if spec.kind == "conv":
            gw, gb = conv_filter_gradient(x_or_xu, dz, self.conv)
            gx = transpose_convolve2d(dz, w, self.conv, self.in_shape[1:])
            return gx, [gw, gb]
        if spec.kind == "deconv":
            gw, gb = conv_filter_gradient(x_or_xu, dz, self.conv)
            gxu = transpose_convolve2d(dz, w, self.conv, self.up_shape)
            gx = downsample_zero_adjoint(gxu, spec.upsample)
            return gx, [gw, gb]
        n = dz.shape[0]
        dzf = dz.reshape(n, -1)
        gw = dzf.T @ x_or_xu
        gb = dzf.sum(axis=0)
        gx = (dzf @ w).reshape(n, *self.in_shape)
        return gx, [gw, gb]


def resolve_layers(specs, in_shape):
    layers = []
    shape = tuple(in_shape)
    for spec in specs:
        layer = _Layer(spec, shape)
        layers.append(layer)
        shape = layer.out_shape
    return layers, shape


def init_params(layers, scheme="gaussian", std=0.01, rng=None):
    """Fresh parameters: filters ~ N(0, std^2) (or zeros), biases zero."""
    if scheme not in ("gaussian", "zero"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    if scheme == "gaussian":
        if std <= 0:
            raise ValueError("gaussian init needs std > 0")
        if rng is None:
            rng = np.random.default_rng(0)
    params = []
    for layer in layers:
        wshape, bshape = layer.param_shapes
        if scheme == "zero":
            w = np.zeros(wshape)
        else:
            w = rng.standard_normal(wshape) * std
        params.append([w, np.zeros(bshape)])
    return params


def _forward(layers, params, x):
    caches = []
    a = x
    for layer, p in zip(layers, params):
        a, cache = layer.forward(a, p)
        caches.append(cache)
    return a, caches


def _backward(layers, params, caches, grad_top):
    grads = [None] * len(layers)
    g = grad_top
    for idx in range(len(layers) - 1, -1, -1):
        g, grads[idx] = layers[idx].backward(g, caches[idx], params[idx])
    return g, grads


class DescriptorNet:
    """Bottom-up scoring net: f(Y) = sum of top-layer features per item."""

    def __init__(self, layer_specs, input_shape, ref_std):
        if ref_std <= 0:
            raise ValueError(f"reference std must be > 0, got {ref_std}")
        self.layer_specs = list(layer_specs)
        self.input_shape = tuple(input_shape)
        self.ref_std = float(ref_std)
        self.layers, self.top_shape = resolve_layers(self.layer_specs, self.input_shape)
        self.params = init_params(self.layers, scheme="zero")

    def copy(self):
        net = DescriptorNet(self.layer_specs, self.input_shape, self.ref_std)
        net.params = [[w.copy(), b.copy()] for w, b in self.params]
        return net

    def _check_input(self, y):
        if y.ndim != 4 or y.shape[1:] != self.input_shape:
            raise ShapeError(f"signal shape {y.shape[1:]} != descriptor input {self.input_shape}")

    def score(self, y):
        """f(Y): (N,) scores."""
        self._check_input(y)
        top, _ = _forward(self.layers, self.params, y)
        return top.reshape(y.shape[0], -1).sum(axis=1)

    def energy(self, y):
        """||Y||^2 / (2 s^2) - f(Y), per batch item."""
        self._check_input(y)
        quad = 0.5 * (y.reshape(y.shape[0], -1) ** 2).sum(axis=1) / self.ref_std ** 2
        return quad - self.score(y)

    def backward(self, y):
        """(df/dY, [df/dW per layer]) in one traversal; param grads are batch sums."""
        self._check_input(y)
        top, caches = _forward(self.layers, self.params, y)
        grad_top = np.ones_like(top)
        return _backward(self.layers, self.params, caches, grad_top)

    def energy_gradient(self, y):
        """d/dY of the energy: Y/s^2 - df/dY."""
        gy, _ = self.backward(y)
        return y / self.ref_std ** 2 - gy


class GeneratorNet:
    """Top-down net: g(X) maps latents (N, c, h, w) to signals (N, C, H, W)."""

    def __init__(self, layer_specs, latent_shape, noise_std):
        if noise_std <= 0:
            raise ValueError(f"noise std must be > 0, got {noise_std}")
        self.layer_specs = list(layer_specs)
        self.latent_shape = tuple(latent_shape)
        self.noise_std = float(noise_std)
        self.layers, self.output_shape = resolve_layers(self.layer_specs, self.latent_shape)
        self.params = init_params(self.layers, scheme="zero")

    @property
    def latent_dim(self):
        return int(np.prod(self.latent_shape))

    def copy(self):
        net = GeneratorNet(self.layer_specs, self.latent_shape, self.noise_std)
        net.params = [[w.copy(), b.copy()] for w, b in self.params]
        return net

    def _check_latent(self, x):
        if x.ndim != 4 or x.shape[1:] != self.latent_shape:
            raise ShapeError(f"latent shape {x.shape[1:]} != generator latent {self.latent_shape}")

    def forward(self, x):
        self._check_latent(x)
        out, _ = _forward(self.layers, self.params, x)
        return out

    def backward(self, x, cotangent):
        """J^T . cotangent w.r.t. X and w.r.t. parameters, one traversal."""
        self._check_latent(x)
        out, caches = _forward(self.layers, self.params, x)
        if cotangent.shape != out.shape:
            raise ShapeError(f"cotangent shape {cotangent.shape} != output shape {out.shape}")
        return _backward(self.layers, self.params, caches, cotangent)
