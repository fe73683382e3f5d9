"""Valid, stride-1 3-D and 2-D convolutions plus the two reshape adapters.

All functions take a leading batch axis:

* 3-D input ``(B, H, W, D, C)``, kernels ``(F, kH, kW, kD, C)``
* 2-D input ``(B, H, W, C)``, kernels ``(F, kH, kW, C)``

The forward pass lowers to one ``tensordot`` over sliding windows.  The input
gradient is accumulated kernel-offset by kernel-offset, which keeps the
reduction order fixed.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, glorot_init

ACTIVATIONS = ("relu", "linear")


@dataclass
class ConvLayer:
    """A convolution over ``kernels.ndim - 2`` spatial axes (2 or 3)."""

    kernels: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.kernels.shape[0]} filters")

    @property
    def spatial_rank(self):
        return self.kernels.ndim - 2

    @property
    def kernel_size(self):
        return self.kernels.shape[1:-1]

    @property
    def filters(self):
        return self.kernels.shape[0]

    @property
    def in_channels(self):
        return self.kernels.shape[-1]

    @property
    def parameter_count(self):
        return self.kernels.size + self.bias.size

    def params(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def output_shape(self, in_shape):
        """Per-sample output shape for a per-sample input shape (no batch axis)."""
        *spatial, channels = in_shape
        if len(spatial) != self.spatial_rank or channels != self.in_channels:
            raise ShapeError(
                f"input {tuple(in_shape)} incompatible with kernels {self.kernels.shape}"
            )
        out = [n - k + 1 for n, k in zip(spatial, self.kernel_size)]
        if min(out) < 1:
            raise ShapeError(f"kernel {self.kernel_size} larger than input {tuple(spatial)}")
        return (*out, self.filters)


def Conv3dLayer(kernels, bias, activation="relu"):
    if kernels.ndim != 5:
        raise ShapeError(f"3-D kernels must be (F, kH, kW, kD, C), got {kernels.shape}")
    return ConvLayer(kernels, bias, activation)


def Conv2dLayer(kernels, bias, activation="relu"):
    if kernels.ndim != 4:
        raise ShapeError(f"2-D kernels must be (F, kH, kW, C), got {kernels.shape}")
    return ConvLayer(kernels, bias, activation)


def init_conv(filters, kernel_size, in_channels, rng, activation="relu", dtype=np.float64):
    shape = (filters, *kernel_size, in_channels)
    receptive = int(np.prod(kernel_size))
    kernels = glorot_init(shape, receptive * in_channels, receptive * filters, rng, dtype)
    return ConvLayer(kernels, np.zeros(filters, dtype=dtype), activation)


def _windows(layer, x):
    r = layer.spatial_rank
    if x.ndim != r + 2:
        raise ShapeError(f"expected batched input of rank {r + 2}, got shape {x.shape}")
    layer.output_shape(x.shape[1:])
    # -> (B, *out, C, *k)
    return np.lib.stride_tricks.sliding_window_view(x, layer.kernel_size, axis=tuple(range(1, r + 1)))


def conv_forward(layer, x):
    r = layer.spatial_rank
    win = _windows(layer, x)
    # kernels (F, *k, C) -> (C, *k, F)
    k = np.moveaxis(layer.kernels, (0, r + 1), (r + 1, 0))
    z = np.tensordot(win, k, axes=(list(range(r + 1, 2 * r + 2)), list(range(r + 1))))
    z += layer.bias
    out = np.maximum(z, 0) if layer.activation == "relu" else z
    return out, (x, z)


def conv_backward(layer, cache, upstream, need_input_grad=True):
    """Returns ``(input_grad, kernel_grad, bias_grad)``; input_grad is None when not requested."""
    x, z = cache
    if upstream.shape != z.shape:
        raise ShapeError(f"upstream gradient {upstream.shape} does not match output {z.shape}")
    r = layer.spatial_rank
    dz = upstream * (z > 0) if layer.activation == "relu" else upstream
    bias_grad = dz.sum(axis=tuple(range(r + 1)))
    win = _windows(layer, x)
    # (C, *k, F) -> (F, *k, C)
    kgrad = np.tensordot(win, dz, axes=(list(range(r + 1)), list(range(r + 1))))
    kernel_grad = np.moveaxis(kgrad, (0, r + 1), (r + 1, 0))

    input_grad = None
    if need_input_grad:
        input_grad = np.zeros_like(x)
        out_spatial = z.shape[1:-1]
        for offset in itertools.product(*(range(k) for k in layer.kernel_size)):
            w = layer.kernels[(slice(None), *offset)]  # (F, C)
            sl = tuple(slice(o, o + n) for o, n in zip(offset, out_spatial))
            input_grad[(slice(None), *sl)] += dz @ w
    return input_grad, kernel_grad, bias_grad


conv3d_forward = conv_forward
conv3d_backward = conv_backward
conv2d_forward = conv_forward
conv2d_backward = conv_backward


def reshape_3d_to_2d(x):
    """``(B, H, W, D, F) -> (B, H, W, D*F)``; element (i, j, d, f) lands at channel d*F + f."""
    b, h, w, d, f = x.shape
    return x.reshape(b, h, w, d * f)


def reshape_2d_to_seq(x):
    """``(B, H, W, F) -> (B, H, W*F)``; row i becomes timestep i, feature j*F + f."""
    b, h, w, f = x.shape
    return x.reshape(b, h, w * f)
