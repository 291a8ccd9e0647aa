"""1-D convolution stacks and real soft-thresholding with reverse passes.

Activations use a channels-first layout ``(C, S, L)``: ``C`` channels,
``S`` independent sequences, ``L`` samples along the convolved axis.
Convolutions are cross-correlations (deep-learning convention), stride 1,
zero padded to keep the length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Conv1DLayer",
    "conv_forward",
    "conv_backward",
    "stack_forward",
    "stack_backward",
    "soft_forward",
    "soft_backward",
    "softplus",
    "softplus_inverse",
    "sigmoid",
]


@dataclass(eq=False)
class Conv1DLayer:
    kernel: np.ndarray  # (out, in, k)
    bias: np.ndarray  # (out,)
    has_relu: bool = True

    def __post_init__(self):
        self.kernel = np.array(self.kernel, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.kernel.ndim != 3:
            raise ValueError("kernel must be (out_channels, in_channels, kernel_size)")
        if self.kernel.shape[2] % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError("bias must have one entry per output channel")

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @property
    def size(self):
        return self.kernel.size + self.bias.size

    @classmethod
    def init(cls, rng, c_in, c_out, kernel_size=3, has_relu=True):
        """Uniform(-a, a) weights and biases with a = 1 / sqrt(c_in * kernel_size)."""
        a = 1.0 / np.sqrt(c_in * kernel_size)
        kernel = rng.uniform(-a, a, size=(c_out, c_in, kernel_size))
        bias = rng.uniform(-a, a, size=c_out)
        return cls(kernel, bias, has_relu)

    def copy(self):
        return Conv1DLayer(self.kernel.copy(), self.bias.copy(), self.has_relu)


def conv_forward(layer: Conv1DLayer, x):
    c, s, n = x.shape
    o, ci, k = layer.kernel.shape
    if ci != c:
        raise ValueError(f"layer expects {ci} input channels, got {c}")
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    cols = np.stack([xp[:, :, i:i + n] for i in range(k)], axis=1).reshape(c * k, s * n)
    pre = (layer.kernel.reshape(o, c * k) @ cols).reshape(o, s, n) + layer.bias[:, None, None]
    y = np.maximum(pre, 0.0) if layer.has_relu else pre
    return y, (cols, pre, x.shape)


def conv_backward(layer: Conv1DLayer, gy, cache):
    """Return (dL/dx, dL/dkernel, dL/dbias); ReLU subgradient is 0 at 0."""
    cols, pre, (c, s, n) = cache
    o, _, k = layer.kernel.shape
    p = k // 2
    if layer.has_relu:
        gy = gy * (pre > 0)
    gy2 = gy.reshape(o, s * n)
    gkernel = (gy2 @ cols.T).reshape(o, c, k)
    gbias = gy2.sum(axis=1)
    gcols = (layer.kernel.reshape(o, c * k).T @ gy2).reshape(c, k, s, n)
    gxp = np.zeros((c, s, n + 2 * p))
    for i in range(k):
        gxp[:, :, i:i + n] += gcols[:, i]
    return gxp[:, :, p:p + n], gkernel, gbias


def stack_forward(layers, x):
    caches = []
    for layer in layers:
        x, cache = conv_forward(layer, x)
        caches.append(cache)
    return x, caches


def stack_backward(layers, gy, caches):
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        gy, gk, gb = conv_backward(layers[i], gy, caches[i])
        grads[i] = (gk, gb)
    return gy, grads


def soft_forward(v, theta):
    """Elementwise real soft-threshold sign(v) * max(|v| - theta, 0)."""
    active = np.abs(v) > theta
    return np.where(active, v - np.sign(v) * theta, 0.0), active


def soft_backward(gu, v, active):
    """Return (dL/dv, dL/dtheta)."""
    gv = gu * active
    gtheta = -float(np.sum(gv * np.sign(v)))
    return gv, gtheta


def softplus(r):
    return np.logaddexp(0.0, r)


def softplus_inverse(theta):
    # log(expm1(t)) rewritten so large t does not overflow; t = 0 gives -inf
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        return theta + np.log(-np.expm1(-theta))


def sigmoid(r):
    return 0.5 * (1.0 + np.tanh(0.5 * r))
