"""Minimal dense CNN engine: same-padded 2D convolution, ReLU, clipping,
backprop, and an Adam optimizer.

Tensors are plain numpy arrays of shape (channels, height, width), float64.
Convolution uses the cross-correlation convention (no kernel flip), which is
the usual convention for learned kernels; the test suite pins it against a
brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def as_tensor3(values, channels=None):
    """Validate and return a (C, H, W) float64 tensor."""
    t = np.asarray(values, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected 3-d tensor (C,H,W), got shape {t.shape}")
    if channels is not None and t.shape[0] != channels:
        raise ValueError(f"expected {channels} channels, got {t.shape[0]}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    return t


@dataclass
class ConvLayer:
    """One same-padded convolution layer.

    weights: (out_channels, in_channels, kernel_h, kernel_w)
    bias: (out_channels,)
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError("weights must be 4-d (out, in, kh, kw)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias shape must match out_channels")
        kh, kw = self.weights.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel dims must be odd for same padding")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def kernel_shape(self):
        return self.weights.shape[2:]


def init_conv_layer(in_channels, out_channels, kernel_h, kernel_w, rng):
    """Glorot-uniform initialized layer: weights in +/- sqrt(6/(fan_in+fan_out))."""
    fan_in = in_channels * kernel_h * kernel_w
    fan_out = out_channels * kernel_h * kernel_w
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(out_channels, in_channels, kernel_h, kernel_w))
    b = np.zeros(out_channels)
    return ConvLayer(w, b)


def _im2col(x, kh, kw):
    """Zero-pad x (C,H,W) for same output and return patches (H*W, C*kh*kw)."""
    c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # windows: (C, H, W, kh, kw) -> (H, W, C, kh, kw)
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(h * w, c * kh * kw)
    return patches


def conv2d_forward(x, layer):
    """Same-padded cross-correlation of x (C,H,W) with the layer's kernels."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected 3-d input, got shape {x.shape}")
    if x.shape[0] != layer.in_channels:
        raise ValueError(
            f"input has {x.shape[0]} channels, layer expects {layer.in_channels}"
        )
    _, h, w = x.shape
    kh, kw = layer.kernel_shape
    patches = _im2col(x, kh, kw)
    wmat = layer.weights.reshape(layer.out_channels, -1)
    out = patches @ wmat.T + layer.bias
    return out.T.reshape(layer.out_channels, h, w)


def conv2d_backward(x, layer, grad_out):
    """Gradients of sum(grad_out * conv2d_forward(x, layer)).

    Returns (grad_input, grad_weights, grad_bias).
    """
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    _, h, w = x.shape
    if grad_out.shape != (layer.out_channels, h, w):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match output "
            f"({layer.out_channels}, {h}, {w})"
        )
    kh, kw = layer.kernel_shape

    patches = _im2col(x, kh, kw)
    go = grad_out.reshape(layer.out_channels, h * w)
    grad_w = (go @ patches).reshape(layer.weights.shape)
    grad_b = go.sum(axis=1)

    # Input gradient is a same-padded correlation of grad_out with the
    # spatially flipped kernels, in/out channels swapped.
    w_flip = layer.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    grad_x = conv2d_forward(grad_out, ConvLayer(w_flip, np.zeros(layer.in_channels)))
    return grad_x, grad_w, grad_b


def relu(t):
    return np.maximum(t, 0.0)


def relu_backward(t, grad_out):
    return np.where(t > 0.0, grad_out, 0.0)


def clip01(t):
    return np.clip(t, 0.0, 1.0)


@dataclass
class AdamState:
    """Adaptive-moment optimizer state over a flat list of parameter arrays."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def optimizer_step(params, grads, state):
    """One Adam update. Returns (new_params, state); state is updated in place.

    Raises on non-finite gradients rather than propagating NaNs into weights.
    """
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {i}")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1**t)
        v_hat = state.v[i] / (1 - state.beta2**t)
        out.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state
