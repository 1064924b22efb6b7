"""Perceptual similarity losses with closed-form input gradients.

StyleLoss compares Gram matrices of raw channels. FeatureLoss compares the
activations of a fixed, seeded bank of random convolution layers and stands
in for a learned perceptual metric.
"""

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from constants import DEFAULT_BANK_CHANNELS, DEFAULT_BANK_KERNEL, DEFAULT_BANK_SEED
from errors import DimensionError, check_same_shape

ACTIVATIONS = ("tanh", "identity")


class PerceptualLoss(Protocol):
    scale: float

    def value(self, a, b):
        """Nonnegative distance, symmetric in (a, b)."""

    def grad_a(self, a, b):
        """d value / d a, same shape as a."""


def _check_grid_pair(a, b):
    check_same_shape(a, b, "loss inputs")
    if a.ndim != 3:
        raise DimensionError(f"Loss inputs must be H x W x D grids, got shape {a.shape}")


# --- Style (Gram) loss ---
def _features(x):
    """D x N channel matrix of an H x W x D grid."""
    return x.reshape(-1, x.shape[2]).T


def _gram(F):
    return F @ F.T / F.shape[1]


def style_loss(a, b, scale=1.0):
    _check_grid_pair(a, b)
    diff = _gram(_features(a)) - _gram(_features(b))
    return float(scale * np.mean(diff * diff))


def style_grad(a, b, scale=1.0):
    _check_grid_pair(a, b)
    Fa = _features(a)
    diff = _gram(Fa) - _gram(_features(b))
    D, N = Fa.shape
    grad_F = scale * (4.0 / (N * D * D)) * (diff @ Fa)
    return grad_F.T.reshape(a.shape)


@dataclass(frozen=True)
class StyleLoss:
    scale: float = 1.0
    kind: str = "style"

    def value(self, a, b):
        return style_loss(a, b, self.scale)

    def grad_a(self, a, b):
        return style_grad(a, b, self.scale)


# --- Filter bank ---
@dataclass(frozen=True)
class LayerSpec:
    kernel: np.ndarray  # (k, k, C_in, C_out), odd k
    activation: str = "tanh"
    pool: bool = True

    @property
    def in_channels(self):
        return self.kernel.shape[2]


@dataclass(frozen=True)
class FilterBank:
    layers: tuple
    weights: tuple  # lambda_l per layer
    seed: int = DEFAULT_BANK_SEED

    def __post_init__(self):
        if len(self.layers) != len(self.weights):
            raise DimensionError("One lambda weight per filter-bank layer is required")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.kernel.shape[3] != nxt.kernel.shape[2]:
                raise DimensionError("Filter-bank layer channels do not chain")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"Unknown activation '{layer.activation}'")
            if layer.kernel.shape[0] % 2 == 0 or layer.kernel.shape[0] != layer.kernel.shape[1]:
                raise DimensionError("Kernels must be square with odd size")
            layer.kernel.setflags(write=False)

    @property
    def in_channels(self):
        return self.layers[0].in_channels


def make_filter_bank(in_channels, channels=DEFAULT_BANK_CHANNELS, kernel=DEFAULT_BANK_KERNEL,
                     seed=DEFAULT_BANK_SEED, weights=None):
    """Seeded random tanh conv layers, each followed by 2x2 average pooling."""
    rng = np.random.default_rng(seed)
    layers = []
    c_in = in_channels
    for c_out in channels:
        k = rng.standard_normal((kernel, kernel, c_in, c_out)) / np.sqrt(kernel * kernel * c_in)
        layers.append(LayerSpec(kernel=k, activation="tanh", pool=True))
        c_in = c_out
    if weights is None:
        weights = (1.0,) * len(layers)
    return FilterBank(layers=tuple(layers), weights=tuple(float(w) for w in weights), seed=seed)


def identity_filter_bank(channels):
    """Single 1x1 unit-kernel layer; the feature loss becomes per-pixel MSE."""
    k = np.eye(channels, dtype=np.float64).reshape(1, 1, channels, channels)
    return FilterBank(layers=(LayerSpec(kernel=k, activation="identity", pool=False),), weights=(1.0,))


def _conv_same(x, kernel):
    k = kernel.shape[0]
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    patches = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, C_in, k, k)
    return np.einsum("hwcij,ijco->hwo", patches, kernel)


def _conv_same_backward(g, kernel, in_shape):
    k = kernel.shape[0]
    p = k // 2
    H, W, _ = in_shape
    gxp = np.zeros((H + 2 * p, W + 2 * p, in_shape[2]))
    for i in range(k):
        for j in range(k):
            gxp[i:i + H, j:j + W, :] += g @ kernel[i, j].T
    return gxp[p:p + H, p:p + W, :]


def _pool2(x):
    H2, W2 = x.shape[0] // 2, x.shape[1] // 2
    if H2 == 0 or W2 == 0:
        raise DimensionError(f"Grid {x.shape[:2]} too small for another 2x2 pooling stage")
    return x[: 2 * H2, : 2 * W2].reshape(H2, 2, W2, 2, x.shape[2]).mean(axis=(1, 3))


def _pool2_backward(g, in_shape):
    gx = np.zeros(in_shape)
    H2, W2 = g.shape[0], g.shape[1]
    gx[: 2 * H2, : 2 * W2] = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) / 4.0
    return gx


def bank_features(bank, x):
    """Per-layer activations f_l(x) plus what the backward pass needs."""
    if x.shape[2] != bank.in_channels:
        raise DimensionError(f"Filter bank expects {bank.in_channels} channels, got {x.shape[2]}")
    feats, inputs = [], []
    h = x
    last = len(bank.layers) - 1
    for l, layer in enumerate(bank.layers):
        inputs.append(h)
        z = _conv_same(h, layer.kernel)
        f = np.tanh(z) if layer.activation == "tanh" else z
        feats.append(f)
        if l < last:
            h = _pool2(f) if layer.pool else f
    return feats, inputs


def feature_mse_loss(bank, a, b, scale=1.0):
    _check_grid_pair(a, b)
    fa, _ = bank_features(bank, a)
    fb, _ = bank_features(bank, b)
    total = sum(lam * np.mean((x - y) ** 2) for lam, x, y in zip(bank.weights, fa, fb))
    return float(scale * total)


def feature_mse_grad(bank, a, b, scale=1.0):
    _check_grid_pair(a, b)
    fa, inputs = bank_features(bank, a)
    fb, _ = bank_features(bank, b)
    g_next = None
    for l in range(len(bank.layers) - 1, -1, -1):
        layer = bank.layers[l]
        g = scale * bank.weights[l] * 2.0 * (fa[l] - fb[l]) / fa[l].size
        if g_next is not None:
            g = g + (_pool2_backward(g_next, fa[l].shape) if layer.pool else g_next)
        if layer.activation == "tanh":
            g = g * (1.0 - fa[l] * fa[l])
        g_next = _conv_same_backward(g, layer.kernel, inputs[l].shape)
    return g_next


@dataclass(frozen=True)
class FeatureLoss:
    bank: FilterBank
    scale: float = 1.0
    kind: str = "feature"

    def value(self, a, b):
        return feature_mse_loss(self.bank, a, b, self.scale)

    def grad_a(self, a, b):
        return feature_mse_grad(self.bank, a, b, self.scale)


def make_loss(kind, channels, scale=1.0, bank_seed=DEFAULT_BANK_SEED,
              bank_channels=DEFAULT_BANK_CHANNELS, bank_kernel=DEFAULT_BANK_KERNEL,
              bank_weights=None):
    """Builds a loss by name ('style' or 'feature')."""
    if kind == "style":
        return StyleLoss(scale=scale)
    if kind == "feature":
        bank = make_filter_bank(channels, bank_channels, bank_kernel, bank_seed, bank_weights)
        return FeatureLoss(bank=bank, scale=scale)
    raise ValueError(f"Unknown loss '{kind}' (expected 'style' or 'feature')")
