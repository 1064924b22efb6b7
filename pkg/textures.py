"""Toy texture dataset: oriented two-colour sinusoidal gratings in [-1, 1]."""

from dataclasses import dataclass

import numpy as np

from constants import (
    DEFAULT_FREQUENCY_RANGE,
    DEFAULT_ORIENTATION_RANGE,
    DEFAULT_PALETTE,
    DEFAULT_TEXTURE_COUNT,
    DEFAULT_TEXTURE_SHAPE,
)
from errors import ConfigError


@dataclass(frozen=True)
class TextureDatasetSpec:
    count: int = DEFAULT_TEXTURE_COUNT
    shape: tuple = DEFAULT_TEXTURE_SHAPE
    orientation_range: tuple = DEFAULT_ORIENTATION_RANGE
    frequency_range: tuple = DEFAULT_FREQUENCY_RANGE  # cycles per grid width
    palette: tuple = DEFAULT_PALETTE                  # (colour_a, colour_b) pairs
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("dataset.count", f"must be >= 1, got {self.count}")
        if len(self.shape) != 3 or self.shape[2] not in (1, 3) or min(self.shape) < 1:
            raise ConfigError("dataset.shape", f"expected (H, W, 1|3), got {self.shape}")
        lo, hi = self.frequency_range
        if not 0.0 < lo <= hi:
            raise ConfigError("dataset.frequency_range", f"need 0 < low <= high, got {self.frequency_range}")
        if self.orientation_range[0] > self.orientation_range[1]:
            raise ConfigError("dataset.orientation_range", "low end exceeds high end")
        colours = np.asarray(self.palette, dtype=np.float64)
        if colours.ndim != 3 or colours.shape[1:] != (2, 3):
            raise ConfigError("dataset.palette", "expected a list of [colour_a, colour_b] RGB pairs")
        if np.any(np.abs(colours) > 1.0):
            raise ConfigError("dataset.palette", "colour values must lie in [-1, 1]")


def make_texture_dataset(spec):
    """Deterministic list of spec.count grids of spec.shape."""
    H, W, D = spec.shape
    rng = np.random.default_rng(spec.seed)
    colours = np.asarray(spec.palette, dtype=np.float64)
    if D == 1:
        colours = colours.mean(axis=2, keepdims=True)

    theta = rng.uniform(*spec.orientation_range, size=spec.count)
    freq = rng.uniform(*spec.frequency_range, size=spec.count)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=spec.count)
    which = rng.integers(0, colours.shape[0], size=spec.count)

    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    grids = []
    for k in range(spec.count):
        coord = (xx * np.cos(theta[k]) + yy * np.sin(theta[k])) / W
        wave = 0.5 * (1.0 + np.sin(2.0 * np.pi * freq[k] * coord + phase[k]))
        c_a, c_b = colours[which[k]]
        grid = wave[:, :, None] * c_a + (1.0 - wave[:, :, None]) * c_b
        grids.append(np.clip(grid, -1.0, 1.0))
    return grids
