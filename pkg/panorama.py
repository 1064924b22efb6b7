"""Window geometry over a horizontal panorama, crop/paste maps and averaging fusion."""

from dataclasses import dataclass

import numpy as np

from errors import DimensionError, GeometryError, RangeError


@dataclass(frozen=True)
class WindowLayout:
    H: int
    W: int
    D: int
    window_h: int
    window_w: int
    stride: int
    n_windows: int
    anchor_index: int

    @property
    def panorama_shape(self):
        return (self.H, self.W, self.D)

    @property
    def window_shape(self):
        return (self.window_h, self.window_w, self.D)

    def offset(self, i):
        if not 0 <= i < self.n_windows:
            raise RangeError(f"Window index {i} outside [0, {self.n_windows})")
        return i * self.stride

    def column_counts(self):
        """Number of windows covering each panorama column."""
        counts = np.zeros(self.W, dtype=np.int64)
        for i in range(self.n_windows):
            off = i * self.stride
            counts[off:off + self.window_w] += 1
        return counts

    @property
    def overlap_count(self):
        return np.broadcast_to(self.column_counts()[None, :], (self.H, self.W)).copy()

    def to_dict(self):
        return {
            "panorama": [self.H, self.W, self.D],
            "window": [self.window_h, self.window_w],
            "stride": self.stride,
            "n_windows": self.n_windows,
            "anchor_index": self.anchor_index,
        }


def make_layout(H_z, W_z, D, H_x, W_x, stride, anchor="center"):
    """Builds the tiling; non-divisible geometry is rejected rather than clamped."""
    if H_x != H_z:
        raise GeometryError(f"Window height {H_x} must equal panorama height {H_z}")
    if min(H_z, W_z, D, W_x) < 1:
        raise GeometryError("All panorama and window dims must be positive")
    if W_x > W_z:
        raise GeometryError(f"Window width {W_x} exceeds panorama width {W_z}")
    if stride < 1:
        raise GeometryError(f"Stride must be >= 1, got {stride}")
    if (W_z - W_x) % stride:
        raise GeometryError(
            f"(W_z - W_x) = {W_z - W_x} is not a multiple of stride {stride}"
        )
    n_windows = (W_z - W_x) // stride + 1
    if n_windows > 1 and stride > W_x:
        raise GeometryError(f"Stride {stride} > window width {W_x} leaves uncovered columns")

    if anchor == "center":
        anchor_index = n_windows // 2
    else:
        anchor_index = int(anchor)
        if not 0 <= anchor_index < n_windows:
            raise GeometryError(f"Anchor {anchor_index} outside [0, {n_windows})")

    return WindowLayout(
        H=H_z, W=W_z, D=D,
        window_h=H_x, window_w=W_x,
        stride=stride,
        n_windows=n_windows,
        anchor_index=anchor_index,
    )


def _check_panorama(z, layout):
    if z.shape != layout.panorama_shape:
        raise DimensionError(f"Panorama shape {z.shape} != layout {layout.panorama_shape}")


def _check_window(x, layout):
    if x.shape != layout.window_shape:
        raise DimensionError(f"Window shape {x.shape} != layout {layout.window_shape}")


def crop(z, layout, i):
    """T_{z->i}: the window_w-wide slice starting at column i * stride."""
    _check_panorama(z, layout)
    off = layout.offset(i)
    return z[:, off:off + layout.window_w, :].copy()


def paste(x, layout, i):
    """T_{i->z}: embeds window i into a zero panorama."""
    _check_window(x, layout)
    off = layout.offset(i)
    z = np.zeros(layout.panorama_shape, dtype=np.result_type(x, np.float64))
    z[:, off:off + layout.window_w, :] = x
    return z


def fuse_average(ws, layout):
    """Per-cell mean of all windows covering the cell.

    Accumulated as a running mean in window order, so cells whose windows
    agree come back bitwise unchanged.
    """
    if len(ws) != layout.n_windows:
        raise DimensionError(f"Got {len(ws)} windows for a {layout.n_windows}-window layout")
    z = np.zeros(layout.panorama_shape, dtype=np.float64)
    seen = np.zeros(layout.W, dtype=np.float64)
    for i, x in enumerate(ws):
        _check_window(x, layout)
        cols = slice(i * layout.stride, i * layout.stride + layout.window_w)
        seen[cols] += 1.0
        z[:, cols, :] += (x - z[:, cols, :]) / seen[cols][None, :, None]
    return z


def scatter(z, layout):
    """Crops every window of z, in window order."""
    _check_panorama(z, layout)
    return [crop(z, layout, i) for i in range(layout.n_windows)]
