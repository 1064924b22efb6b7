"""SDT1 tensor files and PNG rendering of [-1, 1] grids."""

import io
import os

import numpy as np
from PIL import Image

from constants import TENSOR_MAGIC
from errors import DimensionError, FormatError


def tensor_bytes(array):
    """magic 'SDT1', u32 ndim, u32 dims, then row-major f32 little-endian values."""
    array = np.asarray(array)
    header = np.asarray([array.ndim, *array.shape], dtype="<u4").tobytes()
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    return TENSOR_MAGIC + header + payload


def parse_tensor_bytes(raw, source="<bytes>"):
    if raw[:4] != TENSOR_MAGIC:
        raise FormatError(f"{source}: missing SDT1 magic")
    if len(raw) < 8:
        raise FormatError(f"{source}: truncated header")
    ndim = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    header_end = 8 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{source}: truncated dims")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype="<u4", count=ndim, offset=8))
    expected = header_end + 4 * int(np.prod(dims, dtype=np.int64))
    if len(raw) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for shape {dims}, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=header_end)
    return values.astype(np.float64).reshape(dims)


def write_tensor(path, array):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(tensor_bytes(array))


def read_tensor(path):
    with open(path, "rb") as f:
        return parse_tensor_bytes(f.read(), source=path)


def to_uint8(z):
    """[-1, 1] -> 0..255, clamped, rounding halves away from zero."""
    scaled = (np.clip(z, -1.0, 1.0) + 1.0) / 2.0 * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def render_png(z):
    """8-bit PNG bytes of an H x W x D grid with D in {1, 3}."""
    if z.ndim != 3 or z.shape[2] not in (1, 3):
        raise DimensionError(
            f"Can only render 1 or 3 channels, got shape {z.shape}; "
            "select channels before rendering"
        )
    pixels = to_uint8(z)
    image = Image.fromarray(pixels[:, :, 0] if z.shape[2] == 1 else pixels)
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def save_png(path, z):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(render_png(z))
