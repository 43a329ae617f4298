"""Binary PPM (P6) rendering of signed feature vectors.

Positive values go to the blue channel and negative values to red, both
scaled by the largest magnitude; green stays 0.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class RenderSpec:
    width: int = 28
    height: int = 28


def feature_pixels(vector, spec=RenderSpec()):
    """``(height, width, 3)`` uint8 array for a length ``width*height`` vector."""
    v = np.asarray(vector, dtype=np.float64).ravel()
    if v.size != spec.width * spec.height:
        raise DimensionError(f"vector has {v.size} entries, image is {spec.width}x{spec.height}")
    rgb = np.zeros((v.size, 3), dtype=np.uint8)
    peak = np.max(np.abs(v)) if v.size else 0.0
    if peak > 0.0:
        # round half up, not numpy's half-to-even
        rgb[:, 2] = np.floor(255.0 * np.maximum(v, 0.0) / peak + 0.5).astype(np.uint8)
        rgb[:, 0] = np.floor(255.0 * np.maximum(-v, 0.0) / peak + 0.5).astype(np.uint8)
    return rgb.reshape(spec.height, spec.width, 3)


def ppm_bytes(pixels):
    height, width = pixels.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def render_feature(vector, spec, path):
    data = ppm_bytes(feature_pixels(vector, spec))
    Path(path).write_bytes(data)
    return data


def read_ppm(path_or_bytes):
    """Parse a P6 file written by :func:`ppm_bytes` into ``(height, width, 3)``."""
    data = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError("not a binary P6 PPM")
    width, height = (int(t) for t in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PPM is supported")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width, 3)
