"""8-bit grayscale PNG export of volume slices."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError
from .geometry import Volume

_AXES = {"x": 0, "y": 1, "z": 2}


def slice_image(v: Volume, axis: str = "z", index: int | None = None,
                window: tuple[float, float] | None = None) -> np.ndarray:
    """Windowed uint8 slice; ``index=None`` takes the middle slice.

    Pixels map linearly from ``[lo, hi]`` to ``[0, 255]`` with rounding and
    clipping. The image's rows run along the second remaining axis, so a
    ``z`` slice shows ``x`` horizontally and ``y`` vertically.
    """
    if axis not in _AXES:
        raise ConfigError(f"slice axis must be 'x', 'y' or 'z', got {axis!r}")
    a = _AXES[axis]
    n = v.dims[a]
    if index is None:
        index = n // 2
    if not 0 <= index < n:
        raise ConfigError(f"slice index {index} out of range [0, {n}) along {axis}")
    plane = np.take(v.values, index, axis=a)
    lo, hi = (float(plane.min()), float(plane.max())) if window is None else map(float, window)
    if not hi > lo:
        raise ConfigError(f"window needs max > min, got [{lo}, {hi}]")
    scaled = np.rint((plane - lo) / (hi - lo) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8).T


def export_png(v: Volume, path, axis: str = "z", index: int | None = None,
               window: tuple[float, float] | None = None) -> Path:
    path = Path(path)
    Image.fromarray(slice_image(v, axis, index, window)).save(path, format="PNG")
    return path
