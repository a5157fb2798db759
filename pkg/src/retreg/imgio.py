"""Image file loading and saving.

Thin wrappers around Pillow that normalize everything to 8-bit numpy
arrays: grayscale rasters come back as 2-D uint8, color as (rows, cols,
3) RGB uint8.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError


def load_image(path) -> np.ndarray:
    """Load an image file as uint8 grayscale or RGB.

    Palette and alpha images are converted to RGB; 16-bit and float
    grayscale are rescaled into 8 bits by Pillow's standard conversion.
    """
    try:
        with Image.open(path) as img:
            if img.mode in ("1", "L", "I", "I;16", "F"):
                converted = img.convert("L")
            elif img.mode == "RGB":
                converted = img
            else:
                converted = img.convert("RGB")
            arr = np.asarray(converted, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim not in (2, 3):
        raise InputError(f"unsupported image layout in {path}")
    return arr


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Collapse an RGB array to 8-bit luminance; grayscale passes through."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8:
        return np.asarray(Image.fromarray(arr).convert("L"), dtype=np.uint8)
    raise InputError("expected a uint8 grayscale or RGB array")


def save_png(path, image: np.ndarray):
    """Write a uint8 grayscale or RGB array as PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim not in (2, 3):
        raise InputError("expected a uint8 grayscale or RGB array")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def save_pbm(path, mask: np.ndarray):
    """Write a boolean mask as a 1-bit PBM file (true pixels black)."""
    arr = np.asarray(mask)
    if arr.dtype != np.bool_ or arr.ndim != 2:
        raise InputError("expected a 2-D boolean mask")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # PBM convention: 1 is black.  Pillow mode "1" stores 255 as white,
    # so invert before converting.
    Image.fromarray(np.where(arr, 0, 255).astype(np.uint8)).convert("1").save(
        path, format="PPM")
