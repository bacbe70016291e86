"""Loading and saving images as float arrays in [0, 1]."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import InvalidInputError


def load_image(path: str | os.PathLike, size: tuple[int, int] | None = None) -> np.ndarray:
    """Read a PNG/JPEG file into an (H, W, 3) float32 array in [0, 1].

    ``size`` is an optional (height, width) to resize to, with bicubic
    resampling. Alpha channels are dropped, grayscale is broadcast to RGB.
    """
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if size is not None:
            try:
                h, w = (int(size[0]), int(size[1])) if len(size) == 2 else (0, 0)
            except TypeError:
                raise InvalidInputError(
                    f"resize target must be a (height, width) pair, got {size!r}"
                ) from None
            if h <= 0 or w <= 0:
                raise InvalidInputError(f"resize target must be positive, got {size}")
            rgb = rgb.resize((w, h), resample=Image.Resampling.BICUBIC)
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(path: str | os.PathLike, pixels) -> None:
    """Write an (H, W, 3) array of [0, 1] floats as PNG or JPEG.

    Values are clipped to [0, 1] before quantization, so slightly
    out-of-range optimizer output survives the round trip.
    """
    arr = np.asarray(
        pixels.detach().cpu().numpy() if hasattr(pixels, "detach") else pixels,
        dtype=np.float64,
    )
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected an HxWx3 image, got shape {arr.shape}")
    quantized = np.clip(np.round(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)
