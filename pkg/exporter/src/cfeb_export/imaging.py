"""Image loading and non-overlapping grid cropping."""

from __future__ import annotations

import math
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .errors import ImageReadError


def load_image(path) -> Image.Image:
    """Open an image as RGB; anything unreadable raises ImageReadError."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc


def grid_crop(image: Image.Image, patches: int) -> list[Image.Image]:
    """Split an image into a sqrt(P) x sqrt(P) grid of crops, row-major.

    Crops tile the image exactly: edge i sits at (i * extent) // side, so
    they never overlap and never leave pixels out, even when the image size
    is not divisible by the grid.
    """
    side = math.isqrt(patches)
    if side * side != patches:
        raise ImageReadError(f"patch count {patches} is not a perfect square")
    w, h = image.size
    if w < side or h < side:
        raise ImageReadError(
            f"image {w}x{h} is too small for a {side}x{side} grid"
        )
    xs = [(i * w) // side for i in range(side + 1)]
    ys = [(i * h) // side for i in range(side + 1)]
    crops = []
    for r in range(side):
        for c in range(side):
            crops.append(image.crop((xs[c], ys[r], xs[c + 1], ys[r + 1])))
    return crops
