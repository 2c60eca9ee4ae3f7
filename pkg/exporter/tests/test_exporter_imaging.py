"""Grid cropping and image loading."""

import numpy as np
import pytest
from PIL import Image

from cfeb_export.errors import ImageReadError
from cfeb_export.imaging import grid_crop, load_image


def _quadrant_image(w=10, h=10):
    """Four solid-color quadrants for order checks."""
    img = Image.new("RGB", (w, h))
    colors = [(255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0)]
    for r in range(2):
        for c in range(2):
            block = Image.new("RGB", (w // 2, h // 2), colors[r * 2 + c])
            img.paste(block, (c * (w // 2), r * (h // 2)))
    return img, colors


def test_grid_crop_row_major_order():
    img, colors = _quadrant_image()
    crops = grid_crop(img, 4)
    assert len(crops) == 4
    assert [c.getpixel((2, 2)) for c in crops] == colors
    assert all(c.size == (5, 5) for c in crops)


def test_grid_crop_tiles_exactly_when_not_divisible():
    img = Image.new("RGB", (7, 5))
    px = img.load()
    for x in range(7):
        for y in range(5):
            px[x, y] = (x * 30, y * 40, 7)
    crops = grid_crop(img, 4)
    # reassemble and compare pixel for pixel
    rebuilt = Image.new("RGB", (7, 5))
    rebuilt.paste(crops[0], (0, 0))
    rebuilt.paste(crops[1], (crops[0].width, 0))
    rebuilt.paste(crops[2], (0, crops[0].height))
    rebuilt.paste(crops[3], (crops[2].width, crops[0].height))
    assert np.array_equal(np.asarray(rebuilt), np.asarray(img))
    assert crops[0].size == (3, 2) and crops[3].size == (4, 3)


def test_grid_crop_single_patch_is_whole_image():
    img, _ = _quadrant_image()
    crops = grid_crop(img, 1)
    assert len(crops) == 1
    assert crops[0].size == img.size
    assert np.array_equal(np.asarray(crops[0]), np.asarray(img))


def test_grid_crop_nine_patches():
    img = Image.new("RGB", (9, 9), (1, 2, 3))
    crops = grid_crop(img, 9)
    assert len(crops) == 9
    assert all(c.size == (3, 3) for c in crops)


def test_grid_crop_rejects_non_square_count():
    img, _ = _quadrant_image()
    with pytest.raises(ImageReadError, match="perfect square"):
        grid_crop(img, 6)


def test_grid_crop_rejects_too_small_image():
    with pytest.raises(ImageReadError, match="too small"):
        grid_crop(Image.new("RGB", (1, 1)), 4)


def test_load_image_converts_to_rgb(make_png):
    path = make_png("gray.png")
    Image.open(path).convert("L").save(path)  # overwrite as grayscale
    assert load_image(path).mode == "RGB"


def test_load_image_missing_file(tmp_path):
    with pytest.raises(ImageReadError, match="cannot read"):
        load_image(tmp_path / "nope.png")


def test_load_image_not_an_image(tmp_path):
    path = tmp_path / "fake.png"
    path.write_text("just text")
    with pytest.raises(ImageReadError, match="cannot read"):
        load_image(path)
