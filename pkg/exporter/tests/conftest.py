import json

import pytest
from PIL import Image


@pytest.fixture
def make_png(tmp_path):
    """Write a small PNG with content that varies by stamp; returns its path."""

    def _make(name, size=(16, 16), color=(200, 30, 30), stamp=0):
        img = Image.new("RGB", size, color)
        px = img.load()
        px[stamp % size[0], (stamp * 7) % size[1]] = (stamp % 256, 255, 3)
        path = tmp_path / name
        img.save(path)
        return path

    return _make


@pytest.fixture
def write_job(tmp_path):
    """Dump a job dict as JSON next to the test images; returns its path."""

    def _write(doc, name="job.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        return path

    return _write
