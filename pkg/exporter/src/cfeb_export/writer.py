"""Writers for the engine's external formats.

CFEB layout (little-endian):

    magic "CFEB" | version u32 | flags u32 | N P K C H L_all (u64 each)
    labels N*u32
    image embeddings N*K f32 | patch embeddings N*P*K f32
    high concept embeddings H*K f32 | low attribute embeddings L_all*K f32
    [example ground truth N*L_all u8]    (flags bit 0)
    [class ground truth C*L_all u8]      (flags bit 1)

The manifest is a JSON object with the concept names, the layout tag, and
one list of owned attribute indices per concept.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ExportError

MAGIC = b"CFEB"
VERSION = 1
FLAG_EXAMPLE_GT = 1
FLAG_CLASS_GT = 2

_HEADER = struct.Struct("<4sII6Q")


def write_cfeb(path, labels, image, patches, high, low, n_classes: int,
               gt_example=None, gt_class=None) -> None:
    path = Path(path)
    image = np.asarray(image, dtype=np.float64)
    patches = np.asarray(patches, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    low = np.asarray(low, dtype=np.float64)
    n, k = image.shape
    p = patches.shape[1]
    if patches.shape != (n, p, k):
        raise ExportError(
            f"patch block shape {patches.shape} does not match {n} images "
            f"of width {k}"
        )
    if high.shape[1] != k or low.shape[1] != k:
        raise ExportError(
            f"text embedding width {high.shape[1]}/{low.shape[1]} does not "
            f"match image embedding width {k}"
        )
    h, l_all = high.shape[0], low.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ExportError(f"need one label per image, got shape {labels.shape}")

    flags = 0
    if gt_example is not None:
        gt_example = np.asarray(gt_example, dtype=np.uint8)
        if gt_example.shape != (n, l_all):
            raise ExportError(
                f"example ground truth shape {gt_example.shape} is not ({n}, {l_all})"
            )
        flags |= FLAG_EXAMPLE_GT
    if gt_class is not None:
        gt_class = np.asarray(gt_class, dtype=np.uint8)
        if gt_class.shape != (n_classes, l_all):
            raise ExportError(
                f"class ground truth shape {gt_class.shape} is not "
                f"({n_classes}, {l_all})"
            )
        flags |= FLAG_CLASS_GT

    parts = [
        _HEADER.pack(MAGIC, VERSION, flags, n, p, k, n_classes, h, l_all),
        np.ascontiguousarray(labels, dtype="<u4").tobytes(),
        np.ascontiguousarray(image, dtype="<f4").tobytes(),
        np.ascontiguousarray(patches, dtype="<f4").tobytes(),
        np.ascontiguousarray(high, dtype="<f4").tobytes(),
        np.ascontiguousarray(low, dtype="<f4").tobytes(),
    ]
    if gt_example is not None:
        parts.append(gt_example.tobytes())
    if gt_class is not None:
        parts.append(gt_class.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


def _layout(membership: list[list[int]], n_low: int) -> str:
    """general = equal-size contiguous private blocks, in order."""
    h = len(membership)
    if h == 0 or n_low % h:
        return "shared"
    arity = n_low // h
    for i, attrs in enumerate(membership):
        if list(attrs) != list(range(i * arity, (i + 1) * arity)):
            return "shared"
    return "general"


def write_manifest(path, high: list[str], low: list[str],
                   membership: list[list[int]]) -> None:
    doc = {
        "high": list(high),
        "low": list(low),
        "layout": _layout(membership, len(low)),
        "membership": [list(attrs) for attrs in membership],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
