"""Export orchestration: read, crop, encode, normalize, write."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backbone import get_backbone
from .errors import ExportError, ImageReadError
from .ground_truth import read_indicator_csv
from .imaging import grid_crop, load_image
from .job import ExportJob
from .writer import write_cfeb, write_manifest


@dataclass
class ExportResult:
    data_path: Path
    manifest_path: Path
    n_exported: int
    embed_dim: int
    skipped: list[int]  # indices into the job's image list


def _warn_stderr(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _unit_checked(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms <= 1e-12):
        raise ExportError(f"backbone produced a zero {what} embedding")
    return rows / norms[:, None]


def _encode_batched(backbone, images: list[Image.Image], batch_size: int) -> np.ndarray:
    chunks = [
        backbone.encode_images(images[i:i + batch_size])
        for i in range(0, len(images), batch_size)
    ]
    return np.vstack(chunks)


def export(job: ExportJob, backbone=None, warn=_warn_stderr) -> ExportResult:
    """Run a full export job; returns where everything was written.

    A backbone instance can be passed directly (tests, pre-loaded models);
    otherwise the job's identifier is resolved. Unreadable or ungridable
    images are skipped with a warning unless the job is strict.
    """
    job.validate()
    if backbone is None:
        backbone = get_backbone(job.backbone)

    kept: list[int] = []
    skipped: list[int] = []
    whole_images: list[Image.Image] = []
    crops: list[Image.Image] = []
    for idx, item in enumerate(job.images):
        try:
            img = load_image(item.path)
            grid = grid_crop(img, job.patches)
        except ImageReadError as exc:
            if job.strict:
                raise
            warn(f"skipping image {idx}: {exc}")
            skipped.append(idx)
            continue
        kept.append(idx)
        whole_images.append(img)
        crops.extend(grid)
    if not kept:
        raise ExportError("every input image was skipped; nothing to export")

    n, p, k = len(kept), job.patches, backbone.embed_dim
    image_emb = _unit_checked(_encode_batched(backbone, whole_images,
                                              job.batch_size), "image")
    patch_emb = _unit_checked(_encode_batched(backbone, crops, job.batch_size),
                              "patch").reshape(n, p, k)
    high_emb = _unit_checked(backbone.encode_texts(job.high), "concept")
    low_emb = _unit_checked(backbone.encode_texts(job.low), "attribute")
    if image_emb.shape[1] != k or high_emb.shape[1] != k:
        raise ExportError(
            f"backbone emitted mismatched widths {image_emb.shape[1]} vs {k}"
        )

    labels = np.array([job.images[i].label for i in kept], dtype=np.uint32)
    n_classes = job.n_classes

    gt_example = gt_class = None
    if job.gt_example_csv is not None:
        # ids in the file index the original list; drop skipped rows
        full = read_indicator_csv(job.gt_example_csv, len(job.images),
                                  len(job.low), "example")
        gt_example = full[kept]
    if job.gt_class_csv is not None:
        gt_class = read_indicator_csv(job.gt_class_csv, n_classes,
                                      len(job.low), "class")

    write_cfeb(job.out_data, labels, image_emb, patch_emb, high_emb, low_emb,
               n_classes, gt_example, gt_class)
    write_manifest(job.out_manifest, job.high, job.low, job.membership)
    return ExportResult(Path(job.out_data), Path(job.out_manifest), n, k, skipped)
