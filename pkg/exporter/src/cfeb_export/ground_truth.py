"""Ground-truth attribute ingestion from sparse CSV triples.

Both files share one shape: `row_id, attribute_id, value` with value in
{0, 1}. Example-level files key rows by position in the job's image list;
class-level files key them by label. Unlisted pairs default to 0. A header
line is tolerated.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ExportError


def read_indicator_csv(path, n_rows: int, n_attrs: int, kind: str) -> np.ndarray:
    path = Path(path)
    out = np.zeros((n_rows, n_attrs), dtype=np.uint8)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot read {kind} ground truth {path}: {exc}") from exc
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or not row[0].strip():
            continue
        if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
            continue  # header
        if len(row) < 3:
            raise ExportError(
                f"{path}:{lineno}: expected 'id, attribute, value', got {row!r}"
            )
        try:
            rid, attr, value = int(row[0]), int(row[1]), int(row[2])
        except ValueError as exc:
            raise ExportError(f"{path}:{lineno}: non-integer field ({exc})") from exc
        if not 0 <= rid < n_rows:
            raise ExportError(
                f"{path}:{lineno}: {kind} id {rid} outside 0..{n_rows - 1}"
            )
        if not 0 <= attr < n_attrs:
            raise ExportError(
                f"{path}:{lineno}: attribute {attr} outside 0..{n_attrs - 1}"
            )
        if value not in (0, 1):
            raise ExportError(f"{path}:{lineno}: value must be 0 or 1, got {value}")
        out[rid, attr] = value
    return out
