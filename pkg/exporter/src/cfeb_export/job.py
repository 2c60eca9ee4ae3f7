"""Export-job description: what to encode, with which backbone, written where.

Jobs usually arrive as a JSON file; relative paths inside it are resolved
against the file's own directory so a job folder can be moved around whole.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import JobError

DEFAULT_BACKBONE = "clip-vit-b16"


@dataclass
class ImageItem:
    path: Path
    label: int


@dataclass
class ExportJob:
    images: list[ImageItem]
    patches: int
    high: list[str]                    # coarse concept names
    low: list[str]                     # attribute names
    membership: list[list[int]]        # attribute indices owned per concept
    out_data: Path
    out_manifest: Path
    backbone: str = DEFAULT_BACKBONE
    classes: int | None = None         # default: max label + 1
    strict: bool = False               # fail instead of skipping bad images
    batch_size: int = 32
    gt_example_csv: Path | None = None
    gt_class_csv: Path | None = None

    @property
    def n_classes(self) -> int:
        if self.classes is not None:
            return self.classes
        return max(item.label for item in self.images) + 1

    def validate(self) -> None:
        if not self.images:
            raise JobError("job lists no images")
        if self.patches < 1 or math.isqrt(self.patches) ** 2 != self.patches:
            raise JobError(
                f"patches must be a perfect square (grid crops), got {self.patches}"
            )
        if not self.high or not self.low:
            raise JobError("both concept lists must be nonempty")
        for item in self.images:
            if item.label < 0:
                raise JobError(f"negative label {item.label} for {item.path}")
        if self.classes is not None:
            worst = max(item.label for item in self.images)
            if self.classes <= worst:
                raise JobError(
                    f"classes = {self.classes} but labels reach {worst}"
                )
        if len(self.membership) != len(self.high):
            raise JobError(
                f"{len(self.high)} concepts but {len(self.membership)} membership rows"
            )
        covered = set()
        for h, attrs in enumerate(self.membership):
            if not attrs:
                raise JobError(f"concept {self.high[h]!r} owns no attributes")
            for l in attrs:
                if not 0 <= l < len(self.low):
                    raise JobError(
                        f"concept {self.high[h]!r} references attribute {l}, "
                        f"valid range is 0..{len(self.low) - 1}"
                    )
                covered.add(l)
        missing = sorted(set(range(len(self.low))) - covered)
        if missing:
            raise JobError(f"attributes {missing} are owned by no concept")
        if self.batch_size < 1:
            raise JobError(f"batch_size must be positive, got {self.batch_size}")


def _require(doc: dict, key: str):
    if key not in doc:
        raise JobError(f"job is missing the {key!r} key")
    return doc[key]


def load_job(path) -> ExportJob:
    """Parse a job JSON file, resolving relative paths against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise JobError(f"cannot read job file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise JobError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise JobError(f"{path}: job must be a JSON object")

    base = path.parent

    def resolve(p) -> Path:
        p = Path(str(p))
        return p if p.is_absolute() else base / p

    images = []
    for i, entry in enumerate(_require(doc, "images")):
        if not isinstance(entry, dict) or "path" not in entry or "label" not in entry:
            raise JobError(f"{path}: image entry {i} needs 'path' and 'label'")
        images.append(ImageItem(resolve(entry["path"]), int(entry["label"])))

    output = _require(doc, "output")
    if not isinstance(output, dict) or "data" not in output or "manifest" not in output:
        raise JobError(f"{path}: 'output' needs 'data' and 'manifest' paths")

    membership = [[int(l) for l in attrs]
                  for attrs in _require(doc, "membership")]
    job = ExportJob(
        images=images,
        patches=int(_require(doc, "patches")),
        high=[str(s) for s in _require(doc, "high_concepts")],
        low=[str(s) for s in _require(doc, "low_concepts")],
        membership=membership,
        out_data=resolve(output["data"]),
        out_manifest=resolve(output["manifest"]),
        backbone=str(doc.get("backbone", DEFAULT_BACKBONE)),
        classes=int(doc["classes"]) if "classes" in doc else None,
        strict=bool(doc.get("strict", False)),
        batch_size=int(doc.get("batch_size", 32)),
        gt_example_csv=resolve(doc["example_ground_truth"])
        if "example_ground_truth" in doc else None,
        gt_class_csv=resolve(doc["class_ground_truth"])
        if "class_ground_truth" in doc else None,
    )
    job.validate()
    return job
