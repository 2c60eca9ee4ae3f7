"""CFEB container I/O and cosine-similarity computation.

The on-disk layout is little-endian and fixed width:

    magic "CFEB" | version u32 | flags u32 | N P K C H L_all (u64 each)
    labels N*u32
    image embeddings N*K f32 | patch embeddings N*P*K f32
    high concept embeddings H*K f32 | low attribute embeddings L_all*K f32
    [example ground truth N*L_all u8]    (flags bit 0)
    [class ground truth C*L_all u8]      (flags bit 1)

Embeddings are stored in 32-bit floats and promoted to 64-bit on load. Rows
are expected unit-norm; small drift (under 1e-2) is re-normalized, anything
larger is rejected as corrupt.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptDataError, DegenerateInputError, DimensionError, FormatError
from .numerics import as_f64

MAGIC = b"CFEB"
VERSION = 1
FLAG_EXAMPLE_GT = 1
FLAG_CLASS_GT = 2

_HEADER = struct.Struct("<4sII6Q")

# norm-deviation policy for loaded rows
_NORM_OK = 1e-5      # at or under: keep values as stored
_NORM_REJECT = 1e-2  # at or over: corrupt data


@dataclass
class DatasetHeader:
    version: int
    flags: int
    n_examples: int
    n_patches: int
    embed_dim: int
    n_classes: int
    n_high: int
    n_low: int

    @property
    def has_example_gt(self) -> bool:
        return bool(self.flags & FLAG_EXAMPLE_GT)

    @property
    def has_class_gt(self) -> bool:
        return bool(self.flags & FLAG_CLASS_GT)

    @property
    def expected_file_size(self) -> int:
        n, p, k = self.n_examples, self.n_patches, self.embed_dim
        size = _HEADER.size + 4 * n
        size += 4 * (n * k + n * p * k + self.n_high * k + self.n_low * k)
        if self.has_example_gt:
            size += n * self.n_low
        if self.has_class_gt:
            size += self.n_classes * self.n_low
        return size


@dataclass
class EmbeddingDataset:
    """Unit-normalized image and patch embeddings with labels.

    Ground-truth attribute indicators are optional; when absent the
    evaluator simply skips the metrics that need them.
    """

    image_embeddings: np.ndarray          # N x K
    patch_embeddings: np.ndarray          # N x P x K
    labels: np.ndarray                    # N, int64
    n_classes: int
    gt_example: np.ndarray | None = None  # N x L_all, uint8 in {0,1}
    gt_class: np.ndarray | None = None    # C x L_all, uint8 in {0,1}

    @property
    def n_examples(self) -> int:
        return int(self.image_embeddings.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.image_embeddings.shape[1])

    @property
    def n_patches(self) -> int:
        return int(self.patch_embeddings.shape[1])


@dataclass
class ConceptEmbeddings:
    high: np.ndarray  # H x K
    low: np.ndarray   # L_all x K

    @property
    def n_high(self) -> int:
        return int(self.high.shape[0])

    @property
    def n_low(self) -> int:
        return int(self.low.shape[0])


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction."""
    v = as_f64(v)
    norm = float(np.linalg.norm(v))
    if norm <= 1e-12:
        raise DegenerateInputError(
            f"cannot normalize a near-zero vector (norm {norm:.3g})"
        )
    return v / norm


def _checked_rows(arr: np.ndarray, describe) -> np.ndarray:
    """Enforce the unit-norm policy on every row of a 2-d array.

    describe(i) names the offending row in error messages.
    """
    norms = np.linalg.norm(arr, axis=1)
    dev = np.abs(norms - 1.0)
    bad = dev >= _NORM_REJECT
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CorruptDataError(
            f"{describe(i)} has norm {norms[i]:.6g}, too far from unit length"
        )
    fix = dev > _NORM_OK
    if np.any(fix):
        arr = arr.copy()
        arr[fix] /= norms[fix, None]
    return arr


def read_header(path) -> DatasetHeader:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, flags, n, p, k, c, h, l_all = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    return DatasetHeader(version, flags, n, p, k, c, h, l_all)


def load_dataset(path) -> tuple[EmbeddingDataset, ConceptEmbeddings]:
    """Read a CFEB file into 64-bit arrays, validating every invariant."""
    path = Path(path)
    header = read_header(path)
    raw = path.read_bytes()
    if len(raw) != header.expected_file_size:
        raise FormatError(
            f"{path}: expected {header.expected_file_size} bytes for the declared "
            f"header, found {len(raw)}"
        )
    n, p, k = header.n_examples, header.n_patches, header.embed_dim
    c, h, l_all = header.n_classes, header.n_high, header.n_low

    offset = _HEADER.size

    def take(dtype, count, shape):
        nonlocal offset
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr.reshape(shape)

    labels = take("<u4", n, (n,)).astype(np.int64)
    if labels.size and labels.max() >= c:
        i = int(np.argmax(labels >= c))
        raise CorruptDataError(
            f"{path}: label {labels[i]} at example {i} is outside {c} classes"
        )

    image = take("<f4", n * k, (n, k)).astype(np.float64)
    patches = take("<f4", n * p * k, (n * p, k)).astype(np.float64)
    high = take("<f4", h * k, (h, k)).astype(np.float64)
    low = take("<f4", l_all * k, (l_all, k)).astype(np.float64)

    image = _checked_rows(image, lambda i: f"image embedding row {i}")
    patches = _checked_rows(
        patches, lambda i: f"patch embedding row (example {i // p}, patch {i % p})"
    ).reshape(n, p, k)
    high = _checked_rows(high, lambda i: f"high-level concept embedding row {i}")
    low = _checked_rows(low, lambda i: f"low-level attribute embedding row {i}")

    gt_example = gt_class = None
    if header.has_example_gt:
        gt_example = take(np.uint8, n * l_all, (n, l_all))
        if gt_example.size and gt_example.max() > 1:
            raise CorruptDataError(f"{path}: example ground truth contains non-binary values")
        gt_example = gt_example.copy()
    if header.has_class_gt:
        gt_class = take(np.uint8, c * l_all, (c, l_all))
        if gt_class.size and gt_class.max() > 1:
            raise CorruptDataError(f"{path}: class ground truth contains non-binary values")
        gt_class = gt_class.copy()

    dataset = EmbeddingDataset(image, patches, labels, c, gt_example, gt_class)
    concepts = ConceptEmbeddings(high, low)
    return dataset, concepts


def write_dataset(path, dataset: EmbeddingDataset, concepts: ConceptEmbeddings) -> None:
    """Write a CFEB file (32-bit payloads, see module docstring for layout)."""
    path = Path(path)
    n, p, k = dataset.n_examples, dataset.n_patches, dataset.embed_dim
    h, l_all = concepts.n_high, concepts.n_low
    if concepts.high.shape[1] != k or concepts.low.shape[1] != k:
        raise DimensionError(
            f"concept embedding width {concepts.high.shape[1]}/{concepts.low.shape[1]} "
            f"does not match dataset embedding width {k}"
        )
    flags = 0
    if dataset.gt_example is not None:
        if dataset.gt_example.shape != (n, l_all):
            raise DimensionError(
                f"example ground truth shape {dataset.gt_example.shape} is not ({n}, {l_all})"
            )
        flags |= FLAG_EXAMPLE_GT
    if dataset.gt_class is not None:
        if dataset.gt_class.shape != (dataset.n_classes, l_all):
            raise DimensionError(
                f"class ground truth shape {dataset.gt_class.shape} is not "
                f"({dataset.n_classes}, {l_all})"
            )
        flags |= FLAG_CLASS_GT

    parts = [
        _HEADER.pack(MAGIC, VERSION, flags, n, p, k, dataset.n_classes, h, l_all),
        np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes(),
        np.ascontiguousarray(dataset.image_embeddings, dtype="<f4").tobytes(),
        np.ascontiguousarray(dataset.patch_embeddings, dtype="<f4").tobytes(),
        np.ascontiguousarray(concepts.high, dtype="<f4").tobytes(),
        np.ascontiguousarray(concepts.low, dtype="<f4").tobytes(),
    ]
    if dataset.gt_example is not None:
        parts.append(np.ascontiguousarray(dataset.gt_example, dtype=np.uint8).tobytes())
    if dataset.gt_class is not None:
        parts.append(np.ascontiguousarray(dataset.gt_class, dtype=np.uint8).tobytes())
    path.write_bytes(b"".join(parts))


def similarity_high(dataset: EmbeddingDataset, concepts: ConceptEmbeddings) -> np.ndarray:
    """Cosine similarity between every image and every high-level concept, N x H."""
    if dataset.embed_dim != concepts.high.shape[1]:
        raise DimensionError(
            f"image embedding width {dataset.embed_dim} does not match concept "
            f"embedding width {concepts.high.shape[1]}"
        )
    sims = dataset.image_embeddings @ concepts.high.T
    # rows are unit within tolerance; pin rounding spill back into [-1, 1]
    return np.clip(sims, -1.0, 1.0)


def similarity_low(dataset: EmbeddingDataset, concepts: ConceptEmbeddings) -> np.ndarray:
    """Cosine similarity between every patch and every low-level attribute, N x P x L_all."""
    if dataset.embed_dim != concepts.low.shape[1]:
        raise DimensionError(
            f"patch embedding width {dataset.embed_dim} does not match attribute "
            f"embedding width {concepts.low.shape[1]}"
        )
    n, p, k = dataset.patch_embeddings.shape
    flat = dataset.patch_embeddings.reshape(n * p, k) @ concepts.low.T
    return np.clip(flat.reshape(n, p, -1), -1.0, 1.0)
