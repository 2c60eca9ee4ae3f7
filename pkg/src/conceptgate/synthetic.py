"""Planted synthetic datasets for exercising the engine end to end.

Each class c gets one high-level concept direction (orthonormal across
classes) and a private attribute subspace holding its block of attribute
directions, so attributes of different classes are mutually orthogonal. An
image of class c embeds near concept c; every patch embeds near one
attribute drawn from the class's block. Ground-truth indicator blocks
record exactly what was planted, so attribute-recovery metrics have a
known target.

Run as a module to write the CFEB file and manifest:

    python -m conceptgate.synthetic --out data/ --examples 2000 --classes 10
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .embeddings import ConceptEmbeddings, EmbeddingDataset, write_dataset
from .errors import ParameterError
from .hierarchy import ConceptHierarchy, build_general, save_manifest


def _spread_directions(count: int, dim: int,
                       gen: np.random.Generator) -> np.ndarray:
    """Unit rows spread as far apart as the dimension allows."""
    if count == 1:
        return np.ones((1, 1))
    if count <= dim + 1:
        # regular simplex vertices: pairwise inner product -1/(count-1)
        centered = np.eye(count) - np.full((count, count), 1.0 / count)
        q, _ = np.linalg.qr(centered)
        flat = centered @ q[:, :count - 1]
        return flat / np.linalg.norm(flat, axis=1, keepdims=True)
    dirs = gen.normal(size=(count, dim))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def generate(n_examples: int = 2000, n_classes: int = 10, embed_dim: int = 32,
             arity: int = 4, patches: int = 4, seed: int = 0,
             noise: float = 0.1, with_ground_truth: bool = True
             ) -> tuple[EmbeddingDataset, ConceptEmbeddings, ConceptHierarchy]:
    """Build a planted dataset with one high-level concept per class."""
    if embed_dim < n_classes:
        raise ParameterError(
            f"embed_dim must be at least n_classes for orthonormal concept "
            f"directions, got {embed_dim} < {n_classes}"
        )
    if arity < 1 or patches < 1 or n_examples < 1:
        raise ParameterError("arity, patches and n_examples must be positive")
    if embed_dim < n_classes * 2 and arity > 1:
        raise ParameterError(
            "embed_dim must give every class at least a two-dimensional "
            f"attribute subspace, got {embed_dim} for {n_classes} classes"
        )
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), 977))))

    h_count = n_classes
    l_all = h_count * arity
    # orthonormal concept directions keep classes cleanly separable
    basis, _ = np.linalg.qr(gen.normal(size=(embed_dim, h_count)))
    high_dirs = basis.T  # H x K, unit rows

    # each class owns a private coordinate block and its attribute directions
    # form a regular simplex inside it, so attributes of different classes are
    # exactly orthogonal; cross-class patch similarity is then pure zero-mean
    # noise instead of a fixed signature the classifier could exploit
    sub = embed_dim // h_count
    local = _spread_directions(arity, sub, gen)
    low_dirs = np.zeros((l_all, embed_dim))
    for h in range(h_count):
        low_dirs[h * arity:(h + 1) * arity, h * sub:h * sub + local.shape[1]] = local
    rot, _ = np.linalg.qr(gen.normal(size=(embed_dim, embed_dim)))
    low_dirs = low_dirs @ rot.T

    labels = np.arange(n_examples, dtype=np.int64) % n_classes
    # image noise lives in the complement of the concept span, so an image
    # is similar to its own concept and has exactly zero similarity to every
    # other one; off-class concepts carry no signal at all
    raw = gen.normal(size=(n_examples, embed_dim))
    raw -= (raw @ basis) @ basis.T
    image = high_dirs[labels] + noise * raw
    image /= np.linalg.norm(image, axis=1, keepdims=True)

    # every patch showcases one attribute of the example's class
    planted = labels[:, None] * arity + gen.integers(0, arity,
                                                     size=(n_examples, patches))
    patch = low_dirs[planted.reshape(-1)] \
        + noise * gen.normal(size=(n_examples * patches, embed_dim))
    patch /= np.linalg.norm(patch, axis=1, keepdims=True)
    patch = patch.reshape(n_examples, patches, embed_dim)

    gt_example = gt_class = None
    if with_ground_truth:
        gt_example = np.zeros((n_examples, l_all), dtype=np.uint8)
        rows = np.repeat(np.arange(n_examples), patches)
        gt_example[rows, planted.reshape(-1)] = 1
        gt_class = np.zeros((n_classes, l_all), dtype=np.uint8)
        for c in range(n_classes):
            gt_class[c, c * arity:(c + 1) * arity] = 1

    high_names = [f"concept_{h:02d}" for h in range(h_count)]
    attr_lists = [[f"concept_{h:02d}/attr_{j}" for j in range(arity)]
                  for h in range(h_count)]
    hierarchy = build_general(high_names, attr_lists)

    dataset = EmbeddingDataset(image, patch, labels, n_classes, gt_example, gt_class)
    concepts = ConceptEmbeddings(high_dirs, low_dirs)
    return dataset, concepts, hierarchy


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m conceptgate.synthetic",
        description="Write a planted synthetic dataset as data.cfeb + manifest.json.",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--examples", type=int, default=2000)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--embed-dim", type=int, default=32)
    parser.add_argument("--arity", type=int, default=4)
    parser.add_argument("--patches", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise", type=float, default=0.1)
    parser.add_argument("--no-ground-truth", action="store_true")
    args = parser.parse_args(argv)

    try:
        dataset, concepts, hierarchy = generate(
            args.examples, args.classes, args.embed_dim, args.arity,
            args.patches, args.seed, args.noise,
            with_ground_truth=not args.no_ground_truth)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        data_path = out / "data.cfeb"
        manifest_path = out / "manifest.json"
        write_dataset(data_path, dataset, concepts)
        save_manifest(hierarchy, manifest_path)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(data_path)
    print(manifest_path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
