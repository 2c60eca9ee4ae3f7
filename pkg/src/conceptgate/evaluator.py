"""Deterministic inference and the metric suite.

Inference replaces sampling with the posterior mean: a concept is active
when its probability clears the threshold tau (strictly). Metrics cover
classification accuracy per level, indicator sparsity, agreement with
ground-truth attributes (asymmetric Jaccard and plain matching accuracy,
both per example and per class), per-class activation counts, and the
binned similarity/activation alignment profile.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discovery import posterior_probs, threshold_mean
from .embeddings import ConceptEmbeddings, EmbeddingDataset, similarity_high, similarity_low
from .errors import DimensionError, DomainError, ParameterError
from .hierarchy import ConceptHierarchy
from .model import MODES, ModelParams, forward_high, forward_low

BIN_WIDTH = 0.05
N_BINS = 40  # covers [-1, 1]


@dataclass
class InferenceResult:
    predictions_high: np.ndarray        # N
    predictions_low: np.ndarray         # N
    probs_high: np.ndarray | None       # N x H
    probs_low: np.ndarray | None        # N x P x L
    z_high: np.ndarray | None           # N x H hard indicators
    z_low: np.ndarray | None            # N x P x L hard, ungated
    z_combined: np.ndarray              # N x P x L hard, gated
    logits_high: np.ndarray
    logits_low: np.ndarray


@dataclass
class AlignmentBin:
    lo: float
    hi: float
    count: int
    active_fraction: float

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "count": self.count,
                "active_fraction": self.active_fraction}


@dataclass
class EvaluationReport:
    accuracy_high: float
    accuracy_low: float
    sparsity_high: float  # percent
    sparsity_low: float   # percent
    jaccard_example: float | None
    jaccard_class: float | None
    matching_accuracy_example: float | None
    matching_accuracy_class: float | None
    per_class_activation: np.ndarray  # C x L_all counts
    alignment_bins: dict[str, list[AlignmentBin]]  # keys "high", "low"

    def to_dict(self) -> dict:
        doc = {
            "accuracy_high": self.accuracy_high,
            "accuracy_low": self.accuracy_low,
            "sparsity_high": self.sparsity_high,
            "sparsity_low": self.sparsity_low,
        }
        for key in ("jaccard_example", "jaccard_class",
                    "matching_accuracy_example", "matching_accuracy_class"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        doc["per_class_activation"] = [
            [int(v) for v in row] for row in self.per_class_activation
        ]
        doc["alignment_bins"] = {
            level: [b.to_dict() for b in bins]
            for level, bins in self.alignment_bins.items()
        }
        return doc


def infer(dataset: EmbeddingDataset, concepts: ConceptEmbeddings,
          params: ModelParams, hierarchy: ConceptHierarchy, tau: float,
          mode: str = "joint") -> InferenceResult:
    """Deterministic forward pass with mean-thresholded indicators."""
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {tau}")
    n, p_count = dataset.n_examples, dataset.n_patches
    h_count, l_count = hierarchy.n_high, hierarchy.n_low
    s_h = similarity_high(dataset, concepts)
    s_l = similarity_low(dataset, concepts)

    probs_high = probs_low = z_low = None
    if mode == "no-discovery":
        z_high = np.ones((n, h_count))
        z_combined = np.ones((n, p_count, l_count))
    else:
        if mode in ("joint", "high-only"):
            probs_high = posterior_probs(dataset.image_embeddings, params.w_hs)
            z_high = threshold_mean(probs_high, tau)
        else:
            z_high = np.ones((n, h_count))  # no high level: nothing is masked
        flat = dataset.patch_embeddings.reshape(n * p_count, -1)
        probs_low = posterior_probs(flat, params.w_ls).reshape(n, p_count, l_count)
        z_low = threshold_mean(probs_low, tau)
        if mode == "low-only":
            z_combined = z_low
        else:
            gate = np.minimum(z_high @ hierarchy.membership.T, 1.0)
            z_combined = gate[:, None, :] * z_low

    logits_high = forward_high(s_h, z_high, params.w_hc)
    logits_low, _ = forward_low(s_l, z_combined, params.w_lc)
    # argmax takes the first maximum, so ties break to the lowest class index
    predictions_high = logits_high.argmax(axis=1)
    predictions_low = logits_low.argmax(axis=1)
    return InferenceResult(predictions_high, predictions_low, probs_high,
                           probs_low, z_high, z_low, z_combined,
                           logits_high, logits_low)


def _binary_pair(z, z_gt) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z)
    z_gt = np.asarray(z_gt)
    if z.ndim != 1 or z_gt.ndim != 1 or z.shape != z_gt.shape:
        raise DimensionError(
            f"indicator vectors must be 1-d and equally long, got shapes "
            f"{z.shape} and {z_gt.shape}"
        )
    for arr in (z, z_gt):
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise DomainError("indicator vectors must contain only 0 and 1")
    return z.astype(np.int64), z_gt.astype(np.int64)


def jaccard(z, z_gt) -> float:
    """Positive-set overlap M11 / (M11 + M10 + M01), ignoring joint absences.

    When both vectors are all-zero the ratio is 0/0; that counts as perfect
    agreement on absence, so 1.0.
    """
    z, z_gt = _binary_pair(z, z_gt)
    m11 = int(np.sum((z == 1) & (z_gt == 1)))
    m10 = int(np.sum((z == 1) & (z_gt == 0)))
    m01 = int(np.sum((z == 0) & (z_gt == 1)))
    denom = m11 + m10 + m01
    if denom == 0:
        return 1.0
    return m11 / denom


def matching_accuracy(z, z_gt) -> float:
    """Fraction of coordinates where the two indicator vectors agree."""
    z, z_gt = _binary_pair(z, z_gt)
    if z.size == 0:
        return 1.0
    return float(np.mean(z == z_gt))


def example_indicator_for_matching(z) -> np.ndarray:
    """Reduce patch-level indicators to per-example ones: active in any patch."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise DimensionError(f"expected indicators of shape (N, P, L), got {z.shape}")
    return z.max(axis=1)


def class_concept_summary(indicators, labels, n_classes: int
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Per-class activation counts and the class-active sets.

    counts[c, l] sums the indicator over every example of class c. An
    attribute is class-active when it is on in strictly more than 40% of the
    class's examples.
    """
    indicators = np.asarray(indicators)
    labels = np.asarray(labels, dtype=np.int64)
    if indicators.ndim != 2 or indicators.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"indicators shape {indicators.shape} does not match {labels.shape[0]} labels"
        )
    if indicators.size and not np.isin(indicators, (0, 1)).all():
        raise DomainError("indicators must be binary")
    counts = np.zeros((n_classes, indicators.shape[1]), dtype=np.int64)
    np.add.at(counts, labels, indicators.astype(np.int64))
    class_sizes = np.bincount(labels, minlength=n_classes)
    fraction = counts / np.maximum(class_sizes, 1)[:, None]
    class_active = (fraction > 0.4).astype(np.float64)
    return counts, class_active


def alignment_bins(similarities, indicators) -> list[AlignmentBin]:
    """Activation fraction per similarity bin of width 0.05 over [-1, 1].

    Bin b covers [-1 + 0.05 b, -1 + 0.05 (b + 1)); values sitting exactly on
    an edge go to the higher bin, and 1.0 closes the last bin. Empty bins
    are omitted.
    """
    sims = np.asarray(similarities, dtype=np.float64).reshape(-1)
    inds = np.asarray(indicators, dtype=np.float64).reshape(-1)
    if sims.shape != inds.shape:
        raise DimensionError(
            f"similarities size {sims.shape} does not match indicators size {inds.shape}"
        )
    if inds.size and not np.isin(inds, (0.0, 1.0)).all():
        raise DomainError("indicators must be binary")
    # the nudge keeps edge values (whose float form can land a hair low,
    # e.g. -0.9 + 1 = 0.09999...) in the higher bin
    idx = np.floor((sims + 1.0) / BIN_WIDTH + 1e-9).astype(np.int64)
    idx = np.clip(idx, 0, N_BINS - 1)
    counts = np.bincount(idx, minlength=N_BINS)
    active = np.bincount(idx, weights=inds, minlength=N_BINS)
    bins = []
    for b in range(N_BINS):
        if counts[b] == 0:
            continue
        lo = -1.0 + BIN_WIDTH * b
        bins.append(AlignmentBin(lo, lo + BIN_WIDTH, int(counts[b]),
                                 float(active[b] / counts[b])))
    return bins


def sparsity(indicators) -> float:
    """Mean percentage of active indicators per example (and per patch)."""
    indicators = np.asarray(indicators, dtype=np.float64)
    if indicators.size and not np.isin(indicators, (0.0, 1.0)).all():
        raise DomainError("indicators must be binary")
    return 100.0 * float(indicators.mean())


def build_report(dataset: EmbeddingDataset, concepts: ConceptEmbeddings,
                 hierarchy: ConceptHierarchy, result: InferenceResult
                 ) -> EvaluationReport:
    """Assemble the full metric suite for one inference pass."""
    labels = dataset.labels
    accuracy_high = float(np.mean(result.predictions_high == labels))
    accuracy_low = float(np.mean(result.predictions_low == labels))
    sparsity_high = sparsity(result.z_high)
    sparsity_low = sparsity(result.z_combined)

    per_example = example_indicator_for_matching(result.z_combined)
    counts, class_active = class_concept_summary(per_example, labels,
                                                 dataset.n_classes)

    jac_example = match_example = None
    if dataset.gt_example is not None:
        jac_example = float(np.mean([
            jaccard(per_example[i], dataset.gt_example[i])
            for i in range(dataset.n_examples)
        ]))
        match_example = float(np.mean([
            matching_accuracy(per_example[i], dataset.gt_example[i])
            for i in range(dataset.n_examples)
        ]))

    jac_class = match_class = None
    if dataset.gt_class is not None:
        jac_class = float(np.mean([
            jaccard(class_active[c], dataset.gt_class[c])
            for c in range(dataset.n_classes)
        ]))
        match_class = float(np.mean([
            matching_accuracy(class_active[c], dataset.gt_class[c])
            for c in range(dataset.n_classes)
        ]))

    bins = {
        "high": alignment_bins(similarity_high(dataset, concepts), result.z_high),
        "low": alignment_bins(similarity_low(dataset, concepts), result.z_combined),
    }
    return EvaluationReport(accuracy_high, accuracy_low, sparsity_high,
                            sparsity_low, jac_example, jac_class,
                            match_example, match_class, counts, bins)


def _fmt(x) -> str:
    return f"{x:.6g}"


def emit_report(report: EvaluationReport, out_dir) -> list[Path]:
    """Write report.json plus the CSV tables. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    written.append(path)

    path = out / "accuracy_sparsity.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "accuracy", "sparsity"])
        writer.writerow(["high", _fmt(report.accuracy_high), _fmt(report.sparsity_high)])
        writer.writerow(["low", _fmt(report.accuracy_low), _fmt(report.sparsity_low)])
    written.append(path)

    rows = []
    if report.matching_accuracy_example is not None:
        rows.append(["example", _fmt(report.matching_accuracy_example),
                     _fmt(report.jaccard_example)])
    if report.matching_accuracy_class is not None:
        rows.append(["class", _fmt(report.matching_accuracy_class),
                     _fmt(report.jaccard_class)])
    if rows:
        path = out / "matching_jaccard.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["granularity", "matching_accuracy", "jaccard"])
            writer.writerows(rows)
        written.append(path)

    written.append(write_alignment_csv(report.alignment_bins, out / "alignment_bins.csv"))
    written.append(write_activation_csv(report.per_class_activation,
                                        out / "per_class_activation.csv"))
    return written


def write_alignment_csv(bins_by_level: dict[str, list[AlignmentBin]], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "bin_low", "bin_high", "count", "active_fraction"])
        for level, bins in bins_by_level.items():
            for b in bins:
                writer.writerow([level, _fmt(b.lo), _fmt(b.hi), b.count,
                                 _fmt(b.active_fraction)])
    return path


def write_activation_csv(counts, path) -> Path:
    counts = np.asarray(counts)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + [f"attr_{l}" for l in range(counts.shape[1])])
        for c in range(counts.shape[0]):
            writer.writerow([c] + [int(v) for v in counts[c]])
    return path
