"""Two-level concept vocabulary and the binary membership matrix linking it.

A hierarchy holds H high-level concept names, L_all low-level attribute
names, and a membership matrix B of shape (L_all, H) with B[l, h] = 1 when
attribute l belongs to concept h.

Two layouts are supported:
  general - every concept owns its own fixed-size block of attributes, so
            L_all = H * arity and each attribute has exactly one owner;
  shared  - attributes may belong to several concepts; B is arbitrary binary.
The general layout is just a block-structured special case of shared, and
all runtime math goes through B, so the two need no separate code paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import ConceptEmbeddings
from .errors import ArityError, CoverageError, FormatError, ValidationError

LAYOUTS = ("general", "shared")


@dataclass
class ConceptHierarchy:
    high_names: list[str]
    low_names: list[str]
    membership: np.ndarray       # L_all x H, float64 entries in {0, 1}
    layout: str
    per_concept_arity: int | None = None  # set for the general layout

    @property
    def n_high(self) -> int:
        return len(self.high_names)

    @property
    def n_low(self) -> int:
        return len(self.low_names)

    def attributes_of(self, h: int) -> list[int]:
        """Low indices owned by high concept h, ascending."""
        return [int(l) for l in np.flatnonzero(self.membership[:, h])]


def build_general(high_names, per_concept_attributes) -> ConceptHierarchy:
    """Hierarchy where concept h owns exactly the attributes in its own list.

    All lists must share one length (the arity); attribute l = h*arity + j
    is the j-th attribute of concept h.
    """
    high_names = list(high_names)
    lists = [list(a) for a in per_concept_attributes]
    if len(lists) != len(high_names):
        raise ArityError(
            f"{len(high_names)} concept names but {len(lists)} attribute lists"
        )
    if not lists:
        raise CoverageError("hierarchy needs at least one high-level concept")
    arity = len(lists[0])
    if arity == 0:
        raise CoverageError(f"high-level concept {high_names[0]!r} has no attributes")
    for name, attrs in zip(high_names, lists):
        if len(attrs) != arity:
            raise ArityError(
                f"attribute list for {name!r} has length {len(attrs)}, expected {arity}"
            )
    h_count = len(high_names)
    low_names = [a for attrs in lists for a in attrs]
    membership = np.zeros((h_count * arity, h_count))
    for h in range(h_count):
        membership[h * arity:(h + 1) * arity, h] = 1.0
    return ConceptHierarchy(high_names, low_names, membership, "general", arity)


def build_shared(high_names, low_names, class_to_attrs) -> ConceptHierarchy:
    """Hierarchy over a shared attribute pool.

    class_to_attrs maps each high-concept index to the low indices it owns;
    attributes may appear under several concepts.
    """
    high_names = list(high_names)
    low_names = list(low_names)
    h_count, l_count = len(high_names), len(low_names)
    membership = np.zeros((l_count, h_count))
    for h in class_to_attrs:
        if not 0 <= int(h) < h_count:
            raise IndexError(f"high-concept index {h} outside range 0..{h_count - 1}")
    for h in range(h_count):
        attrs = class_to_attrs.get(h)
        if not attrs:
            raise CoverageError(f"high-level concept {high_names[h]!r} has no attributes")
        for l in attrs:
            if not 0 <= int(l) < l_count:
                raise IndexError(
                    f"attribute index {l} for {high_names[h]!r} outside range 0..{l_count - 1}"
                )
            membership[int(l), h] = 1.0
    return ConceptHierarchy(high_names, low_names, membership, "shared")


def membership_map(hierarchy: ConceptHierarchy) -> list[list[int]]:
    """Per-high-concept lists of owned low indices (the manifest form of B)."""
    return [hierarchy.attributes_of(h) for h in range(hierarchy.n_high)]


def validate(hierarchy: ConceptHierarchy, concepts: ConceptEmbeddings) -> None:
    """Check hierarchy invariants and agreement with the concept embeddings."""
    h_count, l_count = hierarchy.n_high, hierarchy.n_low
    if hierarchy.layout not in LAYOUTS:
        raise ValidationError(f"unknown layout {hierarchy.layout!r}")
    if concepts.n_high != h_count:
        raise ValidationError(
            f"{h_count} high-level names but {concepts.n_high} high-level embedding rows"
        )
    if concepts.n_low != l_count:
        raise ValidationError(
            f"{l_count} low-level names but {concepts.n_low} low-level embedding rows"
        )
    b = hierarchy.membership
    if b.shape != (l_count, h_count):
        raise ValidationError(
            f"membership shape {b.shape} does not match ({l_count}, {h_count})"
        )
    if not np.isin(b, (0.0, 1.0)).all():
        raise ValidationError("membership matrix must be binary")
    empty = np.flatnonzero(b.sum(axis=0) == 0)
    if empty.size:
        raise ValidationError(
            f"high-level concept {hierarchy.high_names[int(empty[0])]!r} has no attributes"
        )
    if hierarchy.layout == "general":
        arity = hierarchy.per_concept_arity
        if not arity or l_count != h_count * arity:
            raise ValidationError(
                f"general layout needs L_all = H * arity, got {l_count} != "
                f"{h_count} * {arity}"
            )
        expected = np.zeros_like(b)
        for h in range(h_count):
            expected[h * arity:(h + 1) * arity, h] = 1.0
        if not np.array_equal(b, expected):
            raise ValidationError("general layout requires block-structured membership")


def save_manifest(hierarchy: ConceptHierarchy, path) -> None:
    doc = {
        "high": hierarchy.high_names,
        "low": hierarchy.low_names,
        "layout": hierarchy.layout,
        "membership": membership_map(hierarchy),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path) -> ConceptHierarchy:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    for key in ("high", "low", "layout", "membership"):
        if key not in doc:
            raise FormatError(f"{path}: manifest is missing the {key!r} key")
    layout = doc["layout"]
    if layout not in LAYOUTS:
        raise FormatError(f"{path}: layout must be one of {LAYOUTS}, got {layout!r}")
    high = [str(s) for s in doc["high"]]
    low = [str(s) for s in doc["low"]]
    members = doc["membership"]
    if not isinstance(members, list) or len(members) != len(high):
        raise FormatError(
            f"{path}: membership must list attribute indices for each of the "
            f"{len(high)} high-level concepts"
        )
    try:
        mapping = {h: [int(l) for l in attrs] for h, attrs in enumerate(members)}
        hierarchy = build_shared(high, low, mapping)
    except (CoverageError, IndexError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad membership ({exc})") from exc
    if layout == "general":
        h_count = len(high)
        if h_count == 0 or len(low) % h_count:
            raise FormatError(
                f"{path}: general layout needs L_all divisible by H, got "
                f"{len(low)} and {h_count}"
            )
        arity = len(low) // h_count
        for h, attrs in enumerate(members):
            if list(attrs) != list(range(h * arity, (h + 1) * arity)):
                raise FormatError(
                    f"{path}: general layout requires concept {h} to own attributes "
                    f"{h * arity}..{(h + 1) * arity - 1}"
                )
        hierarchy = ConceptHierarchy(high, low, hierarchy.membership, "general", arity)
    return hierarchy
