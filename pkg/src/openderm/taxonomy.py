"""Diagnostic label taxonomy and probability-vector primitives.

The engine is model-agnostic: everything downstream operates on per-sample
probability vectors over a fixed, ordered set of known diagnostic labels,
plus one reserved label for samples rejected as unknown. This module owns
that ordering, the validation rules for probability vectors, and the
deterministic tie-breaking used everywhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import KOutOfRange, LengthMismatch, NegativeEntry, SumOutOfTolerance

# ISIC 2019 challenge label order. Kept as the package default so challenge
# CSV files drop in unmodified.
DEFAULT_KNOWN_LABELS = ("MEL", "NV", "BCC", "AK", "BKL", "DF", "VASC", "SCC")
DEFAULT_UNKNOWN_LABEL = "UNK"

# Per-class sample counts of the ISIC 2019 training set, shipped as reference
# data for inverse-frequency weighting and realistic synthetic mixtures.
ISIC2019_TRAIN_COUNTS = {
    "MEL": 4522,
    "NV": 12875,
    "BCC": 3323,
    "AK": 867,
    "BKL": 2624,
    "DF": 239,
    "VASC": 253,
    "SCC": 628,
}

# Probability sums within this distance of 1 are treated as exact, so that
# renormalization is idempotent; see validate_probability.
_EXACT_SUM_EPS = 1e-14

DEFAULT_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered known diagnostic labels plus the reserved unknown label.

    Immutable; safe to share across threads. All label indices used by the
    engine refer to positions in ``known_labels``.
    """

    known_labels: tuple[str, ...] = DEFAULT_KNOWN_LABELS
    unknown_label: str = DEFAULT_UNKNOWN_LABEL

    def __post_init__(self):
        labels = tuple(self.known_labels)
        object.__setattr__(self, "known_labels", labels)
        if not labels:
            raise ValueError("taxonomy needs at least one known label")
        if any(not lab for lab in labels):
            raise ValueError("labels must be non-empty strings")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels}")
        if self.unknown_label in labels:
            raise ValueError(f"unknown label {self.unknown_label!r} collides with a known label")

    @property
    def n_classes(self) -> int:
        return len(self.known_labels)

    @property
    def max_entropy_bits(self) -> float:
        """Entropy of the uniform distribution over the known labels."""
        return math.log2(self.n_classes)

    def index_of(self, label: str) -> int:
        try:
            return self.known_labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}; known: {self.known_labels}") from None


DEFAULT_TAXONOMY = ClassTaxonomy()


def validate_probability(values, n_classes: int, tolerance: float = DEFAULT_SUM_TOLERANCE) -> np.ndarray:
    """Validate one probability vector, renormalizing small CSV-rounding drift.

    A vector passes if it has ``n_classes`` non-negative entries. If its sum
    is within ``tolerance`` of 1 but not float-exact, the vector is divided
    by the sum; larger deviations fail hard to catch corrupt files. Sums
    already within 1e-14 of 1 are left untouched, which makes the operation
    idempotent: validating its own output changes nothing.

    Returns a float64 copy. Raises LengthMismatch, NegativeEntry, or
    SumOutOfTolerance.
    """
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != n_classes:
        raise LengthMismatch(f"expected {n_classes} entries, got shape {vec.shape}")
    if np.any(vec < 0.0):
        bad = int(np.argmin(vec))
        raise NegativeEntry(f"entry {bad} is negative ({vec[bad]!r})")
    total = math.fsum(vec.tolist())
    dev = abs(total - 1.0)
    if dev <= _EXACT_SUM_EPS:
        return vec.copy()
    if dev <= tolerance:
        return vec / total
    raise SumOutOfTolerance(f"probabilities sum to {total!r}, outside tolerance {tolerance}")


def validate_proba_matrix(X, n_classes: int, tolerance: float = DEFAULT_SUM_TOLERANCE) -> np.ndarray:
    """Row-wise validate_probability for a 2-D (n_samples, n_classes) matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != n_classes:
        raise LengthMismatch(f"expected (n, {n_classes}) matrix, got shape {X.shape}")
    if len(X) == 0:
        return X.reshape(0, n_classes).copy()
    return np.vstack([validate_probability(row, n_classes, tolerance) for row in X])


def top_k(p, k: int) -> list[tuple[int, float]]:
    """The k largest entries of a probability vector as (label index, probability).

    Descending by probability; equal probabilities are broken by ascending
    label index, the engine-wide tie rule.
    """
    vec = np.asarray(p, dtype=np.float64)
    n = vec.shape[0]
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    # lexsort's last key is primary: sort by -p, then by index for ties
    order = np.lexsort((np.arange(n), -vec))
    return [(int(i), float(vec[i])) for i in order[:k]]


def argmax_label(p) -> int:
    """Index of the largest entry; first index wins ties (ascending rule)."""
    return int(np.argmax(np.asarray(p)))


@dataclass(frozen=True)
class ProbabilityRecord:
    """One sample's identifier and its probability vector over known classes."""

    sample_id: str
    probs: np.ndarray

    def __post_init__(self):
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))


@dataclass(frozen=True)
class LabeledRecord:
    """A probability record together with its true class index."""

    sample_id: str
    probs: np.ndarray
    true_label: int

    def __post_init__(self):
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if not 0 <= self.true_label < probs.shape[0]:
            raise ValueError(f"true_label {self.true_label} out of range for {probs.shape[0]} classes")


def records_to_arrays(records):
    """Split ProbabilityRecords into (ids, matrix) for the array-based APIs."""
    ids = [rec.sample_id for rec in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids in record list")
    matrix = np.vstack([rec.probs for rec in records]) if records else np.empty((0, 0))
    return ids, matrix


def labeled_records_to_arrays(records):
    """Split LabeledRecords into (ids, matrix, labels)."""
    ids, matrix = records_to_arrays(records)
    labels = np.array([rec.true_label for rec in records], dtype=np.int64)
    return ids, matrix, labels
