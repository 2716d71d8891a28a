"""Entropy-calibrated rejection of unknown-class samples.

A classifier that is sure of itself concentrates its softmax mass on one
class; a classifier faced with something it has never seen spreads the mass
out, and the Shannon entropy of the output rises. This module turns that
observation into a calibrated detector:

* On held-out labeled predictions, group samples by their *predicted* class
  into hits (predicted = true) and misses (predicted != true), and record the
  mean and maximum entropy plus the mean probability vector of each group.
  Statistics are kept per class, never pooled, because an easy class and a
  hard class have very different entropy habits.
* A new sample, predicted as class c with entropy h, is rejected as unknown
  only if it looks worse than everything calibration saw for c: h above both
  group mean entropies, h above the midpoint of the two group maxima, and its
  probability vector closer (cosine) to the miss-group mean than to the
  hit-group mean. The final check exists because sibling classes (e.g. two
  carcinoma types) legitimately split probability mass between them; such
  samples resemble known misses, not outliers.

Grouping by predicted class is deliberate: at inference time the prediction
is the only label available, so thresholds must be indexed by it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import EmptyValidationSet, NegativeEntry, UnfittableClassWarning, ZeroVector
from .taxonomy import ClassTaxonomy, DEFAULT_TAXONOMY, validate_proba_matrix

SIMILARITY_MODES = ("conjunctive", "standalone")


def shannon_entropy(p) -> float:
    """Shannon entropy of a probability vector, in bits.

    Zero entries contribute nothing (0 * log2(0) taken as 0 by continuity).
    The terms are summed with math.fsum, which is exactly rounded, so any
    permutation of the vector yields the bit-identical result.
    """
    vec = np.asarray(p, dtype=np.float64)
    if np.any(vec < 0.0):
        raise NegativeEntry("entropy is defined for non-negative vectors")
    return -math.fsum(x * math.log2(x) for x in vec.tolist() if x > 0.0)


def entropy_bits(X) -> np.ndarray:
    """Row-wise shannon_entropy for a (n, k) matrix."""
    X = np.asarray(X, dtype=np.float64)
    return np.array([shannon_entropy(row) for row in X])


def cosine_similarity(x, y) -> float:
    """Cosine of the angle between two non-zero vectors.

    In [-1, 1] generally, in [0, 1] for the non-negative vectors used here.
    Scale-invariant: sim(a*x, b*y) = sim(x, y) for positive a, b.
    """
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape:
        raise ZeroVector(f"shape mismatch: {xv.shape} vs {yv.shape}")
    nx = math.sqrt(math.fsum(v * v for v in xv.tolist()))
    ny = math.sqrt(math.fsum(v * v for v in yv.tolist()))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector("cosine similarity is undefined for zero vectors")
    dot = math.fsum(a * b for a, b in zip(xv.tolist(), yv.tolist()))
    return dot / (nx * ny)


class RejectionStage(str, Enum):
    """How far along the rejection cascade a sample got.

    ACCEPTED        failed the first check: entropy not above both group means
    ABOVE_MEANS     above both group mean entropies, but under the max midpoint
    ABOVE_MIDPOINT  above the max midpoint too, but the cosine check kept it
    UNKNOWN         cleared every check and was rejected as unknown
    """

    ACCEPTED = "accepted"
    ABOVE_MEANS = "above-means"
    ABOVE_MIDPOINT = "above-midpoint"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class OutlierDecision:
    """Audit trace for one sample's accept/reject decision."""

    sample_id: str
    predicted_label: int
    entropy_bits: float
    stage: RejectionStage

    @property
    def is_unknown(self) -> bool:
        return self.stage is RejectionStage.UNKNOWN


@dataclass(frozen=True)
class OutlierSummary:
    """Batch rejection tally; percentage is rounded to two decimals."""

    unknown_count: int
    total: int
    percentage: float


class EntropyOutlierDetector(BaseEstimator):
    """Per-class entropy profile fitting plus the three-check rejection rule.

    Parameters
    ----------
    taxonomy : ClassTaxonomy
        Label ordering; probability columns must follow it.
    similarity_mode : {"conjunctive", "standalone"}
        "conjunctive" (default) requires a sample to clear the mean check,
        the max-midpoint check, AND the cosine check to be rejected.
        "standalone" lets the cosine check alone decide for every sample
        that clears the mean check, skipping the midpoint requirement.

    Fitted attributes (per known class, indexed in taxonomy order)
    ---------------------------------------------------------------
    hit_count_, miss_count_ : int arrays
    hit_mean_entropy_, hit_max_entropy_ : bits
    miss_mean_entropy_, miss_max_entropy_ : bits
    hit_mean_proba_, miss_mean_proba_ : (k, k) mean probability vectors
    fittable_ : bool array, False when a class had no hit samples

    A class with hits but no misses gives no evidence about its miss profile;
    its miss entropy statistics are substituted with the hit statistics and
    its miss mean vector with the uniform vector (the maximum-entropy neutral
    choice), while miss_count_ stays 0. A class with no hits at all is marked
    unfittable, and samples predicted as it are conservatively accepted with
    an UnfittableClassWarning: zero evidence is no grounds for rejection.
    """

    def __init__(self, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY, similarity_mode: str = "conjunctive"):
        self.taxonomy = taxonomy
        self.similarity_mode = similarity_mode

    def _check_mode(self):
        if self.similarity_mode not in SIMILARITY_MODES:
            raise ValueError(f"similarity_mode must be one of {SIMILARITY_MODES}")

    def fit(self, X, y):
        """Calibrate per-class entropy statistics on labeled predictions.

        X is an (n, k) probability matrix, y the true class indices. Groups
        are keyed by the predicted class (row argmax).
        """
        self._check_mode()
        k = self.taxonomy.n_classes
        X = validate_proba_matrix(X, k)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] == 0:
            raise EmptyValidationSet("cannot calibrate on an empty validation set")
        if y.shape[0] != X.shape[0]:
            raise EmptyValidationSet(f"{X.shape[0]} probability rows vs {y.shape[0]} labels")
        if y.min() < 0 or y.max() >= k:
            raise EmptyValidationSet(f"true labels must lie in [0, {k})")

        predicted = np.argmax(X, axis=1)
        entropies = entropy_bits(X)

        self.hit_count_ = np.zeros(k, dtype=np.int64)
        self.miss_count_ = np.zeros(k, dtype=np.int64)
        self.hit_mean_entropy_ = np.full(k, np.nan)
        self.hit_max_entropy_ = np.full(k, np.nan)
        self.miss_mean_entropy_ = np.full(k, np.nan)
        self.miss_max_entropy_ = np.full(k, np.nan)
        self.hit_mean_proba_ = np.full((k, k), np.nan)
        self.miss_mean_proba_ = np.full((k, k), np.nan)

        uniform = np.full(k, 1.0 / k)
        for c in range(k):
            hit = (predicted == c) & (y == c)
            miss = (predicted == c) & (y != c)
            self.hit_count_[c] = int(hit.sum())
            self.miss_count_[c] = int(miss.sum())
            if hit.any():
                self.hit_mean_entropy_[c] = _fmean(entropies[hit])
                self.hit_max_entropy_[c] = entropies[hit].max()
                self.hit_mean_proba_[c] = _colmeans(X[hit])
            if miss.any():
                self.miss_mean_entropy_[c] = _fmean(entropies[miss])
                self.miss_max_entropy_[c] = entropies[miss].max()
                self.miss_mean_proba_[c] = _colmeans(X[miss])
            elif hit.any():
                # never missed: fall back to the hit statistics and a neutral
                # uniform direction rather than inventing a miss profile
                self.miss_mean_entropy_[c] = self.hit_mean_entropy_[c]
                self.miss_max_entropy_[c] = self.hit_max_entropy_[c]
                self.miss_mean_proba_[c] = uniform.copy()

        self.fittable_ = self.hit_count_ > 0
        return self

    def decide(self, X, ids: Sequence[str] | None = None) -> list[OutlierDecision]:
        """Run the rejection cascade on each row and return full audit traces.

        ids defaults to the row index as a string.
        """
        check_is_fitted(self)
        self._check_mode()
        k = self.taxonomy.n_classes
        X = validate_proba_matrix(X, k)
        if ids is None:
            ids = [str(i) for i in range(X.shape[0])]
        elif len(ids) != X.shape[0]:
            raise ValueError(f"{len(ids)} ids for {X.shape[0]} rows")

        predicted = np.argmax(X, axis=1)
        entropies = entropy_bits(X)
        warned: set[int] = set()
        decisions = []
        for i in range(X.shape[0]):
            c = int(predicted[i])
            h = float(entropies[i])
            if not self.fittable_[c]:
                if c not in warned:
                    warnings.warn(
                        f"class {self.taxonomy.known_labels[c]!r} has no calibration hits; "
                        "accepting its samples without a rejection test",
                        UnfittableClassWarning,
                        stacklevel=2,
                    )
                    warned.add(c)
                decisions.append(OutlierDecision(ids[i], c, h, RejectionStage.ACCEPTED))
                continue
            decisions.append(OutlierDecision(ids[i], c, h, self._stage(c, h, X[i])))
        return decisions

    def _stage(self, c: int, h: float, p: np.ndarray) -> RejectionStage:
        above_means = h > self.hit_mean_entropy_[c] and h > self.miss_mean_entropy_[c]
        if not above_means:
            return RejectionStage.ACCEPTED
        above_midpoint = h > (self.hit_max_entropy_[c] + self.miss_max_entropy_[c]) / 2.0
        nearer_miss = cosine_similarity(self.miss_mean_proba_[c], p) > cosine_similarity(
            self.hit_mean_proba_[c], p
        )
        if self.similarity_mode == "standalone":
            return RejectionStage.UNKNOWN if nearer_miss else (
                RejectionStage.ABOVE_MIDPOINT if above_midpoint else RejectionStage.ABOVE_MEANS
            )
        if not above_midpoint:
            return RejectionStage.ABOVE_MEANS
        return RejectionStage.UNKNOWN if nearer_miss else RejectionStage.ABOVE_MIDPOINT

    def predict(self, X) -> np.ndarray:
        """Boolean mask, True where a row is rejected as unknown."""
        return np.array([d.is_unknown for d in self.decide(X)], dtype=bool)

    def flag_outliers(
        self, X, ids: Sequence[str] | None = None
    ) -> tuple[list[OutlierDecision], OutlierSummary]:
        """decide() plus a count / percentage summary over the batch."""
        decisions = self.decide(X, ids)
        count = sum(d.is_unknown for d in decisions)
        total = len(decisions)
        pct = round(100.0 * count / total, 2) if total else 0.0
        return decisions, OutlierSummary(unknown_count=count, total=total, percentage=pct)

    # --- profile serialization ---

    def profile_dict(self) -> dict:
        """Fitted statistics as a JSON-ready dict keyed by label string."""
        check_is_fitted(self)
        classes = {}
        for c, label in enumerate(self.taxonomy.known_labels):
            entry = {}
            for kind, counts, means, maxes, vectors in (
                ("hit", self.hit_count_, self.hit_mean_entropy_,
                 self.hit_max_entropy_, self.hit_mean_proba_),
                ("miss", self.miss_count_, self.miss_mean_entropy_,
                 self.miss_max_entropy_, self.miss_mean_proba_),
            ):
                stats: dict = {"count": int(counts[c])}
                if not np.isnan(means[c]):
                    stats["mean_entropy"] = means[c]
                    stats["max_entropy"] = maxes[c]
                    stats["mean_proba"] = vectors[c].tolist()
                entry[kind] = stats
            classes[label] = entry
        return {
            "labels": list(self.taxonomy.known_labels),
            "unknown_label": self.taxonomy.unknown_label,
            "similarity_mode": self.similarity_mode,
            "classes": classes,
        }

    @classmethod
    def from_profile(cls, payload: dict) -> "EntropyOutlierDetector":
        """Rebuild a fitted detector from profile_dict() output."""
        taxonomy = ClassTaxonomy(
            known_labels=tuple(payload["labels"]),
            unknown_label=payload.get("unknown_label", DEFAULT_TAXONOMY.unknown_label),
        )
        det = cls(taxonomy=taxonomy, similarity_mode=payload.get("similarity_mode", "conjunctive"))
        k = taxonomy.n_classes
        det.hit_count_ = np.zeros(k, dtype=np.int64)
        det.miss_count_ = np.zeros(k, dtype=np.int64)
        det.hit_mean_entropy_ = np.full(k, np.nan)
        det.hit_max_entropy_ = np.full(k, np.nan)
        det.miss_mean_entropy_ = np.full(k, np.nan)
        det.miss_max_entropy_ = np.full(k, np.nan)
        det.hit_mean_proba_ = np.full((k, k), np.nan)
        det.miss_mean_proba_ = np.full((k, k), np.nan)
        for c, label in enumerate(taxonomy.known_labels):
            stats = payload["classes"][label]
            det.hit_count_[c] = stats["hit"].get("count", 0)
            det.miss_count_[c] = stats["miss"].get("count", 0)
            if "mean_entropy" in stats["hit"]:
                det.hit_mean_entropy_[c] = stats["hit"]["mean_entropy"]
                det.hit_max_entropy_[c] = stats["hit"]["max_entropy"]
                det.hit_mean_proba_[c] = np.asarray(stats["hit"]["mean_proba"], dtype=np.float64)
            if "mean_entropy" in stats["miss"]:
                det.miss_mean_entropy_[c] = stats["miss"]["mean_entropy"]
                det.miss_max_entropy_[c] = stats["miss"]["max_entropy"]
                det.miss_mean_proba_[c] = np.asarray(stats["miss"]["mean_proba"], dtype=np.float64)
        det.fittable_ = np.array(
            ["mean_entropy" in payload["classes"][lab]["hit"] for lab in taxonomy.known_labels]
        )
        return det


def _fmean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)


def _colmeans(rows: np.ndarray) -> np.ndarray:
    """Column means via exactly-rounded sums; the mean of distributions stays one."""
    n = rows.shape[0]
    return np.array([math.fsum(rows[:, j].tolist()) / n for j in range(rows.shape[1])])
