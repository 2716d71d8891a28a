"""Re-ranking low-confidence predictions with patient-metadata priors.

Age, sex, and anatomical region carry diagnostic signal of their own (some
lesion types concentrate in the elderly, some on the head and neck). The
approach here is deliberately lightweight: histogram-estimated conditional
class probabilities given (age, sex) and (region, sex), applied only where
the classifier itself is unsure, and only ever allowed to swap the top two
predicted classes.

Missing data policy: the prior tables are estimated exclusively from samples
with all three fields present. At decision time a missing age or region
contributes a zero term (the age/region average keeps its divisor of 2), a
missing sex disables re-ranking for that sample because every table is
sex-conditioned, and a sample with no metadata at all is passed through
untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DuplicateMetadataRow, EmptyValidationSet, NoCompleteRecords, UnfittedTables
from .taxonomy import ClassTaxonomy, DEFAULT_TAXONOMY, top_k, validate_proba_matrix

SEXES = ("female", "male")


@dataclass(frozen=True)
class MetadataRecord:
    """Per-sample patient metadata; any field but the id may be missing."""

    sample_id: str
    age: float | None = None
    sex: str | None = None
    region: str | None = None

    def __post_init__(self):
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")
        if self.age is not None:
            age = float(self.age)
            if age < 0:
                raise ValueError(f"age must be non-negative, got {age}")
            object.__setattr__(self, "age", age)
        if self.sex is not None:
            sex = self.sex.strip().lower()
            if sex not in SEXES:
                raise ValueError(f"sex must be one of {SEXES}, got {self.sex!r}")
            object.__setattr__(self, "sex", sex)
        if self.region is not None:
            region = self.region.strip().lower()
            object.__setattr__(self, "region", region if region else None)

    @property
    def is_empty(self) -> bool:
        return self.age is None and self.sex is None and self.region is None

    @property
    def is_complete(self) -> bool:
        return self.age is not None and self.sex is not None and self.region is not None


class MetadataPriors(BaseEstimator):
    """Histogram-estimated class priors conditioned on (age, sex) and (region, sex).

    Ages are histogrammed into fixed-width bins covering [0, age_max); the
    10-year default matches clinical convention and the 5-year quantization
    of challenge metadata. Ages at or beyond age_max fall into the last bin.
    The region vocabulary is learned from the training data (lower-cased,
    trimmed), not hard-coded.

    Fitted attributes: ``age_bin_edges_`` (n_bins + 1 edges),
    ``region_vocabulary_`` (sorted tuple), and four (n_classes, n_conditions)
    tables ``female_age_``, ``male_age_``, ``female_region_``,
    ``male_region_``. Every column with at least one training sample is a
    distribution over classes; empty conditions hold all-zero columns.
    """

    def __init__(
        self,
        taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
        age_bin_width: float = 10.0,
        age_max: float = 100.0,
    ):
        self.taxonomy = taxonomy
        self.age_bin_width = age_bin_width
        self.age_max = age_max

    @property
    def n_age_bins(self) -> int:
        return int(math.ceil(self.age_max / self.age_bin_width))

    def age_bin(self, age: float) -> int:
        return min(int(age // self.age_bin_width), self.n_age_bins - 1)

    def fit(self, records: Sequence[MetadataRecord], y):
        """Tally complete records and normalize each condition over classes.

        Args:
            records: metadata, one per training sample.
            y: true class indices aligned with records. Records missing any
               of the three fields are excluded from estimation.
        """
        if self.age_bin_width <= 0 or self.age_max <= 0:
            raise ValueError("age_bin_width and age_max must be positive")
        y = np.asarray(y, dtype=np.int64)
        if len(records) != len(y):
            raise ValueError(f"{len(records)} records vs {len(y)} labels")
        k = self.taxonomy.n_classes
        complete = [(rec, int(label)) for rec, label in zip(records, y) if rec.is_complete]
        if not complete:
            raise NoCompleteRecords("no training record has all three metadata fields")

        vocab = sorted({rec.region for rec, _ in complete})
        region_index = {r: i for i, r in enumerate(vocab)}
        n_bins = self.n_age_bins

        age_counts = {s: np.zeros((k, n_bins)) for s in SEXES}
        region_counts = {s: np.zeros((k, len(vocab))) for s in SEXES}
        for rec, label in complete:
            age_counts[rec.sex][label, self.age_bin(rec.age)] += 1
            region_counts[rec.sex][label, region_index[rec.region]] += 1

        self.region_vocabulary_ = tuple(vocab)
        self.age_bin_edges_ = np.array(
            [i * self.age_bin_width for i in range(n_bins)] + [self.age_max]
        )
        self.female_age_ = _normalize_columns(age_counts["female"])
        self.male_age_ = _normalize_columns(age_counts["male"])
        self.female_region_ = _normalize_columns(region_counts["female"])
        self.male_region_ = _normalize_columns(region_counts["male"])
        self.n_complete_ = len(complete)
        return self

    def prior_boost(self, meta: MetadataRecord) -> np.ndarray | None:
        """Average of the age and region prior columns for this patient.

        Returns a length-n_classes vector, or None when the sex is missing
        (every table is sex-conditioned, so no lookup exists). A missing age
        or region, or a region outside the learned vocabulary, contributes a
        zero term; the divisor stays 2 regardless.
        """
        if not hasattr(self, "female_age_"):
            raise UnfittedTables("priors have not been fitted")
        if meta.sex is None:
            return None
        age_table = self.female_age_ if meta.sex == "female" else self.male_age_
        region_table = self.female_region_ if meta.sex == "female" else self.male_region_
        k = self.taxonomy.n_classes
        age_term = np.zeros(k) if meta.age is None else age_table[:, self.age_bin(meta.age)]
        if meta.region is None or meta.region not in self.region_vocabulary_:
            region_term = np.zeros(k)
        else:
            region_term = region_table[:, self.region_vocabulary_.index(meta.region)]
        return (age_term + region_term) / 2.0

    def to_dict(self) -> dict:
        if not hasattr(self, "female_age_"):
            raise UnfittedTables("priors have not been fitted")
        return {
            "labels": list(self.taxonomy.known_labels),
            "age_bin_width": self.age_bin_width,
            "age_max": self.age_max,
            "regions": list(self.region_vocabulary_),
            "female_age": self.female_age_.tolist(),
            "male_age": self.male_age_.tolist(),
            "female_region": self.female_region_.tolist(),
            "male_region": self.male_region_.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict, taxonomy: ClassTaxonomy | None = None) -> "MetadataPriors":
        if taxonomy is None:
            taxonomy = ClassTaxonomy(known_labels=tuple(payload["labels"]))
        priors = cls(
            taxonomy=taxonomy,
            age_bin_width=payload["age_bin_width"],
            age_max=payload["age_max"],
        )
        priors.region_vocabulary_ = tuple(payload["regions"])
        n_bins = priors.n_age_bins
        priors.age_bin_edges_ = np.array(
            [i * priors.age_bin_width for i in range(n_bins)] + [priors.age_max]
        )
        priors.female_age_ = np.asarray(payload["female_age"], dtype=np.float64)
        priors.male_age_ = np.asarray(payload["male_age"], dtype=np.float64)
        priors.female_region_ = np.asarray(payload["female_region"], dtype=np.float64)
        priors.male_region_ = np.asarray(payload["male_region"], dtype=np.float64)
        priors.n_complete_ = payload.get("n_complete", 0)
        return priors


class ClassConfidence(BaseEstimator):
    """Mean top-1 probability per class, the gate for metadata re-ranking.

    Fitted on held-out predictions: for every class, the mean of the winning
    probability over samples *predicted* as that class (group_by="true"
    switches to grouping by the true label instead, which then requires y).
    Classes never seen get support 0 and an undefined (NaN) mean.
    """

    def __init__(self, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY, group_by: str = "predicted"):
        self.taxonomy = taxonomy
        self.group_by = group_by

    def fit(self, X, y=None):
        if self.group_by not in ("predicted", "true"):
            raise ValueError("group_by must be 'predicted' or 'true'")
        k = self.taxonomy.n_classes
        X = validate_proba_matrix(X, k)
        if X.shape[0] == 0:
            raise EmptyValidationSet("cannot estimate confidence on an empty set")
        if self.group_by == "true":
            if y is None:
                raise EmptyValidationSet("group_by='true' requires true labels")
            groups = np.asarray(y, dtype=np.int64)
        else:
            groups = np.argmax(X, axis=1)
        top = X[np.arange(X.shape[0]), np.argmax(X, axis=1)]
        self.support_ = np.zeros(k, dtype=np.int64)
        self.mean_top_prob_ = np.full(k, np.nan)
        for c in range(k):
            mask = groups == c
            self.support_[c] = int(mask.sum())
            if mask.any():
                self.mean_top_prob_[c] = math.fsum(top[mask].tolist()) / mask.sum()
        return self

    def to_dict(self) -> dict:
        if not hasattr(self, "mean_top_prob_"):
            raise UnfittedTables("confidence table has not been fitted")
        labels = self.taxonomy.known_labels
        return {
            "labels": list(labels),
            "group_by": self.group_by,
            "mean_top_prob": {
                lab: (None if np.isnan(v) else float(v))
                for lab, v in zip(labels, self.mean_top_prob_)
            },
            "support": {lab: int(s) for lab, s in zip(labels, self.support_)},
        }

    @classmethod
    def from_dict(cls, payload: dict, taxonomy: ClassTaxonomy | None = None) -> "ClassConfidence":
        if taxonomy is None:
            taxonomy = ClassTaxonomy(known_labels=tuple(payload["labels"]))
        conf = cls(taxonomy=taxonomy, group_by=payload.get("group_by", "predicted"))
        labels = taxonomy.known_labels
        conf.mean_top_prob_ = np.array(
            [np.nan if payload["mean_top_prob"][lab] is None else payload["mean_top_prob"][lab]
             for lab in labels]
        )
        conf.support_ = np.array([payload["support"][lab] for lab in labels], dtype=np.int64)
        return conf


@dataclass(frozen=True)
class FusionResult:
    """Outcome of the re-ranking rule for one sample.

    score_pair holds the adjusted (top-1, top-2) ranking scores when the rule
    was applied, else the raw probabilities. Adjusted scores may exceed 1 and
    are deliberately not renormalized: they order the two candidates, nothing
    more, and the emitted probability vector stays the original one.
    """

    sample_id: str
    label: int
    top1: int
    top2: int
    score_pair: tuple[float, float]
    applied: bool

    @property
    def flipped(self) -> bool:
        return self.applied and self.label != self.top1


@dataclass(frozen=True)
class FusionSummary:
    total: int
    applied_count: int
    flipped_count: int


def fuse_record(
    probs,
    meta: MetadataRecord,
    priors: MetadataPriors,
    confidence: ClassConfidence,
) -> FusionResult:
    """Apply the top-2 re-ranking rule to one sample.

    Confident predictions (top-1 probability at or above the class mean) are
    untouched, as are samples with no metadata, no sex, or a predicted class
    the confidence table never saw. Otherwise each of the top two classes
    gets its prior boost added and the larger adjusted score wins; no class
    outside the original top two can ever be promoted.
    """
    if not hasattr(confidence, "mean_top_prob_"):
        raise UnfittedTables("confidence table has not been fitted")
    (c1, p1), (c2, p2) = top_k(probs, 2)
    unfused = FusionResult(meta.sample_id, c1, c1, c2, (p1, p2), applied=False)

    mean_top = confidence.mean_top_prob_[c1]
    if np.isnan(mean_top) or p1 >= mean_top:
        return unfused
    if meta.is_empty:
        return unfused
    boost = priors.prior_boost(meta)
    if boost is None:  # sex missing: sex-conditioned tables have nothing to offer
        return unfused
    s1 = p1 + float(boost[c1])
    s2 = p2 + float(boost[c2])
    label = c2 if s2 > s1 else c1
    return FusionResult(meta.sample_id, label, c1, c2, (s1, s2), applied=True)


def fuse_batch(
    ids: Sequence[str],
    X,
    metadata: Sequence[MetadataRecord],
    priors: MetadataPriors,
    confidence: ClassConfidence,
) -> tuple[list[FusionResult], FusionSummary]:
    """fuse_record over a batch, joining metadata to rows by sample id.

    Rows without a metadata record are treated as all-missing; duplicate
    metadata ids are rejected. Results come back sorted by sample id.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(ids) != X.shape[0]:
        raise ValueError(f"{len(ids)} ids for {X.shape[0]} rows")
    by_id: dict[str, MetadataRecord] = {}
    for rec in metadata:
        if rec.sample_id in by_id:
            raise DuplicateMetadataRow(f"metadata lists {rec.sample_id!r} more than once")
        by_id[rec.sample_id] = rec

    order = sorted(range(len(ids)), key=lambda i: ids[i])
    results = []
    for i in order:
        sid = ids[i]
        meta = by_id.get(sid, MetadataRecord(sample_id=sid))
        results.append(fuse_record(X[i], meta, priors, confidence))
    summary = FusionSummary(
        total=len(results),
        applied_count=sum(r.applied for r in results),
        flipped_count=sum(r.flipped for r in results),
    )
    return results, summary


def _normalize_columns(counts: np.ndarray) -> np.ndarray:
    """Divide each column by its sum; all-zero columns stay all-zero."""
    out = counts.astype(np.float64).copy()
    sums = out.sum(axis=0)
    nonzero = sums > 0
    out[:, nonzero] /= sums[nonzero]
    return out
