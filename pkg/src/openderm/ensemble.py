"""Combining per-model probability matrices into a single prediction set.

Three aggregation rules are exposed: arithmetic mean of the probabilities,
majority voting over per-model argmax labels, and copying the single most
confident member per sample. Averaging is the recommended rule; majority
voting yields labels without probabilities, so the entropy-based unknown
detector cannot run downstream of it.

Members are aligned by sample id, never by row order, because prediction
files from different models are routinely sorted differently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MemberSampleMismatch, NOutOfRange
from .taxonomy import DEFAULT_SUM_TOLERANCE, validate_proba_matrix


@dataclass(frozen=True)
class MemberPredictions:
    """One model's predictions: a name, sample ids, and a probability matrix."""

    name: str
    ids: tuple[str, ...]
    proba: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        proba = np.asarray(self.proba, dtype=np.float64)
        object.__setattr__(self, "proba", proba)
        if len(self.ids) != proba.shape[0]:
            raise MemberSampleMismatch(
                f"member {self.name!r}: {len(self.ids)} ids vs {proba.shape[0]} probability rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise MemberSampleMismatch(f"member {self.name!r} has duplicate sample ids")


def align_members(members: Sequence[MemberPredictions]) -> tuple[list[str], list[np.ndarray]]:
    """Check members cover identical sample ids and align rows to sorted-id order.

    Returns (sorted ids, per-member matrices in that order). Raises
    MemberSampleMismatch when any member misses or adds samples.
    """
    if not members:
        raise MemberSampleMismatch("ensemble needs at least one member")
    reference = set(members[0].ids)
    for m in members[1:]:
        if set(m.ids) != reference:
            missing = sorted(reference - set(m.ids))[:3]
            extra = sorted(set(m.ids) - reference)[:3]
            raise MemberSampleMismatch(
                f"member {m.name!r} does not cover the same samples as {members[0].name!r} "
                f"(missing {missing}, extra {extra})"
            )
    ids_sorted = sorted(reference)
    aligned = []
    for m in members:
        pos = {sid: i for i, sid in enumerate(m.ids)}
        aligned.append(m.proba[[pos[sid] for sid in ids_sorted]])
    return ids_sorted, aligned


def aggregate_average(
    members: Sequence[MemberPredictions], tolerance: float = DEFAULT_SUM_TOLERANCE
) -> tuple[list[str], np.ndarray]:
    """Per-sample, per-class arithmetic mean over members.

    The mean of distributions is a distribution; the result is re-validated
    row-wise. Exactly invariant under member permutation: every entry is an
    exactly-rounded sum (math.fsum), so member order cannot change the result.
    """
    ids, aligned = align_members(members)
    k = len(aligned)
    stack = np.stack(aligned)  # (k, n, c)
    n, c = stack.shape[1], stack.shape[2]
    out = np.empty((n, c))
    for i in range(n):
        for j in range(c):
            out[i, j] = math.fsum(stack[:, i, j].tolist()) / k
    return ids, validate_proba_matrix(out, c, tolerance)


@dataclass(frozen=True)
class MajorityVote:
    """Winning label for one sample under majority voting."""

    sample_id: str
    label: int
    votes: int


def aggregate_majority(members: Sequence[MemberPredictions]) -> list[MajorityVote]:
    """Each member votes its argmax; most votes wins, ties to the lower label index.

    The output carries labels and vote counts only, not probabilities.
    """
    ids, aligned = align_members(members)
    n, c = aligned[0].shape
    votes = np.zeros((n, c), dtype=np.int64)
    for proba in aligned:
        votes[np.arange(n), np.argmax(proba, axis=1)] += 1
    winners = np.argmax(votes, axis=1)  # argmax takes the first maximum: ascending tie rule
    return [
        MajorityVote(sample_id=sid, label=int(w), votes=int(votes[i, w]))
        for i, (sid, w) in enumerate(zip(ids, winners))
    ]


def aggregate_max_prob(members: Sequence[MemberPredictions]) -> tuple[list[str], np.ndarray]:
    """Per sample, copy through the vector of the most confident member.

    Confidence is the vector's maximum entry; equal maxima fall back to
    member order, which is therefore part of the contract.
    """
    ids, aligned = align_members(members)
    stack = np.stack(aligned)  # (k, n, c)
    peak = stack.max(axis=2)  # (k, n)
    chosen = np.argmax(peak, axis=0)  # first member wins ties
    out = stack[chosen, np.arange(stack.shape[1])]
    return ids, out.copy()


def select_best_members(scores: Sequence[tuple[str, float]], n: int) -> list[str]:
    """Names of the n members with the highest balanced accuracy.

    Equal scores are broken by lexicographic name. Returned in descending
    score order.
    """
    if not 1 <= n <= len(scores):
        raise NOutOfRange(f"n={n} outside [1, {len(scores)}]")
    ranked = sorted(scores, key=lambda item: (-item[1], item[0]))
    return [name for name, _ in ranked[:n]]
