"""CSV and JSON formats used by the command-line pipeline.

The CSV layouts follow the ISIC 2019 challenge conventions so real challenge
files drop in unmodified:

* probability matrix: ``image,MEL,NV,BCC,AK,BKL,DF,VASC,SCC``
* ground truth:       probability columns plus ``UNK`` (one-hot rows)
* submission:         same nine columns, fixed six-decimal formatting
* metadata:           ``image,age_approx,anatom_site_general,sex``

Column order is validated against the active taxonomy, never assumed. All
writers go through a temp-file-and-rename so a crashed run cannot leave a
half-written file behind.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    HeaderMismatch,
    IoError,
    OpendermError,
    ParseError,
    VectorInvalid,
)
from .fusion import MetadataRecord
from .openset import OutlierDecision
from .taxonomy import ClassTaxonomy, DEFAULT_TAXONOMY, validate_probability

METADATA_HEADER = ["image", "age_approx", "anatom_site_general", "sex"]


def _atomic_write(path, write_fn):
    """Write via a sibling temp file and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                write_fn(fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_rows(path, expected_header: list[str]) -> list[list[str]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise HeaderMismatch(f"{path}: file is empty, expected header {expected_header}")
            if header != expected_header:
                raise HeaderMismatch(f"{path}: header {header} != expected {expected_header}")
            return [row for row in reader if row]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def probability_header(taxonomy: ClassTaxonomy) -> list[str]:
    return ["image"] + list(taxonomy.known_labels)


def submission_header(taxonomy: ClassTaxonomy) -> list[str]:
    return probability_header(taxonomy) + [taxonomy.unknown_label]


def read_probability_csv(
    path, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY, tolerance: float = 1e-6
) -> tuple[list[str], np.ndarray]:
    """Read and validate a per-model probability matrix.

    Returns (sample ids, (n, k) float64 matrix) in file order. Rejects wrong
    headers, unparsable numbers, duplicate ids, and invalid vectors.
    """
    rows = _read_rows(path, probability_header(taxonomy))
    k = taxonomy.n_classes
    ids: list[str] = []
    seen = set()
    vectors = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != k + 1:
            raise ParseError(f"{path}:{lineno}: expected {k + 1} fields, got {len(row)}")
        sid = row[0]
        if not sid:
            raise ParseError(f"{path}:{lineno}: empty sample id")
        if sid in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        try:
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        try:
            vectors.append(validate_probability(values, k, tolerance))
        except OpendermError as exc:
            raise VectorInvalid(f"{path}:{lineno}: {exc}") from exc
        ids.append(sid)
    matrix = np.vstack(vectors) if vectors else np.empty((0, k))
    return ids, matrix


def write_probability_csv(path, ids: Sequence[str], proba, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY):
    """Write a probability matrix at full precision (lossless round-trip)."""
    X = np.asarray(proba, dtype=np.float64)

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(probability_header(taxonomy))
        for sid, row in zip(ids, X):
            writer.writerow([sid] + [repr(float(v)) for v in row])

    _atomic_write(path, _write)


def read_truth_csv(path, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> tuple[list[str], np.ndarray]:
    """Read a ground-truth file (submission layout, one-hot rows).

    Returns (ids, labels) where a row marked as the unknown class yields -1.
    """
    rows = _read_rows(path, submission_header(taxonomy))
    k = taxonomy.n_classes
    ids, labels = [], []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if len(row) != k + 2:
            raise ParseError(f"{path}:{lineno}: expected {k + 2} fields, got {len(row)}")
        sid = row[0]
        if sid in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        try:
            values = np.array([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        winner = int(np.argmax(values))
        if values[winner] <= 0:
            raise ParseError(f"{path}:{lineno}: no positive entry in ground-truth row")
        ids.append(sid)
        labels.append(-1 if winner == k else winner)
    return ids, np.asarray(labels, dtype=np.int64)


def write_truth_csv(path, ids: Sequence[str], y, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY):
    """Write one-hot ground truth; label -1 marks the unknown class."""
    y = np.asarray(y, dtype=np.int64)
    k = taxonomy.n_classes

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(submission_header(taxonomy))
        for sid, label in zip(ids, y):
            row = [0.0] * (k + 1)
            row[k if label < 0 else int(label)] = 1.0
            writer.writerow([sid] + [f"{v:.1f}" for v in row])

    _atomic_write(path, _write)


def read_metadata_csv(path) -> list[MetadataRecord]:
    """Read patient metadata; empty cells mean missing."""
    rows = _read_rows(path, METADATA_HEADER)
    records = []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        sid, age_txt, region, sex = row
        if not sid:
            raise ParseError(f"{path}:{lineno}: empty sample id")
        if sid in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        try:
            age = float(age_txt) if age_txt.strip() else None
            records.append(
                MetadataRecord(
                    sample_id=sid,
                    age=age,
                    sex=sex if sex.strip() else None,
                    region=region if region.strip() else None,
                )
            )
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_metadata_csv(path, records: Iterable[MetadataRecord]):
    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(METADATA_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.sample_id,
                    "" if rec.age is None else _format_age(rec.age),
                    "" if rec.region is None else rec.region,
                    "" if rec.sex is None else rec.sex,
                ]
            )

    _atomic_write(path, _write)


def _format_age(age: float) -> str:
    return repr(int(age)) if float(age).is_integer() else repr(float(age))


def write_submission_csv(
    path,
    ids: Sequence[str],
    proba,
    unknown_mask,
    taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
):
    """Write the nine-column challenge submission.

    Samples flagged unknown emit 1.0 in the unknown column and zeros
    elsewhere (the detector's verdict is binary, there is no soft unknown
    score); accepted samples emit their probability vector and unknown 0.0.
    Fixed six-decimal formatting throughout.
    """
    X = np.asarray(proba, dtype=np.float64)
    mask = np.asarray(unknown_mask, dtype=bool)
    k = taxonomy.n_classes

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(submission_header(taxonomy))
        for sid, row, unk in zip(ids, X, mask):
            values = ([0.0] * k + [1.0]) if unk else (list(row) + [0.0])
            writer.writerow([sid] + [f"{v:.6f}" for v in values])

    _atomic_write(path, _write)


def read_submission_csv(
    path, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Read a submission back verbatim: (ids, (n, k) known-class probabilities,
    unknown flags). No renormalization; this is a verification reader."""
    rows = _read_rows(path, submission_header(taxonomy))
    k = taxonomy.n_classes
    ids, vectors, flags = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != k + 2:
            raise ParseError(f"{path}:{lineno}: expected {k + 2} fields, got {len(row)}")
        try:
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        ids.append(row[0])
        vectors.append(values[:k])
        flags.append(values[k] > 0.5)
    matrix = np.asarray(vectors) if vectors else np.empty((0, k))
    return ids, matrix, np.asarray(flags, dtype=bool)


def write_decisions_csv(path, decisions: Sequence[OutlierDecision], taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY):
    """Audit trail: one row per sample with entropy, cascade stage, and verdict."""

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(["image", "predicted_label", "entropy_bits", "stage", "is_unknown"])
        for d in decisions:
            writer.writerow(
                [
                    d.sample_id,
                    taxonomy.known_labels[d.predicted_label],
                    f"{d.entropy_bits:.10f}",
                    d.stage.value,
                    str(d.is_unknown).lower(),
                ]
            )

    _atomic_write(path, _write)


def write_fusion_csv(path, results, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY):
    """Re-ranking outcomes: final label plus the adjusted score pair."""

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(["image", "label", "top1", "top2", "score1", "score2", "applied", "flipped"])
        labels = taxonomy.known_labels
        for r in results:
            writer.writerow(
                [
                    r.sample_id,
                    labels[r.label],
                    labels[r.top1],
                    labels[r.top2],
                    f"{r.score_pair[0]:.10f}",
                    f"{r.score_pair[1]:.10f}",
                    str(r.applied).lower(),
                    str(r.flipped).lower(),
                ]
            )

    _atomic_write(path, _write)


def read_predictions_csv(path, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> tuple[list[str], np.ndarray]:
    """Read (image, label) pairs from a file whose first two columns are
    image and a label string, e.g. a fusion output."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise HeaderMismatch(f"{path}: file is empty")
            if header[:2] != ["image", "label"]:
                raise HeaderMismatch(f"{path}: expected columns image,label first, got {header[:2]}")
            ids, labels = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    labels.append(taxonomy.index_of(row[1]))
                except KeyError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
                ids.append(row[0])
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return ids, np.asarray(labels, dtype=np.int64)


def write_votes_csv(path, votes, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY):
    """Majority-vote output: winning label and vote count per sample."""

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(["image", "label", "votes"])
        for v in votes:
            writer.writerow([v.sample_id, taxonomy.known_labels[v.label], v.votes])

    _atomic_write(path, _write)


def write_id_list_csv(path, ids: Iterable[str]):
    """Single-column id list (e.g. the planted-outlier answer key)."""

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(["image"])
        for sid in ids:
            writer.writerow([sid])

    _atomic_write(path, _write)


def read_id_list_csv(path) -> list[str]:
    rows = _read_rows(path, ["image"])
    return [row[0] for row in rows]


def read_scores_csv(path) -> list[tuple[str, float]]:
    """Read per-model scores: columns model,balanced_accuracy."""
    rows = _read_rows(path, ["model", "balanced_accuracy"])
    out = []
    for lineno, row in enumerate(rows, start=2):
        try:
            out.append((row[0], float(row[1])))
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out


def read_counts_csv(path) -> list[tuple[str, int]]:
    """Read per-class sample counts: columns label,count."""
    rows = _read_rows(path, ["label", "count"])
    out = []
    for lineno, row in enumerate(rows, start=2):
        try:
            count = int(row[1])
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if count <= 0:
            raise ParseError(f"{path}:{lineno}: count must be positive, got {count}")
        out.append((row[0], count))
    return out


def write_json(path, payload: dict):
    _atomic_write(path, lambda fh: json.dump(payload, fh, indent=2, sort_keys=True))


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
