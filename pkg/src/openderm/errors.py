"""Error types raised by the decision engine.

Every error carries a machine-readable ``category`` string; the CLI prints it
on stderr and exits nonzero, so callers can branch on the category without
parsing prose.
"""


class OpendermError(Exception):
    """Base class for all engine errors."""

    category = "error"


# --- probability-vector validation ---

class LengthMismatch(OpendermError):
    category = "length-mismatch"


class NegativeEntry(OpendermError):
    category = "negative-entry"


class SumOutOfTolerance(OpendermError):
    category = "sum-out-of-tolerance"


class KOutOfRange(OpendermError):
    category = "k-out-of-range"


# --- ensemble ---

class MemberSampleMismatch(OpendermError):
    category = "member-sample-mismatch"


class NOutOfRange(OpendermError):
    category = "n-out-of-range"


# --- open-set detection ---

class EmptyValidationSet(OpendermError):
    category = "empty-validation-set"


class ZeroVector(OpendermError):
    category = "zero-vector"


class UnfittableClassWarning(UserWarning):
    """Predicted class had no correctly-classified calibration samples; the
    detector falls back to accepting the sample."""


# --- metadata fusion ---

class NoCompleteRecords(OpendermError):
    category = "no-complete-records"


class UnfittedTables(OpendermError):
    category = "unfitted-tables"


class DuplicateMetadataRow(OpendermError):
    category = "duplicate-metadata-row"


# --- metrics ---

class LabelOutOfRange(OpendermError):
    category = "label-out-of-range"


class EmptyMatrix(OpendermError):
    category = "empty-matrix"


class DegenerateLabels(OpendermError):
    category = "degenerate-labels"


class ZeroCount(OpendermError):
    category = "zero-count"


# --- file formats / CLI ---

class HeaderMismatch(OpendermError):
    category = "header-mismatch"


class ParseError(OpendermError):
    category = "parse-error"


class DuplicateId(OpendermError):
    category = "duplicate-id"


class VectorInvalid(OpendermError):
    category = "vector-invalid"


class IoError(OpendermError):
    category = "io-error"


class ConfigInvalid(OpendermError):
    category = "config-invalid"
