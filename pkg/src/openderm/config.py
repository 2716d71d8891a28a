"""Flat key-value run configuration for the CLI.

A config file is plain ``key = value`` lines; ``#`` starts a comment and
blank lines are ignored. List values are comma-separated. Relative paths are
resolved against the config file's own directory, so a run directory can be
moved around freely.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import ConfigInvalid
from .taxonomy import ClassTaxonomy, DEFAULT_KNOWN_LABELS, DEFAULT_UNKNOWN_LABEL

AGGREGATION_RULES = ("average", "majority", "maxprob")
SIMILARITY_MODES = ("conjunctive", "standalone")


@dataclass
class PipelineConfig:
    """Everything a full pipeline run needs; path fields are optional for
    subcommands that take explicit flags."""

    labels: tuple[str, ...] = DEFAULT_KNOWN_LABELS
    unknown_label: str = DEFAULT_UNKNOWN_LABEL
    rule: str = "average"
    similarity_mode: str = "conjunctive"
    age_bin_width: float = 10.0
    tolerance: float = 1e-6
    seed: int = 0
    test_probs: tuple[str, ...] = ()
    val_probs: tuple[str, ...] = ()
    val_truth: str | None = None
    train_meta: str | None = None
    train_truth: str | None = None
    test_meta: str | None = None
    test_truth: str | None = None
    out_dir: str = "out"

    def __post_init__(self):
        if self.rule not in AGGREGATION_RULES:
            raise ConfigInvalid(f"rule must be one of {AGGREGATION_RULES}, got {self.rule!r}")
        if self.similarity_mode not in SIMILARITY_MODES:
            raise ConfigInvalid(
                f"similarity_mode must be one of {SIMILARITY_MODES}, got {self.similarity_mode!r}"
            )
        if self.age_bin_width <= 0:
            raise ConfigInvalid(f"age_bin_width must be positive, got {self.age_bin_width}")
        if not 0 < self.tolerance < 1:
            raise ConfigInvalid(f"tolerance must be in (0, 1), got {self.tolerance}")
        try:
            self.taxonomy = ClassTaxonomy(tuple(self.labels), self.unknown_label)
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc


_LIST_KEYS = {"labels", "test_probs", "val_probs"}
_FLOAT_KEYS = {"age_bin_width", "tolerance"}
_INT_KEYS = {"seed"}
_PATH_KEYS = {"val_truth", "train_meta", "train_truth", "test_meta", "test_truth", "out_dir"}
_PATH_LIST_KEYS = {"test_probs", "val_probs"}


def parse_config_text(text: str, base_dir: str = ".") -> PipelineConfig:
    valid = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in valid:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigInvalid(f"line {lineno}: key {key!r} given twice")
        try:
            if key in _LIST_KEYS:
                items = tuple(part.strip() for part in value.split(",") if part.strip())
                if key in _PATH_LIST_KEYS:
                    items = tuple(_resolve(base_dir, p) for p in items)
                values[key] = items
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _PATH_KEYS:
                values[key] = _resolve(base_dir, value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigInvalid(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))
