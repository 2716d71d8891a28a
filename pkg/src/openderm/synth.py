"""Seeded synthetic fixtures: a desk-scale stand-in for real model outputs.

Generates per-model probability matrices, ground truth, and metadata with a
known planted structure, so every stage of the pipeline can be verified
against an exact answer key: known samples get peaked probability vectors
around their true class (with a configurable fraction of genuinely confusable
ones), planted outliers get near-uniform vectors that should land above any
sanely calibrated entropy threshold, and metadata is drawn class-conditionally
so the priors have signal to find.

Everything is driven by one numpy Generator; a fixed seed reproduces the
files byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import os

import numpy as np

from .errors import ConfigInvalid
from .fusion import MetadataRecord
from .taxonomy import ClassTaxonomy, DEFAULT_TAXONOMY, ISIC2019_TRAIN_COUNTS
from . import io

# ISIC-style anatomical site vocabulary used for generated metadata.
REGIONS = (
    "anterior torso",
    "head/neck",
    "lateral torso",
    "lower extremity",
    "oral/genital",
    "palms/soles",
    "posterior torso",
    "upper extremity",
)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generator; defaults support the planted-outlier checks."""

    n_samples: int = 1000          # test split size
    n_validation: int = 1000       # calibration split size (known classes only)
    n_train: int = 2000            # metadata/truth rows for prior fitting
    n_models: int = 3
    outlier_fraction: float = 0.10
    confusion: float = 0.15        # fraction of knowns drawn as two-class confusables
    peak: float = 12.0             # concentration on the true class for easy knowns
    floor: float = 0.05            # baseline concentration spread over all classes
    outlier_concentration: float = 200.0  # per-class concentration for outliers
    missing_rate: float = 0.10     # independent per-field metadata dropout
    class_mixture: tuple[float, ...] | None = None  # default: challenge frequencies
    seed: int = 0

    def validate(self, n_classes: int) -> None:
        if self.n_samples <= 0 or self.n_validation <= 0 or self.n_train <= 0:
            raise ConfigInvalid("split sizes must be positive")
        if self.n_models < 1:
            raise ConfigInvalid("need at least one pseudo-model")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ConfigInvalid("outlier_fraction must be in [0, 1]")
        if not 0.0 <= self.confusion <= 1.0:
            raise ConfigInvalid("confusion must be in [0, 1]")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ConfigInvalid("missing_rate must be in [0, 1]")
        if self.peak <= 0 or self.floor <= 0 or self.outlier_concentration <= 0:
            raise ConfigInvalid("concentrations must be positive")
        if self.class_mixture is not None:
            mix = np.asarray(self.class_mixture, dtype=np.float64)
            if mix.shape != (n_classes,) or np.any(mix < 0) or mix.sum() <= 0:
                raise ConfigInvalid(f"class_mixture must be {n_classes} non-negative weights")


@dataclass
class SplitData:
    """One split of generated data; member_proba is None for the train split."""

    ids: list[str]
    y: np.ndarray                                   # -1 marks planted outliers
    member_proba: dict[str, np.ndarray] | None
    metadata: list[MetadataRecord]


@dataclass
class SyntheticDataset:
    config: SynthConfig
    taxonomy: ClassTaxonomy
    model_names: list[str]
    train: SplitData
    validation: SplitData
    test: SplitData
    outlier_ids: list[str] = field(default_factory=list)


def _default_mixture(taxonomy: ClassTaxonomy) -> np.ndarray:
    counts = np.array(
        [ISIC2019_TRAIN_COUNTS.get(lab, 1) for lab in taxonomy.known_labels], dtype=np.float64
    )
    return counts / counts.sum()


class _Sampler:
    def __init__(self, config: SynthConfig, taxonomy: ClassTaxonomy, rng: np.random.Generator):
        self.cfg = config
        self.tax = taxonomy
        self.rng = rng
        k = taxonomy.n_classes
        if config.class_mixture is None:
            self.mixture = _default_mixture(taxonomy)
        else:
            mix = np.asarray(config.class_mixture, dtype=np.float64)
            self.mixture = mix / mix.sum()
        # class-conditional metadata structure, fixed per run
        self.region_affinity = rng.dirichlet(np.full(len(REGIONS), 1.2), size=k)
        self.age_mean = rng.uniform(30.0, 72.0, size=k)
        self.female_rate = rng.uniform(0.35, 0.65, size=k)

    def labels(self, n: int) -> np.ndarray:
        return self.rng.choice(self.tax.n_classes, size=n, p=self.mixture)

    def known_proba(self, t: int) -> np.ndarray:
        """One latent direction, one draw per model (models agree on the latent)."""
        k = self.tax.n_classes
        direction = np.zeros(k)
        direction[t] = 1.0
        if self.rng.random() < self.cfg.confusion:
            others = [c for c in range(k) if c != t]
            j = int(self.rng.choice(others))
            gamma = self.rng.uniform(0.35, 0.6)
            direction[t] = 1.0 - gamma
            direction[j] = gamma
        alpha = self.cfg.peak * direction + self.cfg.floor
        return np.stack([self.rng.dirichlet(alpha) for _ in range(self.cfg.n_models)])

    def outlier_proba(self) -> np.ndarray:
        k = self.tax.n_classes
        alpha = np.full(k, self.cfg.outlier_concentration)
        return np.stack([self.rng.dirichlet(alpha) for _ in range(self.cfg.n_models)])

    def metadata_for(self, sid: str, label: int | None) -> MetadataRecord:
        k = self.tax.n_classes
        if label is None:  # outliers carry unstructured metadata
            age = float(np.clip(self.rng.normal(50.0, 20.0), 0.0, 99.0))
            region = REGIONS[int(self.rng.integers(len(REGIONS)))]
            sex = "female" if self.rng.random() < 0.5 else "male"
        else:
            age = float(np.clip(self.rng.normal(self.age_mean[label], 12.0), 0.0, 99.0))
            region = REGIONS[int(self.rng.choice(len(REGIONS), p=self.region_affinity[label]))]
            sex = "female" if self.rng.random() < self.female_rate[label] else "male"
        age = float(5 * round(age / 5))  # challenge metadata quantizes age to 5 years
        drop = self.rng.random(3) < self.cfg.missing_rate
        return MetadataRecord(
            sample_id=sid,
            age=None if drop[0] else age,
            sex=None if drop[1] else sex,
            region=None if drop[2] else region,
        )


def generate(config: SynthConfig, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> SyntheticDataset:
    """Draw the full train/validation/test fixture set for one seed."""
    config.validate(taxonomy.n_classes)
    rng = np.random.default_rng(config.seed)
    sampler = _Sampler(config, taxonomy, rng)
    model_names = [f"model{m + 1:02d}" for m in range(config.n_models)]

    # train split: labels + metadata only (prior fitting needs no probabilities)
    train_ids = [f"trn{i:06d}" for i in range(config.n_train)]
    train_y = sampler.labels(config.n_train)
    train_meta = [sampler.metadata_for(sid, int(c)) for sid, c in zip(train_ids, train_y)]
    train = SplitData(ids=train_ids, y=train_y, member_proba=None, metadata=train_meta)

    # validation split: known classes only, as in a real train/val carve-out
    val_ids = [f"val{i:06d}" for i in range(config.n_validation)]
    val_y = sampler.labels(config.n_validation)
    val_stack = np.stack([sampler.known_proba(int(c)) for c in val_y])  # (n, m, k)
    val_meta = [sampler.metadata_for(sid, int(c)) for sid, c in zip(val_ids, val_y)]
    validation = SplitData(
        ids=val_ids,
        y=val_y,
        member_proba={name: val_stack[:, m] for m, name in enumerate(model_names)},
        metadata=val_meta,
    )

    # test split: knowns plus planted near-uniform outliers
    n = config.n_samples
    test_ids = [f"tst{i:06d}" for i in range(n)]
    test_y = sampler.labels(n).astype(np.int64)
    n_out = int(round(n * config.outlier_fraction))
    outlier_pos = sorted(rng.choice(n, size=n_out, replace=False).tolist()) if n_out else []
    is_outlier = np.zeros(n, dtype=bool)
    is_outlier[outlier_pos] = True
    test_stack = np.empty((n, config.n_models, taxonomy.n_classes))
    for i in range(n):
        if is_outlier[i]:
            test_y[i] = -1
            test_stack[i] = sampler.outlier_proba()
        else:
            test_stack[i] = sampler.known_proba(int(test_y[i]))
    test_meta = [
        sampler.metadata_for(sid, None if test_y[i] < 0 else int(test_y[i]))
        for i, sid in enumerate(test_ids)
    ]
    test = SplitData(
        ids=test_ids,
        y=test_y,
        member_proba={name: test_stack[:, m] for m, name in enumerate(model_names)},
        metadata=test_meta,
    )

    return SyntheticDataset(
        config=config,
        taxonomy=taxonomy,
        model_names=model_names,
        train=train,
        validation=validation,
        test=test,
        outlier_ids=[test_ids[i] for i in outlier_pos],
    )


def write_fixture_files(dataset: SyntheticDataset, out_dir) -> dict[str, str]:
    """Write every fixture file under out_dir; returns a name -> path map."""
    os.makedirs(out_dir, exist_ok=True)
    tax = dataset.taxonomy
    paths: dict[str, str] = {}

    def _put(key, filename):
        paths[key] = os.path.join(out_dir, filename)
        return paths[key]

    for name in dataset.model_names:
        io.write_probability_csv(
            _put(f"{name}_val", f"{name}_val.csv"),
            dataset.validation.ids,
            dataset.validation.member_proba[name],
            tax,
        )
        io.write_probability_csv(
            _put(f"{name}_test", f"{name}_test.csv"),
            dataset.test.ids,
            dataset.test.member_proba[name],
            tax,
        )
    io.write_truth_csv(_put("val_truth", "val_truth.csv"), dataset.validation.ids, dataset.validation.y, tax)
    io.write_truth_csv(_put("test_truth", "test_truth.csv"), dataset.test.ids, dataset.test.y, tax)
    io.write_truth_csv(_put("train_truth", "train_truth.csv"), dataset.train.ids, dataset.train.y, tax)
    io.write_metadata_csv(_put("train_meta", "train_meta.csv"), dataset.train.metadata)
    io.write_metadata_csv(_put("val_meta", "val_meta.csv"), dataset.validation.metadata)
    io.write_metadata_csv(_put("test_meta", "test_meta.csv"), dataset.test.metadata)

    io.write_id_list_csv(_put("planted_outliers", "planted_outliers.csv"), dataset.outlier_ids)
    return paths
