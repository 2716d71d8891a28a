import math

import numpy as np
import pytest

from openderm import ClassTaxonomy, DEFAULT_TAXONOMY, top_k, validate_probability
from openderm.errors import KOutOfRange, LengthMismatch, NegativeEntry, SumOutOfTolerance
from openderm.taxonomy import (
    LabeledRecord,
    ProbabilityRecord,
    labeled_records_to_arrays,
    records_to_arrays,
)

from conftest import random_simplex
from oracles import top_k_oracle


class TestClassTaxonomy:
    def test_default_has_eight_known_labels(self):
        assert DEFAULT_TAXONOMY.n_classes == 8
        assert DEFAULT_TAXONOMY.known_labels == ("MEL", "NV", "BCC", "AK", "BKL", "DF", "VASC", "SCC")
        assert DEFAULT_TAXONOMY.unknown_label == "UNK"

    def test_max_entropy_is_three_bits_for_default(self):
        assert DEFAULT_TAXONOMY.max_entropy_bits == 3.0

    def test_rejects_duplicate_labels(self):
        with pytest.raises(ValueError, match="duplicate"):
            ClassTaxonomy(known_labels=("A", "B", "A"))

    def test_rejects_unknown_label_collision(self):
        with pytest.raises(ValueError, match="collides"):
            ClassTaxonomy(known_labels=("A", "B"), unknown_label="B")

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ClassTaxonomy(known_labels=())
        with pytest.raises(ValueError):
            ClassTaxonomy(known_labels=("A", ""))

    def test_index_of(self):
        assert DEFAULT_TAXONOMY.index_of("NV") == 1
        with pytest.raises(KeyError):
            DEFAULT_TAXONOMY.index_of("nope")


class TestValidateProbability:
    def test_one_hot_unchanged(self):
        vec = [1, 0, 0, 0, 0, 0, 0, 0]
        out = validate_probability(vec, 8)
        assert out.tolist() == [1.0] + [0.0] * 7

    def test_uniform_unchanged(self):
        out = validate_probability([0.125] * 8, 8)
        assert out.tolist() == [0.125] * 8

    def test_small_drift_renormalized_by_divide_by_sum(self):
        # derived oracle: dividing by the actual sum
        vec = [0.5, 0.5000004, 0, 0, 0, 0, 0, 0]
        total = math.fsum(vec)
        expected = np.asarray(vec, dtype=np.float64) / total
        out = validate_probability(vec, 8, tolerance=1e-6)
        assert out.tolist() == expected.tolist()
        assert abs(math.fsum(out.tolist()) - 1.0) < 1e-15

    def test_negative_entry_rejected(self):
        with pytest.raises(NegativeEntry):
            validate_probability([1.1, -0.1, 0, 0, 0, 0, 0, 0], 8)

    def test_sum_out_of_tolerance_rejected(self):
        with pytest.raises(SumOutOfTolerance):
            validate_probability([0.5, 0.51, 0, 0, 0, 0, 0, 0], 8, tolerance=1e-6)

    def test_length_mismatch_rejected(self):
        with pytest.raises(LengthMismatch):
            validate_probability([0.5, 0.5], 8)

    def test_idempotent_on_random_vectors(self, rng):
        for _ in range(200):
            raw = rng.dirichlet(np.full(8, 0.7))
            # perturb within tolerance to force the renormalization path
            raw = raw * (1.0 + rng.uniform(-8e-7, 8e-7))
            once = validate_probability(raw, 8)
            twice = validate_probability(once, 8)
            assert twice.tolist() == once.tolist()


class TestTopK:
    def test_one_hot_top1(self):
        vec = np.zeros(8)
        vec[2] = 1.0
        assert top_k(vec, 1) == [(2, 1.0)]

    def test_uniform_tie_breaks_by_index(self):
        assert top_k([0.125] * 8, 2) == [(0, 0.125), (1, 0.125)]

    def test_matches_full_sort_oracle(self):
        vec = [0.1, 0.4, 0.3, 0.2, 0, 0, 0, 0]
        assert top_k(vec, 2) == [(1, 0.4), (2, 0.3)]
        assert top_k(vec, 2) == top_k_oracle(vec, 2)

    def test_k_out_of_range(self):
        with pytest.raises(KOutOfRange):
            top_k([0.5, 0.5], 3)
        with pytest.raises(KOutOfRange):
            top_k([0.5, 0.5], 0)

    def test_head_is_argmax_and_probs_non_increasing(self, rng):
        for _ in range(300):
            vec = random_simplex(rng, 1, 8)[0]
            ranked = top_k(vec, 8)
            assert vec[ranked[0][0]] == vec.max()
            probs = [p for _, p in ranked]
            assert all(a >= b for a, b in zip(probs, probs[1:]))
            assert ranked == top_k_oracle(vec.tolist(), 8)


class TestRecords:
    def test_probability_record_requires_id(self):
        with pytest.raises(ValueError):
            ProbabilityRecord(sample_id="", probs=[1.0, 0.0])

    def test_labeled_record_range_check(self):
        with pytest.raises(ValueError):
            LabeledRecord(sample_id="x", probs=[1.0, 0.0], true_label=2)
        rec = LabeledRecord(sample_id="x", probs=[1.0, 0.0], true_label=0)
        assert rec.true_label == 0

    def test_records_to_arrays(self):
        records = [
            LabeledRecord("a", [0.9, 0.1], 0),
            LabeledRecord("b", [0.2, 0.8], 1),
        ]
        ids, X, y = labeled_records_to_arrays(records)
        assert ids == ["a", "b"]
        assert X.tolist() == [[0.9, 0.1], [0.2, 0.8]]
        assert y.tolist() == [0, 1]

    def test_records_to_arrays_rejects_duplicates(self):
        records = [ProbabilityRecord("a", [1.0, 0.0])] * 2
        with pytest.raises(ValueError):
            records_to_arrays(records)
