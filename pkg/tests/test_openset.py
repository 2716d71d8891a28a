import json
import math

import numpy as np
import pytest

from openderm import (
    ClassTaxonomy,
    EntropyOutlierDetector,
    RejectionStage,
    cosine_similarity,
    entropy_bits,
    shannon_entropy,
)
from openderm.errors import EmptyValidationSet, NegativeEntry, UnfittableClassWarning, ZeroVector

from conftest import random_simplex
from oracles import cosine_oracle, entropy_oracle, group_stats_oracle


class TestShannonEntropy:
    def test_one_hot_is_exactly_zero(self):
        assert shannon_entropy([0, 0, 1, 0, 0, 0, 0, 0]) == 0.0

    def test_uniform_eight_is_exactly_three_bits(self):
        assert shannon_entropy([0.125] * 8) == 3.0

    def test_frozen_two_class_value(self):
        # -(0.7 log2 0.7 + 0.3 log2 0.3), evaluated independently
        assert shannon_entropy([0.7, 0.3, 0, 0, 0, 0, 0, 0]) == pytest.approx(
            0.8812908992306927, abs=1e-15
        )

    def test_permutation_invariance_is_exact(self, rng):
        for _ in range(200):
            vec = random_simplex(rng, 1, 8)[0]
            base = shannon_entropy(vec)
            perm = rng.permutation(vec)
            assert shannon_entropy(perm) == base

    def test_bounds_and_uniform_maximum(self, rng):
        uniform_h = shannon_entropy([0.125] * 8)
        for _ in range(300):
            vec = random_simplex(rng, 1, 8, alpha=0.5)[0]
            h = shannon_entropy(vec)
            assert 0.0 <= h <= 3.0
            assert h <= uniform_h

    def test_zero_only_for_one_hots(self, rng):
        for _ in range(100):
            vec = random_simplex(rng, 1, 8)[0]
            if np.max(vec) < 1.0:
                assert shannon_entropy(vec) > 0.0

    def test_matches_sequential_oracle(self, rng):
        for _ in range(100):
            vec = random_simplex(rng, 1, 8)[0]
            assert shannon_entropy(vec) == pytest.approx(entropy_oracle(vec), abs=1e-12)

    def test_batch_matches_scalar(self, rng):
        X = random_simplex(rng, 50, 8)
        batch = entropy_bits(X)
        assert batch.tolist() == [shannon_entropy(row) for row in X]

    def test_negative_rejected(self):
        with pytest.raises(NegativeEntry):
            shannon_entropy([1.1, -0.1])


class TestCosineSimilarity:
    def test_self_similarity_is_one(self, rng):
        for _ in range(50):
            vec = rng.uniform(0.01, 1.0, size=8)
            assert cosine_similarity(vec, vec) == pytest.approx(1.0, abs=1e-12)

    def test_distinct_one_hots_are_orthogonal(self):
        assert cosine_similarity([1, 0, 0], [0, 1, 0]) == 0.0

    def test_frozen_value_inverse_sqrt2(self):
        assert cosine_similarity([1, 1, 0], [1, 0, 0]) == pytest.approx(
            1 / math.sqrt(2), abs=1e-15
        )

    def test_symmetry_exact(self, rng):
        for _ in range(100):
            x = rng.uniform(0, 1, size=8)
            y = rng.uniform(0, 1, size=8)
            assert cosine_similarity(x, y) == cosine_similarity(y, x)

    def test_scale_invariance(self, rng):
        for a in (0.5, 2.0, 10.0):
            for b in (0.5, 2.0, 10.0):
                x = rng.uniform(0.01, 1, size=8)
                y = rng.uniform(0.01, 1, size=8)
                assert cosine_similarity(a * x, b * y) == pytest.approx(
                    cosine_similarity(x, y), abs=1e-12
                )

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            cosine_similarity([0, 0, 0], [1, 0, 0])

    def test_matches_oracle(self, rng):
        for _ in range(100):
            x = rng.uniform(0.001, 1, size=8)
            y = rng.uniform(0.001, 1, size=8)
            assert cosine_similarity(x, y) == pytest.approx(cosine_oracle(x, y), abs=1e-12)


def _two_class_profile(
    hit_mean, hit_max, miss_mean, miss_max, hit_proba, miss_proba, similarity_mode="conjunctive"
):
    """Hand-built calibration state for a two-class taxonomy."""
    payload = {
        "labels": ["A", "B"],
        "unknown_label": "UNK",
        "similarity_mode": similarity_mode,
        "classes": {
            "A": {
                "hit": {"count": 4, "mean_entropy": hit_mean, "max_entropy": hit_max,
                        "mean_proba": list(hit_proba)},
                "miss": {"count": 2, "mean_entropy": miss_mean, "max_entropy": miss_max,
                         "mean_proba": list(miss_proba)},
            },
            "B": {
                "hit": {"count": 4, "mean_entropy": hit_mean, "max_entropy": hit_max,
                        "mean_proba": list(reversed(hit_proba))},
                "miss": {"count": 2, "mean_entropy": miss_mean, "max_entropy": miss_max,
                         "mean_proba": list(reversed(miss_proba))},
            },
        },
    }
    return EntropyOutlierDetector.from_profile(payload)


class TestFitProfile:
    def test_all_correct_one_hots(self):
        tax = ClassTaxonomy(known_labels=("A", "B"))
        det = EntropyOutlierDetector(taxonomy=tax)
        X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        det.fit(X, [0, 0, 1])
        assert det.hit_count_.tolist() == [2, 1]
        assert det.miss_count_.tolist() == [0, 0]
        assert det.hit_mean_entropy_.tolist() == [0.0, 0.0]
        assert det.hit_max_entropy_.tolist() == [0.0, 0.0]
        # empty miss group: entropy stats fall back to the hit stats,
        # direction falls back to uniform
        assert det.miss_mean_entropy_.tolist() == [0.0, 0.0]
        assert det.miss_mean_proba_.tolist() == [[0.5, 0.5], [0.5, 0.5]]

    def test_hand_built_groups_match_oracle(self):
        tax = ClassTaxonomy(known_labels=("A", "B"))
        rows = [
            [0.9, 0.1],   # predicted A, true A  (hit)
            [0.8, 0.2],   # predicted A, true A  (hit)
            [0.7, 0.3],   # predicted A, true B  (miss)
            [0.2, 0.8],   # predicted B, true B  (hit)
            [0.4, 0.6],   # predicted B, true B  (hit)
            [0.45, 0.55], # predicted B, true A  (miss)
        ]
        y = [0, 0, 1, 1, 1, 0]
        det = EntropyOutlierDetector(taxonomy=tax).fit(np.array(rows), y)
        oracle = group_stats_oracle(rows, y)
        for c in (0, 1):
            count, mean_h, max_h, mean_vec = oracle[c]["hit"]
            assert det.hit_count_[c] == count
            assert det.hit_mean_entropy_[c] == pytest.approx(mean_h, abs=1e-12)
            assert det.hit_max_entropy_[c] == pytest.approx(max_h, abs=1e-12)
            np.testing.assert_allclose(det.hit_mean_proba_[c], mean_vec, atol=1e-12, rtol=0)
            count, mean_h, max_h, mean_vec = oracle[c]["miss"]
            assert det.miss_count_[c] == count
            assert det.miss_mean_entropy_[c] == pytest.approx(mean_h, abs=1e-12)
            np.testing.assert_allclose(det.miss_mean_proba_[c], mean_vec, atol=1e-12, rtol=0)

    def test_class_never_predicted_is_unfittable(self):
        tax = ClassTaxonomy(known_labels=("A", "B", "C"))
        X = np.array([[0.9, 0.1, 0.0], [0.8, 0.1, 0.1], [0.1, 0.9, 0.0]])
        det = EntropyOutlierDetector(taxonomy=tax).fit(X, [0, 0, 1])
        assert not det.fittable_[2]
        assert det.hit_count_[2] == 0
        assert det.miss_count_[2] == 0

    def test_random_sets_match_group_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 50))
            X = random_simplex(rng, n, 8)
            y = rng.integers(0, 8, size=n)
            det = EntropyOutlierDetector().fit(X, y)
            oracle = group_stats_oracle(X.tolist(), y.tolist())
            for c in range(8):
                for kind, counts, means, maxes, vecs in (
                    ("hit", det.hit_count_, det.hit_mean_entropy_,
                     det.hit_max_entropy_, det.hit_mean_proba_),
                    ("miss", det.miss_count_, det.miss_mean_entropy_,
                     det.miss_max_entropy_, det.miss_mean_proba_),
                ):
                    stats = oracle[c][kind]
                    if stats is None:
                        assert counts[c] == 0
                        continue
                    count, mean_h, max_h, mean_vec = stats
                    assert counts[c] == count
                    assert means[c] == pytest.approx(mean_h, abs=1e-12)
                    assert maxes[c] == pytest.approx(max_h, abs=1e-12)
                    np.testing.assert_allclose(vecs[c], mean_vec, atol=1e-12, rtol=0)

    def test_profile_invariants(self, rng):
        X = random_simplex(rng, 200, 8)
        y = rng.integers(0, 8, size=200)
        det = EntropyOutlierDetector().fit(X, y)
        for c in np.flatnonzero(det.fittable_):
            assert 0.0 <= det.hit_mean_entropy_[c] <= det.hit_max_entropy_[c] <= 3.0
            assert 0.0 <= det.miss_mean_entropy_[c] <= det.miss_max_entropy_[c] <= 3.0
            assert math.fsum(det.hit_mean_proba_[c].tolist()) == pytest.approx(1.0, abs=1e-6)
            assert math.fsum(det.miss_mean_proba_[c].tolist()) == pytest.approx(1.0, abs=1e-6)

    def test_empty_validation_rejected(self):
        with pytest.raises(EmptyValidationSet):
            EntropyOutlierDetector().fit(np.empty((0, 8)), [])

    def test_label_length_mismatch_rejected(self, rng):
        with pytest.raises(EmptyValidationSet):
            EntropyOutlierDetector().fit(random_simplex(rng, 3, 8), [0, 1])


class TestDetect:
    def test_zero_entropy_record_is_accepted(self):
        det = _two_class_profile(0.3, 1.0, 0.5, 2.0, [0.9, 0.1], [0.5, 0.5])
        decisions = det.decide(np.array([[1.0, 0.0]]))
        assert decisions[0].stage is RejectionStage.ACCEPTED
        assert not decisions[0].is_unknown
        assert decisions[0].entropy_bits == 0.0

    def test_hand_walk_fails_at_midpoint(self):
        # h = 0.99277... passes the means (0.3, 0.5) but not the midpoint 1.5
        det = _two_class_profile(0.3, 1.0, 0.5, 2.0, [0.9, 0.1], [0.5, 0.5])
        [decision] = det.decide(np.array([[0.55, 0.45]]))
        assert decision.entropy_bits == pytest.approx(0.9927744539878083, abs=1e-12)
        assert decision.stage is RejectionStage.ABOVE_MEANS
        assert not decision.is_unknown

    def test_hand_walk_near_tie_still_under_midpoint(self):
        det = _two_class_profile(0.3, 1.0, 0.5, 2.0, [0.9, 0.1], [0.5, 0.5])
        [decision] = det.decide(np.array([[0.51, 0.49]]))
        assert decision.entropy_bits == pytest.approx(0.9997114417528099, abs=1e-12)
        assert decision.stage is RejectionStage.ABOVE_MEANS

    def test_hand_walk_full_rejection(self):
        # lower maxima so the midpoint is 0.45; the uniform record (h = 1.0)
        # clears it and sits exactly on the miss direction
        det = _two_class_profile(0.3, 0.4, 0.5, 0.5, [0.9, 0.1], [0.5, 0.5])
        [decision] = det.decide(np.array([[0.5, 0.5]]))
        assert decision.entropy_bits == 1.0
        sim_miss = cosine_similarity([0.5, 0.5], [0.5, 0.5])
        sim_hit = cosine_similarity([0.9, 0.1], [0.5, 0.5])
        assert sim_miss > sim_hit
        assert decision.stage is RejectionStage.UNKNOWN
        assert decision.is_unknown

    def test_hand_walk_cosine_saves_the_sample(self):
        # same thresholds but the profile directions are swapped: the sample
        # now resembles the hit group more, so the last check keeps it
        det = _two_class_profile(0.3, 0.4, 0.5, 0.5, [0.5, 0.5], [0.9, 0.1])
        [decision] = det.decide(np.array([[0.5, 0.5]]))
        assert decision.stage is RejectionStage.ABOVE_MIDPOINT
        assert not decision.is_unknown

    def test_standalone_mode_skips_midpoint(self):
        # midpoint 1.5 would block rejection in conjunctive mode
        conj = _two_class_profile(0.3, 1.0, 0.5, 2.0, [0.9, 0.1], [0.5, 0.5])
        [kept] = conj.decide(np.array([[0.5, 0.5]]))
        assert kept.stage is RejectionStage.ABOVE_MEANS
        alone = _two_class_profile(
            0.3, 1.0, 0.5, 2.0, [0.9, 0.1], [0.5, 0.5], similarity_mode="standalone"
        )
        [rejected] = alone.decide(np.array([[0.5, 0.5]]))
        assert rejected.stage is RejectionStage.UNKNOWN

    def test_unfittable_class_falls_back_to_accept(self):
        tax = ClassTaxonomy(known_labels=("A", "B", "C"))
        X = np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 0.0]])
        det = EntropyOutlierDetector(taxonomy=tax).fit(X, [0, 1])
        probe = np.array([[0.2, 0.2, 0.6]])  # predicted C, never calibrated
        with pytest.warns(UnfittableClassWarning):
            [decision] = det.decide(probe)
        assert decision.stage is RejectionStage.ACCEPTED

    def test_lowering_thresholds_never_unflags(self, rng):
        base = _two_class_profile(0.3, 0.4, 0.5, 0.5, [0.9, 0.1], [0.5, 0.5])
        lowered = _two_class_profile(0.1, 0.2, 0.2, 0.3, [0.9, 0.1], [0.5, 0.5])
        for _ in range(200):
            p = rng.dirichlet([2.0, 2.0])
            [d_base] = base.decide(np.array([p]))
            if d_base.is_unknown:
                [d_low] = lowered.decide(np.array([p]))
                assert d_low.is_unknown

    def test_decisions_are_deterministic(self, rng):
        X_cal = random_simplex(rng, 150, 8)
        # mostly-correct labels so every class ends up fittable
        y_cal = np.argmax(X_cal, axis=1)
        flip = rng.random(150) < 0.2
        y_cal[flip] = rng.integers(0, 8, size=int(flip.sum()))
        det = EntropyOutlierDetector().fit(X_cal, y_cal)
        X = random_simplex(rng, 40, 8)
        first = det.decide(X)
        second = det.decide(X)
        assert first == second


class TestFlagOutliers:
    def test_empty_batch(self, rng):
        X = random_simplex(rng, 30, 8)
        y = rng.integers(0, 8, size=30)
        det = EntropyOutlierDetector().fit(X, y)
        decisions, summary = det.flag_outliers(np.empty((0, 8)))
        assert decisions == []
        assert summary.unknown_count == 0
        assert summary.percentage == 0.0

    def test_one_hots_never_flagged(self):
        det = _two_class_profile(0.3, 1.0, 0.5, 2.0, [0.9, 0.1], [0.5, 0.5])
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        _, summary = det.flag_outliers(X)
        assert summary.unknown_count == 0

    def test_constructed_batch_counts_exactly(self):
        # midpoint (0.5 + 0.7) / 2 = 0.6; the 7 uniform rows have h = 1 and
        # lie on the miss direction, the 93 peaked rows have h = 0.14 < 0.2
        det = _two_class_profile(0.2, 0.5, 0.3, 0.7, [0.95, 0.05], [0.4, 0.6])
        rows = [[0.5, 0.5]] * 7 + [[0.98, 0.02]] * 93
        decisions, summary = det.flag_outliers(np.array(rows), [f"s{i:03d}" for i in range(100)])
        assert summary.unknown_count == 7
        assert summary.total == 100
        assert summary.percentage == 7.00
        flagged = [d.sample_id for d in decisions if d.is_unknown]
        assert flagged == [f"s{i:03d}" for i in range(7)]

    def test_percentage_rounding(self):
        det = _two_class_profile(0.2, 0.5, 0.3, 0.7, [0.95, 0.05], [0.4, 0.6])
        rows = [[0.5, 0.5]] + [[0.98, 0.02]] * 2
        _, summary = det.flag_outliers(np.array(rows))
        assert summary.percentage == 33.33


class TestProfileSerialization:
    def test_round_trip_preserves_decisions(self, rng):
        X = random_simplex(rng, 200, 8)
        y = np.argmax(X, axis=1)
        flip = rng.random(200) < 0.25
        y[flip] = rng.integers(0, 8, size=int(flip.sum()))
        det = EntropyOutlierDetector().fit(X, y)
        payload = json.loads(json.dumps(det.profile_dict()))
        clone = EntropyOutlierDetector.from_profile(payload)
        probe = random_simplex(rng, 50, 8, alpha=0.4)
        assert det.decide(probe) == clone.decide(probe)
        np.testing.assert_array_equal(det.hit_mean_proba_, clone.hit_mean_proba_)

    def test_unfittable_class_survives_round_trip(self):
        tax = ClassTaxonomy(known_labels=("A", "B", "C"))
        X = np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 0.0]])
        det = EntropyOutlierDetector(taxonomy=tax).fit(X, [0, 1])
        clone = EntropyOutlierDetector.from_profile(json.loads(json.dumps(det.profile_dict())))
        assert clone.fittable_.tolist() == [True, True, False]

    def test_get_params_round_trip(self):
        det = EntropyOutlierDetector(similarity_mode="standalone")
        params = det.get_params()
        assert params["similarity_mode"] == "standalone"
        clone = EntropyOutlierDetector(**params)
        assert clone.similarity_mode == "standalone"

    def test_sklearn_clone_compatible(self):
        from sklearn.base import clone

        det = EntropyOutlierDetector(similarity_mode="standalone")
        cloned = clone(det)
        assert cloned.similarity_mode == "standalone"
        assert cloned.taxonomy == det.taxonomy
