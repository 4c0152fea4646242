import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpicl_audit.mechanisms import (
    Exemplar,
    ExemplarContext,
    MechanismConfig,
    NeighboringPair,
    VoteVector,
    clip_to_unit,
    esa_aggregate,
    esa_noise_scale,
    esa_select,
    esa_sensitivity,
    partition,
    private_vote,
    voting_noise_scale,
)
from dpicl_audit.stats import std_normal_cdf


def make_context(n, canary_index=None):
    return ExemplarContext(
        exemplars=tuple(Exemplar(f"in {i}", f"out {i}") for i in range(n)),
        canary_index=canary_index,
    )


class FixedNoise:
    """rng stand-in returning a prescribed noise vector."""

    def __init__(self, offsets):
        self.offsets = np.asarray(offsets, dtype=np.float64)

    def normal(self, loc, scale, size):
        assert size == len(self.offsets)
        return self.offsets


class TestPartition:
    def test_singletons(self):
        subsets = partition(make_context(10), 10)
        assert len(subsets) == 10
        assert all(len(s.exemplars) == 1 for s in subsets)

    def test_round_robin(self):
        subsets = partition(make_context(8), 4)
        for i, subset in enumerate(subsets):
            assert subset.indices == (i, i + 4)

    def test_canary_lands_in_one_subset(self):
        subsets = partition(make_context(8, canary_index=3), 4)
        flags = [s.contains_canary for s in subsets]
        assert flags == [False, False, False, True]

    @given(st.integers(min_value=2, max_value=14), st.integers(min_value=0, max_value=27))
    def test_disjoint_cover(self, T, canary_index):
        n = 28
        subsets = partition(make_context(n, canary_index=canary_index), T)
        seen = sorted(i for s in subsets for i in s.indices)
        assert seen == list(range(n))
        assert sum(s.contains_canary for s in subsets) == 1

    def test_too_few_exemplars_errors(self):
        with pytest.raises(ValueError):
            partition(make_context(3), 4)

    def test_padding_duplicates_non_canary(self):
        subsets = partition(make_context(3, canary_index=1), 5, pad=True)
        assert len(subsets) == 5
        assert all(len(s.exemplars) == 1 for s in subsets)
        assert sum(s.contains_canary for s in subsets) == 1


class TestNeighboringPair:
    def test_insert_canary(self):
        base = [Exemplar(f"in {i}") for i in range(6)]
        pair = NeighboringPair.insert_canary(base, Exemplar("CANARY"), 2)
        assert pair.with_canary.canary_index == 2
        assert pair.with_canary.exemplars[2].text_in == "CANARY"
        assert pair.without_canary.exemplars[2].text_in == "in 2"

    def test_rejects_identical_contexts(self):
        ctx = make_context(4, canary_index=0)
        with pytest.raises(ValueError):
            NeighboringPair(with_canary=ctx, without_canary=ctx)


class TestNoiseScales:
    def test_arranged_cancellation(self):
        # delta = 1.25/e makes the log term exactly 1
        assert voting_noise_scale(2.0, 1.25 / math.e) == pytest.approx(1.0, abs=1e-12)

    def test_reference_value(self):
        assert voting_noise_scale(1.0, 1e-5) == pytest.approx(2.0 * math.sqrt(math.log(125000.0)), abs=1e-12)
        assert voting_noise_scale(1.0, 1e-5) == pytest.approx(6.8517, abs=2e-4)

    def test_inverse_scaling_in_eps(self):
        for eps in (0.5, 1.0, 3.0, 8.0):
            assert voting_noise_scale(eps, 1e-5) == pytest.approx(voting_noise_scale(1.0, 1e-5) / eps)

    def test_classic_calibration_adds_sqrt2(self):
        assert voting_noise_scale(2.0, 1e-5, classic_calibration=True) == pytest.approx(
            math.sqrt(2.0) * voting_noise_scale(2.0, 1e-5)
        )

    def test_esa_tight_cancellation(self):
        config = MechanismConfig(eps_theory=2.0, delta=1.25 / math.e, num_partitions=2,
                                 sensitivity_mode="esa_tight")
        assert esa_noise_scale(config) == pytest.approx(0.5, abs=1e-12)

    def test_esa_tight_is_voting_over_T(self):
        config = MechanismConfig(eps_theory=3.0, delta=1e-5, num_partitions=6,
                                 sensitivity_mode="esa_tight")
        assert esa_noise_scale(config) == pytest.approx(voting_noise_scale(3.0, 1e-5) / 6.0)

    def test_legacy_to_tight_ratio(self):
        for T in (2, 5, 12):
            tight = MechanismConfig(eps_theory=2.0, delta=1e-5, num_partitions=T,
                                    sensitivity_mode="esa_tight")
            legacy = MechanismConfig(eps_theory=2.0, delta=1e-5, num_partitions=T,
                                     sensitivity_mode="esa_legacy")
            assert esa_noise_scale(legacy) / esa_noise_scale(tight) == pytest.approx(T / 2.0)

    def test_voting_mode_rejected_for_esa(self):
        config = MechanismConfig(eps_theory=2.0, delta=1e-5, num_partitions=4)
        with pytest.raises(ValueError):
            esa_noise_scale(config)


class TestPrivateVote:
    def test_zero_noise_returns_clean_argmax(self):
        _, winner = private_vote(VoteVector((1, 9), 10), 0.0, np.random.default_rng(0))
        assert winner == 1

    def test_prescribed_noise_flips_winner(self):
        # clean [1, 9] perturbed to [5.5, 4]: the minority class wins
        noisy, winner = private_vote(VoteVector((1, 9), 10), 1.0, FixedNoise([4.5, -5.0]))
        assert noisy.values == (5.5, 4.0)
        assert winner == 0

    def test_prescribed_noise_keeps_winner(self):
        noisy, winner = private_vote(VoteVector((0, 10), 10), 1.0, FixedNoise([4.0, 1.0]))
        assert noisy.values == (4.0, 11.0)
        assert winner == 1

    def test_tie_breaks_to_lowest_index(self):
        _, winner = private_vote(VoteVector((5, 5), 10), 0.0, np.random.default_rng(0))
        assert winner == 0

    def test_two_class_winner_distribution(self):
        # analytic two-class law: P(winner = 0) = Phi((c0 - c1) / (sigma sqrt(2)))
        clean, sigma, draws = VoteVector((1, 3), 4), 1.0, 1_000_000
        rng = np.random.default_rng(42)
        wins = sum(1 for _ in range(draws) if private_vote(clean, sigma, rng)[1] == 0)
        expected = std_normal_cdf((1 - 3) / (sigma * math.sqrt(2.0)))
        se = math.sqrt(expected * (1 - expected) / draws)
        assert abs(wins / draws - expected) <= max(3 * se, 0.003)


class TestVoteVectorInvariants:
    def test_counts_must_sum_to_partitions(self):
        with pytest.raises(ValueError):
            VoteVector((1, 2), 4)

    @given(st.integers(min_value=2, max_value=14), st.data())
    @settings(max_examples=50)
    def test_neighboring_vectors_move_by_at_most_two(self, T, data):
        # canary-present vs canary-absent vote vectors from the same query:
        # one partition flips its vote, moving two coordinates by 1 each
        canary_subset = data.draw(st.integers(min_value=0, max_value=T - 1))
        votes_without = [1] * T  # every partition votes "no"
        votes_with = list(votes_without)
        votes_with[canary_subset] = 0  # the canary partition flips to "yes"
        with_counts = (votes_with.count(0), votes_with.count(1))
        without_counts = (votes_without.count(0), votes_without.count(1))
        v1 = VoteVector(with_counts, T)
        v0 = VoteVector(without_counts, T)
        diffs = [a - b for a, b in zip(v1.counts, v0.counts)]
        assert max(abs(d) for d in diffs) <= 2
        assert sorted(diffs) == [-1, 1]


class TestEsaSensitivity:
    def test_values(self):
        assert esa_sensitivity(1) == 2.0
        assert esa_sensitivity(4) == 0.5

    def test_uv_construction_attains_bound(self):
        rng = np.random.default_rng(7)
        for T in (2, 5, 9):
            others = rng.normal(size=(T - 1, 16))
            others /= np.linalg.norm(others, axis=1, keepdims=True)
            u = np.zeros(16)
            u[0] = 1.0
            mean_plus = np.vstack([others, u]).mean(axis=0)
            mean_minus = np.vstack([others, -u]).mean(axis=0)
            assert abs(np.linalg.norm(mean_plus - mean_minus) - 2.0 / T) <= 1e-12

    def test_random_swaps_respect_bound(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            T = int(rng.integers(2, 15))
            vectors = rng.normal(size=(T, 16))
            vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
            replacement = rng.normal(size=16)
            replacement /= np.linalg.norm(replacement)
            position = int(rng.integers(0, T))
            swapped = vectors.copy()
            swapped[position] = replacement
            delta = np.linalg.norm(vectors.mean(axis=0) - swapped.mean(axis=0))
            assert delta <= 2.0 / T + 1e-12


class TestEsaAggregate:
    def test_identity_on_single_embedding(self):
        v = np.array([0.6, 0.8])
        out = esa_aggregate([v], 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(out, v)

    def test_opposite_vectors_cancel(self):
        u = np.array([1.0, 0.0])
        out = esa_aggregate([u, -u], 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(out, np.zeros(2))

    def test_one_dimensional_signal_example(self):
        # one partition answered y1 (-1), one answered y0 (+1): clean mean 0
        out = esa_aggregate([np.array([-1.0]), np.array([1.0])], 0.0, np.random.default_rng(0))
        assert out == pytest.approx(0.0)

    def test_noiseless_mean_is_exact(self):
        rng = np.random.default_rng(3)
        vectors = rng.normal(size=(7, 5))
        out = esa_aggregate(list(vectors), 0.0, rng)
        np.testing.assert_array_equal(out, vectors.mean(axis=0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            esa_aggregate([np.zeros(3), np.zeros(4)], 0.0, np.random.default_rng(0))


class TestEsaSelect:
    def test_exact_match(self):
        candidates = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([-1.0, 0.0])]
        assert esa_select(np.array([-1.0, 0.0]), candidates) == 2

    def test_one_dimensional_signal_example(self):
        # noisy mean -0.2 against the pool {-1, +1}: the -1 candidate wins
        assert esa_select(np.array([-0.2]), [np.array([-1.0]), np.array([1.0])]) == 0

    def test_equidistant_tie_breaks_low(self):
        assert esa_select(np.array([0.0]), [np.array([-1.0]), np.array([1.0])]) == 0

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            esa_select(np.array([0.0]), [])


class TestClipToUnit:
    def test_inside_ball_untouched(self):
        v = np.array([0.3, 0.4])
        np.testing.assert_array_equal(clip_to_unit(v), v)

    def test_outside_ball_scaled(self):
        v = np.array([3.0, 4.0])
        assert np.linalg.norm(clip_to_unit(v)) == pytest.approx(1.0)
