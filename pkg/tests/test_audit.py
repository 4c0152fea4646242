import json
import math

import numpy as np
import pytest

from dpicl_audit.audit import (
    AuditConfig,
    AuditReport,
    DecisionThreshold,
    append_report_csv,
    bootstrap_audit,
    decide_blackbox_classification,
    decide_blackbox_generation,
    decide_whitebox_classification,
    decide_whitebox_generation,
    generate_noisy_samples,
    run_audit,
    sweep_threshold,
    whitebox_statistic,
)
from dpicl_audit.gdp import AttackCounts, audit_epsilon, eps_from_mu_delta
from dpicl_audit.mechanisms import (
    Exemplar,
    MechanismConfig,
    NeighboringPair,
    NoisyVoteVector,
    VoteVector,
    voting_noise_scale,
)
from dpicl_audit.oracles import (
    CanaryDetectorConfig,
    CanaryDetectorEmbeddingOracle,
    CanaryDetectorVoteOracle,
    SignalPair,
)


def make_pair(n=8, canary_index=0):
    base = [Exemplar(f"in {i}", f"out {i}") for i in range(n)]
    return NeighboringPair.insert_canary(base, Exemplar("CANARY", "canary out"), canary_index)


def vote_config(threat="white_box", eps_theory=2.0, n_sample=20_000, seed=0, T=4, n_llm=1):
    mech = MechanismConfig(eps_theory=eps_theory, delta=1e-5, num_partitions=T)
    return AuditConfig(mechanism=mech, task="classification", threat_model=threat,
                       n_llm=n_llm, n_sample=n_sample, seed=seed)


def generation_config(threat="white_box", eps_theory=8.0, n_sample=20_000, seed=0, T=8):
    mech = MechanismConfig(eps_theory=eps_theory, delta=1e-5, num_partitions=T,
                           sensitivity_mode="esa_tight")
    return AuditConfig(mechanism=mech, task="generation", threat_model=threat,
                       n_llm=1, n_sample=n_sample, seed=seed)


ONE_D_PAIR = SignalPair(y1_text="target", y0_text="control",
                        y1_embedding=np.array([-1.0]), y0_embedding=np.array([1.0]))


class TestDecisionRules:
    def test_blackbox_classification(self):
        assert decide_blackbox_classification(0, yes_index=0) == 1
        assert decide_blackbox_classification(1, yes_index=0) == 0

    def test_blackbox_classification_on_example_votes(self):
        # noisy [5.5, 4] releases "yes"; noisy [4, 11] releases "no"
        assert decide_blackbox_classification(int(np.argmax([5.5, 4.0]))) == 1
        assert decide_blackbox_classification(int(np.argmax([4.0, 11.0]))) == 0

    def test_whitebox_classification_examples(self):
        tau = DecisionThreshold(0.0)
        assert decide_whitebox_classification(NoisyVoteVector((5.5, 4.0), 1.0), tau) == 1
        assert decide_whitebox_classification(NoisyVoteVector((4.0, 11.0), 1.0), tau) == 0

    def test_whitebox_classification_is_strict(self):
        tau = DecisionThreshold(1.5)
        assert decide_whitebox_classification(NoisyVoteVector((4.0, 2.5), 1.0), tau) == 0

    def test_blackbox_generation(self):
        assert decide_blackbox_generation(0, ONE_D_PAIR) == 1
        assert decide_blackbox_generation(1, ONE_D_PAIR) == 0

    def test_blackbox_generation_non_signal_warns(self):
        pool = [ONE_D_PAIR.y1_embedding, ONE_D_PAIR.y0_embedding, np.array([0.25])]
        with pytest.warns(UserWarning):
            assert decide_blackbox_generation(2, ONE_D_PAIR, candidates=pool) == 0

    def test_blackbox_generation_duplicate_signal_in_pool(self):
        # a duplicate of y1 later in the pool still counts as y1
        pool = [ONE_D_PAIR.y1_embedding, ONE_D_PAIR.y0_embedding, ONE_D_PAIR.y1_embedding]
        assert decide_blackbox_generation(2, ONE_D_PAIR, candidates=pool) == 1

    def test_whitebox_generation(self):
        tau = DecisionThreshold(0.0)
        assert decide_whitebox_generation(ONE_D_PAIR.y1_embedding, ONE_D_PAIR, tau) == 1
        assert decide_whitebox_generation(ONE_D_PAIR.y0_embedding, ONE_D_PAIR, tau) == 0

    def test_whitebox_generation_boundary_is_non_strict(self):
        midpoint = (ONE_D_PAIR.y1_embedding + ONE_D_PAIR.y0_embedding) / 2.0
        assert decide_whitebox_generation(midpoint, ONE_D_PAIR, DecisionThreshold(0.0)) == 1

    def test_generation_example_mean(self):
        # DP mean -0.2 against the pool {-1, +1} selects the target string
        from dpicl_audit.mechanisms import esa_select

        selected = esa_select(np.array([-0.2]), [ONE_D_PAIR.y1_embedding, ONE_D_PAIR.y0_embedding])
        assert decide_blackbox_generation(selected, ONE_D_PAIR) == 1

    def test_threshold_must_be_finite(self):
        with pytest.raises(ValueError):
            DecisionThreshold(math.inf)


class TestSweepThreshold:
    def test_single_midpoint(self):
        tau, _ = sweep_threshold([1.0], [0.0], 0.95, 1e-5)
        assert tau.tau == pytest.approx(0.5)

    def test_perfect_separation_matches_zero_error_counts(self):
        rng = np.random.default_rng(0)
        with_stats = rng.normal(10.0, 0.1, size=500)
        without_stats = rng.normal(-10.0, 0.1, size=500)
        tau, estimate = sweep_threshold(with_stats, without_stats, 0.95, 1e-5)
        oracle = audit_epsilon(AttackCounts(500, 0, 0, 500), 0.95, 1e-5)
        assert estimate.mu_lower == pytest.approx(oracle.mu_lower, abs=1e-6)
        assert -10.0 < tau.tau < 10.0

    def test_identical_distributions_yield_zero(self):
        rng = np.random.default_rng(1)
        stats = rng.normal(size=2000)
        _, estimate = sweep_threshold(stats, stats, 0.95, 1e-5)
        assert estimate.mu_lower == 0.0
        assert estimate.eps_emp == 0.0

    def test_less_equal_rule(self):
        # smaller statistics indicate membership under the distance rule
        rng = np.random.default_rng(2)
        member = rng.normal(-3.0, 0.2, size=50)
        non_member = rng.normal(3.0, 0.2, size=50)
        tau, estimate = sweep_threshold(member, non_member, 0.95, 1e-5, rule="less_equal")
        assert -2.0 < tau.tau < 2.0
        assert estimate.mu_lower > 0

    def test_tie_breaks_to_smallest_tau(self):
        # identical lists: every informative threshold ranks equal, the
        # smallest one wins
        tau, estimate = sweep_threshold([0.0, 1.0], [0.0, 1.0], 0.95, 1e-5)
        assert tau.tau == pytest.approx(0.0)
        assert estimate.mu_lower == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sweep_threshold([], [1.0], 0.95, 1e-5)


class TestBootstrapAudit:
    def test_noiseless_separation(self):
        # eps_theory so large the noise never moves the clean statistics:
        # the white-box threshold separates perfectly and epsilon is
        # governed purely by the zero-count CP bounds
        config = vote_config(threat="white_box", eps_theory=1e9, n_sample=5_000)
        report = bootstrap_audit([VoteVector((1, 3), 4)], [VoteVector((0, 4), 4)], config)
        assert report.counts.true_positives == 5_000
        assert report.counts.false_positives == 0
        oracle = audit_epsilon(AttackCounts(5_000, 0, 0, 5_000), 0.95, 1e-5)
        assert report.estimate.eps_emp == pytest.approx(oracle.eps_emp, abs=1e-9)
        assert math.isinf(report.eps_emp_point)

    def test_noiseless_blackbox_saturates(self):
        # with a yes-minority vote pattern and no noise, the released label
        # is "no" under both hypotheses: the black-box signal vanishes
        config = vote_config(threat="black_box", eps_theory=1e9, n_sample=5_000)
        report = bootstrap_audit([VoteVector((1, 3), 4)], [VoteVector((0, 4), 4)], config)
        assert report.counts.true_positives == 0
        assert report.counts.false_positives == 0
        assert report.estimate.eps_emp == 0.0

    def test_degenerate_lists_match_direct_sampling(self):
        # bootstrap over single-vector lists IS the Gaussian channel
        from scipy.stats import ks_2samp

        config = vote_config(n_sample=20_000, seed=4)
        sigma = voting_noise_scale(2.0, 1e-5)
        noisy = generate_noisy_samples([VoteVector((1, 3), 4)], config, arm=0)
        stat = whitebox_statistic(noisy, config)
        rng = np.random.default_rng(999)
        direct = (1 - 3) + rng.normal(0.0, sigma * math.sqrt(2.0), size=20_000)
        assert ks_2samp(stat, direct).statistic < 0.015

    def test_whitebox_dominates_blackbox_on_shared_draws(self):
        clean_with = [VoteVector((1, 3), 4)]
        clean_without = [VoteVector((0, 4), 4)]
        for seed in (0, 1, 2):
            white = bootstrap_audit(clean_with, clean_without, vote_config("white_box", seed=seed))
            black = bootstrap_audit(clean_with, clean_without, vote_config("black_box", seed=seed))
            assert white.estimate.mu_lower >= black.estimate.mu_lower - 1e-12

    def test_deterministic_across_worker_counts(self):
        clean_with = [VoteVector((1, 3), 4), VoteVector((2, 2), 4)]
        clean_without = [VoteVector((0, 4), 4)]
        config = vote_config(n_sample=150_000, seed=9)
        solo = bootstrap_audit(clean_with, clean_without, config, workers=1)
        pooled = bootstrap_audit(clean_with, clean_without, config, workers=8)
        assert solo.to_json() == pooled.to_json()

    def test_soundness_against_exact_gaussian_channel(self):
        # clean [1,3] vs [0,4] is the margin-1 channel with mu* = sqrt(2)/sigma;
        # the sweep may overshoot mu* only by its selection slack
        sigma = voting_noise_scale(2.0, 1e-5)
        mu_star = math.sqrt(2.0) / sigma
        clean_with = [VoteVector((1, 3), 4)]
        clean_without = [VoteVector((0, 4), 4)]
        excesses = []
        for seed in range(10):
            config = vote_config("white_box", n_sample=100_000, seed=seed)
            report = bootstrap_audit(clean_with, clean_without, config)
            excesses.append(report.estimate.mu_lower - mu_star)
        # threshold selection biases the estimate slightly upward; the CP
        # penalty keeps it within a small slack and below mu* in most runs
        assert max(excesses) <= 0.06
        assert np.mean(np.asarray(excesses) <= 0.0) >= 0.5

    def test_generation_whitebox_pipeline(self):
        signal = SignalPair.synthetic(0.7476, 16)
        clean_with = [(signal.y1_embedding + 7 * signal.y0_embedding) / 8.0]
        clean_without = [signal.y0_embedding]
        config = generation_config(n_sample=50_000)
        report = bootstrap_audit(clean_with, clean_without, config, signal_pair=signal)
        assert 0.0 < report.estimate.eps_emp < 8.0
        assert report.tau is not None

    def test_generation_blackbox_larger_pool(self):
        signal = SignalPair.synthetic(0.7476, 16)
        far = np.zeros(16)
        far[2] = 1.0
        clean_with = [signal.y1_embedding]
        clean_without = [signal.y0_embedding]
        config = generation_config(threat="black_box", eps_theory=1e9, n_sample=1_000)
        report = bootstrap_audit(clean_with, clean_without, config, signal_pair=signal,
                                 candidates=[signal.y1_embedding, signal.y0_embedding, far])
        assert report.counts.true_positives == 1_000

    def test_missing_signal_pair_rejected(self):
        config = generation_config()
        with pytest.raises(ValueError):
            bootstrap_audit([np.zeros(4)], [np.zeros(4)], config)


class TestRunAudit:
    def test_pure_noise_oracle_certifies_nothing(self):
        oracle = CanaryDetectorVoteOracle(CanaryDetectorConfig(flip_probability=0.5))
        for threat in ("black_box", "white_box"):
            config = vote_config(threat, n_sample=50_000, seed=3, n_llm=200)
            report = run_audit(config, oracle, make_pair(), "CANARY")
            assert report.estimate.eps_emp <= 0.05

    def test_headline_desk_scale_point(self):
        oracle = CanaryDetectorVoteOracle()
        config = vote_config("white_box", eps_theory=1.0, n_sample=100_000, seed=1, n_llm=200)
        report = run_audit(config, oracle, make_pair(), "CANARY")
        assert report.estimate.eps_emp == pytest.approx(0.735, rel=0.15)

    def test_task_mismatch_rejected(self):
        oracle = CanaryDetectorEmbeddingOracle(SignalPair.synthetic(0.5))
        config = vote_config()
        with pytest.raises(ValueError):
            run_audit(config, oracle, make_pair(), "CANARY")

    def test_monotone_in_n_sample_for_perfect_separation(self):
        oracle = CanaryDetectorVoteOracle()
        values = []
        for n_sample in (1_000, 10_000, 100_000):
            config = vote_config("white_box", eps_theory=1e9, n_sample=n_sample, seed=0, n_llm=50)
            report = run_audit(config, oracle, make_pair(), "CANARY")
            values.append(report.estimate.eps_emp)
        assert values == sorted(values)
        assert values[0] > 0


class TestReporting:
    def make_report(self):
        config = vote_config(n_sample=2_000, seed=5)
        return bootstrap_audit([VoteVector((1, 3), 4)], [VoteVector((0, 4), 4)], config)

    def test_json_is_deterministic_and_excludes_wall_time(self):
        report = self.make_report()
        payload = json.loads(report.to_json())
        assert "wall_ms" not in payload
        assert payload["counts"]["tp"] + payload["counts"]["fn"] == 2_000
        assert report.to_json() == self.make_report().to_json()

    def test_infinite_point_estimate_serializes_as_flag(self):
        config = vote_config("black_box", eps_theory=1e9, n_sample=500)
        report = bootstrap_audit([VoteVector((1, 3), 4)], [VoteVector((0, 4), 4)], config)
        payload = json.loads(report.to_json())
        assert payload["eps_emp_point"] == "inf"

    def test_csv_append(self, tmp_path):
        path = tmp_path / "reports.csv"
        report = self.make_report()
        append_report_csv(path, report)
        append_report_csv(path, report)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert lines[0].split(",")[:4] == ["task", "threat", "T", "eps_theory"]
        assert lines[1] == lines[2]

    def test_config_validation(self):
        mech = MechanismConfig(eps_theory=1.0, delta=1e-5, num_partitions=4)
        with pytest.raises(ValueError):
            AuditConfig(mechanism=mech, task="nope", threat_model="white_box", n_llm=1)
        with pytest.raises(ValueError):
            AuditConfig(mechanism=mech, task="classification", threat_model="white_box",
                        n_llm=1, n_sample=0)
