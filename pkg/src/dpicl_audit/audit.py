"""The audit engine: bootstrap membership-inference trials into GDP estimates.

For each of n_sample trials per hypothesis a clean response is resampled
with replacement, mechanism noise is added, and a decision rule converts it
into a membership bit. Black-box rules read only the released output;
white-box rules threshold a 1-D statistic (vote difference or embedding
distance difference) with the threshold chosen to maximize the mu lower
bound over the generated statistics themselves — audits certify lower
bounds, so overfitting the threshold only strengthens the attack.

All randomness is derived from (seed, hypothesis, trial block), so a report
is a pure function of its config and identical across worker counts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from .gdp import AttackCounts, GdpEstimate, audit_epsilon, eps_emp_dp
from .mechanisms import (
    MechanismConfig,
    NeighboringPair,
    NoisyVoteVector,
    VoteVector,
    esa_noise_scale,
    voting_noise_scale,
)
from .oracles import CleanCollection, SignalPair, collect
from .stats import binom_upper_bound_array

TASKS = ("classification", "generation")
THREAT_MODELS = ("black_box", "white_box")

# Trials are generated in fixed-size blocks, each with its own derived
# generator; block boundaries are independent of the worker count.
_TRIAL_BLOCK = 1 << 16

_ARM_WITH = 0
_ARM_WITHOUT = 1

CSV_COLUMNS = (
    "task", "threat", "T", "eps_theory", "delta", "n_llm", "n_sample", "gamma",
    "tp", "fp", "fn", "tn", "mu_lower", "eps_emp_gdp", "eps_emp_point", "tau",
    "seed", "wall_ms",
)


@dataclass(frozen=True)
class AuditConfig:
    mechanism: MechanismConfig
    task: str
    threat_model: str
    n_llm: int
    n_sample: int = 400_000
    confidence: float = 0.95
    delta_target: float = 1e-5
    seed: int = 0
    yes_index: int = 0
    no_index: int = 1

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.threat_model not in THREAT_MODELS:
            raise ValueError(f"threat_model must be one of {THREAT_MODELS}, got {self.threat_model!r}")
        if self.n_llm < 1:
            raise ValueError("n_llm must be positive")
        if self.n_sample < 1:
            raise ValueError("n_sample must be positive")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie in (0, 1)")
        if not (0.0 < self.delta_target < 1.0):
            raise ValueError("delta_target must lie in (0, 1)")
        if self.yes_index == self.no_index:
            raise ValueError("yes and no classes must differ")


@dataclass(frozen=True)
class DecisionThreshold:
    tau: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.tau):
            raise ValueError(f"tau must be finite, got {self.tau}")


@dataclass(frozen=True)
class AuditReport:
    counts: AttackCounts
    estimate: GdpEstimate
    eps_emp_point: float
    config: AuditConfig
    tau: Optional[float] = None
    wall_ms: float = 0.0

    def to_json_dict(self) -> dict:
        # Deterministic content only: wall time goes to the CSV row, never
        # into the JSON report, so reruns are byte-identical.
        mech = asdict(self.config.mechanism)
        return {
            "task": self.config.task,
            "threat_model": self.config.threat_model,
            "mechanism": mech,
            "n_llm": self.config.n_llm,
            "n_sample": self.config.n_sample,
            "confidence": self.config.confidence,
            "delta_target": self.config.delta_target,
            "seed": self.config.seed,
            "yes_index": self.config.yes_index,
            "no_index": self.config.no_index,
            "counts": {
                "tp": self.counts.true_positives,
                "fp": self.counts.false_positives,
                "fn": self.counts.false_negatives,
                "tn": self.counts.true_negatives,
            },
            "alpha_bar": self.estimate.alpha_bar,
            "beta_bar": self.estimate.beta_bar,
            "mu_lower": self.estimate.mu_lower,
            "eps_emp_gdp": _jsonable(self.estimate.eps_emp),
            "eps_emp_point": _jsonable(self.eps_emp_point),
            "tau": _jsonable(self.tau),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv_row(self) -> dict:
        return {
            "task": self.config.task,
            "threat": self.config.threat_model,
            "T": self.config.mechanism.num_partitions,
            "eps_theory": self.config.mechanism.eps_theory,
            "delta": self.config.mechanism.delta,
            "n_llm": self.config.n_llm,
            "n_sample": self.config.n_sample,
            "gamma": self.config.confidence,
            "tp": self.counts.true_positives,
            "fp": self.counts.false_positives,
            "fn": self.counts.false_negatives,
            "tn": self.counts.true_negatives,
            "mu_lower": self.estimate.mu_lower,
            "eps_emp_gdp": _jsonable(self.estimate.eps_emp),
            "eps_emp_point": _jsonable(self.eps_emp_point),
            "tau": _jsonable(self.tau),
            "seed": self.config.seed,
            "wall_ms": round(self.wall_ms, 3),
        }


def _jsonable(value):
    if value is None:
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def append_report_csv(path: Union[str, Path], report: AuditReport) -> None:
    """Append one report row; the fully composed line lands in a single write."""
    path = Path(path)
    row = report.to_csv_row()
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    if not path.exists() or path.stat().st_size == 0:
        writer.writeheader()
    writer.writerow(row)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(buffer.getvalue())
        handle.flush()
        os.fsync(handle.fileno())


# ---------------------------------------------------------------------------
# Decision rules
# ---------------------------------------------------------------------------

def decide_blackbox_classification(winner: int, yes_index: int = 0) -> int:
    """1 iff the released label is the designated "yes" class."""
    if winner < 0:
        raise ValueError("winner must be a valid class index")
    return 1 if winner == yes_index else 0


def decide_whitebox_classification(
    noisy: NoisyVoteVector, tau: DecisionThreshold, yes_index: int = 0, no_index: int = 1
) -> int:
    """1 iff noisy yes-count minus noisy no-count strictly exceeds tau."""
    return 1 if noisy.values[yes_index] - noisy.values[no_index] > tau.tau else 0


def _classify_pool(pair: SignalPair, candidates: Sequence[np.ndarray]) -> np.ndarray:
    """Per-candidate class: 1 for y1's embedding, 0 for y0's, -1 for non-signal."""
    classes = np.full(len(candidates), -1, dtype=np.int64)
    for index, candidate in enumerate(candidates):
        c = np.asarray(candidate, dtype=np.float64)
        if np.array_equal(c, pair.y1_embedding):
            classes[index] = 1
        elif np.array_equal(c, pair.y0_embedding):
            classes[index] = 0
    return classes


def decide_blackbox_generation(selected: int, pair: SignalPair,
                               candidates: Optional[Sequence[np.ndarray]] = None) -> int:
    """1 iff the released candidate is y1; non-signal picks map to 0.

    Without an explicit pool the index semantics of the signal pair apply
    (0 = y1, 1 = y0); with a pool, candidates are classified by content so
    duplicates of the signal embeddings still count.
    """
    if candidates is None:
        if not (0 <= selected < 2):
            raise ValueError(f"selected index {selected} outside the signal pair")
        return 1 if selected == 0 else 0
    if not (0 <= selected < len(candidates)):
        raise ValueError(f"selected index {selected} outside the pool of {len(candidates)}")
    label = _classify_pool(pair, candidates)[selected]
    if label < 0:
        warnings.warn("non-signal candidate selected; treating as canary-absent", stacklevel=2)
        return 0
    return int(label)


def decide_whitebox_generation(noisy_mean: np.ndarray, pair: SignalPair,
                               tau: DecisionThreshold) -> int:
    """1 iff dist(mean, y1) - dist(mean, y0) <= tau (non-strict)."""
    m = np.asarray(noisy_mean, dtype=np.float64)
    if m.shape != pair.y1_embedding.shape:
        raise ValueError("noisy mean dimension does not match the signal pair")
    d1 = float(np.linalg.norm(m - pair.y1_embedding))
    d0 = float(np.linalg.norm(m - pair.y0_embedding))
    return 1 if d1 - d0 <= tau.tau else 0


# ---------------------------------------------------------------------------
# Threshold sweep
# ---------------------------------------------------------------------------

def _counts_for_rule(stat_with: np.ndarray, stat_without: np.ndarray,
                     thresholds: np.ndarray, rule: str) -> tuple[np.ndarray, np.ndarray]:
    sw = np.sort(stat_with)
    swo = np.sort(stat_without)
    above_w = len(sw) - np.searchsorted(sw, thresholds, side="right")
    above_wo = len(swo) - np.searchsorted(swo, thresholds, side="right")
    if rule == "greater":
        return above_w, above_wo
    if rule == "less_equal":
        return len(sw) - above_w, len(swo) - above_wo
    raise ValueError(f"unknown rule {rule!r}")


def sweep_threshold(
    stats_with: Sequence[float],
    stats_without: Sequence[float],
    confidence: float,
    delta_target: float,
    rule: str = "greater",
) -> tuple[DecisionThreshold, GdpEstimate]:
    """Pick the tau maximizing the mu lower bound over pooled-midpoint candidates.

    Candidates are every midpoint between adjacent pooled sorted statistics
    plus finite sentinels outside the data range (accept-all / reject-all).
    Ties break toward the smallest tau.
    """
    w = np.asarray(stats_with, dtype=np.float64)
    wo = np.asarray(stats_without, dtype=np.float64)
    if w.size == 0 or wo.size == 0:
        raise ValueError("both statistic lists must be non-empty")

    pooled = np.sort(np.concatenate([w, wo]))
    midpoints = np.unique(0.5 * (pooled[1:] + pooled[:-1]))
    thresholds = np.concatenate([[pooled[0] - 1.0], midpoints, [pooled[-1] + 1.0]])

    tp, fp = _counts_for_rule(w, wo, thresholds, rule)
    fn = w.size - tp
    alpha_bar = binom_upper_bound_array(fp, wo.size, confidence)
    beta_bar = binom_upper_bound_array(fn, w.size, confidence)

    # rank on the unclamped bound so an informative threshold always beats
    # the degenerate accept-all/reject-all sentinels; saturated bounds rank
    # at -inf (the reported estimate still clamps at zero)
    mu = np.full_like(alpha_bar, -np.inf)
    open_mask = (alpha_bar < 1.0) & (beta_bar < 1.0)
    mu[open_mask] = special.ndtri(1.0 - beta_bar[open_mask]) - special.ndtri(alpha_bar[open_mask])

    best = int(np.argmax(mu))  # first maximum = smallest tau
    counts = AttackCounts(
        true_positives=int(tp[best]),
        false_positives=int(fp[best]),
        false_negatives=int(fn[best]),
        true_negatives=int(wo.size - fp[best]),
    )
    estimate = audit_epsilon(counts, confidence, delta_target)
    return DecisionThreshold(tau=float(thresholds[best])), estimate


# ---------------------------------------------------------------------------
# Bootstrap audit
# ---------------------------------------------------------------------------

def _clean_matrix(clean: Sequence, task: str) -> np.ndarray:
    if len(clean) == 0:
        raise ValueError("clean response list is empty")
    if task == "classification":
        rows = []
        for vector in clean:
            if isinstance(vector, VoteVector):
                rows.append(vector.counts)
            else:
                rows.append(tuple(vector))
        return np.asarray(rows, dtype=np.float64)
    return np.stack([np.asarray(v, dtype=np.float64) for v in clean])


def _noisy_matrix(clean: np.ndarray, sigma: float, n_sample: int, seed: int,
                  arm: int, workers: int = 1) -> np.ndarray:
    """Resample clean rows and perturb coordinate-wise, in fixed trial blocks."""
    out = np.empty((n_sample, clean.shape[1]), dtype=np.float64)
    blocks = [(b, start, min(start + _TRIAL_BLOCK, n_sample))
              for b, start in enumerate(range(0, n_sample, _TRIAL_BLOCK))]

    def fill(block: tuple[int, int, int]) -> None:
        index, start, stop = block
        rng = np.random.default_rng([seed, arm, index])
        rows = rng.integers(0, clean.shape[0], size=stop - start)
        out[start:stop] = clean[rows] + rng.normal(0.0, sigma, size=(stop - start, clean.shape[1]))

    if workers == 1:
        for block in blocks:
            fill(block)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    return out


def mechanism_sigma(config: AuditConfig) -> float:
    mech = config.mechanism
    if config.task == "classification":
        return voting_noise_scale(mech.eps_theory, mech.delta, mech.classic_calibration)
    return esa_noise_scale(mech)


def generate_noisy_samples(
    clean: Sequence,
    config: AuditConfig,
    arm: int,
    workers: int = 1,
) -> np.ndarray:
    """The bootstrap sampling stage: n_sample resampled-and-perturbed responses."""
    matrix = _clean_matrix(clean, config.task)
    sigma = mechanism_sigma(config)
    return _noisy_matrix(matrix, sigma, config.n_sample, config.seed, arm, workers)


def whitebox_statistic(noisy: np.ndarray, config: AuditConfig,
                       signal_pair: Optional[SignalPair] = None) -> np.ndarray:
    """The 1-D statistic the white-box threshold test reads."""
    if config.task == "classification":
        return noisy[:, config.yes_index] - noisy[:, config.no_index]
    if signal_pair is None:
        raise ValueError("generation audits need a signal pair")
    d1 = np.linalg.norm(noisy - signal_pair.y1_embedding, axis=1)
    d0 = np.linalg.norm(noisy - signal_pair.y0_embedding, axis=1)
    return d1 - d0


def _blackbox_bits(noisy: np.ndarray, config: AuditConfig,
                   signal_pair: Optional[SignalPair],
                   candidates: Optional[Sequence[np.ndarray]]) -> np.ndarray:
    if config.task == "classification":
        winners = np.argmax(noisy, axis=1)
        return winners == config.yes_index
    if signal_pair is None:
        raise ValueError("generation audits need a signal pair")
    pool = candidates if candidates is not None else [signal_pair.y1_embedding,
                                                      signal_pair.y0_embedding]
    stacked = np.stack([np.asarray(c, dtype=np.float64) for c in pool])
    distances = np.linalg.norm(noisy[:, None, :] - stacked[None, :, :], axis=2)
    selected = np.argmin(distances, axis=1)
    labels = _classify_pool(signal_pair, pool)
    if np.any(labels[selected] < 0):
        warnings.warn("non-signal candidates selected; counted as canary-absent", stacklevel=2)
    return labels[selected] == 1


def bootstrap_audit(
    clean_with: Sequence,
    clean_without: Sequence,
    config: AuditConfig,
    *,
    signal_pair: Optional[SignalPair] = None,
    candidates: Optional[Sequence[np.ndarray]] = None,
    workers: int = 1,
) -> AuditReport:
    """Resample, perturb, decide, tally, convert. Deterministic given config.seed."""
    start = time.perf_counter()
    noisy_with = generate_noisy_samples(clean_with, config, _ARM_WITH, workers)
    noisy_without = generate_noisy_samples(clean_without, config, _ARM_WITHOUT, workers)

    tau: Optional[float] = None
    if config.threat_model == "black_box":
        bits_with = _blackbox_bits(noisy_with, config, signal_pair, candidates)
        bits_without = _blackbox_bits(noisy_without, config, signal_pair, candidates)
    else:
        rule = "greater" if config.task == "classification" else "less_equal"
        stat_with = whitebox_statistic(noisy_with, config, signal_pair)
        stat_without = whitebox_statistic(noisy_without, config, signal_pair)
        threshold, _ = sweep_threshold(stat_with, stat_without,
                                       config.confidence, config.delta_target, rule)
        tau = threshold.tau
        if rule == "greater":
            bits_with = stat_with > tau
            bits_without = stat_without > tau
        else:
            bits_with = stat_with <= tau
            bits_without = stat_without <= tau

    tp = int(np.count_nonzero(bits_with))
    fp = int(np.count_nonzero(bits_without))
    counts = AttackCounts(
        true_positives=tp,
        false_positives=fp,
        false_negatives=config.n_sample - tp,
        true_negatives=config.n_sample - fp,
    )
    estimate = audit_epsilon(counts, config.confidence, config.delta_target)
    eps_point = math.inf if fp == 0 else eps_emp_dp(counts.tpr, counts.fpr)
    wall_ms = (time.perf_counter() - start) * 1000.0
    return AuditReport(counts=counts, estimate=estimate, eps_emp_point=eps_point,
                       config=config, tau=tau, wall_ms=wall_ms)


def run_audit(
    config: AuditConfig,
    oracle,
    pair: NeighboringPair,
    query: str,
    *,
    signal_pair: Optional[SignalPair] = None,
    candidates: Optional[Sequence[np.ndarray]] = None,
    records_path: Optional[Union[str, Path]] = None,
    workers: int = 1,
    retry_budget: int = 0,
    pad: bool = False,
) -> AuditReport:
    """collect(n_llm) then bootstrap_audit(n_sample), end to end."""
    start = time.perf_counter()
    collection: CleanCollection = collect(
        oracle, pair, query, config.mechanism.num_partitions, config.n_llm,
        seed=config.seed, records_path=records_path, workers=workers,
        retry_budget=retry_budget, pad=pad,
    )
    if collection.task != config.task:
        raise ValueError(f"oracle produced {collection.task} responses for a {config.task} audit")
    report = bootstrap_audit(collection.clean_with, collection.clean_without, config,
                             signal_pair=signal_pair, candidates=candidates, workers=workers)
    wall_ms = (time.perf_counter() - start) * 1000.0
    return AuditReport(counts=report.counts, estimate=report.estimate,
                       eps_emp_point=report.eps_emp_point, config=config,
                       tau=report.tau, wall_ms=wall_ms)
