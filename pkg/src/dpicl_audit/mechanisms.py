"""The two DP-ICL mechanisms under audit.

Private voting: partition the exemplar context, collect one class vote per
partition, add Gaussian noise to the vote histogram, release the noisy
argmax. Embedding aggregation: average per-partition output embeddings, add
Gaussian noise to the mean, release the nearest candidate.

Noise calibration follows sigma = Delta * sqrt(log(1.25/delta)) / eps with a
natural logarithm. Note the classical Gaussian-mechanism calibration carries
an extra sqrt(2) under the root; `classic_calibration` adds it back for
anyone who wants the textbook scale, the default reproduces the audited
systems as deployed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

SENSITIVITY_MODES = ("paper_voting", "esa_tight", "esa_legacy")

VOTING_SENSITIVITY = 2.0  # one exemplar can move two histogram coordinates by 1 each


@dataclass(frozen=True)
class Exemplar:
    """One demonstration record: an input/output text pair."""

    text_in: str
    text_out: str = ""


@dataclass(frozen=True)
class ExemplarContext:
    """An ordered exemplar list, optionally marking the canary position."""

    exemplars: tuple[Exemplar, ...]
    canary_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.canary_index is not None and not (0 <= self.canary_index < len(self.exemplars)):
            raise ValueError(
                f"canary_index {self.canary_index} out of range for {len(self.exemplars)} exemplars"
            )

    def __len__(self) -> int:
        return len(self.exemplars)


@dataclass(frozen=True)
class NeighboringPair:
    """Target context (canary in) and reference context (canary out).

    The adjacency unit of the DP guarantee: the two contexts are equal except
    at the canary position.
    """

    with_canary: ExemplarContext
    without_canary: ExemplarContext

    def __post_init__(self) -> None:
        c1, c0 = self.with_canary, self.without_canary
        if len(c1) != len(c0):
            raise ValueError("neighboring contexts must have the same size")
        if c1.canary_index is None:
            raise ValueError("the target context must mark its canary position")
        diffs = [i for i, (a, b) in enumerate(zip(c1.exemplars, c0.exemplars)) if a != b]
        if diffs != [c1.canary_index]:
            raise ValueError(
                f"contexts must differ exactly at the canary position {c1.canary_index}, differ at {diffs}"
            )

    @classmethod
    def insert_canary(cls, exemplars: Sequence[Exemplar], canary: Exemplar, index: int) -> "NeighboringPair":
        """Build a pair by substituting the canary at `index` of a base context."""
        base = tuple(exemplars)
        if not (0 <= index < len(base)):
            raise ValueError(f"index {index} out of range for {len(base)} exemplars")
        if canary == base[index]:
            raise ValueError("canary must differ from the exemplar it replaces")
        target = base[:index] + (canary,) + base[index + 1:]
        return cls(
            with_canary=ExemplarContext(target, canary_index=index),
            without_canary=ExemplarContext(base),
        )


@dataclass(frozen=True)
class ExemplarSubset:
    """One partition: its exemplars, their original indices, canary membership."""

    exemplars: tuple[Exemplar, ...]
    indices: tuple[int, ...]
    contains_canary: bool


@dataclass(frozen=True)
class VoteVector:
    """Per-class vote counts aggregated over the partitions."""

    counts: tuple[int, ...]
    num_partitions: int

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts):
            raise ValueError("vote counts must be non-negative")
        if sum(self.counts) != self.num_partitions:
            raise ValueError(
                f"vote counts must sum to the partition count {self.num_partitions}, got {sum(self.counts)}"
            )


@dataclass(frozen=True)
class NoisyVoteVector:
    """A vote histogram after per-coordinate Gaussian perturbation."""

    values: tuple[float, ...]
    sigma: float


@dataclass(frozen=True)
class MechanismConfig:
    eps_theory: float
    delta: float
    num_partitions: int
    sensitivity_mode: str = "paper_voting"
    candidate_pool_size: int = 10
    classic_calibration: bool = False

    def __post_init__(self) -> None:
        if self.eps_theory <= 0.0:
            raise ValueError(f"eps_theory must be positive, got {self.eps_theory}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.num_partitions < 2:
            raise ValueError(f"need at least 2 partitions, got {self.num_partitions}")
        if self.sensitivity_mode not in SENSITIVITY_MODES:
            raise ValueError(f"unknown sensitivity_mode {self.sensitivity_mode!r}")
        if self.candidate_pool_size < 1:
            raise ValueError("candidate_pool_size must be positive")


def partition(context: ExemplarContext, num_partitions: int, pad: bool = False) -> list[ExemplarSubset]:
    """Split a context into disjoint subsets, round-robin by index.

    Exemplar i goes to subset i mod T, so the canary lands in exactly one
    subset and neighboring contexts partition identically. Contexts smaller
    than T are an error unless `pad` duplicates non-canary exemplars to fill.
    """
    if num_partitions < 1:
        raise ValueError("num_partitions must be positive")
    exemplars = list(context.exemplars)
    canary_index = context.canary_index
    if len(exemplars) < num_partitions:
        if not pad:
            raise ValueError(
                f"context has {len(exemplars)} exemplars but {num_partitions} partitions were requested"
            )
        fillers = [i for i in range(len(exemplars)) if i != canary_index]
        if not fillers:
            raise ValueError("cannot pad a context whose only exemplar is the canary")
        cursor = 0
        while len(exemplars) < num_partitions:
            exemplars.append(exemplars[fillers[cursor % len(fillers)]])
            cursor += 1
    buckets: list[list[int]] = [[] for _ in range(num_partitions)]
    for i in range(len(exemplars)):
        buckets[i % num_partitions].append(i)
    return [
        ExemplarSubset(
            exemplars=tuple(exemplars[i] for i in bucket),
            indices=tuple(bucket),
            contains_canary=canary_index is not None and canary_index in bucket,
        )
        for bucket in buckets
    ]


def gaussian_sigma(sensitivity: float, eps: float, delta: float, classic_calibration: bool = False) -> float:
    if sensitivity <= 0.0 or eps <= 0.0 or not (0.0 < delta < 1.0):
        raise ValueError("invalid noise calibration inputs")
    factor = 2.0 if classic_calibration else 1.0
    return sensitivity * math.sqrt(factor * math.log(1.25 / delta)) / eps


def voting_noise_scale(eps: float, delta: float, classic_calibration: bool = False) -> float:
    """Gaussian scale for private voting: 2 * sqrt(log(1.25/delta)) / eps."""
    return gaussian_sigma(VOTING_SENSITIVITY, eps, delta, classic_calibration)


def esa_sensitivity(num_partitions: int) -> float:
    """Tight L2 sensitivity of the released mean embedding: 2/T.

    One exemplar can change at most one partition's unit-clipped embedding,
    moving the mean by at most 2/T; u vs -u attains the bound exactly.
    """
    if num_partitions < 1:
        raise ValueError("num_partitions must be positive")
    return 2.0 / num_partitions


def esa_noise_scale(config: MechanismConfig) -> float:
    """Gaussian scale for embedding aggregation under the configured sensitivity."""
    if config.sensitivity_mode == "esa_tight":
        sensitivity = esa_sensitivity(config.num_partitions)
    elif config.sensitivity_mode == "esa_legacy":
        sensitivity = 1.0
    else:
        raise ValueError(
            f"sensitivity_mode {config.sensitivity_mode!r} is not an embedding-aggregation mode"
        )
    return gaussian_sigma(sensitivity, config.eps_theory, config.delta, config.classic_calibration)


def private_vote(clean: VoteVector, sigma: float, rng: np.random.Generator) -> tuple[NoisyVoteVector, int]:
    """Perturb each vote count with independent N(0, sigma^2); release the argmax.

    Ties break toward the lowest class index (measure-zero under continuous
    noise; determinism matters for sigma = 0).
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    values = np.asarray(clean.counts, dtype=np.float64) + rng.normal(0.0, sigma, size=len(clean.counts))
    winner = int(np.argmax(values))
    return NoisyVoteVector(values=tuple(float(v) for v in values), sigma=sigma), winner


def clip_to_unit(vector: np.ndarray) -> np.ndarray:
    """Scale a vector down to the unit ball; vectors already inside pass through."""
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm > 1.0:
        return v / norm
    return v


def esa_aggregate(embeddings: Sequence[np.ndarray], sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Coordinate-wise mean plus independent N(0, sigma^2) per coordinate.

    The result is released as-is, not re-normalized: candidate selection
    operates on the raw noisy mean.
    """
    if len(embeddings) == 0:
        raise ValueError("need at least one embedding")
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    stacked = np.stack([np.asarray(e, dtype=np.float64) for e in embeddings])
    if stacked.ndim != 2:
        raise ValueError("embeddings must share one dimension")
    mean = stacked.mean(axis=0)
    return mean + rng.normal(0.0, sigma, size=mean.shape)


def esa_select(noisy_mean: np.ndarray, candidates: Sequence[np.ndarray]) -> int:
    """Index of the candidate nearest (Euclidean) to the noisy mean; ties -> lowest."""
    if len(candidates) == 0:
        raise ValueError("candidate pool is empty")
    m = np.asarray(noisy_mean, dtype=np.float64)
    stacked = np.stack([np.asarray(c, dtype=np.float64) for c in candidates])
    if stacked.shape[1:] != m.shape:
        raise ValueError("candidate dimension does not match the noisy mean")
    distances = np.linalg.norm(stacked - m, axis=1)
    return int(np.argmin(distances))
