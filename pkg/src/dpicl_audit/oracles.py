"""Clean (pre-noise) per-partition responses: simulated, replayed, or remote.

Three oracle families produce the raw material the audit resamples:

* canary detectors — idealized responders that answer from canary membership
  alone, with an optional flip probability standing in for decoding noise;
* replay — re-serves responses previously persisted as JSONL records;
* responder adapters — render a prompt template and hand it to an external
  text generator over a line-delimited file batch or a single HTTP POST
  endpoint, then map the returned text onto a class or signal embedding.

`collect` runs the partition-and-query pipeline for both neighboring
contexts and returns the clean vote vectors (classification) or clean mean
embeddings plus their per-partition embeddings (generation).
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import requests

from .mechanisms import (
    ExemplarSubset,
    NeighboringPair,
    VoteVector,
    clip_to_unit,
    partition,
)

CTX_WITH = "with"
CTX_WITHOUT = "without"

# Fixed codes salting the per-trial seed derivation for the two hypotheses.
_ARM_CODES = {CTX_WITH: 101, CTX_WITHOUT: 102}


class OracleError(RuntimeError):
    """An oracle could not produce a usable response."""


class ResponseParseError(OracleError):
    """External responder text did not match any configured label."""


@dataclass(frozen=True)
class CanaryDetectorConfig:
    """Idealized canary detector: answers membership, then flips with p_flip."""

    flip_probability: float = 0.0
    classes: tuple[str, ...] = ("yes", "no")
    yes_index: int = 0
    no_index: int = 1

    def __post_init__(self) -> None:
        if not (0.0 <= self.flip_probability <= 0.5):
            raise ValueError(f"flip_probability must lie in [0, 0.5], got {self.flip_probability}")
        n = len(self.classes)
        if not (0 <= self.yes_index < n and 0 <= self.no_index < n):
            raise ValueError("yes/no indices must address the class list")
        if self.yes_index == self.no_index:
            raise ValueError("yes and no must be distinct classes")

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def canary_detector_vote(
    subset: ExemplarSubset,
    query: str,
    config: CanaryDetectorConfig,
    rng: np.random.Generator,
) -> int:
    """Vote "yes" iff the canary is in the subset, then flip with p_flip."""
    saw_canary = subset.contains_canary
    if config.flip_probability > 0.0 and rng.random() < config.flip_probability:
        saw_canary = not saw_canary
    return config.yes_index if saw_canary else config.no_index


@dataclass(frozen=True, eq=False)
class SignalPair:
    """Two fixed output strings with far-apart unit embeddings.

    For the audit the embeddings carry all the signal; synthetic pairs place
    two unit vectors at an exact L2 distance d (dot product 1 - d^2/2).
    """

    y1_text: str
    y0_text: str
    y1_embedding: np.ndarray
    y0_embedding: np.ndarray

    def __post_init__(self) -> None:
        for name in ("y1_embedding", "y0_embedding"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, v)
            if not math.isclose(float(np.linalg.norm(v)), 1.0, abs_tol=1e-9):
                raise ValueError(f"{name} must be unit-norm")

    @property
    def l2_distance(self) -> float:
        return float(np.linalg.norm(self.y1_embedding - self.y0_embedding))

    @classmethod
    def synthetic(cls, distance: float, dimension: int = 16,
                  y1_text: str = "signal-target", y0_text: str = "signal-control") -> "SignalPair":
        if not (0.0 < distance <= 2.0):
            raise ValueError(f"distance must lie in (0, 2], got {distance}")
        if dimension < 2:
            raise ValueError("need at least two dimensions")
        half = distance / 2.0
        a = math.sqrt(1.0 - half * half)
        y1 = np.zeros(dimension)
        y0 = np.zeros(dimension)
        y1[0] = a
        y0[0] = a
        y1[1] = half
        y0[1] = -half
        return cls(y1_text=y1_text, y0_text=y0_text, y1_embedding=y1, y0_embedding=y0)

    @classmethod
    def from_catalog(cls, distance: float, dimension: int = 16) -> "SignalPair":
        """Shipped signal-text pair at one of the tabulated L2 distances."""
        for entry in load_signal_catalog():
            if math.isclose(entry["l2_distance"], distance, abs_tol=1e-9):
                pair = cls.synthetic(distance, dimension,
                                     y1_text=entry["y1"], y0_text=entry["y0"])
                return pair
        raise KeyError(f"no catalog pair at distance {distance}; known: {catalog_distances()}")


def load_signal_catalog() -> list[dict]:
    text = resources.files("dpicl_audit").joinpath("data/signal_pairs.json").read_text("utf-8")
    return json.loads(text)


def catalog_distances() -> tuple[float, ...]:
    return tuple(entry["l2_distance"] for entry in load_signal_catalog())


def canary_detector_embedding(
    subset: Optional[ExemplarSubset],
    query: str,
    pair: SignalPair,
    zero_shot: bool,
    config: CanaryDetectorConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Emit y1's embedding on canary sightings, y0's otherwise; coin-flip zero-shot."""
    if zero_shot or subset is None:
        return pair.y1_embedding if rng.random() < 0.5 else pair.y0_embedding
    saw_canary = subset.contains_canary
    if config.flip_probability > 0.0 and rng.random() < config.flip_probability:
        saw_canary = not saw_canary
    return pair.y1_embedding if saw_canary else pair.y0_embedding


class CanaryDetectorVoteOracle:
    """VoteOracle wrapper around :func:`canary_detector_vote`."""

    def __init__(self, config: CanaryDetectorConfig | None = None):
        self.config = config or CanaryDetectorConfig()

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def vote(self, subset: ExemplarSubset, query: str, rng: np.random.Generator) -> int:
        return canary_detector_vote(subset, query, self.config, rng)


class CanaryDetectorEmbeddingOracle:
    """EmbeddingOracle wrapper; zero-shot calls pass subset=None."""

    def __init__(self, pair: SignalPair, config: CanaryDetectorConfig | None = None):
        self.pair = pair
        self.config = config or CanaryDetectorConfig()

    def embed(self, subset: Optional[ExemplarSubset], query: str, rng: np.random.Generator) -> np.ndarray:
        return canary_detector_embedding(subset, query, self.pair, subset is None, self.config, rng)


@dataclass(frozen=True)
class OracleRecord:
    """One recorded clean response, the bootstrap resampling atom.

    Wire format is one JSON object per line with exactly the fields
    {ctx, trial, part, vote} or {ctx, trial, part, emb}.
    """

    ctx: str
    trial: int
    part: int
    vote: Optional[int] = None
    emb: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.ctx not in (CTX_WITH, CTX_WITHOUT):
            raise ValueError(f"ctx must be '{CTX_WITH}' or '{CTX_WITHOUT}', got {self.ctx!r}")
        if (self.vote is None) == (self.emb is None):
            raise ValueError("record must carry exactly one of vote or emb")

    def to_json(self) -> str:
        payload: dict = {"ctx": self.ctx, "trial": self.trial, "part": self.part}
        if self.vote is not None:
            payload["vote"] = self.vote
        else:
            payload["emb"] = list(self.emb)
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "OracleRecord":
        payload = json.loads(line)
        emb = payload.get("emb")
        return cls(
            ctx=payload["ctx"],
            trial=int(payload["trial"]),
            part=int(payload["part"]),
            vote=payload.get("vote"),
            emb=tuple(float(x) for x in emb) if emb is not None else None,
        )


def write_records(path: Union[str, Path], records: Iterable[OracleRecord]) -> int:
    """Append records as line-delimited JSON; returns the number written."""
    count = 0
    with open(path, "a", encoding="utf-8") as handle:
        for record in records:
            handle.write(record.to_json() + "\n")
            count += 1
    return count


def read_records(path: Union[str, Path]) -> list[OracleRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(OracleRecord.from_json(line))
    return records


def resample(records: Sequence, rng: np.random.Generator):
    """Uniform draw with replacement."""
    if len(records) == 0:
        raise ValueError("cannot resample from an empty list")
    return records[int(rng.integers(0, len(records)))]


def zero_shot_candidates(oracle, query: str, pool_size: int, seed: int) -> list[np.ndarray]:
    """Candidate pool from zero-shot oracle calls (no exemplar context)."""
    if pool_size < 1:
        raise ValueError("pool_size must be positive")
    rng = np.random.default_rng([seed, 201])
    return [np.asarray(oracle.embed(None, query, rng), dtype=np.float64)
            for _ in range(pool_size)]


@dataclass
class CleanCollection:
    """Clean responses for both hypotheses, plus the persisted record stream."""

    task: str  # "classification" | "generation"
    clean_with: list  # VoteVector list, or mean-embedding ndarray list
    clean_without: list
    partition_with: list = field(default_factory=list)  # generation: per-trial (T, d) arrays
    partition_without: list = field(default_factory=list)
    records: list[OracleRecord] = field(default_factory=list)
    failures: int = 0


class ReplayOracle:
    """Serves recorded responses keyed by (ctx, trial, partition)."""

    def __init__(self, records: Iterable[OracleRecord]):
        self._store: dict[tuple[str, int, int], OracleRecord] = {}
        kinds = set()
        trials: dict[str, set[int]] = {CTX_WITH: set(), CTX_WITHOUT: set()}
        for record in records:
            self._store[(record.ctx, record.trial, record.part)] = record
            kinds.add("vote" if record.vote is not None else "emb")
            trials[record.ctx].add(record.trial)
        if not self._store:
            raise OracleError("no records to replay")
        if len(kinds) != 1:
            raise OracleError("record stream mixes votes and embeddings")
        self.kind = kinds.pop()
        self._num_trials = {ctx: len(ids) for ctx, ids in trials.items()}

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ReplayOracle":
        return cls(read_records(path))

    def num_trials(self, ctx: str) -> int:
        return self._num_trials.get(ctx, 0)

    @property
    def num_classes(self) -> int:
        if self.kind != "vote":
            raise OracleError("replay stream holds embeddings, not votes")
        return max(r.vote for r in self._store.values()) + 1

    def replay(self, ctx: str, trial: int, part: int):
        try:
            record = self._store[(ctx, trial, part)]
        except KeyError:
            raise OracleError(f"no recorded response for ({ctx}, trial={trial}, part={part})") from None
        return record.vote if record.vote is not None else np.asarray(record.emb, dtype=np.float64)


def _trial_rng(seed: int, ctx: str, trial: int, attempt: int) -> np.random.Generator:
    # Counter-style derivation: the stream depends only on these coordinates,
    # never on scheduling, so parallel collection stays reproducible.
    return np.random.default_rng([seed, _ARM_CODES[ctx], trial, attempt])


def collect(
    oracle,
    pair: NeighboringPair,
    query: str,
    num_partitions: int,
    n_llm: int,
    *,
    seed: int = 0,
    num_classes: Optional[int] = None,
    records_path: Optional[Union[str, Path]] = None,
    workers: int = 1,
    retry_budget: int = 0,
    pad: bool = False,
) -> CleanCollection:
    """Run the partition-and-query pipeline n_llm times per hypothesis, no DP noise.

    Oracle failures are retried at the same trial index with a fresh derived
    stream, each retry consuming the shared budget; an exhausted budget
    aborts the arm. Records are canonicalized by (hypothesis, trial,
    partition) so output files are deterministic regardless of worker count.
    """
    if n_llm < 1:
        raise ValueError(f"n_llm must be positive, got {n_llm}")
    if workers < 1:
        raise ValueError("workers must be positive")

    is_replay = isinstance(oracle, ReplayOracle)
    if is_replay:
        task = "classification" if oracle.kind == "vote" else "generation"
    elif hasattr(oracle, "vote"):
        task = "classification"
    elif hasattr(oracle, "embed"):
        task = "generation"
    else:
        raise TypeError("oracle must expose vote(), embed(), or be a ReplayOracle")

    if task == "classification":
        if num_classes is None:
            num_classes = getattr(oracle, "num_classes", None)
        if num_classes is None:
            raise ValueError("num_classes is required for vote oracles that do not declare it")

    collection = CleanCollection(task=task, clean_with=[], clean_without=[])
    budget = {"left": retry_budget}
    budget_lock = threading.Lock()

    for ctx_label, context in ((CTX_WITH, pair.with_canary), (CTX_WITHOUT, pair.without_canary)):
        subsets = partition(context, num_partitions, pad=pad)
        if is_replay and oracle.num_trials(ctx_label) < n_llm:
            raise OracleError(
                f"replay stream has {oracle.num_trials(ctx_label)} trials for '{ctx_label}', need {n_llm}"
            )

        def run_trial(trial: int):
            attempt = 0
            while True:
                rng = _trial_rng(seed, ctx_label, trial, attempt)
                try:
                    responses = []
                    for part_index, subset in enumerate(subsets):
                        if is_replay:
                            responses.append(oracle.replay(ctx_label, trial, part_index))
                        elif task == "classification":
                            responses.append(oracle.vote(subset, query, rng))
                        else:
                            responses.append(oracle.embed(subset, query, rng))
                    return responses
                except OracleError:
                    with budget_lock:
                        if budget["left"] <= 0:
                            raise
                        budget["left"] -= 1
                        collection.failures += 1
                    attempt += 1

        if workers == 1 or is_replay:
            per_trial = [run_trial(t) for t in range(n_llm)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_trial = list(pool.map(run_trial, range(n_llm)))

        for trial, responses in enumerate(per_trial):
            if task == "classification":
                counts = [0] * num_classes
                for part_index, vote in enumerate(responses):
                    if not (0 <= vote < num_classes):
                        raise OracleError(f"vote {vote} outside the {num_classes}-class label set")
                    counts[vote] += 1
                    collection.records.append(
                        OracleRecord(ctx=ctx_label, trial=trial, part=part_index, vote=int(vote))
                    )
                vector = VoteVector(counts=tuple(counts), num_partitions=num_partitions)
            else:
                stacked = np.stack([np.asarray(e, dtype=np.float64) for e in responses])
                for part_index in range(stacked.shape[0]):
                    collection.records.append(
                        OracleRecord(
                            ctx=ctx_label, trial=trial, part=part_index,
                            emb=tuple(float(x) for x in stacked[part_index]),
                        )
                    )
                vector = stacked.mean(axis=0)
                if ctx_label == CTX_WITH:
                    collection.partition_with.append(stacked)
                else:
                    collection.partition_without.append(stacked)
            if ctx_label == CTX_WITH:
                collection.clean_with.append(vector)
            else:
                collection.clean_without.append(vector)

    if records_path is not None:
        write_records(records_path, collection.records)
    return collection


# ---------------------------------------------------------------------------
# External responder adapter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecodeSettings:
    temperature: float = 0.0
    max_tokens: int = 16


@dataclass(frozen=True)
class ResponderRequest:
    template_id: str
    rendered_prompt: str
    decode: DecodeSettings = DecodeSettings()

    def to_wire(self) -> dict:
        return {
            "template_id": self.template_id,
            "rendered_prompt": self.rendered_prompt,
            "decode": {
                "temperature": self.decode.temperature,
                "max_tokens": self.decode.max_tokens,
            },
        }


def load_template(template_id: str) -> str:
    path = resources.files("dpicl_audit").joinpath(f"templates/{template_id}.txt")
    try:
        return path.read_text("utf-8")
    except FileNotFoundError:
        raise KeyError(f"unknown template id {template_id!r}") from None


def render_template(template_text: str, **placeholders: str) -> str:
    """Plain placeholder substitution of {name} markers."""
    rendered = template_text
    for name, value in placeholders.items():
        rendered = rendered.replace("{" + name + "}", value)
    return rendered


def format_exemplars(subset: Optional[ExemplarSubset]) -> str:
    if subset is None:
        return ""
    lines = []
    for exemplar in subset.exemplars:
        if exemplar.text_out:
            lines.append(f"{exemplar.text_in} -> {exemplar.text_out}")
        else:
            lines.append(exemplar.text_in)
    return "\n".join(lines)


class HttpTransport:
    """Single-POST-endpoint transport; path and auth header come from config."""

    def __init__(self, endpoint: str, auth_header: Optional[str] = None,
                 auth_token: Optional[str] = None, timeout: float = 30.0):
        self.endpoint = endpoint
        self.auth_header = auth_header
        self.auth_token = auth_token
        self.timeout = timeout

    def __call__(self, request: ResponderRequest) -> dict:
        headers = {}
        if self.auth_header and self.auth_token:
            headers[self.auth_header] = self.auth_token
        try:
            response = requests.post(self.endpoint, json=request.to_wire(),
                                     headers=headers, timeout=self.timeout)
            response.raise_for_status()
            return response.json()
        except (requests.RequestException, ValueError) as exc:
            raise OracleError(f"responder endpoint failed: {exc}") from exc


class FileTransport:
    """Offline batch transport: pre-recorded responses served in request order.

    Every request is appended to the request log as it is issued, so the
    operator can regenerate responses for exactly the prompts the audit
    asked for.
    """

    def __init__(self, responses_path: Union[str, Path],
                 requests_log_path: Optional[Union[str, Path]] = None):
        self._responses: list[dict] = []
        with open(responses_path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    self._responses.append(json.loads(line))
        self._cursor = 0
        self._log_path = Path(requests_log_path) if requests_log_path else None
        if self._log_path:
            self._log_path.write_text("", encoding="utf-8")

    def __call__(self, request: ResponderRequest) -> dict:
        if self._log_path:
            with open(self._log_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(request.to_wire(), separators=(",", ":")) + "\n")
        if self._cursor >= len(self._responses):
            raise OracleError("response file exhausted before the collection finished")
        response = self._responses[self._cursor]
        self._cursor += 1
        return response


def emit_requests(
    path: Union[str, Path],
    pair: NeighboringPair,
    query: str,
    num_partitions: int,
    n_llm: int,
    template_id: str,
    decode: DecodeSettings = DecodeSettings(),
    pad: bool = False,
) -> int:
    """Write the full request batch for an offline responder run."""
    template = load_template(template_id)
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for _, context in ((CTX_WITH, pair.with_canary), (CTX_WITHOUT, pair.without_canary)):
            subsets = partition(context, num_partitions, pad=pad)
            for _trial in range(n_llm):
                for subset in subsets:
                    prompt = render_template(
                        template,
                        formatted_context=format_exemplars(subset),
                        exemplar_context=format_exemplars(subset),
                        query_article=query,
                        canary=query,
                    )
                    request = ResponderRequest(template_id=template_id,
                                               rendered_prompt=prompt, decode=decode)
                    handle.write(json.dumps(request.to_wire(), separators=(",", ":")) + "\n")
                    count += 1
    return count


class ResponderVoteOracle:
    """Maps external responder text onto the class list by exact match."""

    def __init__(self, transport: Callable[[ResponderRequest], dict],
                 template_id: str, labels: Sequence[str], canary_text: str,
                 decode: DecodeSettings = DecodeSettings()):
        self.transport = transport
        self.template_id = template_id
        self.template = load_template(template_id)
        self.labels = tuple(labels)
        self.canary_text = canary_text
        self.decode = decode

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def vote(self, subset: ExemplarSubset, query: str, rng: np.random.Generator) -> int:
        prompt = render_template(
            self.template,
            formatted_context=format_exemplars(subset),
            query_article=query or self.canary_text,
        )
        response = self.transport(ResponderRequest(self.template_id, prompt, self.decode))
        text = str(response.get("text", "")).strip()
        for index, label in enumerate(self.labels):
            if text == label:
                return index
        raise ResponseParseError(f"response {text!r} matches no configured label")


class ResponderEmbeddingOracle:
    """Maps responder output onto signal embeddings (or ingests raw vectors)."""

    def __init__(self, transport: Callable[[ResponderRequest], dict],
                 template_id: str, pair: SignalPair, canary_text: str,
                 decode: DecodeSettings = DecodeSettings()):
        self.transport = transport
        self.template_id = template_id
        self.template = load_template(template_id)
        self.pair = pair
        self.canary_text = canary_text
        self.decode = decode

    def embed(self, subset: Optional[ExemplarSubset], query: str, rng: np.random.Generator) -> np.ndarray:
        prompt = render_template(
            self.template,
            exemplar_context=format_exemplars(subset),
            canary=query or self.canary_text,
            Y1_TARGET=self.pair.y1_text,
            Y2_CONTROL=self.pair.y0_text,
        )
        response = self.transport(ResponderRequest(self.template_id, prompt, self.decode))
        if "emb" in response:
            return clip_to_unit(np.asarray(response["emb"], dtype=np.float64))
        text = str(response.get("text", "")).strip()
        if text == self.pair.y1_text:
            return self.pair.y1_embedding
        if text == self.pair.y0_text:
            return self.pair.y0_embedding
        raise ResponseParseError(f"response {text!r} matches neither signal text")
