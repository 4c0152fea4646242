"""Run configuration: one YAML/JSON document, schema-validated before any work.

Flags can override individual keys (``--set audit.seed=7``); the merged
document is what gets validated and echoed into reports.
"""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

from .audit import AuditConfig
from .mechanisms import Exemplar, MechanismConfig, NeighboringPair
from .oracles import (
    CanaryDetectorConfig,
    CanaryDetectorEmbeddingOracle,
    CanaryDetectorVoteOracle,
    DecodeSettings,
    FileTransport,
    HttpTransport,
    ReplayOracle,
    ResponderEmbeddingOracle,
    ResponderVoteOracle,
    SignalPair,
)


class ConfigError(Exception):
    """The run configuration is unusable; nothing was computed."""


DEFAULTS: dict = {
    "task": "classification",
    "threat_model": "white_box",
    "mechanism": {
        "sensitivity_mode": "paper_voting",
        "candidate_pool_size": 10,
        "classic_calibration": False,
    },
    "audit": {
        "n_sample": 400_000,
        "confidence": 0.95,
        "delta_target": 1e-5,
        "seed": 0,
        "workers": 1,
    },
    "oracle": {
        "kind": "canary_detector",
        "flip_probability": 0.0,
        "classes": ["yes", "no"],
        "yes_index": 0,
        "no_index": 1,
        "retry_budget": 0,
        "decode": {"temperature": 0.0, "max_tokens": 16},
    },
    "context": {
        "num_exemplars": 8,
        "canary_index": 0,
        "canary_text": "the canary exemplar under audit",
        "pad_to_partitions": False,
    },
    "output": {
        "directory": "out",
        "records": "records.jsonl",
        "report_json": "report.json",
        "report_csv": "reports.csv",
        "sweep_csv": "sweep.csv",
    },
}


def load_schema() -> dict:
    text = resources.files("dpicl_audit").joinpath("data/run_config.schema.json").read_text("utf-8")
    return json.loads(text)


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def apply_override(config: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place; values parse as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key.path=value")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    node = config
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {dotted!r} crosses a non-mapping node")
    node[keys[-1]] = value


def load_run_config(path: str | Path, overrides: Optional[list[str]] = None) -> dict:
    """Read, merge with defaults, apply overrides, validate. Raises ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        document = yaml.safe_load(path.read_text("utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML/JSON: {exc}") from exc
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError("config document must be a mapping")
    merged = _deep_merge(DEFAULTS, document)
    for assignment in overrides or []:
        apply_override(merged, assignment)
    try:
        jsonschema.validate(merged, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config violates the schema at {'/'.join(map(str, exc.path))}: {exc.message}") from exc
    return merged


def build_mechanism_config(config: dict) -> MechanismConfig:
    mech = config["mechanism"]
    try:
        return MechanismConfig(
            eps_theory=float(mech["eps_theory"]),
            delta=float(mech["delta"]),
            num_partitions=int(mech["num_partitions"]),
            sensitivity_mode=mech["sensitivity_mode"],
            candidate_pool_size=int(mech["candidate_pool_size"]),
            classic_calibration=bool(mech["classic_calibration"]),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad mechanism section: {exc}") from exc


def build_audit_config(config: dict) -> AuditConfig:
    audit = config["audit"]
    oracle = config["oracle"]
    try:
        return AuditConfig(
            mechanism=build_mechanism_config(config),
            task=config["task"],
            threat_model=config["threat_model"],
            n_llm=int(audit["n_llm"]),
            n_sample=int(audit["n_sample"]),
            confidence=float(audit["confidence"]),
            delta_target=float(audit["delta_target"]),
            seed=int(audit["seed"]),
            yes_index=int(oracle["yes_index"]),
            no_index=int(oracle["no_index"]),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad audit section: {exc}") from exc


def load_context_exemplars(config: dict) -> list[Exemplar]:
    ctx = config["context"]
    if ctx.get("file"):
        path = Path(ctx["file"])
        if not path.exists():
            raise ConfigError(f"context file not found: {path}")
        exemplars = []
        for line in path.read_text("utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            exemplars.append(Exemplar(text_in=payload["input"], text_out=payload.get("output", "")))
        if len(exemplars) < 2:
            raise ConfigError("context file must hold at least two exemplars")
        return exemplars
    n = int(ctx["num_exemplars"])
    return [Exemplar(text_in=f"reference exemplar input {i}", text_out=f"reference output {i}")
            for i in range(n)]


def build_neighboring_pair(config: dict) -> NeighboringPair:
    ctx = config["context"]
    exemplars = load_context_exemplars(config)
    index = int(ctx["canary_index"])
    if not (0 <= index < len(exemplars)):
        raise ConfigError(f"canary_index {index} out of range for {len(exemplars)} exemplars")
    canary = Exemplar(text_in=ctx["canary_text"], text_out="canary output")
    return NeighboringPair.insert_canary(exemplars, canary, index)


def build_signal_pair(config: dict) -> Optional[SignalPair]:
    section = config.get("signal_pair")
    if section is None:
        if config["task"] == "generation":
            raise ConfigError("generation audits need a signal_pair section")
        return None
    distance = float(section["distance"])
    dimension = int(section.get("dimension", 16))
    if section.get("from_catalog", True):
        try:
            return SignalPair.from_catalog(distance, dimension)
        except KeyError:
            pass
    return SignalPair.synthetic(distance, dimension)


def build_detector_config(config: dict) -> CanaryDetectorConfig:
    oracle = config["oracle"]
    return CanaryDetectorConfig(
        flip_probability=float(oracle["flip_probability"]),
        classes=tuple(oracle["classes"]),
        yes_index=int(oracle["yes_index"]),
        no_index=int(oracle["no_index"]),
    )


def build_oracle(config: dict, signal_pair: Optional[SignalPair]):
    oracle_cfg = config["oracle"]
    kind = oracle_cfg["kind"]
    task = config["task"]
    detector = build_detector_config(config)

    if kind == "canary_detector":
        if task == "classification":
            return CanaryDetectorVoteOracle(detector)
        return CanaryDetectorEmbeddingOracle(signal_pair, detector)

    if kind == "replay":
        records_path = oracle_cfg.get("records_path")
        if not records_path:
            raise ConfigError("replay oracle needs oracle.records_path")
        if not Path(records_path).exists():
            raise ConfigError(f"records file not found: {records_path}")
        return ReplayOracle.from_file(records_path)

    decode = DecodeSettings(
        temperature=float(oracle_cfg["decode"]["temperature"]),
        max_tokens=int(oracle_cfg["decode"]["max_tokens"]),
    )
    if kind == "responder_file":
        responses = oracle_cfg.get("responses_path")
        if not responses:
            raise ConfigError("file responder needs oracle.responses_path")
        if not Path(responses).exists():
            raise ConfigError(f"responses file not found: {responses}")
        if int(config["audit"]["workers"]) != 1:
            # the batch file serves responses positionally; parallel
            # collection would scramble the request/response alignment
            raise ConfigError("file responders require audit.workers = 1")
        transport = FileTransport(responses, oracle_cfg.get("requests_log_path"))
    elif kind == "responder_http":
        endpoint = oracle_cfg.get("endpoint")
        if not endpoint:
            raise ConfigError("http responder needs oracle.endpoint")
        token_env = oracle_cfg.get("auth_token_env")
        token = os.environ.get(token_env) if token_env else None
        transport = HttpTransport(endpoint, oracle_cfg.get("auth_header"), token)
    else:
        raise ConfigError(f"unknown oracle kind {kind!r}")

    canary_text = config["context"]["canary_text"]
    if task == "classification":
        template_id = oracle_cfg.get("template_id", "audit_classification")
        return ResponderVoteOracle(transport, template_id, oracle_cfg["classes"],
                                   canary_text, decode)
    template_id = oracle_cfg.get("template_id", "audit_generation_blackbox")
    return ResponderEmbeddingOracle(transport, template_id, signal_pair, canary_text, decode)


def output_path(config: dict, key: str) -> Path:
    out = config["output"]
    directory = Path(out["directory"])
    directory.mkdir(parents=True, exist_ok=True)
    return directory / out[key]
