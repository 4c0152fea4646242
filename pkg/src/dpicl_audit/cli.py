"""Operator entry point.

Subcommands: ``collect`` (persist clean responses), ``audit`` (full
bootstrap audit to JSON + CSV), ``simulate`` (analytic vote-channel sweep),
``convert`` (unit conversions between mu, (eps, delta) and raw counts).

Exit codes: 0 success, 2 config error, 3 oracle failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import sys

from . import gaussian_model
from .audit import THREAT_MODELS, append_report_csv, run_audit
from .config import (
    ConfigError,
    build_audit_config,
    build_neighboring_pair,
    build_oracle,
    build_signal_pair,
    load_run_config,
    output_path,
)
from .gdp import (
    AttackCounts,
    DEFAULT_DELTA_TARGET,
    audit_epsilon,
    delta_from_eps_mu,
    eps_from_mu_delta,
)
from .oracles import (
    DecodeSettings,
    OracleError,
    collect,
    emit_requests,
    zero_shot_candidates,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_NUMERIC = 4


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration file (YAML or JSON)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY.PATH=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpicl-audit",
                                     description="Empirical privacy auditing for DP in-context learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_collect = sub.add_parser("collect", help="record clean per-partition responses")
    _add_config_arguments(p_collect)

    p_audit = sub.add_parser("audit", help="run a bootstrap membership-inference audit")
    _add_config_arguments(p_audit)

    p_sim = sub.add_parser("simulate", help="tabulate the analytic Gaussian vote channel")
    _add_config_arguments(p_sim)

    p_conv = sub.add_parser("convert", help="convert between mu, (eps, delta) and counts")
    p_conv.add_argument("--mu", type=float)
    p_conv.add_argument("--eps", type=float)
    p_conv.add_argument("--tp", type=int)
    p_conv.add_argument("--fp", type=int)
    p_conv.add_argument("--fn", type=int)
    p_conv.add_argument("--tn", type=int)
    p_conv.add_argument("--gamma", type=float, default=0.95)
    p_conv.add_argument("--delta", type=float, default=DEFAULT_DELTA_TARGET,
                        help="target delta for the GDP conversion")
    return parser


def cmd_collect(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.overrides)
    audit_cfg = build_audit_config(config)
    signal_pair = build_signal_pair(config)
    pair = build_neighboring_pair(config)
    oracle_cfg = config["oracle"]

    if oracle_cfg.get("emit_requests_only"):
        requests_path = output_path(config, "records").with_suffix(".requests.jsonl")
        decode = DecodeSettings(temperature=float(oracle_cfg["decode"]["temperature"]),
                                max_tokens=int(oracle_cfg["decode"]["max_tokens"]))
        template_id = oracle_cfg.get("template_id", "audit_classification")
        count = emit_requests(requests_path, pair, config["context"]["canary_text"],
                              audit_cfg.mechanism.num_partitions, audit_cfg.n_llm,
                              template_id, decode, pad=config["context"]["pad_to_partitions"])
        print(f"wrote {count} responder requests to {requests_path}")
        return EXIT_OK

    oracle = build_oracle(config, signal_pair)
    records_path = output_path(config, "records")
    records_path.unlink(missing_ok=True)
    collection = collect(
        oracle, pair, config["context"]["canary_text"],
        audit_cfg.mechanism.num_partitions, audit_cfg.n_llm,
        seed=audit_cfg.seed, records_path=records_path,
        workers=int(config["audit"]["workers"]),
        retry_budget=int(oracle_cfg["retry_budget"]),
        pad=config["context"]["pad_to_partitions"],
    )
    n_with = len(collection.clean_with)
    n_without = len(collection.clean_without)
    print(f"collected {n_with} clean responses with the canary and {n_without} without "
          f"({n_with + n_without} rows, {len(collection.records)} partition records, "
          f"{collection.failures} retried failures) -> {records_path}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.overrides)
    audit_cfg = build_audit_config(config)
    signal_pair = build_signal_pair(config)
    pair = build_neighboring_pair(config)
    oracle = build_oracle(config, signal_pair)

    candidates = None
    pool_size = audit_cfg.mechanism.candidate_pool_size
    if (audit_cfg.task == "generation" and audit_cfg.threat_model == "black_box"
            and pool_size > 2 and hasattr(oracle, "embed")):
        candidates = zero_shot_candidates(oracle, config["context"]["canary_text"],
                                          pool_size, audit_cfg.seed)

    report = run_audit(
        audit_cfg, oracle, pair, config["context"]["canary_text"],
        signal_pair=signal_pair,
        candidates=candidates,
        workers=int(config["audit"]["workers"]),
        retry_budget=int(config["oracle"]["retry_budget"]),
        pad=config["context"]["pad_to_partitions"],
    )
    json_path = output_path(config, "report_json")
    json_path.write_text(report.to_json(), encoding="utf-8")
    csv_path = output_path(config, "report_csv")
    append_report_csv(csv_path, report)
    print(f"eps_emp_gdp={report.estimate.eps_emp:.6g} mu_lower={report.estimate.mu_lower:.6g} "
          f"eps_emp_point={report.eps_emp_point:.6g} -> {json_path}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.overrides)
    section = config.get("simulate")
    if not section:
        raise ConfigError("simulate needs a 'simulate' section")
    rows = gaussian_model.sweep(
        T_values=section["T_values"],
        k_rule=section.get("k_rule", "all"),
        b=float(section["b"]),
        sigma=float(section["sigma"]),
        delta_target=float(section.get("delta_target", DEFAULT_DELTA_TARGET)),
        k_fixed=section.get("k_fixed"),
    )
    path = output_path(config, "sweep_csv")
    gaussian_model.write_sweep_csv(rows, path)
    print(f"wrote {len(rows)} sweep rows to {path}")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    count_flags = [args.tp, args.fp, args.fn, args.tn]
    modes = sum([args.mu is not None, args.eps is not None, any(f is not None for f in count_flags)])
    if modes != 1:
        raise ConfigError("choose exactly one input mode: --mu, --eps, or --tp/--fp/--fn/--tn")

    if args.mu is not None:
        eps = eps_from_mu_delta(args.mu, args.delta)
        print(f"mu={args.mu:.9g} delta_target={args.delta:.3g}")
        print(f"eps={eps:.9g}")
        return EXIT_OK

    if args.eps is not None:
        # invert: the mu whose conversion lands back on the requested eps
        target = args.eps
        if target < 0:
            raise ConfigError("--eps must be non-negative")
        if target == 0:
            print("eps=0 -> mu=0")
            return EXIT_OK
        lo, hi = 0.0, 1.0
        while eps_from_mu_delta(hi, args.delta) < target:
            hi *= 2.0
            if hi > 1e6:
                raise ArithmeticError("mu search bracket exhausted")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if eps_from_mu_delta(mid, args.delta) < target:
                lo = mid
            else:
                hi = mid
        mu = 0.5 * (lo + hi)
        print(f"eps={target:.9g} delta_target={args.delta:.3g}")
        print(f"mu={mu:.9g}")
        print(f"round_trip_eps={eps_from_mu_delta(mu, args.delta):.9g}")
        print(f"delta_at_eps={delta_from_eps_mu(target, mu):.6g}")
        return EXIT_OK

    if any(f is None for f in count_flags):
        raise ConfigError("count mode needs all of --tp --fp --fn --tn")
    counts = AttackCounts(true_positives=args.tp, false_positives=args.fp,
                          false_negatives=args.fn, true_negatives=args.tn)
    estimate = audit_epsilon(counts, args.gamma, args.delta)
    print(f"counts: tp={args.tp} fp={args.fp} fn={args.fn} tn={args.tn} gamma={args.gamma}")
    print(f"tpr={counts.tpr:.9g} fpr={counts.fpr:.9g}")
    print(f"alpha_bar={estimate.alpha_bar:.9g} beta_bar={estimate.beta_bar:.9g}")
    print(f"mu_lower={estimate.mu_lower:.9g}")
    print(f"eps_emp_gdp={estimate.eps_emp:.9g} (delta_target={args.delta:.3g})")
    if counts.fpr > 0 and counts.tpr > 0:
        print(f"eps_emp_point={math.log(counts.tpr / counts.fpr):.9g}")
    else:
        print("eps_emp_point=inf (zero false positives; CP bound applies)")
    return EXIT_OK


_COMMANDS = {
    "collect": cmd_collect,
    "audit": cmd_audit,
    "simulate": cmd_simulate,
    "convert": cmd_convert,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleError as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ArithmeticError, FloatingPointError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
