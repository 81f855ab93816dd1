"""Command-line entry point: simulate, analyze, eval, serve.

Exit codes are a stable contract: 0 success, 1 evaluation below thresholds,
2 configuration problems, 3 malformed input records, 4 campaign mismatch,
5 environment failures (bind address in use and the like). All randomness
flows from one seed; every run writes a manifest recording how it was
invoked.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import signal
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .controller import ControllerServer, WalkCoordinator, DEFAULT_PHASE_TIMEOUT
from .domains import SuffixRules
from .pipeline import PipelineOptions, analyze_record_set
from .records import CrawlRecordSet, RecordFormatError, validate_record_set
from .redirectors import blocklist_coverage, load_domain_list, SmugglerLabel
from .reporting import (
    AnalysisError,
    domain_breakdown,
    emit_blocklists,
    export_review_queue,
    fingerprinting_origin_analysis,
    load_domain_map,
    render_text_report,
)
from .simulator import (
    GroundTruth,
    SimulationError,
    TrackerBehavior,
    WorldConfig,
    generate_world,
    oracle_compare,
    run_walks,
    write_suffix_rules,
)

EXIT_OK = 0
EXIT_EVAL_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_MISMATCH = 4
EXIT_ENVIRONMENT = 5


class ConfigError(Exception):
    pass


def _load_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parser


def _world_config(parser: configparser.ConfigParser, seed_override: int | None) -> WorldConfig:
    section = parser["simulator"] if parser.has_section("simulator") else {}

    def _get(name: str, cast, default):
        if name in section:
            try:
                return cast(section[name])
            except ValueError as exc:
                raise ConfigError(f"bad value for simulator.{name}: {exc}") from exc
        return default

    kwargs = {
        "seed": seed_override if seed_override is not None else _get("seed", int, 0),
        "n_sites": _get("n_sites", int, 20),
        "walks": _get("walks", int, 10),
        "steps_per_walk": _get("steps_per_walk", int, 10),
        "dynamic_ad_probability": _get("dynamic_ad_probability", float, 0.0),
        "n_trackers": _get("n_trackers", int, 14),
        "anchor_campaign_rate": _get("anchor_campaign_rate", float, 0.6),
        "multipurpose_fraction": _get("multipurpose_fraction", float, 0.25),
        "iframe_preference": _get("iframe_preference", float, 0.6),
    }
    if parser.has_section("simulator.tracker_mix"):
        mix = {}
        for name, raw in parser["simulator.tracker_mix"].items():
            try:
                behavior = next(
                    b for b in TrackerBehavior if b.value.lower() == name.lower()
                )
            except StopIteration:
                raise ConfigError(f"unknown tracker behavior {name!r}") from None
            try:
                mix[behavior] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"bad weight for {name}: {exc}") from exc
        kwargs["tracker_mix"] = mix
    if parser.has_section("simulator.chain_lengths"):
        lengths = {}
        for name, raw in parser["simulator.chain_lengths"].items():
            try:
                lengths[int(name)] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"bad chain length entry {name}={raw}: {exc}") from exc
        kwargs["redirector_chain_lengths"] = lengths
    return WorldConfig(**kwargs)


def _write_manifest(out_dir: Path, subcommand: str, inputs: dict, seed, overrides: dict) -> None:
    manifest = {
        "subcommand": subcommand,
        "inputs": inputs,
        "output_dir": str(out_dir),
        "seed": seed,
        "config_overrides": overrides,
        "tool_version": __version__,
    }
    _atomic(out_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        parser = _load_config(args.config)
        config = _world_config(parser, args.seed)
        world = generate_world(config)
    except (ConfigError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, truth = run_walks(world)

    tmp = out_dir / "records.jsonl.tmp"
    records.write_jsonl(tmp)
    os.replace(tmp, out_dir / "records.jsonl")
    _atomic(out_dir / "world.json", world.to_json())
    _atomic(out_dir / "truth.json", truth.to_json())
    write_suffix_rules(out_dir / "suffix_rules.txt")
    _write_manifest(
        out_dir,
        "simulate",
        {"config": args.config},
        config.seed,
        {"seed": args.seed} if args.seed is not None else {},
    )
    print(
        f"campaign {world.campaign_id}: {len(records)} step records, "
        f"{len(truth.tokens)} ground-truth tokens -> {out_dir}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args: argparse.Namespace) -> int:
    records_path = Path(args.records)
    if not records_path.is_file():
        print(f"error: records file not found: {records_path}", file=sys.stderr)
        return EXIT_INPUT
    try:
        record_set = CrawlRecordSet.read_jsonl(records_path)
    except RecordFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    report = validate_record_set(record_set)
    if not report.ok:
        print("error: record set failed validation:", file=sys.stderr)
        print(str(report), file=sys.stderr)
        return EXIT_INPUT

    suffix_path = args.suffix_rules
    if suffix_path is None:
        sibling = records_path.parent / "suffix_rules.txt"
        if sibling.is_file():
            suffix_path = str(sibling)
    if suffix_path is None:
        print("error: --suffix-rules is required (no suffix_rules.txt beside records)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rules = SuffixRules.from_file(suffix_path)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    options = PipelineOptions(
        min_token_length=args.min_token_length,
        include_fragments=args.include_fragments,
        review_threshold=args.review_threshold,
        jobs=args.jobs,
    )
    result = analyze_record_set(record_set, rules, options)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    extras: dict = {}
    if args.tracker_list is not None:
        try:
            external = load_domain_list(args.tracker_list)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        dedicated = [
            host
            for host, label in sorted(result.redirector_labels.items())
            if label is SmugglerLabel.DEDICATED
        ]
        coverage = blocklist_coverage(dedicated, external, rules)
        extras["blocklist_coverage"] = {
            "covered": coverage.covered,
            "uncovered": coverage.uncovered,
            "fraction_uncovered": round(coverage.fraction_uncovered, 6),
        }
    if args.fingerprinters is not None:
        try:
            fingerprinters = load_domain_list(args.fingerprinters)
            analysis = fingerprinting_origin_analysis(result.classified, fingerprinters, rules)
            extras["fingerprinting"] = {
                "fingerprinting_multi": analysis.fingerprinting_multi,
                "fingerprinting_total": analysis.fingerprinting_total,
                "other_multi": analysis.other_multi,
                "other_total": analysis.other_total,
                "z": round(analysis.ztest.z, 6),
                "p_two_sided": round(analysis.ztest.p_two_sided, 6),
            }
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except AnalysisError as exc:
            extras["fingerprinting"] = {"error": str(exc)}
    for flag, key in ((args.category_map, "categories"), (args.owner_map, "owners")):
        if flag is None:
            continue
        try:
            extras[key] = domain_breakdown(result.classified, load_domain_map(flag), rules)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    payload = result.report.to_dict()
    payload.update(extras)
    _atomic(out_dir / "report.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")
    _atomic(out_dir / "report.txt", render_text_report(result.report))
    emit_blocklists(
        result.classified,
        result.redirector_labels,
        out_dir / "params.block",
        out_dir / "redirectors.block",
    )
    export_review_queue(result.classified, out_dir / "review_queue.csv")

    groups_payload = {
        "campaign_id": result.campaign_id,
        "review_threshold": options.review_threshold,
        "groups": [
            {
                "key": list(key),
                "verdict": outcome.verdict.value,
                "certainty": outcome.certainty.value if outcome.certainty else None,
                "review_score": outcome.review_score,
                "members": list(outcome.members),
            }
            for key, outcome in sorted(result.group_outcomes.items())
        ],
    }
    _atomic(out_dir / "groups.json", json.dumps(groups_payload, sort_keys=True, indent=2) + "\n")
    _write_manifest(
        out_dir,
        "analyze",
        {
            "records": str(records_path),
            "suffix_rules": suffix_path,
            "tracker_list": args.tracker_list,
            "fingerprinters": args.fingerprinters,
            "category_map": args.category_map,
            "owner_map": args.owner_map,
        },
        None,
        {"min_token_length": args.min_token_length, "jobs": args.jobs},
    )
    print(
        f"campaign {result.campaign_id}: {result.report.unique_url_paths} unique URL paths, "
        f"smuggling rate {100.0 * result.report.smuggling_rate:.1f}%, "
        f"{result.report.retained_groups} retained groups -> {out_dir}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


@dataclass
class _StoredOutcome:
    verdict: str
    review_score: float | None


def cmd_eval(args: argparse.Namespace) -> int:
    analysis_dir = Path(args.analysis)
    groups_path = analysis_dir / "groups.json"
    if not groups_path.is_file():
        print(f"error: {groups_path} not found (run analyze first)", file=sys.stderr)
        return EXIT_INPUT
    try:
        stored = json.loads(groups_path.read_text(encoding="utf-8"))
        truth = GroundTruth.from_file(args.truth)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    outcomes = {
        tuple(group["key"]): _StoredOutcome(
            verdict=group["verdict"], review_score=group.get("review_score")
        )
        for group in stored["groups"]
    }

    class _Shim:
        def __init__(self, outcome: _StoredOutcome):
            self.verdict = outcome.verdict
            self.review_score = outcome.review_score

    try:
        comparison = oracle_compare(
            {k: _Shim(v) for k, v in outcomes.items()},
            truth,
            stored.get("campaign_id", ""),
            review_threshold=args.review_threshold,
        )
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH

    print(f"campaign {comparison.campaign_id}")
    print("confusion matrix (truth -> predicted):")
    for truth_label in sorted(comparison.matrix):
        for predicted, count in sorted(comparison.matrix[truth_label].items()):
            print(f"  {truth_label:<22} -> {predicted:<18} {count}")
    print(
        f"uid precision {comparison.precision:.4f} (threshold {args.min_precision}), "
        f"recall {comparison.recall:.4f} (threshold {args.min_recall})"
    )
    if comparison.precision >= args.min_precision and comparison.recall >= args.min_recall:
        return EXIT_OK
    print(
        f"thresholds unmet: precision delta {comparison.precision - args.min_precision:+.4f}, "
        f"recall delta {comparison.recall - args.min_recall:+.4f}",
        file=sys.stderr,
    )
    for disagreement in comparison.disagreements[:20]:
        print(f"  {disagreement}", file=sys.stderr)
    return EXIT_EVAL_FAILURE


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        host, _, port_text = args.bind.rpartition(":")
        if not host or not port_text:
            raise ValueError("expected ADDR:PORT")
        port = int(port_text)
    except ValueError as exc:
        print(f"error: bad bind address {args.bind!r}: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT

    parser_cfg = None
    try:
        parser_cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    timeout = DEFAULT_PHASE_TIMEOUT
    steps = 10
    if parser_cfg.has_section("controller"):
        section = parser_cfg["controller"]
        timeout = section.getfloat("phase_timeout", timeout)
        steps = section.getint("steps_per_walk", steps)

    rules = None
    if args.suffix_rules is not None:
        try:
            rules = SuffixRules.from_file(args.suffix_rules)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    coordinator = WalkCoordinator(
        rules=rules, phase_timeout=timeout, steps_per_walk=steps, seed=args.seed or 0
    )
    try:
        server = ControllerServer(coordinator, host=host, port=port)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT

    stop = {"done": False}

    def _graceful(signum, frame):
        stop["done"] = True
        server.shutdown(reason="shutdown")

    signal.signal(signal.SIGTERM, _graceful)
    signal.signal(signal.SIGINT, _graceful)

    print(f"controller listening on {server.address[0]}:{server.address[1]}", flush=True)
    server.start()
    try:
        while not stop["done"]:
            signal.pause()
    except (KeyboardInterrupt, AttributeError):
        server.shutdown(reason="shutdown")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uidsleuth",
        description="Detect user identifiers smuggled across site boundaries in crawl records.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic crawl campaign")
    p_sim.add_argument("--config", help="INI configuration file")
    p_sim.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="run the detection pipeline over crawl records")
    p_ana.add_argument("--records", required=True, help="records.jsonl path")
    p_ana.add_argument("--out", required=True, help="output directory")
    p_ana.add_argument("--suffix-rules", help="public suffix rules file")
    p_ana.add_argument("--tracker-list", help="external tracker list for coverage comparison")
    p_ana.add_argument("--fingerprinters", help="known fingerprinting domains, one per line")
    p_ana.add_argument("--category-map", help="domain,category CSV for an external-data breakdown")
    p_ana.add_argument("--owner-map", help="domain,owner CSV for an external-data breakdown")
    p_ana.add_argument("--min-token-length", type=int, default=8)
    p_ana.add_argument("--review-threshold", type=float, default=0.5)
    p_ana.add_argument("--include-fragments", action="store_true")
    p_ana.add_argument("--jobs", type=int, default=1)
    p_ana.set_defaults(func=cmd_analyze)

    p_eval = sub.add_parser("eval", help="compare an analysis against simulator ground truth")
    p_eval.add_argument("--analysis", required=True, help="analyze output directory")
    p_eval.add_argument("--truth", required=True, help="truth.json path")
    p_eval.add_argument("--review-threshold", type=float, default=0.5)
    p_eval.add_argument("--min-precision", type=float, default=1.0)
    p_eval.add_argument("--min-recall", type=float, default=1.0)
    p_eval.set_defaults(func=cmd_eval)

    p_serve = sub.add_parser("serve", help="run the crawler synchronization controller")
    p_serve.add_argument("--bind", required=True, help="ADDR:PORT to listen on")
    p_serve.add_argument("--config", help="INI configuration file")
    p_serve.add_argument("--suffix-rules", help="public suffix rules file")
    p_serve.add_argument("--seed", type=int, default=0)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
