"""Command line entry point ``cct``: simulate, ingest, trace and evaluate datasets.

Every subcommand writes its report to ``--out`` (or stdout) as text or as structured JSON. Failures are printed
as one compact RFC 7807 problem document on stderr and exit with status 1, usage errors with status 2.
"""

import argparse
import json
import logging
import logging.config
import sys
from collections.abc import Sequence
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, NoReturn, TypeVar

import yaml
from pydantic import BaseModel, ValidationError

from crosschain_tracer.constants import DEFAULT_ANCESTRY_DEPTH, DEFAULT_VOTE_THRESHOLD
from crosschain_tracer.dataset_io import Dataset, ManifestFile, Tier, ingest_swaps
from crosschain_tracer.fastapi_rfc7807.middleware import from_exception
from crosschain_tracer.group_trace import GroupQuery, trace_group
from crosschain_tracer.harness import (
    evaluate,
    evaluate_rankings,
    rankings_from_reports,
    render_eval_table,
    render_group,
    render_investigation,
    render_trace,
    trace_cases,
)
from crosschain_tracer.main import get_logging_config
from crosschain_tracer.models import ConfigError, TransferRef
from crosschain_tracer.orchestrator import DEFAULT_BUDGET, InvestigationEnv, heuristic_policy, step_loop
from crosschain_tracer.settings import app_settings
from crosschain_tracer.simgen import SybilSpec, WorldSpec, generate_world, plant_sybil, write_world
from crosschain_tracer.single_trace import TraceConfig, trace_single

logger = logging.getLogger(__name__)

TEXT = "text"
STRUCTURED = "structured"

ModelT = TypeVar("ModelT", bound=BaseModel)


class ProblemArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as a ``ConfigError`` instead of exiting."""

    def error(self: "ProblemArgumentParser", message: str) -> NoReturn:
        raise ConfigError(f"{self.prog}: {message}")


def _dust_threshold(value: str) -> tuple[str, Decimal]:
    asset, sep, amount = value.partition("=")
    try:
        threshold = Decimal(amount)
    except InvalidOperation:
        threshold = None
    if not sep or not asset or threshold is None or not threshold.is_finite() or threshold < 0:
        raise argparse.ArgumentTypeError(f"expected ASSET=AMOUNT with a non-negative amount, got {value!r}")
    return asset, threshold


def _load_yaml(path: str) -> dict[str, Any]:
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping, got {type(data).__name__}")
    return data


def _validated(model: type[ModelT], data: dict[str, Any], what: str) -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {what}: {e.errors()[0]['msg']}") from e


def load_trace_config(args: argparse.Namespace) -> TraceConfig:
    overrides = _load_yaml(args.config) if args.config else {}
    if getattr(args, "source_pair", None):
        overrides["source_pairs"] = list(args.source_pair)
    return TraceConfig.from_overrides(overrides)


def emit(args: argparse.Namespace, text: str, structured: Any) -> None:  # noqa: ANN401
    body = text if args.format == TEXT else json.dumps(structured, indent=2)
    if args.out is None:
        sys.stdout.write(body + "\n")
        return
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(body + "\n", encoding="utf-8")


def _manifest_text(directory: Path, manifest: ManifestFile) -> str:
    lines = [f"dataset {directory}: {manifest.transfer_count} transfers"]
    lines.extend(f"  {m.tier.value:<7} {m.record_count:>7} records  {len(m.pairs)} pairs" for m in manifest.tiers)
    return "\n".join(lines)


def cmd_simulate(args: argparse.Namespace) -> None:
    spec = WorldSpec.from_yaml(args.world_spec)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    world = generate_world(spec)
    for sybil_file in args.sybil or ():
        world, _ = plant_sybil(world, _validated(SybilSpec, _load_yaml(sybil_file), sybil_file))
    directory = Path(args.dataset)
    manifest = write_world(world, directory, [Tier(t) for t in args.tiers])
    emit(args, _manifest_text(directory, manifest), manifest.model_dump(mode="json"))


def cmd_ingest(args: argparse.Namespace) -> None:
    directory = Path(args.dataset)
    manifest = ingest_swaps(
        Path(args.swaps),
        directory,
        prices_dir=Path(args.prices) if args.prices else None,
        tiers=[Tier(t) for t in args.tiers],
        strict=args.strict,
        seed=args.seed or 0,
    )
    emit(args, _manifest_text(directory, manifest), manifest.model_dump(mode="json"))


def cmd_trace_single(args: argparse.Namespace) -> None:
    dataset = Dataset(Path(args.dataset), strict=args.strict)
    cfg = load_trace_config(args)
    ref = TransferRef.parse(args.target)
    if args.investigate:
        env = InvestigationEnv(store=dataset.store, oracle=dataset.oracle, target=ref, config=cfg)
        outcome = step_loop(heuristic_policy(), env, budget=args.budget)
        emit(args, render_investigation(outcome), outcome.to_report())
        return
    result = trace_single(dataset.store, dataset.oracle, dataset.store.get_transfer_by_id(ref.chain, ref.tx_id), cfg)
    emit(args, render_trace(result), result.to_report())


def _read_targets(path: str) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [s for s in (line.strip() for line in lines) if s and not s.startswith("#")]


def cmd_trace_group(args: argparse.Namespace) -> None:
    dataset = Dataset(Path(args.dataset), strict=args.strict)
    if args.scenario is not None:
        scenario = dataset.truth.sybil.get(args.scenario)
        if scenario is None:
            raise ConfigError(f"dataset has no scenario {args.scenario}, available: {sorted(dataset.truth.sybil)}")
        targets = list(scenario.leaf_targets)
    else:
        targets = _read_targets(args.targets)
    query = _validated(
        GroupQuery,
        {
            "targets": targets,
            "h": args.h,
            "trace": load_trace_config(args),
            "vote_threshold": args.vote_threshold,
            "top1_only": args.top1,
            "ancestry": dataset.ancestry_options(args.branching_cap, dict(args.dust_threshold or [])),
        },
        "group query",
    )
    result = trace_group(dataset.store, dataset.oracle, query, max_workers=args.workers)
    emit(args, render_group(result), result.to_report())


def _report_name(target_key: str) -> str:
    return target_key.replace(":", "_") + ".json"


def cmd_evaluate(args: argparse.Namespace) -> None:
    dataset = Dataset(Path(args.dataset), strict=args.strict)
    if args.results is not None:
        rankings = rankings_from_reports(Path(args.results))
        report = evaluate_rankings(rankings, dataset.truth)
    else:
        records = dataset.swaps(Tier(args.tier)).records
        results = trace_cases(dataset.store, dataset.oracle, records, load_trace_config(args), args.workers)
        if args.reports is not None:
            reports_dir = Path(args.reports)
            reports_dir.mkdir(parents=True, exist_ok=True)
            for key, result in results.items():
                (reports_dir / _report_name(key)).write_text(json.dumps(result.to_report(), indent=2) + "\n")
        report = evaluate(results, dataset.truth)
    emit(args, render_eval_table(report), report.to_report())


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with trace configuration overrides")
    common.add_argument("--seed", type=int, help="seed for simulation and hfMini sampling")
    common.add_argument(
        "--strict",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="fail on the first malformed input line (--no-strict logs and skips it)",
    )
    common.add_argument("--out", help="write the report to this file instead of stdout")
    common.add_argument("--format", choices=[TEXT, STRUCTURED], default=TEXT)
    common.add_argument("--workers", type=int, default=app_settings.trace_workers, help="trace worker threads")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = ProblemArgumentParser(prog="cct", description="cross-chain forensic tracing")
    sub = parser.add_subparsers(dest="command", required=True)
    tiers = [t.value for t in Tier]

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset from a world spec")
    p.add_argument("world_spec", metavar="WORLD_SPEC")
    p.add_argument("--dataset", required=True, help="dataset directory to write")
    p.add_argument("--sybil", action="append", metavar="SYBIL_SPEC", help="plant a sybil scenario (repeatable)")
    p.add_argument("--tiers", nargs="+", choices=tiers, default=tiers)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", parents=[common], help="convert an external swap-record file into a dataset")
    p.add_argument("swaps", metavar="SWAPS_FILE")
    p.add_argument("--dataset", required=True, help="dataset directory to write")
    p.add_argument("--prices", help="directory of price series to copy into the dataset")
    p.add_argument("--tiers", nargs="+", choices=tiers, default=tiers)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("trace-single", parents=[common], help="rank source candidates of one destination transfer")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True, metavar="CHAIN:TX")
    p.add_argument("--source-pair", action="append", metavar="CHAIN/ASSET", help="restrict the search (repeatable)")
    p.add_argument("--investigate", action="store_true", help="run the milestone-driven investigation loop")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="step budget of the investigation loop")
    p.set_defaults(func=cmd_trace_single)

    p = sub.add_parser("trace-group", parents=[common], help="vote for common ancestors of several targets")
    p.add_argument("--dataset", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--targets", help="file with one CHAIN:TX per line")
    group.add_argument("--scenario", help="sybil scenario id of a simulated dataset")
    p.add_argument("--source-pair", action="append", metavar="CHAIN/ASSET", help="restrict the search (repeatable)")
    p.add_argument("--h", type=int, default=DEFAULT_ANCESTRY_DEPTH, help="ancestry depth")
    p.add_argument("--vote-threshold", type=int, default=DEFAULT_VOTE_THRESHOLD)
    p.add_argument("--top1", action="store_true", help="vote with the rank-1 candidate of each target only")
    p.add_argument("--branching-cap", type=int, help="max predecessors kept per node per hop")
    p.add_argument(
        "--dust-threshold",
        action="append",
        type=_dust_threshold,
        metavar="ASSET=AMOUNT",
        help="do not expand transfers below this amount, overrides the dataset manifest (repeatable)",
    )
    p.set_defaults(func=cmd_trace_group)

    p = sub.add_parser("evaluate", parents=[common], help="recall and Hit@k of traces against ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--tier", choices=tiers, default=Tier.hf_mini.value)
    p.add_argument("--results", help="evaluate trace reports from this directory instead of tracing")
    p.add_argument("--reports", help="also write one trace report per case into this directory")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _write_problem(e: Exception) -> None:
    sys.stderr.write(from_exception(e).to_bytes().decode("utf-8") + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    logging.config.dictConfig(get_logging_config())
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        _write_problem(e)
        return 2
    try:
        args.func(args)
    except Exception as e:  # noqa: BLE001
        _write_problem(e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
