"""Evaluation of trace rankings against ground truth, and plain-text report rendering."""

import hashlib
import json
import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

from crosschain_tracer.constants import HIT_AT_K
from crosschain_tracer.dataset_io import SwapRecord
from crosschain_tracer.group_trace import GroupResult
from crosschain_tracer.ledger import TransferStore
from crosschain_tracer.models import DataValidationError, GroundTruth, GroundTruthLink, NotFoundError, TransferRef
from crosschain_tracer.orchestrator import InvestigationOutcome
from crosschain_tracer.price_oracle import PriceOracle
from crosschain_tracer.single_trace import TraceConfig, TraceResult, trace_single

logger = logging.getLogger(__name__)

OVERALL = "overall"


class CaseOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    target: str
    pair: str
    truth_found: bool
    truth_rank: int | None = Field(default=None, ge=1)
    multi_truth: bool = False

    @model_validator(mode="after")
    def rank_implies_found(self: "CaseOutcome") -> "CaseOutcome":
        if self.truth_rank is not None and not self.truth_found:
            raise ValueError("a truth rank requires the truth to be found")
        return self


class PairMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    recall: float = Field(ge=0, le=100)
    hit_at_k: dict[int, float]


class EvalReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    per_pair: dict[str, PairMetrics]
    overall: PairMetrics
    config_digest: str
    flagged: list[str] = Field(default_factory=list, description="targets evaluated against several truth links")
    cases: list[CaseOutcome] = Field(default_factory=list)

    def to_report(self: "EvalReport") -> dict[str, Any]:
        return {
            "per_pair": {k: v.model_dump(mode="json") for k, v in self.per_pair.items()},
            "overall": self.overall.model_dump(mode="json"),
            "config_digest": self.config_digest,
            "flagged": self.flagged,
        }


def percent(count: int, n: int) -> float:
    """``100 * count / n`` rounded half-up to one decimal place."""
    if n == 0:
        return 0.0
    return float((Decimal(100 * count) / Decimal(n)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def case_outcome(target: str, ranked: Sequence[str], links: Sequence[GroundTruthLink]) -> CaseOutcome:
    """Best rank of any truth source of ``target`` in ``ranked`` (any-hit when there are several truths)."""
    if not links:
        raise DataValidationError(f"no ground-truth link for target {target}")
    positions = {src: i for i, src in reversed(list(enumerate(ranked, start=1)))}
    ranks = [positions[link.src.key] for link in links if link.src.key in positions]
    best = min(ranks) if ranks else None
    return CaseOutcome(
        target=target,
        pair=links[0].pair.chains,
        truth_found=best is not None,
        truth_rank=best,
        multi_truth=len(links) > 1,
    )


def _metrics(cases: Sequence[CaseOutcome], ks: Sequence[int]) -> PairMetrics:
    n = len(cases)
    return PairMetrics(
        n=n,
        recall=percent(sum(c.truth_found for c in cases), n),
        hit_at_k={k: percent(sum(c.truth_rank is not None and c.truth_rank <= k for c in cases), n) for k in ks},
    )


def evaluate_rankings(
    rankings: Mapping[str, Sequence[str]],
    truth: GroundTruth,
    config_digest: str = "",
    ks: Sequence[int] = HIT_AT_K,
) -> EvalReport:
    by_target = truth.by_target()
    cases = [case_outcome(t, rankings[t], by_target.get(t, [])) for t in sorted(rankings)]
    grouped: dict[str, list[CaseOutcome]] = {}
    for c in cases:
        grouped.setdefault(c.pair, []).append(c)
    flagged = [c.target for c in cases if c.multi_truth]
    if flagged:
        logger.warning(f"{len(flagged)} target(s) have several truth links, evaluated with any-hit semantics")
    return EvalReport(
        per_pair={pair: _metrics(grouped[pair], ks) for pair in sorted(grouped)},
        overall=_metrics(cases, ks),
        config_digest=config_digest,
        flagged=flagged,
        cases=cases,
    )


def config_digest(configs: Sequence[TraceConfig]) -> str:
    distinct = sorted({json.dumps(c.model_dump(mode="json", by_alias=True), sort_keys=True) for c in configs})
    return hashlib.sha256("\n".join(distinct).encode("utf-8")).hexdigest()


def evaluate(results: Mapping[str, TraceResult], truth: GroundTruth, ks: Sequence[int] = HIT_AT_K) -> EvalReport:
    """Recall and Hit@k of ``results`` (target key -> trace) against ``truth``, per chain pair and overall."""
    rankings = {target: r.ranked_sources() for target, r in results.items()}
    return evaluate_rankings(rankings, truth, config_digest([r.config for r in results.values()]), ks)


def rankings_from_reports(directory: Path) -> dict[str, list[str]]:
    """Ranked source keys per target, read back from trace reports written as ``*.json``."""
    rankings = {}
    for path in sorted(directory.glob("*.json")):
        report = json.loads(path.read_text(encoding="utf-8"))
        try:
            rankings[report["target"]] = [TransferRef(c["chain"], c["src"]).key for c in report["candidates"]]
        except (KeyError, TypeError) as e:
            raise DataValidationError(f"{path} is not a trace report: missing {e}") from e
    return rankings


def _trace_case(store: TransferStore, oracle: PriceOracle, rec: SwapRecord, cfg: TraceConfig) -> TraceResult:
    scoped = cfg.model_copy(update={"source_pairs": (rec.pair.src,)})
    target = store.get_transfer_by_id(rec.outbound_chain, rec.outbound_tx_id)
    try:
        return trace_single(store, oracle, target, scoped)
    except (DataValidationError, NotFoundError) as e:
        logger.warning(f"trace of {target.key} failed: {e}")
        return TraceResult(target=target, candidates=[], config=scoped, warnings=[str(e)])


def trace_cases(
    store: TransferStore,
    oracle: PriceOracle,
    records: Sequence[SwapRecord],
    cfg: TraceConfig | None = None,
    max_workers: int = 4,
) -> dict[str, TraceResult]:
    """Trace the outbound transfer of every record, each scoped to the record's source chain and asset."""
    cfg = cfg or TraceConfig()
    ordered = sorted(records, key=lambda r: r.outbound_ref.key)
    with ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="cct-eval") as pool:
        results = list(pool.map(lambda r: _trace_case(store, oracle, r, cfg), ordered))
    return {r.outbound_ref.key: res for r, res in zip(ordered, results, strict=True)}


# text rendering


def _fmt(x: float) -> str:
    return f"{x:.1f}"


def render_eval_table(report: EvalReport) -> str:
    ks = sorted(report.overall.hit_at_k)
    header = ["pair", "n", "Recall", *(f"Hit@{k}" for k in ks)]
    rows = [
        [pair, str(m.n), _fmt(m.recall), *(_fmt(m.hit_at_k[k]) for k in ks)]
        for pair, m in [*report.per_pair.items(), (OVERALL, report.overall)]
    ]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths, strict=True))) for r in [header, *rows]]
    if report.flagged:
        lines.append(f"any-hit targets: {', '.join(report.flagged)}")
    lines.append(f"config {report.config_digest[:16]}")
    return "\n".join(lines)


def render_trace(result: TraceResult) -> str:
    lines = [f"target {result.target.key}  ts={result.target.ts}  amt={result.target.amt} {result.target.asset}"]
    if not result.candidates:
        lines.append("  no accepted candidates")
    for i, c in enumerate(result.candidates, start=1):
        lines.append(
            f"  {i:>3}  {c.link.src.key}  gap={c.gap}s  fee={c.implied_fee_rate:.4f}  "
            f"s_time={c.s_time:.4f}  s_amt={c.s_amt:.4f}  s_final={c.s_final:.4f}"
        )
    if result.rejected:
        lines.append("  rejected: " + ", ".join(f"{k}={v}" for k, v in sorted(result.rejected.items())))
    lines.extend(f"  warning: {w}" for w in result.warnings)
    return "\n".join(lines)


def render_group(result: GroupResult) -> str:
    lines = [render_trace(result.per_target[k]) for k in sorted(result.per_target)]
    lines.extend(f"target {k} failed: {e}" for k, e in sorted(result.errors.items()))
    lines.append("common ancestors:")
    if not result.common_ancestors:
        lines.append("  none")
    for address, hit in result.common_ancestors:
        entry = result.votes.entries[address]
        lines.append(f"  {address}  hit={hit}")
        for target in sorted(entry.witness_paths):
            w = entry.witness_paths[target]
            lines.append(f"    {target} <- {w.source} <- {w.ancestor}")
    if result.degenerated_targets:
        lines.append(f"degenerated targets: {', '.join(result.degenerated_targets)}")
    return "\n".join(lines)


def render_investigation(outcome: InvestigationOutcome) -> str:
    lines = [
        f"  step {r.step:>2}  [{r.bits}]  {r.action.value:<18} {r.finding.value if r.finding else '-':<8} {r.brief_digest[:12]}"
        for r in outcome.transcript
    ]
    if outcome.result is not None:
        lines.append(render_trace(outcome.result))
    if outcome.failure is not None:
        lines.append(f"investigation failed: {outcome.failure.reason}")
    return "\n".join(["transcript:", *lines])
